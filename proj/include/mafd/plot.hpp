#pragma once

// Minimal SVG line charts for error traces. CSV is the data contract; these
// are for eyeballing runs.

#include "mafd/sim.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace mafd::plot {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

struct Chart {
    std::string title, xlabel, ylabel;
    std::vector<Series> series;
    int width = 900, height = 420;
};

inline std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

inline std::string render(const Chart& c) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : c.series)
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            x0 = std::min(x0, s.x[k]), x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, s.y[k]), y1 = std::max(y1, s.y[k]);
        }
    if (!(x1 > x0)) x0 = 0, x1 = 1;
    if (!(y1 > y0)) y0 -= 1e-6, y1 += 1e-6;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad, y1 += pad;
    const double L = 80, R = 150, T = 40, B = 50;
    const double pw = c.width - L - R, ph = c.height - T - B;
    auto X = [&](double v) { return L + (v - x0) / (x1 - x0) * pw; };
    auto Y = [&](double v) { return T + (y1 - v) / (y1 - y0) * ph; };

    std::ostringstream o;
    o << std::setprecision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << c.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(c.title) << "</text>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double xv = x0 + (x1 - x0) * k / 5, yv = y0 + (y1 - y0) * k / 5;
        o << "<line x1=\"" << X(xv) << "\" y1=\"" << T + ph << "\" x2=\"" << X(xv) << "\" y2=\""
          << T + ph + 5 << "\" stroke=\"black\"/>"
          << "<text x=\"" << X(xv) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << xv
          << "</text>\n";
        o << "<line x1=\"" << L - 5 << "\" y1=\"" << Y(yv) << "\" x2=\"" << L + pw << "\" y2=\""
          << Y(yv) << "\" stroke=\"#ddd\"/>"
          << "<text x=\"" << L - 8 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << yv
          << "</text>\n";
    }
    o << "<text x=\"" << L + pw / 2 << "\" y=\"" << c.height - 10 << "\" text-anchor=\"middle\">"
      << escape(c.xlabel) << "</text>\n"
      << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(c.ylabel) << "</text>\n";
    for (std::size_t i = 0; i < c.series.size(); ++i) {
        const auto& s = c.series[i];
        const char* col = palette[i % 10];
        // Thin to at most ~2000 points per series.
        const std::size_t stride = std::max<std::size_t>(1, s.x.size() / 2000);
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.3\" points=\"";
        for (std::size_t k = 0; k < s.x.size(); k += stride) o << X(s.x[k]) << "," << Y(s.y[k]) << " ";
        if (!s.x.empty()) o << X(s.x.back()) << "," << Y(s.y.back());
        o << "\"/>\n";
        const double ly = T + 14 + 18 * static_cast<double>(i);
        o << "<line x1=\"" << L + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 30 << "\" y2=\""
          << ly << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>"
          << "<text x=\"" << L + pw + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

/// One chart per error kind: angle deviation (deg) and voltage deviation (p.u.).
inline void write_error_plots(const std::string& prefix, const Trajectory& tr,
                              const std::vector<std::string>& names, const std::string& title) {
    Chart ang{title + ": angle droop error", "t (s)", "delta deviation (deg)", {}};
    Chart vol{title + ": voltage droop error", "t (s)", "V deviation (p.u.)", {}};
    for (int i = 0; i < tr.n; ++i) {
        Series a{names[i], tr.t, {}}, v{names[i], tr.t, {}};
        for (const auto& x : tr.x) {
            a.y.push_back(rad2deg(x(3 * i)));
            v.y.push_back(x(3 * i + 2));
        }
        ang.series.push_back(std::move(a));
        vol.series.push_back(std::move(v));
    }
    std::ofstream(prefix + "_angle.svg") << render(ang);
    std::ofstream(prefix + "_voltage.svg") << render(vol);
}

}  // namespace mafd::plot
