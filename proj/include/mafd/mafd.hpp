#pragma once

#include "mafd/types.hpp"
#include "mafd/netmodel.hpp"
#include "mafd/dynamics.hpp"
#include "mafd/linearize.hpp"
#include "mafd/sdp.hpp"
#include "mafd/synth.hpp"
#include "mafd/sim.hpp"
#include "mafd/verify.hpp"
#include "mafd/io.hpp"
#include "mafd/plot.hpp"
#include "mafd/pipeline.hpp"
