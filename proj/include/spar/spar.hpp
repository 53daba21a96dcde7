#pragma once

// Umbrella header for the SPAR library.

#include "spar/bootstrap.hpp"
#include "spar/dataio.hpp"
#include "spar/diagnostics.hpp"
#include "spar/error.hpp"
#include "spar/gpd.hpp"
#include "spar/inference.hpp"
#include "spar/model_io.hpp"
#include "spar/neural.hpp"
#include "spar/observation.hpp"
#include "spar/parallel.hpp"
#include "spar/preprocess.hpp"
#include "spar/rng.hpp"
#include "spar/spar_fit.hpp"
#include "spar/stats.hpp"
#include "spar/types.hpp"
