#pragma once

// Umbrella header for the counterfactual-evaluation library.

#include "cfeval/data.hpp"
#include "cfeval/error.hpp"
#include "cfeval/io.hpp"
#include "cfeval/linalg.hpp"
#include "cfeval/metrics.hpp"
#include "cfeval/numeric.hpp"
#include "cfeval/rng.hpp"
#include "cfeval/stats.hpp"
#include "cfeval/synth.hpp"
