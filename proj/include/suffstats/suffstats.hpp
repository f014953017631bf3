#pragma once

// Umbrella header for the library. The brute-force reference implementations
// in oracle.hpp are not listed here on purpose; the benchmark pulls them in
// as its raw-row comparison, tests include them directly.

#include "suffstats/bench.hpp"
#include "suffstats/compress.hpp"
#include "suffstats/csv.hpp"
#include "suffstats/error.hpp"
#include "suffstats/estimate.hpp"
#include "suffstats/gen.hpp"
#include "suffstats/logistic.hpp"
#include "suffstats/report.hpp"
#include "suffstats/types.hpp"
