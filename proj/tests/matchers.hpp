#pragma once

// Catch2 matchers shared by the unit suites. Kept out of helpers.hpp so the
// acceptance binary, which has its own main, can use the generators without
// pulling in the framework.

#include <catch2/catch_amalgamated.hpp>

#include "suffstats/types.hpp"

namespace testutil {

/// Matcher for CHECK_THROWS_MATCHES: the thrown Error carries this code.
inline auto HasCode(suffstats::ErrorCode code) {
  return Catch::Matchers::Predicate<suffstats::Error>(
      [code](const suffstats::Error& e) { return e.code() == code; },
      "carries the expected error code");
}

}  // namespace testutil
