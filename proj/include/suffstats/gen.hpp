#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "suffstats/types.hpp"

namespace suffstats {

namespace detail {

/// Seeded generator with explicit transforms so a given seed produces the
/// same bytes on every run of the same build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u = uniform();
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u));
    const double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace detail

/// The data-generating coefficients behind a synthetic panel, reported so
/// benchmarks and tests can sanity-check recovered estimates.
struct PanelGenMeta {
  double intercept = 1.0;
  Vector static_beta;   // one per static feature
  double time_beta = 0.05;
  double user_sd = 0.5;
  double noise_sd = 1.0;
};

struct GeneratedPanel {
  ObservationSet obs;  // static dummies s1..sk, time column t; outcome y; clustered by user
  Vector order;        // the time column, for order-sensitive compressions
  PanelGenMeta meta;
};

/// Balanced synthetic panel: n_u users observed at times 1..T. Static
/// features are per-user binary draws (a small alphabet, so compression
/// bites), the outcome is linear signal + per-user random effect + noise.
/// Row order is user-major, time ascending; labels are zero-padded so
/// lexicographic and generation order agree.
inline GeneratedPanel gen_panel(std::int64_t n_u, int periods, int p_static,
                                std::uint64_t seed, const std::string& label_prefix = "u") {
  if (n_u < 1 || periods < 1 || p_static < 0) {
    throw Error(ErrorCode::InvalidArgument, "panel generator needs n_u, T >= 1 and p_static >= 0");
  }
  detail::Rng rng(seed);

  GeneratedPanel out;
  out.meta.static_beta = Vector(p_static);
  for (int j = 0; j < p_static; ++j) out.meta.static_beta(j) = 0.3 * (j + 1);

  const Index n = static_cast<Index>(n_u) * periods;
  ObservationSet& obs = out.obs;
  obs.features.resize(n, p_static + 1);
  obs.outcomes.resize(n, 1);
  for (int j = 0; j < p_static; ++j) obs.feature_names.push_back("s" + std::to_string(j + 1));
  obs.feature_names.push_back("t");
  obs.outcome_names = {"y"};
  obs.clusters = std::vector<std::string>(static_cast<std::size_t>(n));
  out.order.resize(n);

  int label_width = 1;
  for (std::int64_t v = n_u; v >= 10; v /= 10) ++label_width;

  Index row = 0;
  for (std::int64_t u = 0; u < n_u; ++u) {
    std::string label = std::to_string(u);
    label = label_prefix + std::string(static_cast<std::size_t>(label_width) - label.size(), '0') + label;

    const double alpha = out.meta.user_sd * rng.normal();
    double static_part = out.meta.intercept + alpha;
    Vector statics(p_static);
    for (int j = 0; j < p_static; ++j) {
      statics(j) = static_cast<double>(rng.bits() & 1u);
      static_part += out.meta.static_beta(j) * statics(j);
    }
    for (int tt = 1; tt <= periods; ++tt, ++row) {
      for (int j = 0; j < p_static; ++j) obs.features(row, j) = statics(j);
      obs.features(row, p_static) = static_cast<double>(tt);
      out.order(row) = static_cast<double>(tt);
      obs.outcomes(row, 0) =
          static_part + out.meta.time_beta * tt + out.meta.noise_sd * rng.normal();
      (*obs.clusters)[static_cast<std::size_t>(row)] = label;
    }
  }
  return out;
}

struct GeneratedFlat {
  ObservationSet obs;  // columns x1..xp (intercept not included); outcome y
  Vector true_beta;
};

/// Flat benchmark data: `pool` distinct feature rows (enumerated over a small
/// integer alphabet) replicated across `rows` observations in a fixed
/// scrambled order, plus Gaussian outcome noise. Compressing recovers
/// exactly `pool` groups.
inline GeneratedFlat gen_flat(std::int64_t rows, std::int64_t pool, int p,
                              std::uint64_t seed) {
  if (rows < 1 || pool < 1 || p < 1 || pool > rows) {
    throw Error(ErrorCode::InvalidArgument,
                "flat generator needs rows >= pool >= 1 and p >= 1");
  }
  std::int64_t alphabet = 2;
  while (true) {
    double combos = 1.0;
    for (int j = 0; j < p; ++j) combos *= static_cast<double>(alphabet);
    if (combos >= static_cast<double>(pool)) break;
    ++alphabet;
  }

  Matrix pool_rows(static_cast<Index>(pool), p);
  for (std::int64_t r = 0; r < pool; ++r) {
    std::int64_t digits = r;
    for (int j = 0; j < p; ++j) {
      pool_rows(static_cast<Index>(r), j) = static_cast<double>(digits % alphabet);
      digits /= alphabet;
    }
  }

  GeneratedFlat out;
  out.true_beta = Vector(p);
  for (int j = 0; j < p; ++j) out.true_beta(j) = 0.25 * ((j % 7) - 3);

  detail::Rng rng(seed);
  out.obs.features.resize(static_cast<Index>(rows), p);
  out.obs.outcomes.resize(static_cast<Index>(rows), 1);
  for (int j = 0; j < p; ++j) out.obs.feature_names.push_back("x" + std::to_string(j + 1));
  out.obs.outcome_names = {"y"};
  for (std::int64_t i = 0; i < rows; ++i) {
    const std::int64_t g = static_cast<std::int64_t>(
        (static_cast<std::uint64_t>(i) * 2654435761ull + seed) % static_cast<std::uint64_t>(pool));
    out.obs.features.row(static_cast<Index>(i)) = pool_rows.row(static_cast<Index>(g));
    out.obs.outcomes(static_cast<Index>(i), 0) =
        out.obs.features.row(static_cast<Index>(i)).dot(out.true_beta) + rng.normal();
  }
  return out;
}

}  // namespace suffstats
