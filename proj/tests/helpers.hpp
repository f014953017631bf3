#pragma once

// Shared test utilities: deterministic instance generators and tolerance
// helpers. Everything here is seeded; tests must not depend on run order.

#include <bit>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "suffstats/types.hpp"

namespace testutil {

using suffstats::Index;
using suffstats::Matrix;
using suffstats::ObservationSet;
using suffstats::Vector;

/// |a - b| relative to max(1, |a|, |b|): relative for large magnitudes,
/// absolute near zero.
inline double rel_diff(double a, double b) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

inline double max_rel_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return 1e300;
  double worst = 0.0;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      worst = std::max(worst, rel_diff(a(i, j), b(i, j)));
    }
  }
  return worst;
}

inline bool bit_equal(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) {
      if (!bit_equal(a(i, j), b(i, j))) return false;
    }
  }
  return true;
}

struct InstanceOptions {
  Index n = 60;
  Index p = 3;          // feature columns, including the leading constant
  Index o = 1;
  int alphabet = 3;     // distinct values per non-constant feature column
  bool intercept = true;
  bool clusters = false;
  Index n_clusters = 5;
  bool weights = false;
  suffstats::WeightKind weight_kind = suffstats::WeightKind::Frequency;
};

/// Random dense instance over small discrete feature alphabets, so groups
/// repeat and compression is non-trivial. Outcomes are a linear signal plus
/// continuous noise. The discrete design with an intercept is full rank with
/// overwhelming probability at the sizes used here; estimator tests that
/// need rank deficiency construct it explicitly instead.
inline ObservationSet random_instance(std::mt19937_64& rng, const InstanceOptions& opt) {
  std::uniform_int_distribution<int> level(0, opt.alphabet - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coef(-1.5, 1.5);

  ObservationSet obs;
  obs.features.resize(opt.n, opt.p);
  obs.outcomes.resize(opt.n, opt.o);
  for (Index j = 0; j < opt.p; ++j) {
    obs.feature_names.push_back(opt.intercept && j == 0 ? "c0" : "x" + std::to_string(j));
  }
  for (Index k = 0; k < opt.o; ++k) obs.outcome_names.push_back("y" + std::to_string(k + 1));

  for (Index i = 0; i < opt.n; ++i) {
    for (Index j = 0; j < opt.p; ++j) {
      obs.features(i, j) =
          (opt.intercept && j == 0) ? 1.0 : static_cast<double>(level(rng));
    }
  }
  Matrix beta(opt.p, opt.o);
  for (Index k = 0; k < opt.o; ++k) {
    for (Index j = 0; j < opt.p; ++j) beta(j, k) = coef(rng);
  }
  obs.outcomes = obs.features * beta;
  for (Index i = 0; i < opt.n; ++i) {
    for (Index k = 0; k < opt.o; ++k) obs.outcomes(i, k) += noise(rng);
  }

  if (opt.clusters) {
    std::uniform_int_distribution<Index> pick(0, opt.n_clusters - 1);
    std::vector<std::string> labels(static_cast<std::size_t>(opt.n));
    for (auto& l : labels) l = "c" + std::to_string(pick(rng));
    obs.clusters = std::move(labels);
  }
  if (opt.weights) {
    Vector w(opt.n);
    if (opt.weight_kind == suffstats::WeightKind::Frequency) {
      std::uniform_int_distribution<int> freq(1, 4);
      for (Index i = 0; i < opt.n; ++i) w(i) = static_cast<double>(freq(rng));
    } else {
      std::uniform_real_distribution<double> aw(0.25, 3.0);
      for (Index i = 0; i < opt.n; ++i) w(i) = aw(rng);
    }
    obs.weights = std::move(w);
    obs.weight_kind = opt.weight_kind;
  }
  return obs;
}

/// Rows [lo, hi) of an instance, all optional attributes included.
inline ObservationSet slice_rows(const ObservationSet& obs, Index lo, Index hi) {
  ObservationSet out;
  out.feature_names = obs.feature_names;
  out.outcome_names = obs.outcome_names;
  out.features = obs.features.middleRows(lo, hi - lo);
  out.outcomes = obs.outcomes.middleRows(lo, hi - lo);
  if (obs.weights) {
    out.weights = obs.weights->segment(lo, hi - lo);
    out.weight_kind = obs.weight_kind;
  }
  if (obs.clusters) {
    out.clusters = std::vector<std::string>(obs.clusters->begin() + lo,
                                            obs.clusters->begin() + hi);
  }
  return out;
}

/// Concatenation in row order, the ground truth for merge tests.
inline ObservationSet concat_rows(const ObservationSet& a, const ObservationSet& b) {
  ObservationSet out;
  out.feature_names = a.feature_names;
  out.outcome_names = a.outcome_names;
  out.features.resize(a.n_rows() + b.n_rows(), a.n_features());
  out.features << a.features, b.features;
  out.outcomes.resize(a.n_rows() + b.n_rows(), a.n_outcomes());
  out.outcomes << a.outcomes, b.outcomes;
  if (a.weights && b.weights) {
    Vector w(a.n_rows() + b.n_rows());
    w << *a.weights, *b.weights;
    out.weights = std::move(w);
    out.weight_kind = a.weight_kind;
  }
  if (a.clusters && b.clusters) {
    std::vector<std::string> c = *a.clusters;
    c.insert(c.end(), b.clusters->begin(), b.clusters->end());
    out.clusters = std::move(c);
  }
  return out;
}

}  // namespace testutil
