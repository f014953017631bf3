#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "suffstats/compress.hpp"
#include "suffstats/estimate.hpp"
#include "suffstats/types.hpp"

namespace suffstats {

/// Sufficient statistics for logistic regression with a binary outcome:
/// per unique feature row, the number of successes and the number of trials.
/// The Bernoulli likelihood depends on the data only through these, so the
/// compressed fit matches the row-level fit exactly, not just numerically.
struct LogisticSuffStats {
  std::vector<std::string> feature_names;
  std::string outcome_name;
  Matrix unique_features;  // G x p
  Vector y_sum;            // G, successes per group
  Vector count;            // G, trials per group

  Index n_groups() const { return unique_features.rows(); }
  Index n_features() const { return unique_features.cols(); }
  double n_rows() const { return count.size() == 0 ? 0.0 : count.sum(); }
};

inline LogisticSuffStats compress_logistic(const ObservationSet& obs) {
  validate(obs);
  if (obs.n_outcomes() != 1) {
    throw Error(ErrorCode::NonBinaryOutcome,
                "logistic compression expects exactly one outcome column");
  }
  for (Index i = 0; i < obs.n_rows(); ++i) {
    const double y = obs.outcomes(i, 0);
    if (y != 0.0 && y != 1.0) {
      throw Error(ErrorCode::NonBinaryOutcome,
                  "outcome at row " + std::to_string(i) + " is not 0 or 1");
    }
  }
  if (obs.weights) {
    throw Error(ErrorCode::InvalidArgument,
                "logistic compression does not support weighted input");
  }
  const SuffStatsTable t = compress_suffstats(obs);
  LogisticSuffStats s;
  s.feature_names = t.feature_names;
  s.outcome_name = t.outcome_names[0];
  s.unique_features = t.unique_features;
  s.y_sum = t.y_sum.col(0);
  s.count = t.count;
  return s;
}

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

/// Binomial log likelihood of the grouped counts at `beta`:
///   sum_g [ y'_g log s(eta_g) + (n_g - y'_g) log(1 - s(eta_g)) ]
/// evaluated through softplus so that extreme linear predictors saturate
/// instead of overflowing.
inline double loglik(const LogisticSuffStats& s, const Vector& beta) {
  if (beta.size() != s.n_features()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient size does not match feature count");
  }
  const Vector eta = s.unique_features * beta;
  double ll = 0.0;
  for (Index g = 0; g < s.n_groups(); ++g) {
    ll -= s.y_sum(g) * detail::softplus(-eta(g));
    ll -= (s.count(g) - s.y_sum(g)) * detail::softplus(eta(g));
  }
  return ll;
}

/// Gradient of the log likelihood: M~^T (y' - n (*) s(eta)).
inline Vector loglik_gradient(const LogisticSuffStats& s, const Vector& beta) {
  if (beta.size() != s.n_features()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient size does not match feature count");
  }
  const Vector eta = s.unique_features * beta;
  Vector grad = Vector::Zero(s.n_features());
  for (Index g = 0; g < s.n_groups(); ++g) {
    const double resid = s.y_sum(g) - s.count(g) * detail::sigmoid(eta(g));
    grad += resid * s.unique_features.row(g).transpose();
  }
  return grad;
}

/// Hessian of the log likelihood, -M~^T diag(n s (1-s)) M~. Negative
/// semi-definite everywhere, which makes plain Newton ascent safe.
inline Matrix loglik_hessian(const LogisticSuffStats& s, const Vector& beta) {
  if (beta.size() != s.n_features()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient size does not match feature count");
  }
  const Vector eta = s.unique_features * beta;
  Matrix h = Matrix::Zero(s.n_features(), s.n_features());
  for (Index g = 0; g < s.n_groups(); ++g) {
    const double sg = detail::sigmoid(eta(g));
    h.noalias() -= s.count(g) * sg * (1.0 - sg) * s.unique_features.row(g).transpose() *
                   s.unique_features.row(g);
  }
  return h;
}

struct LogisticOptions {
  double tol = 1e-10;  // on the max-norm of the gradient
  int max_iter = 50;
};

/// Past this linear predictor the fitted probability is within 2e-9 of 0 or
/// 1 and a pure group's gradient contribution has decayed below the default
/// tolerance. A converged gradient out here is the perfect-prediction
/// signature: the likelihood went flat along a boundary direction, it did
/// not reach an interior maximum.
inline constexpr double kSeparationEta = 20.0;

/// Newton's method with step halving on the grouped likelihood, starting
/// from beta = 0. Converged when the gradient max-norm drops below tol;
/// separated data is reported as DidNotConverge, whether it exhausts
/// max_iter or drives the iterates past the perfect-prediction boundary.
/// The reported covariance is the inverse observed information at the
/// optimum.
inline FitResult fit_logistic(const LogisticSuffStats& s, const LogisticOptions& opts = {}) {
  const Index p = s.n_features();
  Vector beta = Vector::Zero(p);
  double ll = loglik(s, beta);
  int iterations = 0;

  for (int it = 0;; ++it) {
    const Vector grad = loglik_gradient(s, beta);
    if (grad.size() == 0 || grad.cwiseAbs().maxCoeff() < opts.tol) {
      const Vector eta = s.unique_features * beta;
      if (eta.size() > 0 && eta.cwiseAbs().maxCoeff() > kSeparationEta) {
        throw Error(ErrorCode::DidNotConverge,
                    "gradient vanished at the perfect-prediction boundary; the data "
                    "may be separated");
      }
      iterations = it;
      break;
    }
    if (it == opts.max_iter) {
      throw Error(ErrorCode::DidNotConverge,
                  "no convergence in " + std::to_string(opts.max_iter) +
                      " iterations; the data may be quasi-separated");
    }

    Matrix info = Matrix::Zero(p, p);
    {
      const Vector eta = s.unique_features * beta;
      for (Index g = 0; g < s.n_groups(); ++g) {
        const double sg = detail::sigmoid(eta(g));
        info.noalias() += s.count(g) * sg * (1.0 - sg) *
                          s.unique_features.row(g).transpose() * s.unique_features.row(g);
      }
    }
    detail::CholeskyFactor f = detail::pivoted_cholesky(info);
    if (!f.full_rank()) {
      if (it == 0) throw detail::rank_error(f, s.feature_names);
      // Curvature collapsed along some direction mid-run: the separation
      // signature, not a design-rank problem.
      throw Error(ErrorCode::DidNotConverge,
                  "information matrix became singular; the data may be quasi-separated");
    }
    const Vector step = detail::cholesky_solve(f, grad);

    double scale = 1.0;
    Vector candidate = beta + step;
    double ll_new = loglik(s, candidate);
    for (int h = 0; h < 30 && ll_new < ll; ++h) {
      scale /= 2.0;
      candidate = beta + scale * step;
      ll_new = loglik(s, candidate);
    }
    beta = candidate;
    ll = ll_new;
  }

  Matrix info = Matrix::Zero(p, p);
  {
    const Vector eta = s.unique_features * beta;
    for (Index g = 0; g < s.n_groups(); ++g) {
      const double sg = detail::sigmoid(eta(g));
      info.noalias() += s.count(g) * sg * (1.0 - sg) *
                        s.unique_features.row(g).transpose() * s.unique_features.row(g);
    }
  }
  const auto f = detail::factor_or_throw(info, s.feature_names);

  FitResult r;
  r.coefficient_names = s.feature_names;
  r.outcome_names = {s.outcome_name};
  r.coefficients = beta;
  r.covariance = {detail::cholesky_inverse(f)};
  r.std_errors.resize(p, 1);
  for (Index j = 0; j < p; ++j) {
    r.std_errors(j, 0) = std::sqrt(std::max(r.covariance[0](j, j), 0.0));
  }
  r.diagnostics.n = s.n_rows();
  r.diagnostics.n_groups = static_cast<double>(s.n_groups());
  r.diagnostics.compression_ratio =
      r.diagnostics.n_groups > 0 ? r.diagnostics.n / r.diagnostics.n_groups : 0.0;
  r.diagnostics.converged = true;
  r.diagnostics.iterations = iterations;
  r.df_residual = r.diagnostics.n - static_cast<double>(p);
  return r;
}

}  // namespace suffstats
