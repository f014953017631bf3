#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "suffstats/types.hpp"

// Test-support surface: brute-force row-level implementations of every
// estimator, deliberately sharing no code with the compressed paths (Eigen
// decompositions instead of the hand-rolled factorization, row-order instead
// of group-order summation). Used as ground truth in equivalence tests; not
// part of the supported library API.

namespace suffstats {

struct OracleFit {
  Matrix beta;       // p x o
  Matrix residuals;  // n x o
};

/// Direct normal-equations solve on the raw rows (weighted when the input
/// carries weights).
inline OracleFit oracle_ols(const ObservationSet& obs) {
  const Matrix& m = obs.features;
  Matrix gram;
  Matrix mty;
  if (obs.weights) {
    gram = m.transpose() * obs.weights->asDiagonal() * m;
    mty = m.transpose() * obs.weights->asDiagonal() * obs.outcomes;
  } else {
    gram = m.transpose() * m;
    mty = m.transpose() * obs.outcomes;
  }
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::RankDeficient, "oracle design is rank deficient");
  }
  OracleFit f;
  f.beta = lu.solve(mty);
  f.residuals = obs.outcomes - m * f.beta;
  return f;
}

struct OracleCovariance {
  std::vector<Matrix> v;  // o matrices
  Vector rss;             // per outcome; weighted: sum of w e^2
  Vector sigma2;          // homoskedastic only, else empty
  double df = 0.0;
};

/// Literal row-level evaluation of the requested covariance structure.
inline OracleCovariance oracle_sandwich(const ObservationSet& obs, const Matrix& residuals,
                                        const CovarianceSpec& spec) {
  const Index n = obs.n_rows();
  const Index p = obs.n_features();
  const Index o = obs.n_outcomes();
  const Matrix& m = obs.features;

  Vector w = Vector::Ones(n);
  if (obs.weights) w = *obs.weights;
  const Matrix gram = m.transpose() * w.asDiagonal() * m;
  Eigen::FullPivLU<Matrix> lu(gram);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::RankDeficient, "oracle design is rank deficient");
  }
  const Matrix pi = lu.inverse();

  OracleCovariance out;
  out.rss = Vector::Zero(o);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < o; ++k) out.rss(k) += w(i) * residuals(i, k) * residuals(i, k);
  }
  const bool analytic = obs.weights && obs.weight_kind == WeightKind::Analytic;
  out.df = (analytic ? w.sum() : static_cast<double>(n)) - static_cast<double>(p);

  switch (spec.kind) {
    case CovarianceKind::Homoskedastic: {
      out.sigma2 = out.rss / out.df;
      for (Index k = 0; k < o; ++k) out.v.push_back(out.sigma2(k) * pi);
      break;
    }
    case CovarianceKind::HeteroskedasticityRobust: {
      for (Index k = 0; k < o; ++k) {
        Matrix xi = Matrix::Zero(p, p);
        for (Index i = 0; i < n; ++i) {
          const double e = residuals(i, k);
          xi.noalias() += w(i) * w(i) * e * e * m.row(i).transpose() * m.row(i);
        }
        out.v.push_back(pi * xi * pi);
      }
      break;
    }
    case CovarianceKind::ClusterRobust: {
      if (!obs.clusters) {
        throw Error(ErrorCode::MissingClusters, "cluster covariance needs cluster labels");
      }
      std::unordered_map<std::string, Index> dense;
      std::vector<Index> of_row(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        const auto it = dense.emplace((*obs.clusters)[static_cast<std::size_t>(i)],
                                      static_cast<Index>(dense.size())).first;
        of_row[static_cast<std::size_t>(i)] = it->second;
      }
      const Index c_count = static_cast<Index>(dense.size());
      for (Index k = 0; k < o; ++k) {
        Matrix scores = Matrix::Zero(p, c_count);
        for (Index i = 0; i < n; ++i) {
          scores.col(of_row[static_cast<std::size_t>(i)]) +=
              w(i) * residuals(i, k) * m.row(i).transpose();
        }
        Matrix xi = Matrix::Zero(p, p);
        for (Index c = 0; c < c_count; ++c) {
          xi.noalias() += scores.col(c) * scores.col(c).transpose();
        }
        out.v.push_back(pi * xi * pi);
      }
      break;
    }
  }
  return out;
}

struct OracleLogistic {
  Vector beta;
  int iterations = 0;
};

/// Newton iteration on the row-level Bernoulli likelihood; converges on the
/// coefficient change, independently of the compressed fit's gradient rule.
inline OracleLogistic oracle_logistic(const ObservationSet& obs, double tol = 1e-12,
                                      int max_iter = 100) {
  const Index n = obs.n_rows();
  const Index p = obs.n_features();
  const Matrix& m = obs.features;
  Vector beta = Vector::Zero(p);

  for (int it = 1; it <= max_iter; ++it) {
    const Vector eta = m * beta;
    Vector grad = Vector::Zero(p);
    Matrix info = Matrix::Zero(p, p);
    for (Index i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-eta(i)));
      grad.noalias() += (obs.outcomes(i, 0) - s) * m.row(i).transpose();
      info.noalias() += s * (1.0 - s) * m.row(i).transpose() * m.row(i);
    }
    Eigen::FullPivLU<Matrix> lu(info);
    if (!lu.isInvertible()) {
      throw Error(ErrorCode::DidNotConverge, "oracle information matrix is singular");
    }
    const Vector step = lu.solve(grad);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < tol) {
      return OracleLogistic{beta, it};
    }
  }
  throw Error(ErrorCode::DidNotConverge,
              "oracle logistic fit did not converge in " + std::to_string(max_iter) +
                  " iterations");
}

/// Row-level log likelihood for cross-checking the compressed one.
inline double oracle_loglik(const ObservationSet& obs, const Vector& beta) {
  const Vector eta = obs.features * beta;
  double ll = 0.0;
  for (Index i = 0; i < obs.n_rows(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-eta(i)));
    ll += obs.outcomes(i, 0) > 0.5 ? std::log(s) : std::log(1.0 - s);
  }
  return ll;
}

/// Materializes the [static | dynamic | static x dynamic] design the panel
/// estimators work with implicitly, so row-level oracles can be run on the
/// very same coefficient layout. Static/dynamic blocks keep original column
/// order; interaction columns iterate static outer, dynamic inner.
inline ObservationSet interaction_design(const ObservationSet& obs,
                                         const std::vector<std::string>& static_cols,
                                         bool interactions) {
  std::vector<Index> static_idx;
  std::vector<Index> dynamic_idx;
  for (Index j = 0; j < obs.n_features(); ++j) {
    const auto& name = obs.feature_names[static_cast<std::size_t>(j)];
    bool is_static = false;
    for (const auto& s : static_cols) {
      if (s == name) {
        is_static = true;
        break;
      }
    }
    (is_static ? static_idx : dynamic_idx).push_back(j);
  }

  ObservationSet out;
  const Index n = obs.n_rows();
  const Index p1 = static_cast<Index>(static_idx.size());
  const Index p2 = static_cast<Index>(dynamic_idx.size());
  const Index total = p1 + p2 + (interactions ? p1 * p2 : 0);
  out.features.resize(n, total);
  for (Index a = 0; a < p1; ++a) {
    out.features.col(a) = obs.features.col(static_idx[static_cast<std::size_t>(a)]);
    out.feature_names.push_back(obs.feature_names[static_cast<std::size_t>(static_idx[static_cast<std::size_t>(a)])]);
  }
  for (Index b = 0; b < p2; ++b) {
    out.features.col(p1 + b) = obs.features.col(dynamic_idx[static_cast<std::size_t>(b)]);
    out.feature_names.push_back(obs.feature_names[static_cast<std::size_t>(dynamic_idx[static_cast<std::size_t>(b)])]);
  }
  if (interactions) {
    for (Index a = 0; a < p1; ++a) {
      for (Index b = 0; b < p2; ++b) {
        out.features.col(p1 + p2 + a * p2 + b) =
            obs.features.col(static_idx[static_cast<std::size_t>(a)]).cwiseProduct(
                obs.features.col(dynamic_idx[static_cast<std::size_t>(b)]));
        out.feature_names.push_back(
            obs.feature_names[static_cast<std::size_t>(static_idx[static_cast<std::size_t>(a)])] + ":" +
            obs.feature_names[static_cast<std::size_t>(dynamic_idx[static_cast<std::size_t>(b)])]);
      }
    }
  }
  out.outcomes = obs.outcomes;
  out.outcome_names = obs.outcome_names;
  out.weights = obs.weights;
  out.weight_kind = obs.weight_kind;
  out.clusters = obs.clusters;
  return out;
}

}  // namespace suffstats
