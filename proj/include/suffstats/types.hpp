#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "suffstats/error.hpp"

namespace suffstats {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// How a weight column is interpreted.
///
/// Frequency weights are row multiplicities and must be positive integers;
/// analytic (precision) weights are arbitrary positive reals. The two kinds
/// produce the same point estimates but different dispersion denominators.
enum class WeightKind { Frequency, Analytic };

/// What identifies a group in a compressed table: the feature row alone, or
/// the feature row together with the outcome values (the frequency-weight
/// encoding, which keeps individual outcome values recoverable).
enum class GroupKeyKind { Features, FeaturesAndOutcomes };

enum class CovarianceKind { Homoskedastic, HeteroskedasticityRobust, ClusterRobust };

/// Algorithm used to assemble the cluster-robust meat. All strategies agree
/// numerically where their input requirements overlap; they differ in which
/// compressed representation they consume and in cost.
enum class ClusterStrategy {
  WithinCluster,   // per-(group, cluster) statistics; works on any clustering
  BetweenCluster,  // clusters deduplicated by identical feature blocks
  StaticDynamic,   // per-cluster moment matrices, static/dynamic split
  BalancedPanel,   // closed forms when every cluster shares one dynamic block
};

struct CovarianceSpec {
  CovarianceKind kind = CovarianceKind::Homoskedastic;
  ClusterStrategy strategy = ClusterStrategy::WithinCluster;
};

/// Row-level input: n observations, p feature columns, o outcome columns.
/// Optional positive weights and optional cluster labels, both row-aligned.
struct ObservationSet {
  Matrix features;                          // n x p
  Matrix outcomes;                          // n x o
  std::vector<std::string> feature_names;   // size p
  std::vector<std::string> outcome_names;   // size o
  std::optional<Vector> weights;            // size n when present
  WeightKind weight_kind = WeightKind::Frequency;
  std::optional<std::vector<std::string>> clusters;  // size n when present

  Index n_rows() const { return features.rows(); }
  Index n_features() const { return features.cols(); }
  Index n_outcomes() const { return outcomes.cols(); }
};

/// Checks the ObservationSet invariants:
///  - features/outcomes/weights/clusters agree on the row count,
///  - names match the corresponding column counts,
///  - every value is finite (no NaN/Inf placeholders for missing data),
///  - weights are strictly positive, and integral for frequency weights.
inline void validate(const ObservationSet& obs) {
  const Index n = obs.features.rows();
  if (obs.outcomes.rows() != n) {
    throw Error(ErrorCode::DimensionMismatch,
                "features have " + std::to_string(n) + " rows but outcomes have " +
                    std::to_string(obs.outcomes.rows()));
  }
  if (static_cast<Index>(obs.feature_names.size()) != obs.features.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature_names size does not match feature column count");
  }
  if (static_cast<Index>(obs.outcome_names.size()) != obs.outcomes.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "outcome_names size does not match outcome column count");
  }
  for (Index j = 0; j < obs.features.cols(); ++j) {
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(obs.features(i, j))) {
        throw Error(ErrorCode::MissingValue,
                    "non-finite value in feature column '" + obs.feature_names[j] +
                        "' at row " + std::to_string(i));
      }
    }
  }
  for (Index k = 0; k < obs.outcomes.cols(); ++k) {
    for (Index i = 0; i < n; ++i) {
      if (!std::isfinite(obs.outcomes(i, k))) {
        throw Error(ErrorCode::MissingValue,
                    "non-finite value in outcome column '" + obs.outcome_names[k] +
                        "' at row " + std::to_string(i));
      }
    }
  }
  if (obs.weights) {
    if (obs.weights->size() != n) {
      throw Error(ErrorCode::DimensionMismatch, "weights size does not match row count");
    }
    for (Index i = 0; i < n; ++i) {
      const double w = (*obs.weights)(i);
      if (!std::isfinite(w) || w <= 0.0) {
        throw Error(ErrorCode::NonPositiveWeight,
                    "weight at row " + std::to_string(i) + " is not a positive real");
      }
      if (obs.weight_kind == WeightKind::Frequency && w != std::floor(w)) {
        throw Error(ErrorCode::NonIntegerFrequencyWeight,
                    "frequency weight at row " + std::to_string(i) + " is not an integer");
      }
    }
  }
  if (obs.clusters && static_cast<Index>(obs.clusters->size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "clusters size does not match row count");
  }
}

/// Weighted accumulation blocks attached to a SuffStatsTable when the source
/// rows carried weights. Per group g: sums of w, w*y, w*y^2 and the squared
/// variants (w^2, w^2*y, w^2*y^2). The squared blocks exist so that the
/// weighted heteroskedasticity-robust meat stays recoverable.
struct WeightedBlocks {
  WeightKind kind = WeightKind::Frequency;
  Vector w_sum;      // G
  Matrix wy_sum;     // G x o
  Matrix wy_sq_sum;  // G x o
  Vector w2_sum;     // G
  Matrix w2y_sum;    // G x o
  Matrix w2y_sq_sum; // G x o
};

/// Conditionally sufficient statistics for least squares: one record per
/// distinct key holding the feature row, per-outcome sums of y and y^2, and
/// the row count. Group-level tables (no y^2 block) support point estimates
/// but not exact dispersion, which `has_y_sq()` exposes.
///
/// Rows are sorted by the canonical byte encoding of their key, so equal
/// inputs compress to identical tables regardless of construction path.
struct SuffStatsTable {
  std::vector<std::string> feature_names;  // size p
  std::vector<std::string> outcome_names;  // size o
  GroupKeyKind key_kind = GroupKeyKind::Features;

  Matrix unique_features;  // G x p
  Matrix y_sum;            // G x o
  std::optional<Matrix> y_sq_sum_;  // G x o; absent for group-level tables
  Vector count;            // G, integral and >= 1

  /// Outcome values that were folded into the group key (frequency-weight
  /// encoding only). Keeps the table mergeable and serializable without
  /// reconstructing y from y_sum / count, which is not bit-exact.
  std::optional<Matrix> key_outcomes;  // G x o

  std::optional<WeightedBlocks> weighted;
  std::optional<std::vector<std::string>> cluster;  // size G when key includes clusters

  Index n_groups() const { return unique_features.rows(); }
  Index n_features() const { return unique_features.cols(); }
  Index n_outcomes() const { return y_sum.cols(); }

  /// Total number of source rows represented by the table.
  double n_rows() const { return count.size() == 0 ? 0.0 : count.sum(); }

  bool has_y_sq() const { return y_sq_sum_.has_value(); }

  /// Throws UnavailableStatistic for group-level tables, where the sum of
  /// squared outcomes was discarded and exact dispersion is unrecoverable.
  const Matrix& y_sq_sum() const {
    if (!y_sq_sum_) {
      throw Error(ErrorCode::UnavailableStatistic,
                  "table holds group-level statistics only; sums of squared "
                  "outcomes were not retained");
    }
    return *y_sq_sum_;
  }
};

/// Between-cluster compression: clusters deduplicated by their ordered
/// feature block. One entry per distinct block pattern.
struct BetweenClusterEntry {
  Matrix features;       // T_g x p, the shared ordered feature block
  Matrix y_sum;          // T_g x o, per position: sum of y over clusters
  std::vector<Matrix> y_outer_sum;  // o matrices, each T_g x T_g: sum of y_c y_c^T
  double cluster_count = 0.0;       // number of clusters sharing the block
};

struct ClusterStatsTable {
  std::vector<std::string> feature_names;
  std::vector<std::string> outcome_names;
  std::vector<BetweenClusterEntry> entries;

  Index n_features() const { return static_cast<Index>(feature_names.size()); }
  Index n_outcomes() const { return static_cast<Index>(outcome_names.size()); }

  double n_rows() const {
    double n = 0.0;
    for (const auto& e : entries) n += e.cluster_count * static_cast<double>(e.features.rows());
    return n;
  }
  double n_clusters() const {
    double c = 0.0;
    for (const auto& e : entries) c += e.cluster_count;
    return c;
  }
};

/// Per-cluster moment statistics under a static/dynamic column split.
///
/// Static columns are constant within every cluster; dynamic columns vary.
/// Stored per cluster c with dynamic block M2_c (T_c x p2):
///   static_rows.row(c)   the shared static feature values (p1)
///   y_sum(c, k)          sum of outcome k over the cluster
///   count(c)             T_c
///   col_sums.col(c)      M2_c^T 1
///   y_weighted[k].col(c) M2_c^T y_c
///   gram_blocks[c]       M2_c^T M2_c
///
/// When every cluster has the same T and bitwise-identical dynamic block
/// (`balanced`), one shared block and one gram are stored, and `y_matrix[k]`
/// holds outcome k reshaped to T x C so the estimator can use single
/// matrix-matrix products instead of per-cluster loops.
struct PanelStatsTable {
  std::vector<std::string> static_names;   // size p1
  std::vector<std::string> dynamic_names;  // size p2
  std::vector<std::string> outcome_names;  // size o
  std::vector<std::string> cluster_labels; // size C, first-appearance order

  Matrix static_rows;            // C x p1
  Matrix y_sum;                  // C x o
  Vector count;                  // C
  Matrix col_sums;               // p2 x C
  std::vector<Matrix> y_weighted;   // o matrices, p2 x C
  std::vector<Matrix> gram_blocks;  // C matrices (unbalanced) or 1 (balanced)

  bool balanced = false;
  Index periods = 0;             // T when balanced
  Matrix shared_dynamic;         // T x p2 when balanced
  std::vector<Matrix> y_matrix;  // o matrices, T x C, balanced only

  Index n_clusters() const { return static_rows.rows(); }
  Index n_static() const { return static_rows.cols(); }
  Index n_dynamic() const { return col_sums.rows(); }
  Index n_outcomes() const { return y_sum.cols(); }
  double n_rows() const { return count.size() == 0 ? 0.0 : count.sum(); }
};

struct Diagnostics {
  double n = 0.0;                // source rows
  double n_groups = 0.0;         // compressed records
  double n_clusters = 0.0;       // 0 when no clustering
  double compression_ratio = 0.0;  // n / n_groups
  bool converged = true;         // logistic only
  int iterations = 0;            // logistic only
};

/// Estimation output. One column of `coefficients` per outcome; one
/// covariance matrix per outcome. `covariance_exact` is false when the input
/// table cannot support the requested covariance (group-level statistics),
/// in which case `covariance` and `std_errors` are left empty.
struct FitResult {
  std::vector<std::string> coefficient_names;
  std::vector<std::string> outcome_names;
  Matrix coefficients;                 // p x o
  std::vector<Matrix> covariance;      // o matrices, p x p
  Matrix std_errors;                   // p x o
  Vector sigma2;                       // o, homoskedastic specs only
  double df_residual = 0.0;            // n - p (sum(w) - p under analytic weights)
  CovarianceSpec spec;
  bool covariance_exact = true;
  Diagnostics diagnostics;
};

}  // namespace suffstats
