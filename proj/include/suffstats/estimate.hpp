#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "suffstats/types.hpp"

namespace suffstats {

/// The sandwich bread: the weighted design gram matrix, its inverse, and the
/// rank the factorization established. `pi * gram` is the identity whenever
/// construction succeeded (rank == p is enforced with an error).
struct BreadMatrix {
  Matrix pi;    // p x p, (M~^T diag(n~) M~)^-1
  Matrix gram;  // p x p, uninverted
  Index rank = 0;
};

/// Center of the sandwich, one matrix per outcome, tagged with the
/// covariance structure that produced it.
struct MeatMatrix {
  std::vector<Matrix> xi;  // o matrices, p x p
  CovarianceSpec spec;
};

struct Dispersion {
  Vector rss;     // per outcome
  Vector sigma2;  // per outcome, rss / df_residual
  double df_residual = 0.0;
};

namespace detail {

inline constexpr double kPivotTolerance = 1e-12;

/// Diagonally pivoted Cholesky of a symmetric PSD matrix. Stops at the first
/// pivot below kPivotTolerance times the largest initial diagonal; the
/// original indices left unfactored (`perm[rank..p-1]`) identify a collinear
/// column set.
struct CholeskyFactor {
  Matrix l;                 // p x p lower triangular, rows/cols in pivot order
  std::vector<Index> perm;  // pivot position -> original index
  Index rank = 0;
  Index dim = 0;

  bool full_rank() const { return rank == dim; }
};

inline CholeskyFactor pivoted_cholesky(const Matrix& a) {
  const Index p = a.rows();
  CholeskyFactor f;
  f.dim = p;
  f.perm.resize(static_cast<std::size_t>(p));
  std::iota(f.perm.begin(), f.perm.end(), Index{0});
  f.l = Matrix::Zero(p, p);

  Vector d(p);
  double max_diag = 0.0;
  for (Index j = 0; j < p; ++j) {
    d(j) = a(j, j);
    max_diag = std::max(max_diag, d(j));
  }
  const double tol = kPivotTolerance * max_diag;

  for (Index k = 0; k < p; ++k) {
    Index best = k;
    for (Index j = k + 1; j < p; ++j) {
      if (d(f.perm[static_cast<std::size_t>(j)]) > d(f.perm[static_cast<std::size_t>(best)])) best = j;
    }
    const Index ok = f.perm[static_cast<std::size_t>(best)];
    if (!(d(ok) > tol)) {
      f.rank = k;
      return f;
    }
    if (best != k) {
      std::swap(f.perm[static_cast<std::size_t>(k)], f.perm[static_cast<std::size_t>(best)]);
      // Rows of l track pivot positions; keep them aligned with perm.
      f.l.row(k).head(k).swap(f.l.row(best).head(k));
    }

    f.l(k, k) = std::sqrt(d(ok));
    for (Index j = k + 1; j < p; ++j) {
      const Index oj = f.perm[static_cast<std::size_t>(j)];
      double s = a(oj, ok);
      for (Index t = 0; t < k; ++t) s -= f.l(j, t) * f.l(k, t);
      f.l(j, k) = s / f.l(k, k);
      d(oj) -= f.l(j, k) * f.l(j, k);
    }
  }
  f.rank = p;
  return f;
}

inline Error rank_error(const CholeskyFactor& f, const std::vector<std::string>& names) {
  std::vector<std::string> cols;
  for (Index k = f.rank; k < f.dim; ++k) {
    cols.push_back(names[static_cast<std::size_t>(f.perm[static_cast<std::size_t>(k)])]);
  }
  std::sort(cols.begin(), cols.end());
  return rank_deficient_error(std::move(cols));
}

/// Solves (L L^T) x = b in the pivoted basis, mapping in and out of the
/// original column order.
inline Vector cholesky_solve(const CholeskyFactor& f, const Vector& b) {
  const Index p = f.dim;
  Vector z(p);
  for (Index k = 0; k < p; ++k) {
    double s = b(f.perm[static_cast<std::size_t>(k)]);
    for (Index t = 0; t < k; ++t) s -= f.l(k, t) * z(t);
    z(k) = s / f.l(k, k);
  }
  for (Index k = p - 1; k >= 0; --k) {
    double s = z(k);
    for (Index t = k + 1; t < p; ++t) s -= f.l(t, k) * z(t);
    z(k) = s / f.l(k, k);
  }
  Vector x(p);
  for (Index k = 0; k < p; ++k) x(f.perm[static_cast<std::size_t>(k)]) = z(k);
  return x;
}

inline Matrix cholesky_solve(const CholeskyFactor& f, const Matrix& b) {
  Matrix x(b.rows(), b.cols());
  for (Index c = 0; c < b.cols(); ++c) x.col(c) = cholesky_solve(f, Vector(b.col(c)));
  return x;
}

inline Matrix cholesky_inverse(const CholeskyFactor& f) {
  Matrix inv = cholesky_solve(f, Matrix(Matrix::Identity(f.dim, f.dim)));
  return ((inv + inv.transpose()) / 2.0).eval();
}

/// Weighted normal equations read off a compressed table. The per-group
/// weight is the row count, or the summed weight for weighted tables.
struct NormalEq {
  Matrix gram;  // p x p
  Matrix mty;   // p x o
  Vector group_weight;  // G
  double n = 0.0;       // raw source rows
  double w_total = 0.0; // equals n for unweighted tables
};

inline NormalEq normal_equations(const SuffStatsTable& t) {
  const Index g = t.n_groups();
  const Index p = t.n_features();
  NormalEq eq;
  eq.group_weight = t.weighted ? t.weighted->w_sum : t.count;
  eq.gram = Matrix::Zero(p, p);
  eq.mty = Matrix::Zero(p, t.n_outcomes());
  const Matrix& ysum = t.weighted ? t.weighted->wy_sum : t.y_sum;
  for (Index i = 0; i < g; ++i) {
    eq.gram.noalias() += eq.group_weight(i) * t.unique_features.row(i).transpose() *
                         t.unique_features.row(i);
    eq.mty.noalias() += t.unique_features.row(i).transpose() * ysum.row(i);
  }
  eq.n = t.n_rows();
  eq.w_total = eq.group_weight.size() == 0 ? 0.0 : eq.group_weight.sum();
  return eq;
}

inline CholeskyFactor factor_or_throw(const Matrix& gram,
                                      const std::vector<std::string>& names) {
  CholeskyFactor f = pivoted_cholesky(gram);
  if (!f.full_rank()) throw rank_error(f, names);
  return f;
}

/// Per-group residual second moments: yhat^2 n - 2 yhat y' + y'', the exact
/// sum of squared residuals inside the group. Weighted tables use the
/// squared-weight blocks, giving the sum of w^2 e^2 instead.
inline Matrix group_rss(const SuffStatsTable& t, const Matrix& beta, bool for_ehw) {
  const Matrix eta = t.unique_features * beta;  // G x o
  const Index g = t.n_groups();
  const Index o = t.n_outcomes();
  Matrix out(g, o);
  if (!t.weighted) {
    const Matrix& ysq = t.y_sq_sum();
    for (Index i = 0; i < g; ++i) {
      for (Index k = 0; k < o; ++k) {
        out(i, k) = eta(i, k) * eta(i, k) * t.count(i) - 2.0 * eta(i, k) * t.y_sum(i, k) +
                    ysq(i, k);
      }
    }
    return out;
  }
  const auto& wb = *t.weighted;
  const Vector& w = for_ehw ? wb.w2_sum : wb.w_sum;
  const Matrix& wy = for_ehw ? wb.w2y_sum : wb.wy_sum;
  const Matrix& wyy = for_ehw ? wb.w2y_sq_sum : wb.wy_sq_sum;
  for (Index i = 0; i < g; ++i) {
    for (Index k = 0; k < o; ++k) {
      out(i, k) = eta(i, k) * eta(i, k) * w(i) - 2.0 * eta(i, k) * wy(i, k) + wyy(i, k);
    }
  }
  return out;
}

inline void check_beta(const Matrix& beta, Index p, Index o) {
  if (beta.rows() != p || beta.cols() != o) {
    throw Error(ErrorCode::DimensionMismatch,
                "coefficient matrix must be " + std::to_string(p) + " x " + std::to_string(o));
  }
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline Vector kron_vec(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core estimator pieces
// ---------------------------------------------------------------------------

/// The sandwich bread: inverse of the count-weighted (or weight-weighted)
/// gram matrix of the unique feature rows. Throws RankDeficient, naming a
/// collinear column set, when the design does not have full column rank.
inline BreadMatrix bread(const SuffStatsTable& t) {
  const auto eq = detail::normal_equations(t);
  const auto f = detail::factor_or_throw(eq.gram, t.feature_names);
  return BreadMatrix{detail::cholesky_inverse(f), eq.gram, f.rank};
}

/// Weighted least squares on the compressed records: one coefficient column
/// per outcome, identical to the uncompressed least-squares solution.
inline Matrix solve_wls(const SuffStatsTable& t) {
  const auto eq = detail::normal_equations(t);
  const auto f = detail::factor_or_throw(eq.gram, t.feature_names);
  return detail::cholesky_solve(f, eq.mty);
}

/// Residual sum of squares recovered from the compressed moments, and the
/// dispersion estimate rss / df. The residual degrees of freedom are
/// n - p for unweighted and frequency-weighted tables (n counting source
/// rows) and sum(w) - p for analytic weights.
inline Dispersion rss_compressed(const SuffStatsTable& t, const Matrix& beta) {
  detail::check_beta(beta, t.n_features(), t.n_outcomes());
  const Matrix per_group = detail::group_rss(t, beta, /*for_ehw=*/false);
  Dispersion d;
  d.rss = Vector::Zero(t.n_outcomes());
  for (Index i = 0; i < per_group.rows(); ++i) d.rss += per_group.row(i).transpose();
  for (Index k = 0; k < d.rss.size(); ++k) d.rss(k) = std::max(d.rss(k), 0.0);

  const double base = (t.weighted && t.weighted->kind == WeightKind::Analytic)
                          ? t.weighted->w_sum.sum()
                          : t.n_rows();
  d.df_residual = base - static_cast<double>(t.n_features());
  if (d.df_residual <= 0.0) {
    throw Error(ErrorCode::NonPositiveDF,
                "residual degrees of freedom " + std::to_string(d.df_residual) +
                    " is not positive");
  }
  d.sigma2 = d.rss / d.df_residual;
  return d;
}

/// Homoskedastic meat: sigma^2 times the weighted gram, per outcome.
inline MeatMatrix meat_homoskedastic(const SuffStatsTable& t, const Matrix& beta) {
  const Dispersion d = rss_compressed(t, beta);
  const auto eq = detail::normal_equations(t);
  MeatMatrix m;
  m.spec = {CovarianceKind::Homoskedastic, ClusterStrategy::WithinCluster};
  for (Index k = 0; k < t.n_outcomes(); ++k) m.xi.push_back(d.sigma2(k) * eq.gram);
  return m;
}

/// Heteroskedasticity-robust meat: each unique feature row enters with its
/// exact within-group residual sum of squares, so the result equals the
/// row-level sum of e_i^2 m_i m_i^T (w_i^2 e_i^2 for weighted input).
inline MeatMatrix meat_ehw(const SuffStatsTable& t, const Matrix& beta) {
  detail::check_beta(beta, t.n_features(), t.n_outcomes());
  const Matrix per_group = detail::group_rss(t, beta, /*for_ehw=*/true);
  const Index p = t.n_features();
  MeatMatrix m;
  m.spec = {CovarianceKind::HeteroskedasticityRobust, ClusterStrategy::WithinCluster};
  m.xi.assign(static_cast<std::size_t>(t.n_outcomes()), Matrix::Zero(p, p));
  for (Index i = 0; i < t.n_groups(); ++i) {
    const Matrix outer =
        t.unique_features.row(i).transpose() * t.unique_features.row(i);
    for (Index k = 0; k < t.n_outcomes(); ++k) {
      m.xi[static_cast<std::size_t>(k)].noalias() += per_group(i, k) * outer;
    }
  }
  return m;
}

/// Cluster-robust meat from a cluster-keyed table. Accumulates per-cluster
/// score vectors s_c = sum_g m~_g (y'_g - n~_g yhat_g) over the groups of
/// each cluster, then sums s_c s_c^T. Needs first moments only, so it works
/// on cluster-keyed group-level tables too.
inline MeatMatrix meat_cluster_within(const SuffStatsTable& t, const Matrix& beta) {
  detail::check_beta(beta, t.n_features(), t.n_outcomes());
  if (!t.cluster) {
    throw Error(ErrorCode::MissingClusters, "table was not compressed with a cluster key");
  }
  if (t.weighted) {
    throw Error(ErrorCode::InvalidArgument,
                "cluster-robust covariance for weighted tables is not supported");
  }
  const Index p = t.n_features();
  const Index o = t.n_outcomes();

  std::unordered_map<std::string_view, Index> cluster_of;
  Index c_count = 0;
  std::vector<Index> dense(static_cast<std::size_t>(t.n_groups()));
  for (Index i = 0; i < t.n_groups(); ++i) {
    auto [it, inserted] = cluster_of.emplace((*t.cluster)[static_cast<std::size_t>(i)], c_count);
    if (inserted) ++c_count;
    dense[static_cast<std::size_t>(i)] = it->second;
  }

  const Matrix eta = t.unique_features * beta;
  std::vector<Matrix> scores(static_cast<std::size_t>(o), Matrix::Zero(p, c_count));
  for (Index i = 0; i < t.n_groups(); ++i) {
    const Index c = dense[static_cast<std::size_t>(i)];
    for (Index k = 0; k < o; ++k) {
      const double resid_sum = t.y_sum(i, k) - t.count(i) * eta(i, k);
      scores[static_cast<std::size_t>(k)].col(c) +=
          resid_sum * t.unique_features.row(i).transpose();
    }
  }

  MeatMatrix m;
  m.spec = {CovarianceKind::ClusterRobust, ClusterStrategy::WithinCluster};
  m.xi.assign(static_cast<std::size_t>(o), Matrix::Zero(p, p));
  for (Index k = 0; k < o; ++k) {
    for (Index c = 0; c < c_count; ++c) {
      m.xi[static_cast<std::size_t>(k)].noalias() +=
          scores[static_cast<std::size_t>(k)].col(c) * scores[static_cast<std::size_t>(k)].col(c).transpose();
    }
  }
  return m;
}

/// Cluster-robust meat from block-deduplicated clusters. Per entry g with
/// shared block A and predicted vector h = A beta:
///   Xi += A^T (Y'' - y' h^T - h y'^T + n_g h h^T) A
/// which reproduces sum_c (A^T e_c)(A^T e_c)^T without per-cluster outcomes.
inline MeatMatrix meat_cluster_between(const ClusterStatsTable& t, const Matrix& beta) {
  const Index p = t.n_features();
  const Index o = t.n_outcomes();
  detail::check_beta(beta, p, o);
  MeatMatrix m;
  m.spec = {CovarianceKind::ClusterRobust, ClusterStrategy::BetweenCluster};
  m.xi.assign(static_cast<std::size_t>(o), Matrix::Zero(p, p));
  for (const auto& e : t.entries) {
    const Matrix h = e.features * beta;  // T_g x o
    for (Index k = 0; k < o; ++k) {
      const Matrix inner = e.y_outer_sum[static_cast<std::size_t>(k)] -
                           e.y_sum.col(k) * h.col(k).transpose() -
                           h.col(k) * e.y_sum.col(k).transpose() +
                           e.cluster_count * h.col(k) * h.col(k).transpose();
      m.xi[static_cast<std::size_t>(k)].noalias() +=
          e.features.transpose() * inner * e.features;
    }
  }
  return m;
}

namespace detail {

/// The panel coefficient layout is [static | dynamic | static x dynamic],
/// interaction column (j, k) living at j * p2 + k.
struct PanelLayout {
  Index p1 = 0, p2 = 0;
  bool interactions = false;
  Index dim() const { return p1 + p2 + (interactions ? p1 * p2 : 0); }
};

inline PanelLayout panel_layout(const PanelStatsTable& t, bool interactions) {
  return PanelLayout{t.n_static(), t.n_dynamic(), interactions};
}

inline std::vector<std::string> panel_names(const PanelStatsTable& t, const PanelLayout& lay) {
  std::vector<std::string> names = t.static_names;
  names.insert(names.end(), t.dynamic_names.begin(), t.dynamic_names.end());
  if (lay.interactions) {
    for (const auto& sn : t.static_names) {
      for (const auto& dn : t.dynamic_names) names.push_back(sn + ":" + dn);
    }
  }
  return names;
}

/// Per-outcome slices of a panel coefficient vector, with the interaction
/// part reshaped (column-major) to a p2 x p1 matrix so that the column-j
/// slice multiplies the static value a_j.
struct PanelBeta {
  Vector b1;  // p1
  Vector b2;  // p2
  Matrix b3;  // p2 x p1, zero when no interactions
};

inline PanelBeta split_panel_beta(const Vector& beta, const PanelLayout& lay) {
  PanelBeta s;
  s.b1 = beta.segment(0, lay.p1);
  s.b2 = beta.segment(lay.p1, lay.p2);
  s.b3 = Matrix::Zero(lay.p2, lay.p1);
  if (lay.interactions) {
    for (Index j = 0; j < lay.p1; ++j) {
      s.b3.col(j) = beta.segment(lay.p1 + lay.p2 + j * lay.p2, lay.p2);
    }
  }
  return s;
}

inline const Matrix& panel_gram_block(const PanelStatsTable& t, Index c) {
  return t.gram_blocks.size() == 1 ? t.gram_blocks[0]
                                   : t.gram_blocks[static_cast<std::size_t>(c)];
}

/// Normal equations assembled from per-cluster moments, one K^1 / K^2 pair
/// per cluster summed in cluster order.
inline NormalEq panel_normal_equations(const PanelStatsTable& t, const PanelLayout& lay) {
  const Index p = lay.dim();
  const Index o = t.n_outcomes();
  NormalEq eq;
  eq.gram = Matrix::Zero(p, p);
  eq.mty = Matrix::Zero(p, o);

  Matrix g11 = Matrix::Zero(lay.p1, lay.p1);
  Matrix g12 = Matrix::Zero(lay.p1, lay.p2);
  Matrix g22 = Matrix::Zero(lay.p2, lay.p2);
  Matrix g13, g23, g33;
  if (lay.interactions) {
    g13 = Matrix::Zero(lay.p1, lay.p1 * lay.p2);
    g23 = Matrix::Zero(lay.p2, lay.p1 * lay.p2);
    g33 = Matrix::Zero(lay.p1 * lay.p2, lay.p1 * lay.p2);
  }

  for (Index c = 0; c < t.n_clusters(); ++c) {
    const Vector a = t.static_rows.row(c).transpose();
    const Vector s = t.col_sums.col(c);
    const Matrix& gc = panel_gram_block(t, c);
    const Matrix aat = a * a.transpose();

    g11.noalias() += t.count(c) * aat;
    g12.noalias() += a * s.transpose();
    g22 += gc;
    if (lay.interactions) {
      g13 += kron(aat, Matrix(s.transpose()));
      g23 += kron(Matrix(a.transpose()), gc);
      g33 += kron(aat, gc);
    }

    for (Index k = 0; k < o; ++k) {
      const Vector u = t.y_weighted[static_cast<std::size_t>(k)].col(c);
      eq.mty.col(k).segment(0, lay.p1) += t.y_sum(c, k) * a;
      eq.mty.col(k).segment(lay.p1, lay.p2) += u;
      if (lay.interactions) {
        eq.mty.col(k).segment(lay.p1 + lay.p2, lay.p1 * lay.p2) += kron_vec(a, u);
      }
    }
  }

  eq.gram.block(0, 0, lay.p1, lay.p1) = g11;
  eq.gram.block(0, lay.p1, lay.p1, lay.p2) = g12;
  eq.gram.block(lay.p1, 0, lay.p2, lay.p1) = g12.transpose();
  eq.gram.block(lay.p1, lay.p1, lay.p2, lay.p2) = g22;
  if (lay.interactions) {
    const Index off = lay.p1 + lay.p2;
    const Index pi = lay.p1 * lay.p2;
    eq.gram.block(0, off, lay.p1, pi) = g13;
    eq.gram.block(off, 0, pi, lay.p1) = g13.transpose();
    eq.gram.block(lay.p1, off, lay.p2, pi) = g23;
    eq.gram.block(off, lay.p1, pi, lay.p2) = g23.transpose();
    eq.gram.block(off, off, pi, pi) = g33;
  }
  eq.n = t.n_rows();
  eq.w_total = eq.n;
  return eq;
}

/// Closed-form normal equations for balanced tables: every cluster shares
/// one dynamic block, so all K^1 sums collapse to Kronecker products of
/// static-side grams with the shared dynamic moments, and the outcome side
/// reduces to products against U = M2^T Y.
inline NormalEq balanced_normal_equations(const PanelStatsTable& t, const PanelLayout& lay) {
  const Index o = t.n_outcomes();
  const double c_count = static_cast<double>(t.n_clusters());
  const double periods = static_cast<double>(t.periods);

  const Matrix& m1 = t.static_rows;              // C x p1
  const Matrix m1tm1 = m1.transpose() * m1;      // p1 x p1
  const Vector m1t1 = m1.colwise().sum().transpose();  // p1
  const Matrix& gt = t.gram_blocks[0];           // p2 x p2
  const Vector st = t.shared_dynamic.colwise().sum().transpose();  // p2

  NormalEq eq;
  const Index p = lay.dim();
  eq.gram = Matrix::Zero(p, p);
  eq.mty = Matrix::Zero(p, o);

  eq.gram.block(0, 0, lay.p1, lay.p1) = periods * m1tm1;
  eq.gram.block(0, lay.p1, lay.p1, lay.p2) = m1t1 * st.transpose();
  eq.gram.block(lay.p1, 0, lay.p2, lay.p1) = st * m1t1.transpose();
  eq.gram.block(lay.p1, lay.p1, lay.p2, lay.p2) = c_count * gt;
  if (lay.interactions) {
    const Index off = lay.p1 + lay.p2;
    const Index pi = lay.p1 * lay.p2;
    const Matrix g13 = kron(m1tm1, Matrix(st.transpose()));
    const Matrix g23 = kron(Matrix(m1t1.transpose()), gt);
    eq.gram.block(0, off, lay.p1, pi) = g13;
    eq.gram.block(off, 0, pi, lay.p1) = g13.transpose();
    eq.gram.block(lay.p1, off, lay.p2, pi) = g23;
    eq.gram.block(off, lay.p1, pi, lay.p2) = g23.transpose();
    eq.gram.block(off, off, pi, pi) = kron(m1tm1, gt);
  }

  for (Index k = 0; k < o; ++k) {
    const Matrix u = t.shared_dynamic.transpose() * t.y_matrix[static_cast<std::size_t>(k)];  // p2 x C
    eq.mty.col(k).segment(0, lay.p1) = m1.transpose() * t.y_sum.col(k);
    eq.mty.col(k).segment(lay.p1, lay.p2) = u.rowwise().sum();
    if (lay.interactions) {
      const Matrix um1 = u * m1;  // p2 x p1; column-major flatten is (j outer, k inner)
      eq.mty.col(k).segment(lay.p1 + lay.p2, lay.p1 * lay.p2) =
          Eigen::Map<const Vector>(um1.data(), um1.size());
    }
  }
  eq.n = periods * c_count;
  eq.w_total = eq.n;
  return eq;
}

/// One cluster's score vector given its moments: the residual-weighted
/// feature sums in the [static | dynamic | interaction] layout. The
/// interaction slice is a (Kronecker) copy of the dynamic slice, which the
/// block structure of K^1 and K^2 guarantees.
inline void panel_score(const PanelBeta& pb, const PanelLayout& lay, const Vector& a,
                        const Vector& s, const Matrix& gc, const Vector& u, double count,
                        double y_sum, const Matrix& gb3, Vector* score) {
  const double a_b1 = a.dot(pb.b1);
  const double s_b2 = s.dot(pb.b2);
  const Vector b3a = pb.b3 * a;  // zero vector when no interactions

  const double static_resid = y_sum - count * a_b1 - s_b2 - s.dot(b3a);
  score->segment(0, lay.p1) = static_resid * a;

  const Vector dyn = u - a_b1 * s - gc * pb.b2 - gb3 * a;
  score->segment(lay.p1, lay.p2) = dyn;
  if (lay.interactions) {
    score->segment(lay.p1 + lay.p2, lay.p1 * lay.p2) = kron_vec(a, dyn);
  }
}

}  // namespace detail

/// Cluster-robust meat from per-cluster moment statistics, one rank-one
/// score update per cluster. With `interactions` every static x dynamic
/// product column participates without ever being materialized.
inline MeatMatrix meat_cluster_static_dynamic(const PanelStatsTable& t, const Matrix& beta,
                                              bool interactions = false) {
  const auto lay = detail::panel_layout(t, interactions);
  const Index o = t.n_outcomes();
  detail::check_beta(beta, lay.dim(), o);

  MeatMatrix m;
  m.spec = {CovarianceKind::ClusterRobust, ClusterStrategy::StaticDynamic};
  m.xi.assign(static_cast<std::size_t>(o), Matrix::Zero(lay.dim(), lay.dim()));
  Vector score(lay.dim());
  for (Index k = 0; k < o; ++k) {
    const auto pb = detail::split_panel_beta(Vector(beta.col(k)), lay);
    for (Index c = 0; c < t.n_clusters(); ++c) {
      const Matrix& gc = detail::panel_gram_block(t, c);
      detail::panel_score(pb, lay, t.static_rows.row(c).transpose(), t.col_sums.col(c), gc,
                          t.y_weighted[static_cast<std::size_t>(k)].col(c), t.count(c),
                          t.y_sum(c, k), Matrix(gc * pb.b3), &score);
      m.xi[static_cast<std::size_t>(k)].noalias() += score * score.transpose();
    }
  }
  return m;
}

/// Balanced-panel speedup of meat_cluster_static_dynamic: the shared dynamic
/// block turns all outcome contractions into one dense product U = M2^T Y,
/// and the per-cluster work no longer touches anything T-sized.
inline MeatMatrix meat_balanced_panel(const PanelStatsTable& t, const Matrix& beta,
                                      bool interactions = false) {
  if (!t.balanced) {
    throw Error(ErrorCode::NotBalanced,
                "table is not balanced; clusters do not share one dynamic block");
  }
  const auto lay = detail::panel_layout(t, interactions);
  const Index o = t.n_outcomes();
  detail::check_beta(beta, lay.dim(), o);

  const Matrix& gt = t.gram_blocks[0];
  const Vector st = t.shared_dynamic.colwise().sum().transpose();
  const double periods = static_cast<double>(t.periods);

  MeatMatrix m;
  m.spec = {CovarianceKind::ClusterRobust, ClusterStrategy::BalancedPanel};
  m.xi.assign(static_cast<std::size_t>(o), Matrix::Zero(lay.dim(), lay.dim()));
  Vector score(lay.dim());
  for (Index k = 0; k < o; ++k) {
    const auto pb = detail::split_panel_beta(Vector(beta.col(k)), lay);
    const Matrix u = t.shared_dynamic.transpose() * t.y_matrix[static_cast<std::size_t>(k)];
    const Matrix gb3 = gt * pb.b3;
    for (Index c = 0; c < t.n_clusters(); ++c) {
      detail::panel_score(pb, lay, t.static_rows.row(c).transpose(), st, gt, u.col(c),
                          periods, t.y_sum(c, k), gb3, &score);
      m.xi[static_cast<std::size_t>(k)].noalias() += score * score.transpose();
    }
  }
  return m;
}

/// V = Pi Xi Pi, one covariance per outcome.
inline std::vector<Matrix> sandwich(const BreadMatrix& bread, const MeatMatrix& meat) {
  std::vector<Matrix> v;
  v.reserve(meat.xi.size());
  for (const auto& xi : meat.xi) v.push_back(bread.pi * xi * bread.pi);
  return v;
}

// ---------------------------------------------------------------------------
// fit: one call from compressed table to coefficients plus covariance
// ---------------------------------------------------------------------------

namespace detail {

inline void finish_covariance(FitResult* r, const BreadMatrix& pi, const MeatMatrix& meat) {
  r->covariance = sandwich(pi, meat);
  const Index p = r->coefficients.rows();
  const Index o = r->coefficients.cols();
  r->std_errors.resize(p, o);
  for (Index k = 0; k < o; ++k) {
    for (Index j = 0; j < p; ++j) {
      r->std_errors(j, k) = std::sqrt(std::max(r->covariance[static_cast<std::size_t>(k)](j, j), 0.0));
    }
  }
}

}  // namespace detail

inline FitResult fit(const SuffStatsTable& t, const CovarianceSpec& spec) {
  if (spec.kind == CovarianceKind::ClusterRobust) {
    if (spec.strategy != ClusterStrategy::WithinCluster) {
      throw Error(ErrorCode::InvalidArgument,
                  "only the within-cluster strategy operates on a SuffStatsTable; "
                  "other strategies need cluster- or panel-shaped tables");
    }
    if (!t.cluster) {
      throw Error(ErrorCode::MissingClusters, "table was not compressed with a cluster key");
    }
  }
  if (t.weighted && spec.kind == CovarianceKind::ClusterRobust) {
    throw Error(ErrorCode::InvalidArgument,
                "cluster-robust covariance for weighted tables is not supported");
  }

  const auto eq = detail::normal_equations(t);
  const auto f = detail::factor_or_throw(eq.gram, t.feature_names);

  FitResult r;
  r.coefficient_names = t.feature_names;
  r.outcome_names = t.outcome_names;
  r.spec = spec;
  r.coefficients = detail::cholesky_solve(f, eq.mty);
  r.diagnostics.n = eq.n;
  r.diagnostics.n_groups = static_cast<double>(t.n_groups());
  if (t.cluster) {
    std::unordered_map<std::string_view, Index> distinct;
    for (const auto& label : *t.cluster) distinct.emplace(label, 0);
    r.diagnostics.n_clusters = static_cast<double>(distinct.size());
  }
  r.diagnostics.compression_ratio =
      r.diagnostics.n_groups > 0 ? eq.n / r.diagnostics.n_groups : 0.0;
  const double df_base = (t.weighted && t.weighted->kind == WeightKind::Analytic)
                             ? t.weighted->w_sum.sum()
                             : eq.n;
  r.df_residual = df_base - static_cast<double>(t.n_features());

  const bool needs_y_sq = spec.kind != CovarianceKind::ClusterRobust;
  if (needs_y_sq && !t.has_y_sq()) {
    // Group-level table: the requested covariance is not recoverable.
    r.covariance_exact = false;
    return r;
  }

  const BreadMatrix pi{detail::cholesky_inverse(f), eq.gram, f.rank};
  switch (spec.kind) {
    case CovarianceKind::Homoskedastic: {
      const Dispersion d = rss_compressed(t, r.coefficients);
      r.sigma2 = d.sigma2;
      MeatMatrix m;
      m.spec = spec;
      for (Index k = 0; k < t.n_outcomes(); ++k) m.xi.push_back(d.sigma2(k) * eq.gram);
      detail::finish_covariance(&r, pi, m);
      break;
    }
    case CovarianceKind::HeteroskedasticityRobust:
      detail::finish_covariance(&r, pi, meat_ehw(t, r.coefficients));
      break;
    case CovarianceKind::ClusterRobust:
      detail::finish_covariance(&r, pi, meat_cluster_within(t, r.coefficients));
      break;
  }
  return r;
}

inline FitResult fit(const ClusterStatsTable& t, const CovarianceSpec& spec) {
  if (spec.kind != CovarianceKind::ClusterRobust ||
      spec.strategy != ClusterStrategy::BetweenCluster) {
    throw Error(ErrorCode::InvalidArgument,
                "cluster-shaped tables support the cluster-robust/between-cluster "
                "covariance only");
  }
  const Index p = t.n_features();
  const Index o = t.n_outcomes();
  Matrix gram = Matrix::Zero(p, p);
  Matrix mty = Matrix::Zero(p, o);
  for (const auto& e : t.entries) {
    gram.noalias() += e.cluster_count * e.features.transpose() * e.features;
    mty.noalias() += e.features.transpose() * e.y_sum;
  }
  const auto f = detail::factor_or_throw(gram, t.feature_names);

  FitResult r;
  r.coefficient_names = t.feature_names;
  r.outcome_names = t.outcome_names;
  r.spec = spec;
  r.coefficients = detail::cholesky_solve(f, mty);
  r.diagnostics.n = t.n_rows();
  r.diagnostics.n_groups = static_cast<double>(t.entries.size());
  r.diagnostics.n_clusters = t.n_clusters();
  r.diagnostics.compression_ratio =
      r.diagnostics.n_groups > 0 ? r.diagnostics.n / r.diagnostics.n_groups : 0.0;
  r.df_residual = r.diagnostics.n - static_cast<double>(p);

  const BreadMatrix pi{detail::cholesky_inverse(f), gram, f.rank};
  detail::finish_covariance(&r, pi, meat_cluster_between(t, r.coefficients));
  return r;
}

inline FitResult fit(const PanelStatsTable& t, const CovarianceSpec& spec,
                     bool interactions = false) {
  if (spec.kind != CovarianceKind::ClusterRobust ||
      (spec.strategy != ClusterStrategy::StaticDynamic &&
       spec.strategy != ClusterStrategy::BalancedPanel)) {
    throw Error(ErrorCode::InvalidArgument,
                "panel-shaped tables support the cluster-robust covariance with the "
                "static-dynamic or balanced-panel strategy only");
  }
  const bool balanced = spec.strategy == ClusterStrategy::BalancedPanel;
  if (balanced && !t.balanced) {
    throw Error(ErrorCode::NotBalanced,
                "balanced-panel strategy requested but clusters do not share one "
                "dynamic block");
  }
  const auto lay = detail::panel_layout(t, interactions);
  const auto eq = balanced ? detail::balanced_normal_equations(t, lay)
                           : detail::panel_normal_equations(t, lay);
  const auto names = detail::panel_names(t, lay);
  const auto f = detail::factor_or_throw(eq.gram, names);

  FitResult r;
  r.coefficient_names = names;
  r.outcome_names = t.outcome_names;
  r.spec = spec;
  r.coefficients = detail::cholesky_solve(f, eq.mty);
  r.diagnostics.n = eq.n;
  r.diagnostics.n_groups = static_cast<double>(t.n_clusters());
  r.diagnostics.n_clusters = static_cast<double>(t.n_clusters());
  r.diagnostics.compression_ratio =
      r.diagnostics.n_groups > 0 ? eq.n / r.diagnostics.n_groups : 0.0;
  r.df_residual = eq.n - static_cast<double>(lay.dim());

  const BreadMatrix pi{detail::cholesky_inverse(f), eq.gram, f.rank};
  const MeatMatrix m = balanced ? meat_balanced_panel(t, r.coefficients, interactions)
                                : meat_cluster_static_dynamic(t, r.coefficients, interactions);
  detail::finish_covariance(&r, pi, m);
  return r;
}

}  // namespace suffstats
