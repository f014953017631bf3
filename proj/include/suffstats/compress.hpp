#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "suffstats/types.hpp"

namespace suffstats {

namespace detail {

// ---------------------------------------------------------------------------
// Canonical group keys.
//
// A key is the byte image of the feature row, optionally followed by the
// outcome row (frequency-weight encoding) and/or a length-prefixed cluster
// label. Matching is byte-exact: -0.0 and 0.0 are distinct keys, and no
// epsilon comparison is ever applied. Doubles are emitted through the
// order-preserving bit transform (flip all bits of negatives, set the sign
// bit of non-negatives) in big-endian order, so byte-lexicographic key order
// equals numeric column-by-column order and compressed tables come out
// sorted by their feature values.
// ---------------------------------------------------------------------------

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(v & 0xffu));
    v >>= 8;
  }
}

inline void append_double_key(std::string& out, double x) {
  std::uint64_t u = std::bit_cast<std::uint64_t>(x);
  u = (u & 0x8000000000000000ull) ? ~u : (u | 0x8000000000000000ull);
  for (int i = 7; i >= 0; --i) {
    out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
  }
}

inline void append_label(std::string& out, std::string_view label) {
  append_u64_le(out, static_cast<std::uint64_t>(label.size()));
  out.append(label.data(), label.size());
}

inline void append_row_key(std::string& out, const Matrix& m, Index row) {
  for (Index j = 0; j < m.cols(); ++j) append_double_key(out, m(row, j));
}

/// Deterministic group assignment: returns for each row the index of its
/// group, with group indices renumbered so that ascending group index means
/// ascending key bytes. `n_groups` receives the group count.
inline std::vector<Index> assign_groups(const std::vector<std::string>& keys,
                                        Index* n_groups) {
  std::unordered_map<std::string_view, Index> seen;
  seen.reserve(keys.size() * 2);
  std::vector<Index> first_of;  // group -> index of first row carrying the key
  std::vector<Index> of_row(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto [it, inserted] = seen.emplace(keys[i], static_cast<Index>(first_of.size()));
    if (inserted) first_of.push_back(static_cast<Index>(i));
    of_row[i] = it->second;
  }
  const Index g = static_cast<Index>(first_of.size());
  std::vector<Index> order(g);
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return keys[static_cast<std::size_t>(first_of[a])] <
           keys[static_cast<std::size_t>(first_of[b])];
  });
  std::vector<Index> rank(g);
  for (Index r = 0; r < g; ++r) rank[order[r]] = r;
  for (auto& gi : of_row) gi = rank[gi];
  *n_groups = g;
  return of_row;
}

struct CompressOptions {
  bool include_cluster_key = false;
  bool key_on_outcomes = false;  // frequency-weight encoding
  bool keep_y_sq = true;
};

inline SuffStatsTable compress_impl(const ObservationSet& obs, const CompressOptions& opt) {
  validate(obs);
  if (opt.include_cluster_key && !obs.clusters) {
    throw Error(ErrorCode::MissingClusters,
                "cluster-keyed compression requested but the input carries no cluster labels");
  }

  const Index n = obs.n_rows();
  const Index p = obs.n_features();
  const Index o = obs.n_outcomes();

  std::vector<std::string> keys(static_cast<std::size_t>(n));
  {
    std::string buf;
    buf.reserve(static_cast<std::size_t>(p + (opt.key_on_outcomes ? o : 0)) * 8 + 32);
    for (Index i = 0; i < n; ++i) {
      buf.clear();
      append_row_key(buf, obs.features, i);
      if (opt.key_on_outcomes) append_row_key(buf, obs.outcomes, i);
      if (opt.include_cluster_key) append_label(buf, (*obs.clusters)[static_cast<std::size_t>(i)]);
      keys[static_cast<std::size_t>(i)] = buf;
    }
  }

  Index g = 0;
  const std::vector<Index> group_of = assign_groups(keys, &g);

  SuffStatsTable t;
  t.feature_names = obs.feature_names;
  t.outcome_names = obs.outcome_names;
  t.key_kind = opt.key_on_outcomes ? GroupKeyKind::FeaturesAndOutcomes : GroupKeyKind::Features;
  t.unique_features.setZero(g, p);
  t.y_sum.setZero(g, o);
  if (opt.keep_y_sq) t.y_sq_sum_ = Matrix::Zero(g, o);
  t.count.setZero(g);
  if (opt.key_on_outcomes) t.key_outcomes = Matrix::Zero(g, o);
  if (opt.include_cluster_key) t.cluster = std::vector<std::string>(static_cast<std::size_t>(g));
  if (obs.weights) {
    WeightedBlocks wb;
    wb.kind = obs.weight_kind;
    wb.w_sum.setZero(g);
    wb.wy_sum.setZero(g, o);
    wb.wy_sq_sum.setZero(g, o);
    wb.w2_sum.setZero(g);
    wb.w2y_sum.setZero(g, o);
    wb.w2y_sq_sum.setZero(g, o);
    t.weighted = std::move(wb);
  }

  std::vector<bool> filled(static_cast<std::size_t>(g), false);
  for (Index i = 0; i < n; ++i) {
    const Index gi = group_of[static_cast<std::size_t>(i)];
    if (!filled[static_cast<std::size_t>(gi)]) {
      t.unique_features.row(gi) = obs.features.row(i);
      if (t.key_outcomes) t.key_outcomes->row(gi) = obs.outcomes.row(i);
      if (t.cluster) (*t.cluster)[static_cast<std::size_t>(gi)] = (*obs.clusters)[static_cast<std::size_t>(i)];
      filled[static_cast<std::size_t>(gi)] = true;
    }
    t.count(gi) += 1.0;
    for (Index k = 0; k < o; ++k) {
      const double y = obs.outcomes(i, k);
      t.y_sum(gi, k) += y;
      if (t.y_sq_sum_) (*t.y_sq_sum_)(gi, k) += y * y;
    }
    if (t.weighted) {
      const double w = (*obs.weights)(i);
      auto& wb = *t.weighted;
      wb.w_sum(gi) += w;
      wb.w2_sum(gi) += w * w;
      for (Index k = 0; k < o; ++k) {
        const double y = obs.outcomes(i, k);
        wb.wy_sum(gi, k) += w * y;
        wb.wy_sq_sum(gi, k) += w * y * y;
        wb.w2y_sum(gi, k) += w * w * y;
        wb.w2y_sq_sum(gi, k) += w * w * y * y;
      }
    }
  }
  return t;
}

inline std::string table_group_key(const SuffStatsTable& t, Index g) {
  std::string buf;
  append_row_key(buf, t.unique_features, g);
  if (t.key_outcomes) append_row_key(buf, *t.key_outcomes, g);
  if (t.cluster) append_label(buf, (*t.cluster)[static_cast<std::size_t>(g)]);
  return buf;
}

inline void check_same_schema(const SuffStatsTable& a, const SuffStatsTable& b) {
  if (a.feature_names != b.feature_names)
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on feature columns");
  if (a.outcome_names != b.outcome_names)
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on outcome columns");
  if (a.key_kind != b.key_kind)
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on the group key kind");
  if (a.has_y_sq() != b.has_y_sq())
    throw Error(ErrorCode::SchemaMismatch,
                "one table holds sums of squares and the other does not");
  if (a.weighted.has_value() != b.weighted.has_value())
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on weighted-block presence");
  if (a.weighted && a.weighted->kind != b.weighted->kind)
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on the weight kind");
  if (a.cluster.has_value() != b.cluster.has_value())
    throw Error(ErrorCode::SchemaMismatch, "tables disagree on cluster-key presence");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Least-squares compression
// ---------------------------------------------------------------------------

/// Groups rows by byte-identical feature vectors (optionally extended by the
/// cluster label) and accumulates, per group, the row count and per-outcome
/// sums of y and y^2, plus weighted blocks when the input carries weights.
/// Linear estimates and their exact covariances are fully recoverable from
/// the result; see the estimator for the reconstruction.
inline SuffStatsTable compress_suffstats(const ObservationSet& obs,
                                         bool include_cluster_key = false) {
  detail::CompressOptions opt;
  opt.include_cluster_key = include_cluster_key;
  return detail::compress_impl(obs, opt);
}

/// Frequency-weight encoding: groups on (feature row, outcome row) so every
/// record pins down one exact outcome value with a multiplicity. Unlike
/// compress_suffstats the resulting row count is not invariant to adding
/// outcome columns, but arbitrary downstream estimators can consume the
/// records as weighted rows.
inline SuffStatsTable compress_fweights(const ObservationSet& obs) {
  detail::CompressOptions opt;
  opt.key_on_outcomes = true;
  return detail::compress_impl(obs, opt);
}

/// Group-level compression: like compress_suffstats but discarding the sums
/// of squared outcomes. Point estimates survive; exact error variances do
/// not, except for cluster-robust ones on a cluster-keyed table, which only
/// need first moments. Rejecting weighted input keeps it single-purpose.
inline SuffStatsTable compress_group_means(const ObservationSet& obs,
                                           bool include_cluster_key = false) {
  if (obs.weights) {
    throw Error(ErrorCode::InvalidArgument,
                "group-level compression does not support weighted input");
  }
  detail::CompressOptions opt;
  opt.include_cluster_key = include_cluster_key;
  opt.keep_y_sq = false;
  return detail::compress_impl(obs, opt);
}

/// Sums two compressed tables produced with identical schemas, re-merging
/// records whose keys collide. The result equals compressing the
/// concatenated source rows (up to floating-point summation order), so
/// shards can be compressed independently and combined.
///
/// Duplicate keys *within* one input are merged too, which makes this the
/// tool for re-deduplicating a table after its cluster key is dropped.
inline SuffStatsTable merge_suffstats(const SuffStatsTable& a, const SuffStatsTable& b) {
  detail::check_same_schema(a, b);

  const Index p = a.n_features();
  const Index o = a.n_outcomes();
  const Index ga = a.n_groups();
  const Index total = ga + b.n_groups();

  std::vector<std::string> keys(static_cast<std::size_t>(total));
  for (Index g = 0; g < total; ++g) {
    const SuffStatsTable& src = g < ga ? a : b;
    keys[static_cast<std::size_t>(g)] = detail::table_group_key(src, g < ga ? g : g - ga);
  }
  Index gm = 0;
  const std::vector<Index> group_of = detail::assign_groups(keys, &gm);

  SuffStatsTable out;
  out.feature_names = a.feature_names;
  out.outcome_names = a.outcome_names;
  out.key_kind = a.key_kind;
  out.unique_features.setZero(gm, p);
  out.y_sum.setZero(gm, o);
  if (a.has_y_sq()) out.y_sq_sum_ = Matrix::Zero(gm, o);
  out.count.setZero(gm);
  if (a.key_outcomes) out.key_outcomes = Matrix::Zero(gm, o);
  if (a.cluster) out.cluster = std::vector<std::string>(static_cast<std::size_t>(gm));
  if (a.weighted) {
    WeightedBlocks wb;
    wb.kind = a.weighted->kind;
    wb.w_sum.setZero(gm);
    wb.wy_sum.setZero(gm, o);
    wb.wy_sq_sum.setZero(gm, o);
    wb.w2_sum.setZero(gm);
    wb.w2y_sum.setZero(gm, o);
    wb.w2y_sq_sum.setZero(gm, o);
    out.weighted = std::move(wb);
  }

  std::vector<bool> filled(static_cast<std::size_t>(gm), false);
  for (Index g = 0; g < total; ++g) {
    const SuffStatsTable& src = g < ga ? a : b;
    const Index sg = g < ga ? g : g - ga;
    const Index og = group_of[static_cast<std::size_t>(g)];
    if (!filled[static_cast<std::size_t>(og)]) {
      out.unique_features.row(og) = src.unique_features.row(sg);
      if (out.key_outcomes) out.key_outcomes->row(og) = src.key_outcomes->row(sg);
      if (out.cluster) (*out.cluster)[static_cast<std::size_t>(og)] = (*src.cluster)[static_cast<std::size_t>(sg)];
      filled[static_cast<std::size_t>(og)] = true;
    }
    out.count(og) += src.count(sg);
    out.y_sum.row(og) += src.y_sum.row(sg);
    if (out.y_sq_sum_) out.y_sq_sum_->row(og) += src.y_sq_sum_->row(sg);
    if (out.weighted) {
      auto& ow = *out.weighted;
      const auto& sw = *src.weighted;
      ow.w_sum(og) += sw.w_sum(sg);
      ow.w2_sum(og) += sw.w2_sum(sg);
      ow.wy_sum.row(og) += sw.wy_sum.row(sg);
      ow.wy_sq_sum.row(og) += sw.wy_sq_sum.row(sg);
      ow.w2y_sum.row(og) += sw.w2y_sum.row(sg);
      ow.w2y_sq_sum.row(og) += sw.w2y_sq_sum.row(sg);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster-shaped compression
// ---------------------------------------------------------------------------

namespace detail {

/// Splits rows into clusters (first-appearance order) and orders rows within
/// each cluster by `order` (stable on ties; original order when absent).
/// Duplicate order keys inside a cluster are rejected because the resulting
/// block identity would depend on input order.
inline std::vector<std::vector<Index>> cluster_partition(
    const ObservationSet& obs, const std::optional<Vector>& order) {
  if (!obs.clusters) {
    throw Error(ErrorCode::MissingClusters, "input carries no cluster labels");
  }
  if (order && order->size() != obs.n_rows()) {
    throw Error(ErrorCode::DimensionMismatch, "order column size does not match row count");
  }
  std::unordered_map<std::string_view, std::size_t> idx;
  std::vector<std::vector<Index>> members;
  for (Index i = 0; i < obs.n_rows(); ++i) {
    auto [it, inserted] = idx.emplace((*obs.clusters)[static_cast<std::size_t>(i)], members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }
  if (order) {
    for (auto& rows : members) {
      std::stable_sort(rows.begin(), rows.end(),
                       [&](Index lhs, Index rhs) { return (*order)(lhs) < (*order)(rhs); });
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if ((*order)(rows[r]) == (*order)(rows[r - 1])) {
          throw Error(ErrorCode::RaggedCluster,
                      "duplicate order key within cluster '" +
                          (*obs.clusters)[static_cast<std::size_t>(rows[r])] + "'");
        }
      }
    }
  }
  return members;
}

}  // namespace detail

/// Deduplicates whole clusters by their ordered feature block. Each entry
/// keeps the shared block M_g, the across-cluster sum of outcome vectors,
/// the across-cluster sum of outcome outer products, and the cluster count.
/// Exact cluster-robust covariances are recoverable from these moments even
/// though per-cluster outcomes are gone.
///
/// `order` fixes the within-cluster row order (e.g. a time column) so that
/// clusters observed in different row orders still share one block.
inline ClusterStatsTable compress_between_cluster(
    const ObservationSet& obs, const std::optional<Vector>& order = std::nullopt) {
  validate(obs);
  const auto members = detail::cluster_partition(obs, order);
  const Index p = obs.n_features();
  const Index o = obs.n_outcomes();

  std::vector<std::string> keys(members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    std::string buf;
    detail::append_u64_le(buf, static_cast<std::uint64_t>(members[c].size()));
    for (Index i : members[c]) detail::append_row_key(buf, obs.features, i);
    keys[c] = std::move(buf);
  }
  Index g = 0;
  const std::vector<Index> group_of = detail::assign_groups(keys, &g);

  ClusterStatsTable t;
  t.feature_names = obs.feature_names;
  t.outcome_names = obs.outcome_names;
  t.entries.resize(static_cast<std::size_t>(g));

  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& e = t.entries[static_cast<std::size_t>(group_of[c])];
    const Index rows = static_cast<Index>(members[c].size());
    if (e.cluster_count == 0.0) {
      e.features.setZero(rows, p);
      for (Index r = 0; r < rows; ++r) e.features.row(r) = obs.features.row(members[c][static_cast<std::size_t>(r)]);
      e.y_sum.setZero(rows, o);
      e.y_outer_sum.assign(static_cast<std::size_t>(o), Matrix::Zero(rows, rows));
    }
    Matrix yc(rows, o);
    for (Index r = 0; r < rows; ++r) yc.row(r) = obs.outcomes.row(members[c][static_cast<std::size_t>(r)]);
    e.y_sum += yc;
    for (Index k = 0; k < o; ++k) {
      e.y_outer_sum[static_cast<std::size_t>(k)].noalias() += yc.col(k) * yc.col(k).transpose();
    }
    e.cluster_count += 1.0;
  }
  return t;
}

/// Per-cluster moment compression under a static/dynamic column split.
/// `static_cols` must name columns constant within every cluster; the
/// remaining feature columns are dynamic. Per cluster only p2-sized moments
/// of the dynamic block are kept (column sums, outcome-weighted sums, gram),
/// which is what cluster-robust estimation with optional static x dynamic
/// interactions needs.
///
/// When all clusters share one bitwise-identical dynamic block the table is
/// flagged balanced: the block and its gram are stored once and outcomes are
/// reshaped to a T x C matrix for single-product estimation.
inline PanelStatsTable compress_panel(const ObservationSet& obs,
                                      const std::vector<std::string>& static_cols,
                                      const std::optional<Vector>& order = std::nullopt) {
  validate(obs);
  const auto members = detail::cluster_partition(obs, order);

  std::vector<Index> static_idx;
  std::vector<Index> dynamic_idx;
  {
    std::vector<bool> is_static(obs.feature_names.size(), false);
    for (const auto& name : static_cols) {
      auto it = std::find(obs.feature_names.begin(), obs.feature_names.end(), name);
      if (it == obs.feature_names.end()) {
        throw Error(ErrorCode::MissingColumn, "static column '" + name + "' not found");
      }
      const auto j = static_cast<std::size_t>(it - obs.feature_names.begin());
      if (is_static[j]) {
        throw Error(ErrorCode::InvalidArgument, "static column '" + name + "' listed twice");
      }
      is_static[j] = true;
    }
    for (std::size_t j = 0; j < is_static.size(); ++j) {
      (is_static[j] ? static_idx : dynamic_idx).push_back(static_cast<Index>(j));
    }
  }
  const Index p1 = static_cast<Index>(static_idx.size());
  const Index p2 = static_cast<Index>(dynamic_idx.size());
  const Index o = obs.n_outcomes();
  const Index c_count = static_cast<Index>(members.size());

  PanelStatsTable t;
  for (Index j : static_idx) t.static_names.push_back(obs.feature_names[static_cast<std::size_t>(j)]);
  for (Index j : dynamic_idx) t.dynamic_names.push_back(obs.feature_names[static_cast<std::size_t>(j)]);
  t.outcome_names = obs.outcome_names;
  t.static_rows.setZero(c_count, p1);
  t.y_sum.setZero(c_count, o);
  t.count.setZero(c_count);
  t.col_sums.setZero(p2, c_count);
  t.y_weighted.assign(static_cast<std::size_t>(o), Matrix::Zero(p2, c_count));
  t.gram_blocks.reserve(static_cast<std::size_t>(c_count));
  t.cluster_labels.resize(static_cast<std::size_t>(c_count));

  std::vector<Matrix> dynamic_blocks;
  dynamic_blocks.reserve(static_cast<std::size_t>(c_count));

  for (Index c = 0; c < c_count; ++c) {
    const auto& rows = members[static_cast<std::size_t>(c)];
    const Index tc = static_cast<Index>(rows.size());
    t.cluster_labels[static_cast<std::size_t>(c)] =
        (*obs.clusters)[static_cast<std::size_t>(rows.front())];
    t.count(c) = static_cast<double>(tc);

    for (Index a = 0; a < p1; ++a) {
      const Index col = static_idx[static_cast<std::size_t>(a)];
      const double v = obs.features(rows.front(), col);
      for (Index r = 1; r < tc; ++r) {
        const double u = obs.features(rows[static_cast<std::size_t>(r)], col);
        if (std::bit_cast<std::uint64_t>(u) != std::bit_cast<std::uint64_t>(v)) {
          throw Error(ErrorCode::NonStaticColumn,
                      "column '" + obs.feature_names[static_cast<std::size_t>(col)] +
                          "' varies within cluster '" +
                          t.cluster_labels[static_cast<std::size_t>(c)] + "'",
                      {obs.feature_names[static_cast<std::size_t>(col)]});
        }
      }
      t.static_rows(c, a) = v;
    }

    Matrix m2(tc, p2);
    Matrix yc(tc, o);
    for (Index r = 0; r < tc; ++r) {
      const Index i = rows[static_cast<std::size_t>(r)];
      for (Index b = 0; b < p2; ++b) m2(r, b) = obs.features(i, dynamic_idx[static_cast<std::size_t>(b)]);
      yc.row(r) = obs.outcomes.row(i);
    }
    t.y_sum.row(c) = yc.colwise().sum();
    t.col_sums.col(c) = m2.colwise().sum().transpose();
    for (Index k = 0; k < o; ++k) t.y_weighted[static_cast<std::size_t>(k)].col(c).noalias() = m2.transpose() * yc.col(k);
    dynamic_blocks.push_back(std::move(m2));
  }

  bool balanced = c_count > 0;
  for (Index c = 1; balanced && c < c_count; ++c) {
    const Matrix& a = dynamic_blocks[0];
    const Matrix& b = dynamic_blocks[static_cast<std::size_t>(c)];
    if (b.rows() != a.rows()) {
      balanced = false;
      break;
    }
    for (Index r = 0; balanced && r < a.rows(); ++r) {
      for (Index j = 0; j < a.cols(); ++j) {
        if (std::bit_cast<std::uint64_t>(a(r, j)) != std::bit_cast<std::uint64_t>(b(r, j))) {
          balanced = false;
          break;
        }
      }
    }
  }

  t.balanced = balanced;
  if (balanced) {
    t.periods = dynamic_blocks[0].rows();
    t.shared_dynamic = dynamic_blocks[0];
    t.gram_blocks.push_back(t.shared_dynamic.transpose() * t.shared_dynamic);
    t.y_matrix.assign(static_cast<std::size_t>(o), Matrix::Zero(t.periods, c_count));
    for (Index c = 0; c < c_count; ++c) {
      const auto& rows = members[static_cast<std::size_t>(c)];
      for (Index r = 0; r < t.periods; ++r) {
        for (Index k = 0; k < o; ++k) {
          t.y_matrix[static_cast<std::size_t>(k)](r, c) =
              obs.outcomes(rows[static_cast<std::size_t>(r)], k);
        }
      }
    }
  } else {
    for (auto& m2 : dynamic_blocks) t.gram_blocks.push_back(m2.transpose() * m2);
  }
  return t;
}

/// Concatenates panel tables over disjoint cluster sets: the chunked
/// counterpart of compress_panel for inputs too large to materialize as one
/// observation set. The result is balanced only when both inputs are
/// balanced on the bitwise-identical dynamic block; otherwise the shared
/// gram is expanded to per-cluster storage and the table degrades to the
/// generic static-dynamic form.
inline PanelStatsTable merge_panel(const PanelStatsTable& a, const PanelStatsTable& b) {
  if (a.n_clusters() == 0) return b;
  if (b.n_clusters() == 0) return a;
  if (a.static_names != b.static_names || a.dynamic_names != b.dynamic_names ||
      a.outcome_names != b.outcome_names) {
    throw Error(ErrorCode::SchemaMismatch, "panel tables disagree on column names");
  }
  {
    std::unordered_map<std::string_view, bool> seen;
    for (const auto& l : a.cluster_labels) seen.emplace(l, true);
    for (const auto& l : b.cluster_labels) {
      if (seen.count(l)) {
        throw Error(ErrorCode::InvalidArgument,
                    "cluster '" + l + "' appears in both tables; merging needs disjoint clusters");
      }
    }
  }

  const Index ca = a.n_clusters();
  const Index cb = b.n_clusters();
  const Index p1 = a.n_static();
  const Index p2 = a.n_dynamic();
  const Index o = a.n_outcomes();

  auto same_bits = [](const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) {
        if (std::bit_cast<std::uint64_t>(x(i, j)) != std::bit_cast<std::uint64_t>(y(i, j))) {
          return false;
        }
      }
    }
    return true;
  };

  PanelStatsTable t;
  t.static_names = a.static_names;
  t.dynamic_names = a.dynamic_names;
  t.outcome_names = a.outcome_names;
  t.cluster_labels = a.cluster_labels;
  t.cluster_labels.insert(t.cluster_labels.end(), b.cluster_labels.begin(),
                          b.cluster_labels.end());

  t.static_rows.resize(ca + cb, p1);
  t.static_rows << a.static_rows, b.static_rows;
  t.y_sum.resize(ca + cb, o);
  t.y_sum << a.y_sum, b.y_sum;
  t.count.resize(ca + cb);
  t.count << a.count, b.count;
  t.col_sums.resize(p2, ca + cb);
  t.col_sums << a.col_sums, b.col_sums;
  for (Index k = 0; k < o; ++k) {
    Matrix yw(p2, ca + cb);
    yw << a.y_weighted[static_cast<std::size_t>(k)], b.y_weighted[static_cast<std::size_t>(k)];
    t.y_weighted.push_back(std::move(yw));
  }

  t.balanced = a.balanced && b.balanced && same_bits(a.shared_dynamic, b.shared_dynamic);
  if (t.balanced) {
    t.periods = a.periods;
    t.shared_dynamic = a.shared_dynamic;
    t.gram_blocks.push_back(a.gram_blocks[0]);
    for (Index k = 0; k < o; ++k) {
      Matrix ym(a.periods, ca + cb);
      ym << a.y_matrix[static_cast<std::size_t>(k)], b.y_matrix[static_cast<std::size_t>(k)];
      t.y_matrix.push_back(std::move(ym));
    }
  } else {
    t.gram_blocks.reserve(static_cast<std::size_t>(ca + cb));
    for (const auto* part : {&a, &b}) {
      for (Index c = 0; c < part->n_clusters(); ++c) {
        t.gram_blocks.push_back(part->balanced ? part->gram_blocks[0]
                                               : part->gram_blocks[static_cast<std::size_t>(c)]);
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Quantile binning
// ---------------------------------------------------------------------------

/// Replaces each listed continuous column by dummy columns for its empirical
/// k-quantile bins, leaving other columns untouched. Cut points use the
/// nearest-rank quantile (the ceil(j*n/k)-th smallest value, j = 1..k-1);
/// values equal to a cut point fall in the lower bin. Duplicate cut points
/// collapse, so low-cardinality columns yield fewer than k bins; the lowest
/// bin is the omitted reference. Dummies are named `<column>__bin<j>`.
inline ObservationSet bin_features(const ObservationSet& obs,
                                   const std::vector<std::string>& columns, int k) {
  validate(obs);
  if (k < 1) {
    throw Error(ErrorCode::InvalidArgument, "bin count must be at least 1");
  }
  std::vector<bool> wanted(obs.feature_names.size(), false);
  for (const auto& name : columns) {
    auto it = std::find(obs.feature_names.begin(), obs.feature_names.end(), name);
    if (it == obs.feature_names.end()) {
      throw Error(ErrorCode::MissingColumn, "bin column '" + name + "' not found");
    }
    const auto j = static_cast<std::size_t>(it - obs.feature_names.begin());
    if (wanted[j]) {
      throw Error(ErrorCode::InvalidArgument, "column '" + name + "' listed twice");
    }
    wanted[j] = true;
  }

  const Index n = obs.n_rows();
  std::vector<std::pair<std::string, Vector>> out_cols;
  for (Index j = 0; j < obs.n_features(); ++j) {
    const std::string& name = obs.feature_names[static_cast<std::size_t>(j)];
    if (!wanted[static_cast<std::size_t>(j)]) {
      out_cols.emplace_back(name, obs.features.col(j));
      continue;
    }
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = obs.features(i, j);
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> edges;
    if (n > 0) {
      for (int q = 1; q < k; ++q) {
        const auto rank = static_cast<std::size_t>(
            std::ceil(static_cast<double>(q) * static_cast<double>(n) / k));
        const double e = sorted[rank - 1];
        if (e >= sorted.back()) break;  // top bin would be empty
        if (edges.empty() || e > edges.back()) edges.push_back(e);
      }
    }
    for (std::size_t b = 0; b < edges.size(); ++b) {
      Vector dummy(n);
      for (Index i = 0; i < n; ++i) {
        const double x = obs.features(i, j);
        const bool above = x > edges[b];
        const bool in_next = b + 1 < edges.size() && x > edges[b + 1];
        dummy(i) = (above && !in_next) ? 1.0 : 0.0;
      }
      out_cols.emplace_back(name + "__bin" + std::to_string(b + 1), std::move(dummy));
    }
  }

  ObservationSet binned;
  binned.features.resize(n, static_cast<Index>(out_cols.size()));
  for (std::size_t c = 0; c < out_cols.size(); ++c) {
    binned.feature_names.push_back(out_cols[c].first);
    binned.features.col(static_cast<Index>(c)) = out_cols[c].second;
  }
  binned.outcomes = obs.outcomes;
  binned.outcome_names = obs.outcome_names;
  binned.weights = obs.weights;
  binned.weight_kind = obs.weight_kind;
  binned.clusters = obs.clusters;
  return binned;
}

}  // namespace suffstats
