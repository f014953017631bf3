#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "suffstats/types.hpp"

namespace suffstats {

struct BinDirective {
  std::string column;
  int k = 0;
};

/// Everything a CLI invocation needs to turn a file into an estimate:
/// column roles, weighting, clustering, binning, covariance choice.
struct JobConfig {
  std::string input;
  std::vector<std::string> features;
  std::vector<std::string> outcomes;
  std::optional<std::string> weight_col;
  WeightKind weight_kind = WeightKind::Frequency;
  std::optional<std::string> cluster_col;
  std::optional<std::string> order_col;
  std::vector<std::string> static_cols;
  CovarianceSpec covariance;
  std::vector<BinDirective> bins;
  std::string output;
};

namespace detail {

struct RawCsv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_of;  // 1-based physical line where each row starts
};

inline Error parse_error(std::size_t line, const std::string& what) {
  return Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what,
               {std::to_string(line)});
}

/// RFC-4180 reader: quoted fields may contain commas, escaped quotes ("")
/// and newlines; CRLF and LF both accepted; the last record may lack a
/// trailing newline. Every record must match the header width.
inline RawCsv parse_csv(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  RawCsv out;
  std::vector<std::string> fields;
  std::string cur;
  std::size_t line = 1;
  std::size_t record_line = 1;
  bool in_quotes = false;
  bool quoted_field = false;
  bool any_char = false;  // current record has content (distinguishes EOF from empty record)

  auto end_field = [&] {
    fields.push_back(cur);
    cur.clear();
    quoted_field = false;
  };
  auto end_record = [&] {
    end_field();
    if (out.header.empty()) {
      out.header = fields;
    } else {
      if (fields.size() != out.header.size()) {
        throw parse_error(record_line,
                          "expected " + std::to_string(out.header.size()) + " fields, got " +
                              std::to_string(fields.size()));
      }
      out.rows.push_back(fields);
      out.line_of.push_back(record_line);
    }
    fields.clear();
    any_char = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        cur.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (cur.empty() && !quoted_field) {
          in_quotes = true;
          quoted_field = true;
          any_char = true;
          if (fields.empty()) record_line = line;
        } else {
          throw parse_error(line, "unexpected quote inside unquoted field");
        }
        break;
      case ',':
        any_char = true;
        if (fields.empty() && cur.empty() && !quoted_field) record_line = line;
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        if (any_char || !fields.empty() || !cur.empty()) end_record();
        ++line;
        break;
      default:
        if (!any_char) record_line = line;
        any_char = true;
        cur.push_back(ch);
        break;
    }
  }
  if (in_quotes) throw parse_error(record_line, "unterminated quoted field");
  if (any_char || !fields.empty() || !cur.empty()) end_record();
  return out;
}

inline RawCsv parse_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::ParseError, "cannot open '" + path + "'");
  }
  return parse_csv(in);
}

inline std::size_t find_column(const RawCsv& c, const std::string& name) {
  std::size_t found = c.header.size();
  for (std::size_t j = 0; j < c.header.size(); ++j) {
    if (c.header[j] == name) {
      if (found != c.header.size()) {
        throw parse_error(1, "column '" + name + "' appears more than once in the header");
      }
      found = j;
    }
  }
  if (found == c.header.size()) {
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
  }
  return found;
}

inline double parse_number(const std::string& tok, std::size_t line, const std::string& col) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  if (b != e && *b == '+') ++b;
  double v = 0.0;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e || b == e || !std::isfinite(v)) {
    throw parse_error(line, "non-numeric value '" + tok + "' in column '" + col + "'");
  }
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void append_csv_field(std::string& out, std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
    out.append(field);
    return;
  }
  out.push_back('"');
  for (const char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
}

/// Binning dummies (`<column>__bin<j>`) are the one feature naming pattern
/// allowed to contain the statistic-column marker.
inline bool is_bin_dummy(std::string_view name) {
  const auto pos = name.rfind("__bin");
  if (pos == std::string_view::npos || pos == 0) return false;
  const std::string_view digits = name.substr(pos + 5);
  if (digits.empty()) return false;
  for (const char c : digits) {
    if (c < '0' || c > '9') return false;
  }
  return name.substr(0, pos).find("__") == std::string_view::npos;
}

inline void check_serializable_name(const std::string& name) {
  if (name.empty() || (name.find("__") != std::string::npos && !is_bin_dummy(name))) {
    throw Error(ErrorCode::SchemaMismatch,
                "column name '" + name +
                    "' cannot be serialized; names must be nonempty and free of '__'");
  }
}

}  // namespace detail

struct LoadedObservations {
  ObservationSet obs;
  std::optional<Vector> order;  // present when config.order_col is set
};

/// Reads the configured columns out of a CSV file: features/outcomes/weights/
/// order parsed as doubles, cluster labels kept verbatim, row order preserved.
inline LoadedObservations read_csv(const std::string& path, const JobConfig& config) {
  const detail::RawCsv raw = detail::parse_csv_file(path);
  const std::size_t n = raw.rows.size();

  LoadedObservations loaded;
  ObservationSet& obs = loaded.obs;
  obs.feature_names = config.features;
  obs.outcome_names = config.outcomes;
  obs.features.resize(static_cast<Index>(n), static_cast<Index>(config.features.size()));
  obs.outcomes.resize(static_cast<Index>(n), static_cast<Index>(config.outcomes.size()));

  auto fill_numeric = [&](const std::string& name, auto&& sink) {
    const std::size_t j = detail::find_column(raw, name);
    for (std::size_t i = 0; i < n; ++i) {
      sink(static_cast<Index>(i), detail::parse_number(raw.rows[i][j], raw.line_of[i], name));
    }
  };

  for (std::size_t f = 0; f < config.features.size(); ++f) {
    fill_numeric(config.features[f], [&](Index i, double v) {
      obs.features(i, static_cast<Index>(f)) = v;
    });
  }
  for (std::size_t k = 0; k < config.outcomes.size(); ++k) {
    fill_numeric(config.outcomes[k], [&](Index i, double v) {
      obs.outcomes(i, static_cast<Index>(k)) = v;
    });
  }
  if (config.weight_col) {
    Vector w(static_cast<Index>(n));
    fill_numeric(*config.weight_col, [&](Index i, double v) { w(i) = v; });
    obs.weights = std::move(w);
    obs.weight_kind = config.weight_kind;
  }
  if (config.cluster_col) {
    const std::size_t j = detail::find_column(raw, *config.cluster_col);
    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = raw.rows[i][j];
    obs.clusters = std::move(labels);
  }
  if (config.order_col) {
    Vector ord(static_cast<Index>(n));
    fill_numeric(*config.order_col, [&](Index i, double v) { ord(i) = v; });
    loaded.order = std::move(ord);
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// Compressed-table persistence
//
// Plain CSV so compressed records stay inspectable in any tool. Column
// layout: feature columns; per outcome `<name>__sum` and `<name>__sumsq`;
// `__count`; weighted blocks when present (`__wsum_freq`/`__wsum_analytic`,
// `<name>__wysum`, `<name>__wysumsq`, `__w2sum`, `<name>__w2ysum`,
// `<name>__w2ysumsq`); `<name>__value` columns for outcome-keyed tables;
// `__cluster` when cluster-keyed. Floats are written as shortest
// round-trippable decimals, so read(write(t)) reproduces t bit-exactly.
// ---------------------------------------------------------------------------

inline void write_suffstats(const std::string& path, const SuffStatsTable& t) {
  for (const auto& name : t.feature_names) detail::check_serializable_name(name);
  for (const auto& name : t.outcome_names) detail::check_serializable_name(name);

  std::string out;
  bool first = true;
  auto col = [&](const std::string& name) {
    if (!first) out.push_back(',');
    first = false;
    detail::append_csv_field(out, name);
  };
  for (const auto& name : t.feature_names) col(name);
  for (const auto& name : t.outcome_names) {
    col(name + "__sum");
    if (t.has_y_sq()) col(name + "__sumsq");
  }
  col("__count");
  if (t.weighted) {
    col(t.weighted->kind == WeightKind::Frequency ? "__wsum_freq" : "__wsum_analytic");
    for (const auto& name : t.outcome_names) {
      col(name + "__wysum");
      col(name + "__wysumsq");
    }
    col("__w2sum");
    for (const auto& name : t.outcome_names) {
      col(name + "__w2ysum");
      col(name + "__w2ysumsq");
    }
  }
  if (t.key_outcomes) {
    for (const auto& name : t.outcome_names) col(name + "__value");
  }
  if (t.cluster) col("__cluster");
  out.push_back('\n');

  for (Index g = 0; g < t.n_groups(); ++g) {
    first = true;
    auto num = [&](double v) {
      if (!first) out.push_back(',');
      first = false;
      out.append(detail::format_double(v));
    };
    for (Index j = 0; j < t.n_features(); ++j) num(t.unique_features(g, j));
    for (Index k = 0; k < t.n_outcomes(); ++k) {
      num(t.y_sum(g, k));
      if (t.has_y_sq()) num(t.y_sq_sum()(g, k));
    }
    num(t.count(g));
    if (t.weighted) {
      const auto& wb = *t.weighted;
      num(wb.w_sum(g));
      for (Index k = 0; k < t.n_outcomes(); ++k) {
        num(wb.wy_sum(g, k));
        num(wb.wy_sq_sum(g, k));
      }
      num(wb.w2_sum(g));
      for (Index k = 0; k < t.n_outcomes(); ++k) {
        num(wb.w2y_sum(g, k));
        num(wb.w2y_sq_sum(g, k));
      }
    }
    if (t.key_outcomes) {
      for (Index k = 0; k < t.n_outcomes(); ++k) num((*t.key_outcomes)(g, k));
    }
    if (t.cluster) {
      if (!first) out.push_back(',');
      first = false;
      detail::append_csv_field(out, (*t.cluster)[static_cast<std::size_t>(g)]);
    }
    out.push_back('\n');
  }

  std::ofstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorCode::ParseError, "cannot open '" + path + "' for writing");
  }
  file << out;
}

namespace detail {

enum class StatsCol {
  Feature,
  YSum,
  YSqSum,
  Count,
  WSum,
  WySum,
  WySqSum,
  W2Sum,
  W2ySum,
  W2ySqSum,
  KeyValue,
  Cluster,
};

struct StatsColInfo {
  StatsCol role = StatsCol::Feature;
  std::string base;  // outcome/feature name the column belongs to
};

inline bool strip_suffix(const std::string& name, std::string_view suffix, std::string* base) {
  if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return false;
  }
  *base = name.substr(0, name.size() - suffix.size());
  return true;
}

inline StatsColInfo classify_stats_column(const std::string& name, WeightKind* kind,
                                          bool* saw_weight_kind) {
  StatsColInfo info;
  if (name == "__count") {
    info.role = StatsCol::Count;
    return info;
  }
  if (name == "__cluster") {
    info.role = StatsCol::Cluster;
    return info;
  }
  if (name == "__wsum_freq" || name == "__wsum_analytic") {
    if (*saw_weight_kind) {
      throw Error(ErrorCode::SchemaMismatch, "multiple weight-sum columns present");
    }
    *saw_weight_kind = true;
    *kind = name == "__wsum_freq" ? WeightKind::Frequency : WeightKind::Analytic;
    info.role = StatsCol::WSum;
    return info;
  }
  if (name == "__w2sum") {
    info.role = StatsCol::W2Sum;
    return info;
  }
  std::string base;
  if (strip_suffix(name, "__w2ysumsq", &base)) return {StatsCol::W2ySqSum, base};
  if (strip_suffix(name, "__w2ysum", &base)) return {StatsCol::W2ySum, base};
  if (strip_suffix(name, "__wysumsq", &base)) return {StatsCol::WySqSum, base};
  if (strip_suffix(name, "__wysum", &base)) return {StatsCol::WySum, base};
  if (strip_suffix(name, "__sumsq", &base)) return {StatsCol::YSqSum, base};
  if (strip_suffix(name, "__sum", &base)) return {StatsCol::YSum, base};
  if (strip_suffix(name, "__value", &base)) return {StatsCol::KeyValue, base};
  if (is_bin_dummy(name)) return {StatsCol::Feature, name};
  if (name.find("__") != std::string::npos) {
    throw Error(ErrorCode::SchemaMismatch, "unrecognized statistic column '" + name + "'");
  }
  return {StatsCol::Feature, name};
}

}  // namespace detail

inline SuffStatsTable read_suffstats(const std::string& path) {
  const detail::RawCsv raw = detail::parse_csv_file(path);

  WeightKind weight_kind = WeightKind::Frequency;
  bool saw_weight_kind = false;
  std::vector<detail::StatsColInfo> cols;
  cols.reserve(raw.header.size());
  for (const auto& name : raw.header) {
    cols.push_back(detail::classify_stats_column(name, &weight_kind, &saw_weight_kind));
  }

  SuffStatsTable t;
  std::vector<std::size_t> feature_cols;
  std::vector<std::size_t> ysum_cols;
  std::size_t count_col = raw.header.size();
  std::size_t cluster_col = raw.header.size();
  std::size_t wsum_col = raw.header.size();
  std::size_t w2sum_col = raw.header.size();
  auto outcome_index = [&](const std::string& base, const char* what) -> std::size_t {
    for (std::size_t k = 0; k < t.outcome_names.size(); ++k) {
      if (t.outcome_names[k] == base) return k;
    }
    throw Error(ErrorCode::SchemaMismatch,
                std::string(what) + " column for unknown outcome '" + base + "'");
  };

  for (std::size_t j = 0; j < cols.size(); ++j) {
    switch (cols[j].role) {
      case detail::StatsCol::Feature:
        feature_cols.push_back(j);
        t.feature_names.push_back(cols[j].base);
        break;
      case detail::StatsCol::YSum:
        ysum_cols.push_back(j);
        t.outcome_names.push_back(cols[j].base);
        break;
      case detail::StatsCol::Count:
        if (count_col != raw.header.size()) {
          throw Error(ErrorCode::SchemaMismatch, "duplicate __count column");
        }
        count_col = j;
        break;
      case detail::StatsCol::Cluster:
        cluster_col = j;
        break;
      case detail::StatsCol::WSum:
        wsum_col = j;
        break;
      case detail::StatsCol::W2Sum:
        w2sum_col = j;
        break;
      default:
        break;  // outcome-indexed blocks resolved in a second pass
    }
  }
  if (count_col == raw.header.size()) {
    throw Error(ErrorCode::SchemaMismatch, "missing __count column");
  }
  const Index g = static_cast<Index>(raw.rows.size());
  const Index p = static_cast<Index>(feature_cols.size());
  const Index o = static_cast<Index>(ysum_cols.size());

  const std::size_t npos = raw.header.size();
  std::vector<std::size_t> ysq_cols(static_cast<std::size_t>(o), npos);
  std::vector<std::size_t> value_cols(static_cast<std::size_t>(o), npos);
  std::vector<std::size_t> wy_cols(static_cast<std::size_t>(o), npos);
  std::vector<std::size_t> wysq_cols(static_cast<std::size_t>(o), npos);
  std::vector<std::size_t> w2y_cols(static_cast<std::size_t>(o), npos);
  std::vector<std::size_t> w2ysq_cols(static_cast<std::size_t>(o), npos);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    switch (cols[j].role) {
      case detail::StatsCol::YSqSum:
        ysq_cols[outcome_index(cols[j].base, "sum-of-squares")] = j;
        break;
      case detail::StatsCol::KeyValue:
        value_cols[outcome_index(cols[j].base, "key-value")] = j;
        break;
      case detail::StatsCol::WySum:
        wy_cols[outcome_index(cols[j].base, "weighted-sum")] = j;
        break;
      case detail::StatsCol::WySqSum:
        wysq_cols[outcome_index(cols[j].base, "weighted-sum-of-squares")] = j;
        break;
      case detail::StatsCol::W2ySum:
        w2y_cols[outcome_index(cols[j].base, "squared-weight-sum")] = j;
        break;
      case detail::StatsCol::W2ySqSum:
        w2ysq_cols[outcome_index(cols[j].base, "squared-weight-sum-of-squares")] = j;
        break;
      default:
        break;
    }
  }

  auto all_present = [&](const std::vector<std::size_t>& v) {
    for (const auto j : v) {
      if (j == npos) return false;
    }
    return true;
  };
  auto none_present = [&](const std::vector<std::size_t>& v) {
    for (const auto j : v) {
      if (j != npos) return false;
    }
    return true;
  };

  const bool has_ysq = all_present(ysq_cols) && o > 0;
  if (!has_ysq && !none_present(ysq_cols)) {
    throw Error(ErrorCode::SchemaMismatch, "sum-of-squares columns cover only some outcomes");
  }
  const bool has_values = o > 0 && all_present(value_cols);
  if (!has_values && !none_present(value_cols)) {
    throw Error(ErrorCode::SchemaMismatch, "key-value columns cover only some outcomes");
  }
  const bool has_weights = saw_weight_kind;
  const bool weights_complete = has_weights && w2sum_col != npos && all_present(wy_cols) &&
                                all_present(wysq_cols) && all_present(w2y_cols) &&
                                all_present(w2ysq_cols);
  if (has_weights && !weights_complete) {
    throw Error(ErrorCode::SchemaMismatch, "weighted block columns are incomplete");
  }
  if (!has_weights &&
      !(w2sum_col == npos && none_present(wy_cols) && none_present(wysq_cols) &&
        none_present(w2y_cols) && none_present(w2ysq_cols))) {
    throw Error(ErrorCode::SchemaMismatch, "weighted block columns without a weight-sum column");
  }

  t.key_kind = has_values ? GroupKeyKind::FeaturesAndOutcomes : GroupKeyKind::Features;
  t.unique_features.resize(g, p);
  t.y_sum.resize(g, o);
  if (has_ysq || o == 0) t.y_sq_sum_ = Matrix::Zero(g, o);
  t.count.resize(g);
  if (has_values) t.key_outcomes = Matrix::Zero(g, o);
  if (cluster_col != npos) t.cluster = std::vector<std::string>(static_cast<std::size_t>(g));
  if (has_weights) {
    WeightedBlocks wb;
    wb.kind = weight_kind;
    wb.w_sum.resize(g);
    wb.wy_sum.resize(g, o);
    wb.wy_sq_sum.resize(g, o);
    wb.w2_sum.resize(g);
    wb.w2y_sum.resize(g, o);
    wb.w2y_sq_sum.resize(g, o);
    t.weighted = std::move(wb);
  }

  for (Index i = 0; i < g; ++i) {
    const auto& row = raw.rows[static_cast<std::size_t>(i)];
    const std::size_t line = raw.line_of[static_cast<std::size_t>(i)];
    auto num = [&](std::size_t j) {
      return detail::parse_number(row[j], line, raw.header[j]);
    };
    for (Index f = 0; f < p; ++f) {
      t.unique_features(i, f) = num(feature_cols[static_cast<std::size_t>(f)]);
    }
    for (Index k = 0; k < o; ++k) {
      t.y_sum(i, k) = num(ysum_cols[static_cast<std::size_t>(k)]);
      if (has_ysq) (*t.y_sq_sum_)(i, k) = num(ysq_cols[static_cast<std::size_t>(k)]);
      if (has_values) (*t.key_outcomes)(i, k) = num(value_cols[static_cast<std::size_t>(k)]);
    }
    const double count = num(count_col);
    if (count < 1.0 || count != std::floor(count)) {
      throw Error(ErrorCode::SchemaMismatch,
                  "line " + std::to_string(line) + ": __count must be a positive integer");
    }
    t.count(i) = count;
    if (has_weights) {
      auto& wb = *t.weighted;
      wb.w_sum(i) = num(wsum_col);
      wb.w2_sum(i) = num(w2sum_col);
      for (Index k = 0; k < o; ++k) {
        wb.wy_sum(i, k) = num(wy_cols[static_cast<std::size_t>(k)]);
        wb.wy_sq_sum(i, k) = num(wysq_cols[static_cast<std::size_t>(k)]);
        wb.w2y_sum(i, k) = num(w2y_cols[static_cast<std::size_t>(k)]);
        wb.w2y_sq_sum(i, k) = num(w2ysq_cols[static_cast<std::size_t>(k)]);
      }
    }
    if (t.cluster) (*t.cluster)[static_cast<std::size_t>(i)] = row[cluster_col];
  }
  return t;
}

}  // namespace suffstats
