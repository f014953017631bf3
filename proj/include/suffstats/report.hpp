#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "suffstats/types.hpp"

namespace suffstats {

/// Minimal JSON emitter with deterministic output: keys appear in call
/// order, doubles are always formatted with 17 significant digits, no
/// locale involvement. Equal inputs therefore produce equal bytes.
class JsonWriter {
 public:
  JsonWriter& begin_object() {
    start_value();
    out_.push_back('{');
    fresh_.push_back(true);
    return *this;
  }
  JsonWriter& end_object() {
    out_.push_back('}');
    fresh_.pop_back();
    return *this;
  }
  JsonWriter& begin_array() {
    start_value();
    out_.push_back('[');
    fresh_.push_back(true);
    return *this;
  }
  JsonWriter& end_array() {
    out_.push_back(']');
    fresh_.pop_back();
    return *this;
  }
  JsonWriter& key(std::string_view k) {
    separate();
    escape(k);
    out_.push_back(':');
    pending_key_ = true;
    return *this;
  }
  JsonWriter& value(double v) {
    start_value();
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out_.append(buf);
    return *this;
  }
  JsonWriter& value_int(double v) {
    start_value();
    out_.append(std::to_string(static_cast<long long>(std::llround(v))));
    return *this;
  }
  JsonWriter& value(std::string_view v) {
    start_value();
    escape(v);
    return *this;
  }
  JsonWriter& value(bool v) {
    start_value();
    out_.append(v ? "true" : "false");
    return *this;
  }
  JsonWriter& null() {
    start_value();
    out_.append("null");
    return *this;
  }
  const std::string& str() const { return out_; }

 private:
  void separate() {
    if (!fresh_.empty() && !fresh_.back()) out_.push_back(',');
    if (!fresh_.empty()) fresh_.back() = false;
  }
  void start_value() {
    if (pending_key_) {
      pending_key_ = false;
    } else {
      separate();
    }
  }
  void escape(std::string_view s) {
    out_.push_back('"');
    for (const char ch : s) {
      switch (ch) {
        case '"': out_.append("\\\""); break;
        case '\\': out_.append("\\\\"); break;
        case '\n': out_.append("\\n"); break;
        case '\r': out_.append("\\r"); break;
        case '\t': out_.append("\\t"); break;
        default:
          if (static_cast<unsigned char>(ch) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", ch);
            out_.append(buf);
          } else {
            out_.push_back(ch);
          }
      }
    }
    out_.push_back('"');
  }

  std::string out_;
  std::vector<bool> fresh_;
  bool pending_key_ = false;
};

inline std::string covariance_spec_name(const CovarianceSpec& spec) {
  switch (spec.kind) {
    case CovarianceKind::Homoskedastic:
      return "ols";
    case CovarianceKind::HeteroskedasticityRobust:
      return "hc";
    case CovarianceKind::ClusterRobust:
      switch (spec.strategy) {
        case ClusterStrategy::WithinCluster: return "cluster:within";
        case ClusterStrategy::BetweenCluster: return "cluster:between";
        case ClusterStrategy::StaticDynamic: return "cluster:static-dynamic";
        case ClusterStrategy::BalancedPanel: return "cluster:balanced";
      }
  }
  return "unknown";
}

/// The fit document printed by the CLI. Per-outcome maps keyed by outcome
/// name; unavailable sections (group-level input) are null. `timing_ms` is
/// omitted entirely when not supplied so identical fits give identical bytes.
inline std::string fit_report(const FitResult& r, std::optional<double> timing_ms) {
  JsonWriter w;
  w.begin_object();

  w.key("coefficients").begin_object();
  for (Index k = 0; k < r.coefficients.cols(); ++k) {
    w.key(r.outcome_names[static_cast<std::size_t>(k)]).begin_object();
    for (Index j = 0; j < r.coefficients.rows(); ++j) {
      w.key(r.coefficient_names[static_cast<std::size_t>(j)]).value(r.coefficients(j, k));
    }
    w.end_object();
  }
  w.end_object();

  if (r.covariance_exact && !r.covariance.empty()) {
    w.key("std_errors").begin_object();
    for (Index k = 0; k < r.std_errors.cols(); ++k) {
      w.key(r.outcome_names[static_cast<std::size_t>(k)]).begin_object();
      for (Index j = 0; j < r.std_errors.rows(); ++j) {
        w.key(r.coefficient_names[static_cast<std::size_t>(j)]).value(r.std_errors(j, k));
      }
      w.end_object();
    }
    w.end_object();
    w.key("covariance").begin_object();
    for (std::size_t k = 0; k < r.covariance.size(); ++k) {
      const Matrix& v = r.covariance[k];
      w.key(r.outcome_names[k]).begin_array();
      for (Index i = 0; i < v.rows(); ++i) {
        w.begin_array();
        for (Index j = 0; j < v.cols(); ++j) w.value(v(i, j));
        w.end_array();
      }
      w.end_array();
    }
    w.end_object();
  } else {
    w.key("std_errors").null();
    w.key("covariance").null();
  }

  if (r.sigma2.size() > 0) {
    w.key("sigma2").begin_object();
    for (Index k = 0; k < r.sigma2.size(); ++k) {
      w.key(r.outcome_names[static_cast<std::size_t>(k)]).value(r.sigma2(k));
    }
    w.end_object();
  } else {
    w.key("sigma2").null();
  }

  w.key("n").value_int(r.diagnostics.n);
  w.key("G").value_int(r.diagnostics.n_groups);
  w.key("C").value_int(r.diagnostics.n_clusters);
  w.key("compression_ratio").value(r.diagnostics.compression_ratio);
  w.key("covariance_spec").value(covariance_spec_name(r.spec));
  if (timing_ms) w.key("timing_ms").value(*timing_ms);
  w.end_object();
  return w.str();
}

/// The summarize document: counts plus (weight-)weighted means per column.
inline std::string summary_report(const SuffStatsTable& t) {
  const Vector& gw = t.weighted ? t.weighted->w_sum : t.count;
  const Matrix& ys = t.weighted ? t.weighted->wy_sum : t.y_sum;
  const double denom = gw.size() == 0 ? 0.0 : gw.sum();
  JsonWriter w;
  w.begin_object();
  w.key("n").value_int(t.n_rows());
  w.key("G").value_int(static_cast<double>(t.n_groups()));
  w.key("feature_means").begin_object();
  for (Index j = 0; j < t.n_features(); ++j) {
    double s = 0.0;
    for (Index g = 0; g < t.n_groups(); ++g) s += gw(g) * t.unique_features(g, j);
    w.key(t.feature_names[static_cast<std::size_t>(j)]).value(denom > 0 ? s / denom : 0.0);
  }
  w.end_object();
  w.key("outcome_means").begin_object();
  for (Index k = 0; k < t.n_outcomes(); ++k) {
    w.key(t.outcome_names[static_cast<std::size_t>(k)])
        .value(denom > 0 ? ys.col(k).sum() / denom : 0.0);
  }
  w.end_object();
  w.end_object();
  return w.str();
}

}  // namespace suffstats
