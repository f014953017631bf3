#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "suffstats/compress.hpp"
#include "suffstats/estimate.hpp"
#include "suffstats/gen.hpp"
#include "suffstats/oracle.hpp"
#include "suffstats/report.hpp"
#include "suffstats/types.hpp"

namespace suffstats {

struct BenchConfig {
  Index n_users = 1000;
  Index periods = 100;
  Index pool = 100;      // distinct feature rows in the non-clustered modes
  int reps = 5;
  CovarianceSpec spec{CovarianceKind::HeteroskedasticityRobust, ClusterStrategy::WithinCluster};
  std::uint64_t seed = 1;
};

struct BenchReport {
  std::string mode;
  double n = 0;
  double groups = 0;
  int reps = 0;
  CovarianceSpec spec;
  double compress_ms = 0;
  double fit_ms = 0;
  double oracle_ms = 0;
  double speedup_fit = 0;       // oracle fit vs compressed fit, compression excluded
  double speedup_pipeline = 0;  // oracle fit vs compress + fit; can fall below 1
};

namespace detail {

template <typename F>
double time_ms(F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace detail

/// Times compression, the fit on the compressed table, and the brute-force
/// fit on the raw rows; reports medians over `reps` repetitions. Clustered
/// covariance benchmarks on a generated panel, the other kinds on flat data
/// with a fixed pool of distinct feature rows.
inline BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.reps < 1) throw Error(ErrorCode::InvalidArgument, "bench reps must be >= 1");
  const bool clustered = cfg.spec.kind == CovarianceKind::ClusterRobust;

  ObservationSet obs;
  if (clustered) {
    obs = gen_panel(cfg.n_users, cfg.periods, 2, cfg.seed).obs;
  } else {
    obs = gen_flat(cfg.n_users * cfg.periods, cfg.pool, 3, cfg.seed).obs;
  }

  std::vector<double> t_compress, t_fit, t_oracle;
  SuffStatsTable table;
  for (int r = 0; r < cfg.reps; ++r) {
    t_compress.push_back(detail::time_ms([&] {
      table = compress_suffstats(obs, clustered);
    }));
    FitResult fit_result;
    t_fit.push_back(detail::time_ms([&] {
      fit_result = fit(table, cfg.spec);
    }));
    t_oracle.push_back(detail::time_ms([&] {
      const OracleFit ofit = oracle_ols(obs);
      (void)oracle_sandwich(obs, ofit.residuals, cfg.spec);
    }));
  }

  BenchReport rep;
  rep.mode = clustered ? "panel" : "flat";
  rep.n = static_cast<double>(obs.n_rows());
  rep.groups = static_cast<double>(table.n_groups());
  rep.reps = cfg.reps;
  rep.spec = cfg.spec;
  rep.compress_ms = detail::median(t_compress);
  rep.fit_ms = detail::median(t_fit);
  rep.oracle_ms = detail::median(t_oracle);
  rep.speedup_fit = rep.oracle_ms / rep.fit_ms;
  rep.speedup_pipeline = rep.oracle_ms / (rep.compress_ms + rep.fit_ms);
  return rep;
}

inline std::string bench_report_json(const BenchReport& r) {
  JsonWriter w;
  w.begin_object();
  w.key("mode").value(r.mode);
  w.key("n").value_int(r.n);
  w.key("G").value_int(r.groups);
  w.key("reps").value_int(static_cast<double>(r.reps));
  w.key("covariance_spec").value(covariance_spec_name(r.spec));
  w.key("compress_ms").value(r.compress_ms);
  w.key("fit_ms").value(r.fit_ms);
  w.key("oracle_ms").value(r.oracle_ms);
  w.key("speedup_fit").value(r.speedup_fit);
  w.key("speedup_pipeline").value(r.speedup_pipeline);
  w.end_object();
  return w.str();
}

}  // namespace suffstats
