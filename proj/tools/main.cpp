// Command-line front end: compress, fit, summarize, bench.
//
// JSON goes to stdout, messages to stderr. Exit codes: 0 success, 2 input or
// configuration error, 3 numerical error (rank deficiency, non-positive
// degrees of freedom, non-convergence).

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "suffstats/suffstats.hpp"

namespace {

using namespace suffstats;

BinDirective parse_bin_directive(const std::string& s) {
  const auto pos = s.rfind(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "--bin expects <column>:<k>, got '" + s + "'");
  }
  BinDirective d;
  d.column = s.substr(0, pos);
  try {
    std::size_t used = 0;
    d.k = std::stoi(s.substr(pos + 1), &used);
    if (used != s.size() - pos - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument,
                "--bin expects an integer bin count, got '" + s + "'");
  }
  if (d.k < 1) {
    throw Error(ErrorCode::InvalidArgument, "--bin count must be at least 1");
  }
  return d;
}

ObservationSet prepend_intercept(ObservationSet obs) {
  Matrix f(obs.n_rows(), obs.n_features() + 1);
  f.col(0).setOnes();
  f.rightCols(obs.n_features()) = obs.features;
  obs.features = std::move(f);
  obs.feature_names.insert(obs.feature_names.begin(), "intercept");
  return obs;
}

SuffStatsTable prepend_intercept(SuffStatsTable t) {
  Matrix f(t.n_groups(), t.n_features() + 1);
  f.col(0).setOnes();
  f.rightCols(t.n_features()) = t.unique_features;
  t.unique_features = std::move(f);
  t.feature_names.insert(t.feature_names.begin(), "intercept");
  return t;
}

struct CommonOpts {
  JobConfig config;
  std::vector<std::string> bin_raw;
  std::string weight_kind = "freq";
  bool no_intercept = false;

  void add_input_flags(CLI::App* cmd, bool fit_mode) {
    cmd->add_option("--input", config.input, "input CSV file")->required();
    // Required for raw rows; a precompressed table names its own columns, so
    // the check lives in run_fit rather than here.
    auto* f = cmd->add_option("--features", config.features, "feature columns")->delimiter(',');
    auto* o = cmd->add_option("--outcomes", config.outcomes, "outcome columns")->delimiter(',');
    if (!fit_mode) {
      f->required();
      o->required();
    }
    auto* w = cmd->add_option("--weights", "weight column");
    w->each([this](const std::string& v) { config.weight_col = v; });
    cmd->add_option("--weight-kind", weight_kind, "weight interpretation")
        ->check(CLI::IsMember({"freq", "analytic"}))
        ->needs(w);
    cmd->add_option("--cluster-col", "cluster label column")
        ->each([this](const std::string& v) { config.cluster_col = v; });
    cmd->add_option("--bin", bin_raw, "replace <column> by <k>-quantile bin dummies, as <column>:<k>");
    if (fit_mode) {
      cmd->add_option("--order-col", "within-cluster ordering column")
          ->each([this](const std::string& v) { config.order_col = v; });
      cmd->add_option("--static-cols", config.static_cols,
                      "feature columns constant within each cluster")
          ->delimiter(',');
      cmd->add_flag("--no-intercept", no_intercept, "do not prepend a constant column");
    }
  }

  void finalize() {
    config.weight_kind =
        weight_kind == "analytic" ? WeightKind::Analytic : WeightKind::Frequency;
    for (const auto& s : bin_raw) config.bins.push_back(parse_bin_directive(s));
  }

  LoadedObservations load() const {
    LoadedObservations loaded = read_csv(config.input, config);
    for (const auto& bin : config.bins) {
      loaded.obs = bin_features(loaded.obs, {bin.column}, bin.k);
    }
    return loaded;
  }
};

int run_compress(CommonOpts& opts, const std::string& mode) {
  opts.finalize();
  const LoadedObservations loaded = opts.load();
  const bool keyed = opts.config.cluster_col.has_value();

  SuffStatsTable table;
  if (mode == "fweights") {
    if (keyed) {
      throw Error(ErrorCode::InvalidArgument,
                  "--cluster-col is not supported with --mode fweights");
    }
    table = compress_fweights(loaded.obs);
  } else if (mode == "group-means") {
    table = compress_group_means(loaded.obs, keyed);
  } else {
    table = compress_suffstats(loaded.obs, keyed);
  }
  write_suffstats(opts.config.output, table);

  JsonWriter w;
  w.begin_object();
  w.key("n").value_int(static_cast<double>(loaded.obs.n_rows()));
  w.key("G").value_int(static_cast<double>(table.n_groups()));
  w.key("compression_ratio")
      .value(table.n_groups() > 0
                 ? static_cast<double>(loaded.obs.n_rows()) / static_cast<double>(table.n_groups())
                 : 0.0);
  w.key("output").value(opts.config.output);
  w.end_object();
  std::cout << w.str() << "\n";
  return 0;
}

int run_fit(CommonOpts& opts, bool precompressed, bool interactions, bool no_timing) {
  opts.finalize();
  JobConfig& cfg = opts.config;

  if (precompressed) {
    if (!cfg.features.empty() || !cfg.outcomes.empty()) {
      throw Error(ErrorCode::InvalidArgument,
                  "--features/--outcomes describe raw rows; a precompressed table "
                  "names its own columns");
    }
  } else if (cfg.features.empty() || cfg.outcomes.empty()) {
    throw Error(ErrorCode::InvalidArgument,
                "--features and --outcomes are required for raw input");
  }
  if (cfg.covariance.kind == CovarianceKind::ClusterRobust && !precompressed &&
      !cfg.cluster_col) {
    throw Error(ErrorCode::InvalidArgument,
                "--cov cluster requires --cluster-col");
  }
  if (interactions && !opts.no_intercept) {
    throw Error(ErrorCode::InvalidArgument,
                "--interactions forms every static x dynamic product, which "
                "duplicates columns when an intercept is present; pass "
                "--no-intercept and include constants explicitly");
  }

  const bool panel_strategy =
      cfg.covariance.kind == CovarianceKind::ClusterRobust &&
      (cfg.covariance.strategy == ClusterStrategy::StaticDynamic ||
       cfg.covariance.strategy == ClusterStrategy::BalancedPanel);
  const bool between_strategy =
      cfg.covariance.kind == CovarianceKind::ClusterRobust &&
      cfg.covariance.strategy == ClusterStrategy::BetweenCluster;

  FitResult result;
  double elapsed_ms = 0.0;

  if (precompressed) {
    if (!cfg.bins.empty()) {
      throw Error(ErrorCode::InvalidArgument,
                  "--bin needs raw rows and cannot apply to --precompressed input");
    }
    if (between_strategy || panel_strategy) {
      throw Error(ErrorCode::InvalidArgument,
                  "--precompressed input supports --cluster-strategy within only; "
                  "the other strategies have no serialized form");
    }
    SuffStatsTable table = read_suffstats(cfg.input);
    if (!opts.no_intercept) table = prepend_intercept(std::move(table));
    const auto t0 = std::chrono::steady_clock::now();
    result = fit(table, cfg.covariance);
    const auto t1 = std::chrono::steady_clock::now();
    elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  } else {
    LoadedObservations loaded = opts.load();
    if (!opts.no_intercept) loaded.obs = prepend_intercept(std::move(loaded.obs));

    const auto t0 = std::chrono::steady_clock::now();
    if (panel_strategy) {
      std::vector<std::string> static_set;
      if (!opts.no_intercept) static_set.push_back("intercept");
      static_set.insert(static_set.end(), cfg.static_cols.begin(), cfg.static_cols.end());
      const PanelStatsTable table = compress_panel(loaded.obs, static_set, loaded.order);
      result = fit(table, cfg.covariance, interactions);
    } else if (between_strategy) {
      const ClusterStatsTable table = compress_between_cluster(loaded.obs, loaded.order);
      result = fit(table, cfg.covariance);
    } else {
      const bool keyed = cfg.covariance.kind == CovarianceKind::ClusterRobust;
      const SuffStatsTable table = compress_suffstats(loaded.obs, keyed);
      result = fit(table, cfg.covariance);
    }
    const auto t1 = std::chrono::steady_clock::now();
    elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }

  std::cout << fit_report(result, no_timing ? std::nullopt : std::optional<double>(elapsed_ms))
            << "\n";
  if (!result.covariance_exact) {
    std::cerr << "note: input table carries group-level statistics only; "
                 "the requested covariance is not recoverable and was omitted\n";
  }
  return 0;
}

int run_summarize(const std::string& input) {
  const SuffStatsTable table = read_suffstats(input);
  std::cout << summary_report(table) << "\n";
  return 0;
}

int run_bench_cmd(const BenchConfig& cfg) {
  std::cout << bench_report_json(suffstats::run_bench(cfg)) << "\n";
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_numerical_error(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lossless sufficient-statistic compression and estimation for tabular data"};
  app.require_subcommand(1);

  CommonOpts compress_opts;
  std::string compress_mode = "suffstats";
  auto* compress_cmd =
      app.add_subcommand("compress", "compress raw rows into a sufficient-statistics CSV");
  compress_opts.add_input_flags(compress_cmd, /*fit_mode=*/false);
  compress_cmd->add_option("--mode", compress_mode, "table flavor")
      ->check(CLI::IsMember({"suffstats", "fweights", "group-means"}));
  compress_cmd->add_option("--output", compress_opts.config.output, "output CSV path")
      ->required();

  CommonOpts fit_opts;
  std::string cov = "ols";
  std::string strategy = "within";
  bool precompressed = false;
  bool interactions = false;
  bool no_timing = false;
  auto* fit_cmd = app.add_subcommand("fit", "estimate coefficients and covariance");
  fit_opts.add_input_flags(fit_cmd, /*fit_mode=*/true);
  fit_cmd->add_option("--cov", cov, "covariance estimator")
      ->check(CLI::IsMember({"ols", "hc", "cluster"}));
  fit_cmd->add_option("--cluster-strategy", strategy, "cluster-robust algorithm")
      ->check(CLI::IsMember({"within", "between", "static-dynamic", "balanced"}));
  fit_cmd->add_flag("--precompressed", precompressed,
                    "input is a sufficient-statistics CSV, not raw rows");
  fit_cmd->add_flag("--interactions", interactions,
                    "add static x dynamic interaction terms (panel strategies)");
  fit_cmd->add_flag("--no-timing", no_timing, "omit timing_ms for reproducible output");

  std::string summarize_input;
  auto* summarize_cmd =
      app.add_subcommand("summarize", "weighted means and counts of a compressed table");
  summarize_cmd->add_option("--input", summarize_input, "sufficient-statistics CSV")
      ->required();

  BenchConfig bench_cfg;
  std::string bench_cov = "hc";
  auto* bench_cmd = app.add_subcommand("bench", "timing comparison against a raw-row fit");
  bench_cmd->add_option("--nu", bench_cfg.n_users, "users (clusters)");
  bench_cmd->add_option("--t", bench_cfg.periods, "rows per user");
  bench_cmd->add_option("--g", bench_cfg.pool, "distinct feature rows (non-clustered modes)");
  bench_cmd->add_option("--reps", bench_cfg.reps, "repetitions; medians are reported");
  bench_cmd->add_option("--seed", bench_cfg.seed, "generator seed");
  bench_cmd->add_option("--cov", bench_cov, "covariance estimator")
      ->check(CLI::IsMember({"ols", "hc", "cluster"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*compress_cmd) {
    return guarded([&] { return run_compress(compress_opts, compress_mode); });
  }
  if (*fit_cmd) {
    return guarded([&] {
      if (cov == "hc") {
        fit_opts.config.covariance.kind = CovarianceKind::HeteroskedasticityRobust;
      } else if (cov == "cluster") {
        fit_opts.config.covariance.kind = CovarianceKind::ClusterRobust;
      }
      if (strategy == "between") {
        fit_opts.config.covariance.strategy = ClusterStrategy::BetweenCluster;
      } else if (strategy == "static-dynamic") {
        fit_opts.config.covariance.strategy = ClusterStrategy::StaticDynamic;
      } else if (strategy == "balanced") {
        fit_opts.config.covariance.strategy = ClusterStrategy::BalancedPanel;
      }
      return run_fit(fit_opts, precompressed, interactions, no_timing);
    });
  }
  if (*summarize_cmd) {
    return guarded([&] { return run_summarize(summarize_input); });
  }
  return guarded([&] {
    if (bench_cov == "ols") {
      bench_cfg.spec.kind = CovarianceKind::Homoskedastic;
    } else if (bench_cov == "cluster") {
      bench_cfg.spec.kind = CovarianceKind::ClusterRobust;
    }
    return run_bench_cmd(bench_cfg);
  });
}
