#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

using nlohmann::json;

namespace {

std::string temp_file(const std::string& stem, const std::string& ext = ".csv") {
  static int counter = 0;
  const auto name = "suffstats_cli_" + stem + "_" + std::to_string(counter++) + ext;
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  const auto out_path = temp_file("stdout", ".txt");
  const auto err_path = temp_file("stderr", ".txt");
  const std::string cmd =
      std::string(SUFFSTATS_CLI_PATH) + " " + args + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());

  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  return r;
}

/// treat/y rows whose fit has exact closed-form output.
std::string two_group_csv() {
  return "treat,y\n0,1\n0,3\n1,3\n1,5\n";
}

/// Balanced panel: four users, three periods, one per-user static column.
std::string panel_csv() {
  std::string out = "u,t,s,y\n";
  const double statics[4] = {0, 1, 0, 2};
  const char* users[4] = {"A", "B", "C", "D"};
  int salt = 0;
  for (int u = 0; u < 4; ++u) {
    for (int t = 1; t <= 3; ++t) {
      const double y = 1.0 + 2.0 * statics[u] + 0.5 * t + 0.01 * (++salt % 5);
      out += std::string(users[u]) + "," + std::to_string(t) + "," +
             std::to_string(statics[u]) + "," + std::to_string(y) + "\n";
    }
  }
  return out;
}

}  // namespace

TEST_CASE("fit emits the frozen document for the hand fixture") {
  const auto input = temp_file("fixture");
  write_file(input, two_group_csv());

  const auto r = run_cli("fit --input " + input +
                         " --features treat --outcomes y --cov ols --no-timing");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out ==
        "{\"coefficients\":{\"y\":{\"intercept\":2,\"treat\":2}},"
        "\"std_errors\":{\"y\":{\"intercept\":1,\"treat\":1.4142135623730951}},"
        "\"covariance\":{\"y\":[[1,-1],[-1,2]]},"
        "\"sigma2\":{\"y\":2},"
        "\"n\":4,\"G\":2,\"C\":0,\"compression_ratio\":2,\"covariance_spec\":\"ols\"}\n");
  std::remove(input.c_str());
}

TEST_CASE("timing is reported unless suppressed") {
  const auto input = temp_file("timing");
  write_file(input, two_group_csv());

  const auto timed = run_cli("fit --input " + input + " --features treat --outcomes y");
  REQUIRE(timed.exit_code == 0);
  const auto doc = json::parse(timed.out);
  CHECK(doc.contains("timing_ms"));
  CHECK(doc["timing_ms"].get<double>() >= 0.0);

  const auto quiet = run_cli("fit --input " + input + " --features treat --outcomes y --no-timing");
  CHECK_FALSE(json::parse(quiet.out).contains("timing_ms"));
  std::remove(input.c_str());
}

TEST_CASE("raw and precompressed fits agree byte for byte") {
  const auto input = temp_file("raw");
  const auto table = temp_file("table");
  write_file(input, two_group_csv());

  const auto c = run_cli("compress --input " + input +
                         " --features treat --outcomes y --output " + table);
  REQUIRE(c.exit_code == 0);
  const auto cdoc = json::parse(c.out);
  CHECK(cdoc["n"] == 4);
  CHECK(cdoc["G"] == 2);
  CHECK(cdoc["compression_ratio"] == 2.0);

  for (const std::string cov : {"ols", "hc"}) {
    const auto raw = run_cli("fit --input " + input +
                             " --features treat --outcomes y --cov " + cov + " --no-timing");
    const auto pre = run_cli("fit --input " + table + " --precompressed --cov " + cov +
                             " --no-timing");
    REQUIRE(raw.exit_code == 0);
    REQUIRE(pre.exit_code == 0);
    CHECK(raw.out == pre.out);
  }
  std::remove(input.c_str());
  std::remove(table.c_str());
}

TEST_CASE("weighted tables round trip through the precompressed path") {
  const auto input = temp_file("wraw");
  const auto table = temp_file("wtable");
  write_file(input, "x,y,w\n0,1,0.5\n0,2,1.5\n1,4,2\n1,5,1\n0,1,2.5\n");

  const std::string common = " --weights w --weight-kind analytic";
  const auto c = run_cli("compress --input " + input + " --features x --outcomes y" + common +
                         " --output " + table);
  REQUIRE(c.exit_code == 0);

  const auto raw = run_cli("fit --input " + input + " --features x --outcomes y" + common +
                           " --cov hc --no-timing");
  const auto pre = run_cli("fit --input " + table + " --precompressed --cov hc --no-timing");
  REQUIRE(raw.exit_code == 0);
  REQUIRE(pre.exit_code == 0);
  CHECK(raw.out == pre.out);

  // Analytic weights: df = sum(w) - p = 7.5 - 2.
  const auto doc = json::parse(raw.out);
  CHECK(doc["n"] == 5);
  std::remove(input.c_str());
  std::remove(table.c_str());
}

TEST_CASE("the four cluster strategies agree through the command line") {
  const auto input = temp_file("panel");
  write_file(input, panel_csv());

  const std::string base = "fit --input " + input +
                           " --features s,t --outcomes y --cov cluster --cluster-col u "
                           "--no-timing --cluster-strategy ";
  const auto within = run_cli(base + "within");
  const auto between = run_cli(base + "between --order-col t");
  const auto staticdyn = run_cli(base + "static-dynamic --order-col t --static-cols s");
  const auto balanced = run_cli(base + "balanced --order-col t --static-cols s");

  REQUIRE(within.exit_code == 0);
  REQUIRE(between.exit_code == 0);
  REQUIRE(staticdyn.exit_code == 0);
  REQUIRE(balanced.exit_code == 0);

  const auto jw = json::parse(within.out);
  CHECK(jw["covariance_spec"] == "cluster:within");
  CHECK(jw["C"] == 4);
  CHECK(json::parse(between.out)["covariance_spec"] == "cluster:between");
  CHECK(json::parse(staticdyn.out)["covariance_spec"] == "cluster:static-dynamic");
  CHECK(json::parse(balanced.out)["covariance_spec"] == "cluster:balanced");

  for (const auto* r : {&between, &staticdyn, &balanced}) {
    const auto j = json::parse(r->out);
    for (const auto& name : {"intercept", "s", "t"}) {
      CHECK(std::abs(j["coefficients"]["y"][name].get<double>() -
                     jw["coefficients"]["y"][name].get<double>()) < 1e-9);
      CHECK(std::abs(j["std_errors"]["y"][name].get<double>() -
                     jw["std_errors"]["y"][name].get<double>()) < 1e-9);
    }
  }
  std::remove(input.c_str());
}

TEST_CASE("group-level tables fit with a null covariance block") {
  const auto input = temp_file("gm_raw");
  const auto table = temp_file("gm_table");
  write_file(input, two_group_csv());

  REQUIRE(run_cli("compress --input " + input +
                  " --features treat --outcomes y --mode group-means --output " + table)
              .exit_code == 0);
  const auto r = run_cli("fit --input " + table + " --precompressed --no-timing");
  REQUIRE(r.exit_code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["std_errors"].is_null());
  CHECK(doc["covariance"].is_null());
  CHECK(doc["sigma2"].is_null());
  CHECK(doc["coefficients"]["y"]["treat"] == 2.0);
  CHECK(r.err.find("not recoverable") != std::string::npos);
  std::remove(input.c_str());
  std::remove(table.c_str());
}

TEST_CASE("frequency-encoded compression counts duplicate observations") {
  const auto input = temp_file("fw_raw");
  const auto table = temp_file("fw_table");
  write_file(input, "x,y\n0,1\n0,1\n1,2\n");

  const auto c = run_cli("compress --input " + input +
                         " --features x --outcomes y --mode fweights --output " + table);
  REQUIRE(c.exit_code == 0);
  const auto cdoc = json::parse(c.out);
  CHECK(cdoc["n"] == 3);
  CHECK(cdoc["G"] == 2);
  CHECK(read_file(table).find("y__value") != std::string::npos);

  const auto r = run_cli("fit --input " + table + " --precompressed --cov hc --no-timing");
  REQUIRE(r.exit_code == 0);
  const auto doc = json::parse(r.out);
  CHECK(std::abs(doc["coefficients"]["y"]["x"].get<double>() - 1.0) < 1e-12);
  CHECK(std::abs(doc["coefficients"]["y"]["intercept"].get<double>() - 1.0) < 1e-12);

  SECTION("cluster labels cannot key a frequency encoding") {
    write_file(input, "x,y,g\n0,1,a\n0,1,a\n1,2,b\n");
    const auto bad = run_cli("compress --input " + input +
                             " --features x --outcomes y --mode fweights --cluster-col g "
                             "--output " + table);
    CHECK(bad.exit_code == 2);
  }
  std::remove(input.c_str());
  std::remove(table.c_str());
}

TEST_CASE("binning directives rewrite columns before the fit") {
  const auto input = temp_file("bin");
  std::string csv = "x,y\n";
  for (int i = 1; i <= 10; ++i) {
    csv += std::to_string(i) + "," + std::to_string(2 * i) + "\n";
  }
  write_file(input, csv);

  const auto r = run_cli("fit --input " + input +
                         " --features x --outcomes y --bin x:2 --no-timing");
  REQUIRE(r.exit_code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["coefficients"]["y"].contains("x__bin1"));
  CHECK_FALSE(doc["coefficients"]["y"].contains("x"));
  CHECK(doc["G"] == 2);
  std::remove(input.c_str());
}

TEST_CASE("summarize prints weighted means of a compressed table") {
  const auto input = temp_file("sum_raw");
  const auto table = temp_file("sum_table");
  write_file(input, two_group_csv());
  REQUIRE(run_cli("compress --input " + input +
                  " --features treat --outcomes y --output " + table)
              .exit_code == 0);

  const auto r = run_cli("summarize --input " + table);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out ==
        "{\"n\":4,\"G\":2,"
        "\"feature_means\":{\"treat\":0.5},"
        "\"outcome_means\":{\"y\":3}}\n");
  std::remove(input.c_str());
  std::remove(table.c_str());
}

TEST_CASE("bench runs end to end and reports both speedups") {
  const auto r = run_cli("bench --nu 40 --t 5 --g 10 --reps 1 --cov hc --seed 7");
  REQUIRE(r.exit_code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["n"] == 200);
  CHECK(doc["reps"] == 1);
  CHECK(doc["covariance_spec"] == "hc");
  CHECK(doc["speedup_fit"].get<double>() > 0.0);
  CHECK(doc["speedup_pipeline"].get<double>() > 0.0);
}

TEST_CASE("usage errors exit with the validation code") {
  const auto input = temp_file("usage");
  write_file(input, two_group_csv());

  SECTION("cluster covariance without a cluster column") {
    const auto r = run_cli("fit --input " + input +
                           " --features treat --outcomes y --cov cluster");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("--cluster-col") != std::string::npos);
  }
  SECTION("interactions with an implicit intercept") {
    const auto r = run_cli("fit --input " + input +
                           " --features treat --outcomes y --cov cluster "
                           "--cluster-col treat --cluster-strategy static-dynamic "
                           "--interactions");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("--no-intercept") != std::string::npos);
  }
  SECTION("missing input file") {
    const auto r = run_cli("fit --input /nonexistent.csv --features x --outcomes y");
    CHECK(r.exit_code == 2);
  }
  SECTION("missing required flag") {
    CHECK(run_cli("fit --features x --outcomes y").exit_code == 2);
  }
  SECTION("unknown covariance name") {
    const auto r = run_cli("fit --input " + input +
                           " --features treat --outcomes y --cov hc3");
    CHECK(r.exit_code == 2);
  }
  SECTION("unknown subcommand") {
    CHECK(run_cli("explode").exit_code == 2);
  }
  SECTION("malformed bin directive") {
    const auto r = run_cli("fit --input " + input +
                           " --features treat --outcomes y --bin treat");
    CHECK(r.exit_code == 2);
  }
  SECTION("precompressed input with a non-within strategy") {
    const auto r = run_cli("fit --input " + input +
                           " --precompressed --cov cluster --cluster-strategy between");
    CHECK(r.exit_code == 2);
  }
  std::remove(input.c_str());
}

TEST_CASE("numerical failures exit with their own code") {
  const auto input = temp_file("rank");
  write_file(input, "x,x2,y\n1,2,1\n2,4,2\n3,6,3\n4,8,5\n");

  const auto r = run_cli("fit --input " + input + " --features x,x2 --outcomes y");
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("collinear") != std::string::npos);
  std::remove(input.c_str());
}
