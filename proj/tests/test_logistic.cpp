#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <vector>

#include "suffstats/logistic.hpp"
#include "suffstats/oracle.hpp"

#include "helpers.hpp"
#include "matchers.hpp"

using namespace suffstats;
using testutil::bit_equal;
using testutil::concat_rows;
using testutil::max_rel_diff;
using testutil::rel_diff;

namespace {

/// Discrete design plus Bernoulli outcomes from a logistic model, so the
/// compressed groups are few and the likelihood is well behaved.
ObservationSet logistic_instance(std::mt19937_64& rng, Index n, Index p, int alphabet = 3) {
  std::uniform_int_distribution<int> level(0, alphabet - 1);
  std::uniform_real_distribution<double> coef(-0.8, 0.8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ObservationSet obs;
  obs.features.resize(n, p);
  obs.outcomes.resize(n, 1);
  obs.feature_names.push_back("c0");
  for (Index j = 1; j < p; ++j) obs.feature_names.push_back("x" + std::to_string(j));
  obs.outcome_names = {"y"};

  Vector beta(p);
  for (Index j = 0; j < p; ++j) beta(j) = coef(rng);
  for (Index i = 0; i < n; ++i) {
    obs.features(i, 0) = 1.0;
    for (Index j = 1; j < p; ++j) obs.features(i, j) = static_cast<double>(level(rng));
    const double eta = obs.features.row(i) * beta;
    obs.outcomes(i, 0) = unit(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return obs;
}

/// Redraws until the likelihood has an interior maximum; separated draws are
/// rejected the same way the estimator reports them.
ObservationSet fittable_instance(std::mt19937_64& rng, Index n, Index p) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    ObservationSet obs = logistic_instance(rng, n, p);
    try {
      fit_logistic(compress_logistic(obs));
      return obs;
    } catch (const Error&) {
    }
  }
  throw std::runtime_error("no fittable logistic draw in 50 attempts");
}

ObservationSet intercept_only(int ones, int zeros) {
  ObservationSet obs;
  const Index n = ones + zeros;
  obs.features = Matrix::Ones(n, 1);
  obs.outcomes.resize(n, 1);
  for (Index i = 0; i < n; ++i) obs.outcomes(i, 0) = i < ones ? 1.0 : 0.0;
  obs.feature_names = {"intercept"};
  obs.outcome_names = {"y"};
  return obs;
}

Matrix row_level_information(const ObservationSet& obs, const Vector& beta) {
  Matrix info = Matrix::Zero(obs.n_features(), obs.n_features());
  for (Index i = 0; i < obs.n_rows(); ++i) {
    const double eta = obs.features.row(i) * beta;
    const double s = 1.0 / (1.0 + std::exp(-eta));
    info.noalias() += s * (1.0 - s) * obs.features.row(i).transpose() * obs.features.row(i);
  }
  return info;
}

}  // namespace

TEST_CASE("logistic compression groups successes and trials") {
  ObservationSet obs;
  obs.features.resize(5, 1);
  obs.features << 1, 1, 1, 2, 2;
  obs.outcomes.resize(5, 1);
  obs.outcomes << 1, 0, 1, 0, 0;
  obs.feature_names = {"x"};
  obs.outcome_names = {"y"};

  const auto s = compress_logistic(obs);
  REQUIRE(s.n_groups() == 2);
  CHECK(s.unique_features(0, 0) == 1.0);
  CHECK(s.y_sum(0) == 2.0);
  CHECK(s.count(0) == 3.0);
  CHECK(s.unique_features(1, 0) == 2.0);
  CHECK(s.y_sum(1) == 0.0);
  CHECK(s.count(1) == 2.0);
  CHECK(s.n_rows() == 5.0);
}

TEST_CASE("logistic compression validates its input") {
  std::mt19937_64 rng(1);
  ObservationSet obs = logistic_instance(rng, 20, 2);

  SECTION("non-binary outcome value") {
    obs.outcomes(3, 0) = 0.5;
    CHECK_THROWS_MATCHES(compress_logistic(obs), Error,
                         testutil::HasCode(ErrorCode::NonBinaryOutcome));
  }
  SECTION("more than one outcome column") {
    Matrix wide(obs.n_rows(), 2);
    wide.col(0) = obs.outcomes.col(0);
    wide.col(1) = obs.outcomes.col(0);
    obs.outcomes = wide;
    obs.outcome_names = {"y", "y2"};
    CHECK_THROWS_MATCHES(compress_logistic(obs), Error,
                         testutil::HasCode(ErrorCode::NonBinaryOutcome));
  }
  SECTION("weighted input") {
    obs.weights = Vector::Ones(obs.n_rows());
    CHECK_THROWS_MATCHES(compress_logistic(obs), Error,
                         testutil::HasCode(ErrorCode::InvalidArgument));
  }
}

TEST_CASE("grouped log likelihood equals the row-level log likelihood") {
  std::mt19937_64 rng(7);
  const auto obs = logistic_instance(rng, 80, 3);
  const auto s = compress_logistic(obs);

  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector beta(3);
    for (Index j = 0; j < 3; ++j) beta(j) = coef(rng);
    CHECK(rel_diff(loglik(s, beta), oracle_loglik(obs, beta)) < 1e-10);
  }
}

TEST_CASE("gradient matches central differences of the log likelihood") {
  std::mt19937_64 rng(9);
  const auto obs = logistic_instance(rng, 60, 3);
  const auto s = compress_logistic(obs);

  Vector beta(3);
  beta << 0.3, -0.5, 0.2;
  const Vector grad = loglik_gradient(s, beta);
  const double h = 1e-5;
  for (Index j = 0; j < 3; ++j) {
    Vector up = beta, down = beta;
    up(j) += h;
    down(j) -= h;
    const double numeric = (loglik(s, up) - loglik(s, down)) / (2.0 * h);
    CHECK(rel_diff(grad(j), numeric) < 1e-6);
  }
}

TEST_CASE("hessian is negative semidefinite") {
  std::mt19937_64 rng(13);
  const auto obs = logistic_instance(rng, 70, 4);
  const auto s = compress_logistic(obs);

  std::uniform_real_distribution<double> coef(-1.5, 1.5);
  for (int trial = 0; trial < 5; ++trial) {
    Vector beta(4);
    for (Index j = 0; j < 4; ++j) beta(j) = coef(rng);
    const Matrix h = loglik_hessian(s, beta);
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    CHECK(es.eigenvalues().maxCoeff() < 1e-10 * scale);
  }
}

TEST_CASE("intercept-only fit recovers the log odds in closed form") {
  const auto obs = intercept_only(3, 7);
  const auto r = fit_logistic(compress_logistic(obs));

  CHECK(std::abs(r.coefficients(0, 0) - std::log(3.0 / 7.0)) < 1e-12);
  // Inverse information: 1 / (n p (1 - p)) at p = 0.3.
  CHECK(rel_diff(r.covariance[0](0, 0), 1.0 / 2.1) < 1e-10);
  CHECK(r.diagnostics.converged);
  CHECK(r.diagnostics.iterations < 10);
  CHECK(r.diagnostics.n == 10.0);
  CHECK(r.diagnostics.n_groups == 1.0);
}

TEST_CASE("compressed logistic fit matches the row-level oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Index n = 60 + 14 * trial;
    const Index p = 2 + trial % 3;
    const auto obs = fittable_instance(rng, n, p);
    const auto s = compress_logistic(obs);
    const auto r = fit_logistic(s);
    const auto o = oracle_logistic(obs);

    REQUIRE(max_rel_diff(r.coefficients, o.beta) < 1e-6);

    const Matrix info = row_level_information(obs, Vector(r.coefficients.col(0)));
    const Matrix vinv = Eigen::FullPivLU<Matrix>(info).inverse();
    CHECK(max_rel_diff(r.covariance[0], vinv) < 1e-8);
    CHECK(r.df_residual == static_cast<double>(n - p));
  }
}

TEST_CASE("separated data is reported as non-convergence") {
  ObservationSet obs;
  obs.features.resize(8, 2);
  obs.outcomes.resize(8, 1);
  for (Index i = 0; i < 8; ++i) {
    const double x = i < 4 ? -1.0 : 1.0;
    obs.features(i, 0) = 1.0;
    obs.features(i, 1) = x;
    obs.outcomes(i, 0) = x > 0.0 ? 1.0 : 0.0;
  }
  obs.feature_names = {"intercept", "x"};
  obs.outcome_names = {"y"};

  CHECK_THROWS_MATCHES(fit_logistic(compress_logistic(obs)), Error,
                       testutil::HasCode(ErrorCode::DidNotConverge));
}

TEST_CASE("power-of-two duplication leaves the Newton step bit-identical") {
  std::mt19937_64 rng(33);
  const auto obs = fittable_instance(rng, 90, 3);
  const auto quad = concat_rows(concat_rows(obs, obs), concat_rows(obs, obs));

  const auto s1 = compress_logistic(obs);
  const auto s4 = compress_logistic(quad);
  REQUIRE(s4.n_rows() == 4.0 * s1.n_rows());

  // Counts are integers, so the duplicated statistics are exactly 4x the
  // originals and the first Newton step is identical bit for bit.
  const Vector beta0 = Vector::Zero(3);
  const Vector g1 = loglik_gradient(s1, beta0);
  const Vector g4 = loglik_gradient(s4, beta0);
  CHECK(bit_equal(Matrix(4.0 * g1), Matrix(g4)));

  const Matrix i1 = -loglik_hessian(s1, beta0);
  const Matrix i4 = -loglik_hessian(s4, beta0);
  const auto f1 = detail::pivoted_cholesky(i1);
  const auto f4 = detail::pivoted_cholesky(i4);
  CHECK(bit_equal(Matrix(detail::cholesky_solve(f1, g1)),
                  Matrix(detail::cholesky_solve(f4, g4))));

  const auto r1 = fit_logistic(s1);
  const auto r4 = fit_logistic(s4);
  CHECK(max_rel_diff(r1.coefficients, r4.coefficients) < 1e-12);
  // The gradient scales with the data, so convergence may take one more pass.
  CHECK(std::abs(r1.diagnostics.iterations - r4.diagnostics.iterations) <= 1);
}

TEST_CASE("collinear logistic designs are rejected") {
  std::mt19937_64 rng(41);
  ObservationSet obs = logistic_instance(rng, 40, 3);
  obs.features.col(2) = 2.0 * obs.features.col(1);

  CHECK_THROWS_MATCHES(fit_logistic(compress_logistic(obs)), Error,
                       testutil::HasCode(ErrorCode::RankDeficient));
}
