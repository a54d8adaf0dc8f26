#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace blockfit;

namespace {

struct Instance {
  ValuedGraph graph;
  EdgeCovariates cov;
};

/// Directed graph with X_ij ~ Poisson(lambda[z_i z_j] exp(beta y_ij)).
Instance simulate(const std::vector<int>& z, const Eigen::MatrixXd& lambda, double beta,
                  bool binary_y, std::mt19937_64& rng) {
  const int n = static_cast<int>(z.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n), y = x;
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> g01(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      y(i, j) = binary_y ? (coin(rng) ? 1.0 : 0.0) : g01(rng);
      std::poisson_distribution<int> p(lambda(z[i], z[j]) * std::exp(beta * y(i, j)));
      x(i, j) = p(rng);
    }
  Instance inst{graph_from_matrix(x, true, ValueKind::Count), {}};
  inst.cov = covariates_from_matrices(inst.graph, {y});
  return inst;
}

double weighted_loglik(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                       double lambda, double beta) {
  return oracle::wsum(w, [&](int i, int j) {
    return x(i, j) * (std::log(lambda) + beta * y(i, j)) - lambda * std::exp(beta * y(i, j));
  });
}

/// Zooming 2-d grid search of the weighted likelihood in (log lambda, beta).
std::pair<double, double> grid_argmax(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x,
                                      const Eigen::MatrixXd& y) {
  double cl = 0.0, cb = 0.0, hl = 3.0, hb = 3.0;
  const int k = 20;
  for (int round = 0; round < 14; ++round) {
    double best = -1e300, bl = cl, bb = cb;
    for (int a = -k; a <= k; ++a)
      for (int b = -k; b <= k; ++b) {
        const double ll = cl + hl * a / k, be = cb + hb * b / k;
        const double v = weighted_loglik(w, x, y, std::exp(ll), be);
        if (v > best) {
          best = v;
          bl = ll;
          bb = be;
        }
      }
    cl = bl;
    cb = bb;
    hl /= 4.0;
    hb /= 4.0;
  }
  return {std::exp(cl), cb};
}

}  // namespace

TEST_CASE("inert covariate reduces to the plain Poisson mixture") {
  std::mt19937_64 rng(1);
  const int n = 8;
  const ValuedGraph g = graph_from_matrix(oracle::random_counts(n, true, 2.0, rng), true, ValueKind::Count);
  const EdgeCovariates cov = covariates_from_matrices(g, {Eigen::MatrixXd::Zero(n, n)});
  const Eigen::MatrixXd tau = oracle::random_tau(n, 2, rng);
  const Eigen::MatrixXd pm = poisson_pm_mle(g, tau);
  for (auto mode : {RegressionMode::Homogeneous, RegressionMode::Inhomogeneous}) {
    const PoissonRegressionFit f = poisson_regression_mle(g, cov, tau, mode);
    CHECK((f.lambda - pm).cwiseAbs().maxCoeff() < 1e-12);
    if (mode == RegressionMode::Homogeneous) CHECK(f.beta(0) == 0.0);
    else CHECK(f.block_beta[0].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("single block fit matches a grid-search maximiser") {
  std::mt19937_64 rng(7);
  const std::vector<int> z(12, 0);
  const Instance inst = simulate(z, Eigen::MatrixXd::Constant(1, 1, 2.0), -0.7, true, rng);
  const Eigen::MatrixXd tau = Eigen::MatrixXd::Ones(12, 1);
  const PoissonRegressionFit f =
      poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Inhomogeneous);
  const Eigen::MatrixXd w = oracle::pair_weights(tau, 0, 0);
  const auto [lambda, beta] = grid_argmax(w, inst.graph.values(), inst.cov.component(0));
  CHECK(std::abs(f.lambda(0, 0) - lambda) < 1e-4);
  CHECK(std::abs(f.block_beta[0](0, 0) - beta) < 1e-4);
}

TEST_CASE("soft weights: each block matches its grid-search maximiser") {
  std::mt19937_64 rng(8);
  const std::vector<int> z{0, 0, 0, 0, 1, 1, 1, 1, 1};
  Eigen::MatrixXd lambda(2, 2);
  lambda << 3.0, 0.5, 0.5, 1.5;
  const Instance inst = simulate(z, lambda, 0.4, true, rng);
  const Eigen::MatrixXd tau = oracle::random_tau(9, 2, rng);
  const PoissonRegressionFit f =
      poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Inhomogeneous);
  for (int q = 0; q < 2; ++q)
    for (int l = 0; l < 2; ++l) {
      const auto [lg, bg] = grid_argmax(oracle::pair_weights(tau, q, l), inst.graph.values(),
                                        inst.cov.component(0));
      CHECK(std::abs(f.lambda(q, l) - lg) < 1e-4);
      CHECK(std::abs(f.block_beta[0](q, l) - bg) < 1e-4);
    }
}

TEST_CASE("gradient of the weighted likelihood vanishes at the fit") {
  std::mt19937_64 rng(9);
  const std::vector<int> z{0, 1, 0, 1, 2, 2, 0, 1, 2, 0, 1, 2};
  Eigen::MatrixXd lambda(3, 3);
  lambda << 4.0, 1.0, 0.5, 1.0, 2.0, 0.3, 0.5, 0.3, 3.0;
  const Instance inst = simulate(z, lambda, -0.3, false, rng);
  const Eigen::MatrixXd tau = oracle::random_tau(12, 3, rng);
  const Eigen::MatrixXd& x = inst.graph.values();
  const Eigen::MatrixXd& y = inst.cov.component(0);
  const double scale = oracle::wsum(Eigen::MatrixXd::Ones(12, 12), [&](int i, int j) { return x(i, j); });

  const PoissonRegressionFit h = poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Homogeneous);
  double gb = 0.0, gmax = 0.0;
  for (int q = 0; q < 3; ++q)
    for (int l = 0; l < 3; ++l) {
      const Eigen::MatrixXd w = oracle::pair_weights(tau, q, l);
      auto mu = [&](int i, int j) { return h.lambda(q, l) * std::exp(h.beta(0) * y(i, j)); };
      gmax = std::max(gmax, std::abs(oracle::wsum(w, [&](int i, int j) { return x(i, j) - mu(i, j); })));
      gb += oracle::wsum(w, [&](int i, int j) { return y(i, j) * (x(i, j) - mu(i, j)); });
    }
  gmax = std::max(gmax, std::abs(gb));
  CHECK(gmax / scale < 1e-6);
  CHECK(h.gradient_norm / scale < 1e-6);

  const PoissonRegressionFit in = poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Inhomogeneous);
  for (int q = 0; q < 3; ++q)
    for (int l = 0; l < 3; ++l) {
      const Eigen::MatrixXd w = oracle::pair_weights(tau, q, l);
      auto mu = [&](int i, int j) { return in.lambda(q, l) * std::exp(in.block_beta[0](q, l) * y(i, j)); };
      CHECK(std::abs(oracle::wsum(w, [&](int i, int j) { return x(i, j) - mu(i, j); })) / scale < 1e-6);
      CHECK(std::abs(oracle::wsum(w, [&](int i, int j) { return y(i, j) * (x(i, j) - mu(i, j)); })) / scale < 1e-6);
    }
}

TEST_CASE("homogeneous mode recovers a common effect across two blocks") {
  std::mt19937_64 rng(10);
  std::vector<int> z(60);
  for (int i = 0; i < 60; ++i) z[i] = i % 2;
  Eigen::MatrixXd lambda(2, 2);
  lambda << 2.0, 0.5, 0.5, 3.0;
  const Instance inst = simulate(z, lambda, -0.5, false, rng);
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(60, 2);
  for (int i = 0; i < 60; ++i) tau(i, z[i]) = 1.0;
  const PoissonRegressionFit f = poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Homogeneous);
  // Fisher information is about sum lambda e^{beta y} y^2 ~ 5000 here, so the standard error is ~0.015.
  CHECK(std::abs(f.beta(0) + 0.5) < 0.06);
  CHECK(std::abs(f.lambda(0, 0) - 2.0) < 0.2);
  CHECK(std::abs(f.lambda(1, 1) - 3.0) < 0.3);
}

TEST_CASE("the fit never falls below the warm start") {
  std::mt19937_64 rng(12);
  const std::vector<int> z{0, 0, 1, 1, 0, 1, 0, 1};
  Eigen::MatrixXd lambda(2, 2);
  lambda << 2.0, 1.0, 1.0, 2.0;
  const Instance inst = simulate(z, lambda, 0.5, false, rng);
  const Eigen::MatrixXd tau = oracle::random_tau(8, 2, rng);
  BlockParams warm = make_params(parse_family("poisson-prmh", 0, 1), 2);
  warm.components[0] << 1.0, 2.0, 2.0, 1.0;
  warm.shared(0) = 0.2;
  const PoissonRegressionFit f =
      poisson_regression_mle(inst.graph, inst.cov, tau, RegressionMode::Homogeneous, &warm);
  const Eigen::MatrixXd& x = inst.graph.values();
  const Eigen::MatrixXd& y = inst.cov.component(0);
  double warm_ll = 0.0, fit_ll = 0.0;
  for (int q = 0; q < 2; ++q)
    for (int l = 0; l < 2; ++l) {
      const Eigen::MatrixXd w = oracle::pair_weights(tau, q, l);
      warm_ll += weighted_loglik(w, x, y, warm.components[0](q, l), warm.shared(0));
      fit_ll += weighted_loglik(w, x, y, f.lambda(q, l), f.beta(0));
    }
  CHECK(fit_ll >= warm_ll);
  const double lg = oracle::wsum(Eigen::MatrixXd::Ones(8, 8), [&](int i, int j) { return std::lgamma(x(i, j) + 1.0); });
  // reported loglik includes the -log x! terms
  const Eigen::MatrixXd bw = block_weights(tau);
  (void)bw;
  CHECK(f.loglik == doctest::Approx(fit_ll - lg).epsilon(1e-9));
}

TEST_CASE("separation is reported with the block") {
  // Counts appear only where y = 0: the likelihood increases without bound as beta -> -inf.
  const int n = 6;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n), y = x;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      y(i, j) = (i + j) % 2;
      x(i, j) = y(i, j) == 0 ? 1 + (i * j) % 3 : 0;
    }
  const ValuedGraph g = graph_from_matrix(x, true, ValueKind::Count);
  const EdgeCovariates cov = covariates_from_matrices(g, {y});
  try {
    poisson_regression_mle(g, cov, Eigen::MatrixXd::Ones(n, 1), RegressionMode::Inhomogeneous);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("block (0,0)") != std::string::npos);
  }
}
