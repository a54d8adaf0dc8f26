#include "blockfit/simulation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

#include "blockfit/error.hpp"
#include "blockfit/random.hpp"

namespace blockfit {

MixtureParams grid_params(double a, double lambda, double gamma, int Q) {
  if (!(a > 0.0 && a <= 1.0)) throw InvalidParameter("a must lie in (0, 1]");
  if (!(lambda > 0.0)) throw InvalidParameter("lambda must be positive");
  if (!(gamma > 0.0)) throw InvalidParameter("gamma must be positive");
  if (Q < 1) throw InvalidParameter("Q must be at least 1");
  MixtureParams p;
  p.alpha.resize(Q);
  for (int q = 0; q < Q; ++q) p.alpha(q) = std::pow(a, q + 1);
  p.alpha /= p.alpha.sum();
  const double s = p.alpha.squaredNorm();
  const double within = lambda / (s + gamma * (1.0 - s));
  p.theta = make_params(FamilySpec{FamilyKind::PoissonPM}, Q);
  p.theta.components[0].setConstant(within * gamma);
  p.theta.components[0].diagonal().setConstant(within);
  return p;
}

namespace {

double draw(const FamilySpec& spec, const MixtureParams& params, int q, int l,
            std::span<const double> y, Rng& rng) {
  const double mean = edge_mean(spec, params.theta, q, l, y);
  const auto& c = params.theta.components;
  switch (spec.kind) {
    case FamilyKind::Bernoulli:
      return std::bernoulli_distribution(mean)(rng) ? 1.0 : 0.0;
    case FamilyKind::Multinomial: {
      std::vector<double> p(spec.num_labels);
      for (int k = 0; k < spec.num_labels; ++k) p[k] = c[k](q, l);
      return std::discrete_distribution<int>(p.begin(), p.end())(rng) + 1.0;
    }
    case FamilyKind::Gaussian:
      return std::normal_distribution<double>(mean, std::sqrt(c[1](q, l)))(rng);
    case FamilyKind::PoissonPM:
    case FamilyKind::PoissonPRMI:
    case FamilyKind::PoissonPRMH:
      return mean > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(mean)(rng)) : 0.0;
    case FamilyKind::LinearRegression:
      return std::normal_distribution<double>(mean, std::sqrt(c[spec.covariate_dim](q, l)))(rng);
    case FamilyKind::SimpleRegression:
      return std::normal_distribution<double>(mean, std::sqrt(params.theta.shared(1)))(rng);
    case FamilyKind::BivariateGaussian:
      break;
  }
  throw InvalidParameter("family cannot be drawn one edge at a time");
}

}  // namespace

SampledGraph sample_graph(const MixtureParams& params, const FamilySpec& spec, int n, bool directed,
                          Rng& rng, const EdgeCovariates* cov) {
  validate_params(spec, params.theta);
  if (spec.uses_covariates()) {
    if (cov == nullptr) throw InputError("family " + spec.name() + " needs edge covariates");
    if (cov->size() != n || cov->dim() != spec.covariate_dim)
      throw DimensionError("covariates do not match the requested graph");
  }
  if (spec.kind == FamilyKind::BivariateGaussian && directed)
    throw InvalidParameter("bivariate values live on undirected pairs");
  const int Q = params.num_groups();
  std::discrete_distribution<int> pick(params.alpha.data(), params.alpha.data() + Q);
  SampledGraph out{ValuedGraph{}, std::vector<int>(n)};
  for (int& z : out.labels) z = pick(rng);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd y(spec.covariate_dim);
  for (int i = 0; i < n; ++i) {
    for (int j = directed ? 0 : i + 1; j < n; ++j) {
      if (i == j) continue;
      const int q = out.labels[i], l = out.labels[j];
      if (spec.kind == FamilyKind::BivariateGaussian) {
        const auto& c = params.theta.components;
        Eigen::Matrix2d sigma;
        sigma << c[2](q, l), c[3](q, l), c[3](q, l), c[4](q, l);
        const Eigen::Matrix2d chol = sigma.llt().matrixL();
        std::normal_distribution<double> std_normal;
        const Eigen::Vector2d e(std_normal(rng), std_normal(rng));
        const Eigen::Vector2d v = Eigen::Vector2d(c[0](q, l), c[1](q, l)) + chol * e;
        x(i, j) = v(0);
        x(j, i) = v(1);
        continue;
      }
      if (cov) y = cov->at(i, j);
      x(i, j) = draw(spec, params, q, l, std::span<const double>(y.data(), y.size()), rng);
      if (!directed) x(j, i) = x(i, j);
    }
  }
  out.graph = graph_from_matrix(x, directed, spec.value_kind(), spec.num_labels);
  return out;
}

double rmse(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw InputError("rmse needs at least one estimate");
  double ss = 0.0;
  for (double e : estimates) ss += (e - truth) * (e - truth);
  return std::sqrt(ss / static_cast<double>(estimates.size()));
}

void GridConfig::validate() const {
  if (n.empty() || a.empty() || lambda.empty() || gamma.empty())
    throw InvalidParameter("every grid axis needs at least one value");
  for (int v : n)
    if (v < 2) throw InvalidParameter("n must be at least 2");
  for (double v : a)
    if (!(v > 0.0 && v <= 1.0)) throw InvalidParameter("a must lie in (0, 1]");
  for (double v : lambda)
    if (!(v > 0.0)) throw InvalidParameter("lambda must be positive");
  for (double v : gamma)
    if (!(v > 0.0)) throw InvalidParameter("gamma must be positive");
  if (q_star < 1) throw InvalidParameter("Q* must be at least 1");
  if (replicates < 1) throw InvalidParameter("at least one replicate is required");
  if (q_min < 1 || (q_max != 0 && q_max < q_min)) throw InvalidParameter("invalid Q range");
  if (restarts < 1) throw InvalidParameter("at least one restart is required");
}

int worker_count(int requested) {
  int count = requested;
  if (count <= 0) {
    if (const char* env = std::getenv("BLOCKFIT_THREADS")) count = std::atoi(env);
  }
  if (count <= 0) count = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, count);
}

namespace {

struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd lambda;
  double entropy = 0.0;
  int selected = 0;
};

ReplicateOutcome run_replicate(const GridConfig& config, const CellReport& cell, std::uint64_t seed) {
  ReplicateOutcome out;
  const FamilySpec spec{FamilyKind::PoissonPM};
  try {
    Rng rng = make_rng(seed);
    const SampledGraph s = sample_graph(cell.truth, spec, cell.n, config.directed, rng);
    FitOptions options;
    options.restarts = config.restarts;
    options.seed = rng();
    if (config.mode == ExperimentMode::Estimation) {
      const FitResult f = fit(s.graph, nullptr, spec, config.q_star, options);
      out.alpha = f.params.alpha;
      out.lambda = f.params.theta.components[0];
      out.entropy = f.entropy / cell.n;
    } else {
      const int q_max = config.q_max > 0 ? config.q_max : (cell.n >= 1000 ? 5 : 10);
      const SelectionResult r = select_q(s.graph, nullptr, spec, config.q_min, q_max, options);
      if (r.chosen_q == 0) throw NumericalError("no Q could be fitted");
      out.selected = r.chosen_q;
    }
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const GridConfig& config) {
  config.validate();
  ExperimentReport report;
  report.mode = config.mode;
  for (int n : config.n)
    for (double a : config.a)
      for (double lambda : config.lambda)
        for (double gamma : config.gamma) {
          CellReport cell;
          cell.n = n;
          cell.a = a;
          cell.lambda = lambda;
          cell.gamma = gamma;
          cell.truth = grid_params(a, lambda, gamma, config.q_star);
          report.cells.push_back(std::move(cell));
        }

  const std::size_t S = config.replicates;
  const std::size_t total = report.cells.size() * S;
  std::vector<ReplicateOutcome> outcomes(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const std::size_t c = k / S, r = k % S;
      outcomes[k] = run_replicate(config, report.cells[c], make_rng(config.seed, {c, r})());
    }
  };
  const int threads = std::min<int>(worker_count(config.threads), static_cast<int>(total));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const int Q = config.q_star;
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    CellReport& cell = report.cells[c];
    std::vector<std::vector<double>> alpha(Q);
    std::vector<std::vector<double>> lambda(static_cast<std::size_t>(Q) * Q);
    double entropy = 0.0;
    for (std::size_t r = 0; r < S; ++r) {
      const ReplicateOutcome& o = outcomes[c * S + r];
      if (!o.ok) {
        ++cell.failed;
        cell.failures.push_back("replicate " + std::to_string(r) + ": " + o.error);
        continue;
      }
      ++cell.completed;
      if (config.mode == ExperimentMode::Estimation) {
        for (int q = 0; q < Q; ++q) {
          alpha[q].push_back(o.alpha(q));
          for (int l = 0; l < Q; ++l) lambda[q * Q + l].push_back(o.lambda(q, l));
        }
        entropy += o.entropy;
      } else {
        cell.selected.push_back(o.selected);
        cell.selection[o.selected] += 1.0;
      }
    }
    if (cell.completed == 0) continue;
    if (config.mode == ExperimentMode::Estimation) {
      cell.rmse_alpha.resize(Q);
      cell.rmse_lambda.resize(Q, Q);
      for (int q = 0; q < Q; ++q) {
        cell.rmse_alpha(q) = rmse(alpha[q], cell.truth.alpha(q));
        for (int l = 0; l < Q; ++l)
          cell.rmse_lambda(q, l) =
              rmse(lambda[q * Q + l], cell.truth.theta.components[0](q, l));
      }
      cell.mean_entropy = entropy / cell.completed;
    } else {
      for (auto& [q, f] : cell.selection) f /= cell.completed;
    }
  }
  return report;
}

}  // namespace blockfit
