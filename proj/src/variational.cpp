#include "blockfit/variational.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "blockfit/error.hpp"
#include "blockfit/random.hpp"

namespace blockfit {

namespace {

constexpr double kTauFloor = 1e-16;

/// Precomputed pieces of log f_ql(i, j) for one theta, with transposed copies
/// so that row access is contiguous.
class MeanField {
 public:
  MeanField(const FamilySpec& spec, const MixtureParams& params, const ValuedGraph& graph,
            const EdgeCovariates* cov)
      : terms_(log_density_terms(spec, params.theta, graph, cov)),
        directed_(graph.directed()),
        Q_(params.num_groups()),
        n_(graph.size()) {
    if (params.alpha.size() != Q_) throw DimensionError("alpha and theta disagree on Q");
    if ((params.alpha.array() < 0.0).any() || std::abs(params.alpha.sum() - 1.0) > 1e-9)
      throw InvalidParameter("alpha must lie on the simplex");
    log_alpha_ = params.alpha.unaryExpr([](double a) {
      return a > 0.0 ? std::log(a) : kLogFloor;
    });
    if (terms_.constant.size() == 0) terms_.constant = Eigen::MatrixXd::Zero(Q_, Q_);
    for (const auto& f : terms_.features) features_t_.push_back(f.transpose());
    for (const auto& b : terms_.block_logf) block_t_.push_back(b.transpose());
  }

  const Eigen::VectorXd& log_alpha() const { return log_alpha_; }

  /// d J / d tau_iq without the prior and entropy parts, for every node.
  Eigen::MatrixXd field(const Eigen::MatrixXd& tau) const {
    const Eigen::RowVectorXd s = tau.colwise().sum();
    const Eigen::MatrixXd others = (-tau).rowwise() + s;
    Eigen::MatrixXd g = others * terms_.constant.transpose();
    if (directed_) g += others * terms_.constant;
    for (std::size_t k = 0; k < terms_.features.size(); ++k) {
      g += (terms_.features[k] * tau) * terms_.weights[k].transpose();
      if (directed_) g += (features_t_[k] * tau) * terms_.weights[k];
    }
    if (block_t_.empty()) return g;
    for (int q = 0; q < Q_; ++q) {
      for (int l = 0; l < Q_; ++l) {
        g.col(q) += block(q, l) * tau.col(l);
        if (directed_) g.col(q) += block_t_[l * Q_ + q] * tau.col(l);
      }
    }
    return g;
  }

  /// Row i of field(tau); `s` holds the column sums of tau.
  Eigen::VectorXd node_field(const Eigen::MatrixXd& tau, const Eigen::VectorXd& s, int i) const {
    const Eigen::VectorXd others = s - tau.row(i).transpose();
    Eigen::VectorXd g = terms_.constant * others;
    if (directed_) g += terms_.constant.transpose() * others;
    for (std::size_t k = 0; k < terms_.features.size(); ++k) {
      g += terms_.weights[k] * (tau.transpose() * features_t_[k].col(i));
      if (directed_) g += terms_.weights[k].transpose() * (tau.transpose() * terms_.features[k].col(i));
    }
    if (block_t_.empty()) return g;
    for (int q = 0; q < Q_; ++q) {
      for (int l = 0; l < Q_; ++l) {
        g(q) += block_t_[q * Q_ + l].col(i).dot(tau.col(l));
        if (directed_) g(q) += block(l, q).col(i).dot(tau.col(l));
      }
    }
    return g;
  }

  /// sum over pairs of tau_iq tau_jl log f_ql(i, j); each unordered pair once if undirected.
  double edge_term(const Eigen::MatrixXd& tau) const {
    const Eigen::MatrixXd w = block_weights(tau);
    double total = w.cwiseProduct(terms_.constant).sum();
    for (std::size_t k = 0; k < terms_.features.size(); ++k)
      total += block_sums(tau, terms_.features[k]).cwiseProduct(terms_.weights[k]).sum();
    if (terms_.offset.size() > 0) {
      // Rows of tau sum to one, so the offset enters with weight 1 per pair.
      const Eigen::VectorXd r = tau.rowwise().sum();
      total += r.dot(terms_.offset * r);
    }
    if (!block_t_.empty())
      for (int q = 0; q < Q_; ++q)
        for (int l = 0; l < Q_; ++l) total += tau.col(q).dot(block(q, l) * tau.col(l));
    return directed_ ? total : 0.5 * total;
  }

 private:
  const Eigen::MatrixXd& block(int q, int l) const { return terms_.block_logf[q * Q_ + l]; }

  LogDensityTerms terms_;
  std::vector<Eigen::MatrixXd> features_t_;
  std::vector<Eigen::MatrixXd> block_t_;
  Eigen::VectorXd log_alpha_;
  bool directed_;
  int Q_;
  int n_;
};

void check_tau(const Eigen::MatrixXd& tau, int n, int Q) {
  if (tau.rows() != n || tau.cols() != Q)
    throw DimensionError("tau must be " + std::to_string(n) + " x " + std::to_string(Q));
  if (!tau.allFinite() || (tau.array() < 0.0).any())
    throw InputError("tau must have finite nonnegative entries");
}

/// Normalised exp(g - max g), clipped at kTauFloor.
Eigen::RowVectorXd softmax(Eigen::RowVectorXd g, bool* clipped = nullptr) {
  g.array() -= g.maxCoeff();
  Eigen::RowVectorXd p = g.array().exp();
  p /= p.sum();
  if (clipped) *clipped = p.minCoeff() < kTauFloor;
  p = p.cwiseMax(kTauFloor);
  return p / p.sum();
}

/// Part of J that depends on one row of tau, given its field g.
double row_objective(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& g) {
  double v = 0.0;
  for (Eigen::Index q = 0; q < p.size(); ++q)
    if (p(q) > 0.0) v += p(q) * (g(q) - std::log(p(q)));
  return v;
}

Eigen::MatrixXd fixed_point_map(const MeanField& mf, const Eigen::MatrixXd& tau) {
  Eigen::MatrixXd g = mf.field(tau);
  g.rowwise() += mf.log_alpha().transpose();
  for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) = softmax(g.row(i));
  return g;
}

double bound_with(const MeanField& mf, const Eigen::MatrixXd& tau) {
  return classification_entropy(tau) + tau.colwise().sum().dot(mf.log_alpha()) + mf.edge_term(tau);
}

EStepResult run_estep(const MeanField& mf, Eigen::MatrixXd tau, const EStepOptions& options) {
  EStepResult out;
  const int n = static_cast<int>(tau.rows());
  const int Q = static_cast<int>(tau.cols());
  if (Q == 1) {
    out.tau = Eigen::MatrixXd::Ones(n, 1);
    out.sweeps = 1;
    out.converged = true;
    return out;
  }
  double step = 1.0;
  double last_delta = std::numeric_limits<double>::infinity();
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    double delta = 0.0;
    if (options.schedule == EStepSchedule::Sequential) {
      Eigen::VectorXd s = tau.colwise().sum().transpose();
      for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd g = mf.node_field(tau, s, i).transpose() + mf.log_alpha().transpose();
        bool clipped = false;
        const Eigen::RowVectorXd p = softmax(g, &clipped);
        // a clipped row can be worse than the current one
        if (clipped && row_objective(p, g) < row_objective(tau.row(i), g)) continue;
        delta = std::max(delta, (p - tau.row(i)).cwiseAbs().maxCoeff());
        s += (p - tau.row(i)).transpose();
        tau.row(i) = p;
      }
    } else {
      const Eigen::MatrixXd proposal = fixed_point_map(mf, tau);
      delta = (proposal - tau).cwiseAbs().maxCoeff();
      if (delta > last_delta) step = options.damping;
      tau = (1.0 - step) * tau + step * proposal;
      delta *= step;
      last_delta = delta / step;
    }
    out.sweeps = sweep;
    if (delta < options.tolerance) {
      out.residual = (fixed_point_map(mf, tau) - tau).cwiseAbs().maxCoeff();
      if (out.residual < options.tolerance) {
        out.converged = true;
        break;
      }
    }
  }
  if (!out.converged) out.residual = (fixed_point_map(mf, tau) - tau).cwiseAbs().maxCoeff();
  out.tau = std::move(tau);
  return out;
}

struct RunResult {
  MixtureParams params;
  Eigen::MatrixXd tau;
  std::vector<double> trajectory;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> notes;
};

RunResult run_em(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                 Eigen::MatrixXd tau, const FitOptions& options) {
  RunResult run;
  MixtureParams params = mstep(graph, cov, spec, tau);
  auto mf = std::make_unique<MeanField>(spec, params, graph, cov);
  double j_prev = bound_with(*mf, tau);
  run.trajectory.push_back(j_prev);
  int unconverged_esteps = 0;
  for (int it = 1; it <= options.max_outer; ++it) {
    EStepResult e = run_estep(*mf, std::move(tau), options.estep);
    tau = std::move(e.tau);
    if (!e.converged) ++unconverged_esteps;
    run.trajectory.push_back(bound_with(*mf, tau));

    params = mstep(graph, cov, spec, tau, &params.theta);
    mf = std::make_unique<MeanField>(spec, params, graph, cov);
    const double j = bound_with(*mf, tau);
    run.trajectory.push_back(j);
    run.iterations = it;
    if (!std::isfinite(j)) throw NumericalError("bound became non-finite");
    if (std::abs(j - j_prev) < options.tolerance * std::abs(j)) {
      run.converged = true;
      break;
    }
    j_prev = j;
  }
  if (unconverged_esteps > 0)
    run.notes.push_back(std::to_string(unconverged_esteps) +
                        " E-steps stopped at the sweep limit");
  run.params = std::move(params);
  run.tau = std::move(tau);
  return run;
}

std::vector<int> random_labels(int n, int Q, Rng& rng) {
  std::vector<int> labels(n);
  std::uniform_int_distribution<int> pick(0, Q - 1);
  for (int& z : labels) z = pick(rng);
  // Every class gets at least one node.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int q = 0; q < Q; ++q) labels[order[q]] = q;
  return labels;
}

}  // namespace

double lower_bound(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                   const Eigen::MatrixXd& tau, const MixtureParams& params) {
  check_tau(tau, graph.size(), params.num_groups());
  const MeanField mf(spec, params, graph, cov);
  return bound_with(mf, tau);
}

EStepResult estep_fixed_point(const ValuedGraph& graph, const EdgeCovariates* cov,
                              const FamilySpec& spec, const MixtureParams& params,
                              const Eigen::MatrixXd& tau_init, const EStepOptions& options) {
  check_tau(tau_init, graph.size(), params.num_groups());
  const MeanField mf(spec, params, graph, cov);
  return run_estep(mf, tau_init, options);
}

double fixed_point_residual(const ValuedGraph& graph, const EdgeCovariates* cov,
                            const FamilySpec& spec, const MixtureParams& params,
                            const Eigen::MatrixXd& tau) {
  check_tau(tau, graph.size(), params.num_groups());
  const MeanField mf(spec, params, graph, cov);
  return (fixed_point_map(mf, tau) - tau).cwiseAbs().maxCoeff();
}

MixtureParams mstep(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                    const Eigen::MatrixXd& tau, const BlockParams* previous) {
  check_tau(tau, graph.size(), static_cast<int>(tau.cols()));
  MixtureParams out;
  out.alpha = tau.colwise().mean().transpose();
  out.alpha /= out.alpha.sum();
  out.theta = weighted_mle(spec, graph, cov, tau, previous);
  return out;
}

Eigen::MatrixXd soften(std::span<const int> labels, int Q) {
  const int n = static_cast<int>(labels.size());
  if (Q == 1) return Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd tau = Eigen::MatrixXd::Constant(n, Q, 1e-3 / (Q - 1));
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= Q) throw InputError("label outside 0..Q-1");
    tau(i, labels[i]) = 1.0 - 1e-3;
  }
  return tau;
}

Eigen::MatrixXd one_hot(std::span<const int> labels, int Q) {
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), Q);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= Q) throw InputError("label outside 0..Q-1");
    tau(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return tau;
}

Eigen::MatrixXd init_partition(const ValuedGraph& graph, int Q, InitMethod method,
                               std::uint64_t seed, std::span<const int> labels,
                               const Dendrogram* tree) {
  const int n = graph.size();
  if (Q < 1) throw InvalidParameter("Q must be at least 1");
  if (Q > n) throw InvalidParameter("Q exceeds the number of nodes");
  switch (method) {
    case InitMethod::Given:
      if (static_cast<int>(labels.size()) != n)
        throw DimensionError("initial labels must have one entry per node");
      return soften(labels, Q);
    case InitMethod::Random: {
      Rng rng = make_rng(seed);
      const std::vector<int> z = random_labels(n, Q, rng);
      return soften(z, Q);
    }
    case InitMethod::Hierarchical: {
      Dendrogram local;
      if (tree == nullptr || tree->n != n) {
        local = ward_linkage(node_profiles(graph.values()));
        tree = &local;
      }
      const std::vector<int> z = cut(*tree, Q);
      return soften(z, Q);
    }
  }
  return {};
}

double classification_entropy(const Eigen::MatrixXd& tau) {
  // max() turns -0 into 0
  return std::max(0.0, -tau.unaryExpr([](double t) { return t > 0.0 ? t * std::log(t) : 0.0; }).sum());
}

void relabel_descending(MixtureParams& params, Eigen::MatrixXd& tau) {
  const int Q = params.num_groups();
  std::vector<int> order(Q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return params.alpha(a) > params.alpha(b); });
  Eigen::VectorXd alpha(Q);
  Eigen::MatrixXd t(tau.rows(), Q);
  for (int k = 0; k < Q; ++k) {
    alpha(k) = params.alpha(order[k]);
    t.col(k) = tau.col(order[k]);
  }
  params.alpha = alpha;
  params.theta = params.theta.permuted(order);
  tau = std::move(t);
}

std::vector<int> map_assignment(const Eigen::MatrixXd& tau) {
  std::vector<int> z(tau.rows(), 0);
  for (Eigen::Index i = 0; i < tau.rows(); ++i)
    for (Eigen::Index q = 1; q < tau.cols(); ++q)
      if (tau(i, q) > tau(i, z[i])) z[i] = static_cast<int>(q);
  return z;
}

FitResult fit(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec, int Q,
              const FitOptions& options) {
  validate_data(spec, graph, cov);
  const int n = graph.size();
  if (Q < 1) throw InvalidParameter("Q must be at least 1");
  if (Q > n) throw InvalidParameter("Q exceeds the number of nodes");
  if (options.restarts < 1) throw InvalidParameter("at least one restart is required");

  std::shared_ptr<const Dendrogram> tree = options.dendrogram;
  if (options.init == InitMethod::Hierarchical && (!tree || tree->n != n))
    tree = std::make_shared<Dendrogram>(ward_linkage(node_profiles(graph.values())));

  FitResult best;
  bool have_best = false;
  std::vector<std::string> diagnostics;
  const int restarts = Q == 1 ? 1 : options.restarts;
  for (int r = 0; r < restarts; ++r) {
    const InitMethod method = r == 0 ? options.init : InitMethod::Random;
    try {
      const Eigen::MatrixXd tau0 =
          init_partition(graph, Q, method, make_rng(options.seed, {static_cast<std::uint64_t>(r)})(),
                         options.given_labels, tree.get());
      RunResult run = run_em(graph, cov, spec, tau0, options);
      for (auto& note : run.notes) diagnostics.push_back("restart " + std::to_string(r) + ": " + note);
      if (!have_best || run.trajectory.back() > best.bound_trajectory.back()) {
        best.params = std::move(run.params);
        best.tau = std::move(run.tau);
        best.bound_trajectory = std::move(run.trajectory);
        best.converged = run.converged;
        best.iterations = run.iterations;
        best.restart = r;
        have_best = true;
      }
    } catch (const NumericalError& e) {
      diagnostics.push_back("restart " + std::to_string(r) + " failed: " + e.what());
    } catch (const InvalidParameter& e) {
      diagnostics.push_back("restart " + std::to_string(r) + " failed: " + e.what());
    }
  }
  if (!have_best) {
    std::string msg = "all restarts failed";
    if (!diagnostics.empty()) msg += " (" + diagnostics.back() + ")";
    throw NumericalError(msg);
  }

  best.family = spec;
  best.directed = graph.directed();
  relabel_descending(best.params, best.tau);
  best.entropy = classification_entropy(best.tau);
  best.map_assignment = map_assignment(best.tau);
  for (int q = 0; q < Q; ++q)
    if (best.params.alpha(q) * n < 1e-6)
      diagnostics.push_back("class " + std::to_string(q) + " is empty");
  if (best.params.theta.degenerate.any())
    diagnostics.push_back(std::to_string(best.params.theta.degenerate.count()) +
                          " degenerate blocks kept their previous parameters");
  if (!best.converged)
    diagnostics.push_back("stopped after " + std::to_string(best.iterations) + " iterations");
  best.diagnostics = std::move(diagnostics);
  return best;
}

// ---------------------------------------------------------------------------
// Enumeration oracles

namespace {

struct Enumeration {
  std::vector<Eigen::MatrixXd> logf;
  Eigen::VectorXd log_alpha;
};

Enumeration prepare(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                    const MixtureParams& params) {
  const int n = graph.size();
  const int Q = params.num_groups();
  if (std::pow(static_cast<double>(Q), n) > 1e7)
    throw InvalidParameter("instance too large to enumerate");
  validate_params(spec, params.theta);
  validate_data(spec, graph, cov);
  Enumeration e;
  e.log_alpha = params.alpha.unaryExpr([](double a) {
    return a > 0.0 ? std::log(a) : -std::numeric_limits<double>::infinity();
  });
  e.logf.assign(static_cast<std::size_t>(Q) * Q, Eigen::MatrixXd::Zero(n, n));
  for (int q = 0; q < Q; ++q)
    for (int l = 0; l < Q; ++l)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j)
            e.logf[q * Q + l](i, j) = edge_log_density(spec, params.theta, q, l, graph, cov, i, j);
  return e;
}

template <class Visit>
void enumerate(const ValuedGraph& graph, int Q, const Enumeration& e, Visit&& visit) {
  const int n = graph.size();
  std::vector<int> z(n, 0);
  while (true) {
    double lp = 0.0;
    for (int i = 0; i < n; ++i) lp += e.log_alpha(z[i]);
    for (int i = 0; i < n; ++i)
      for (int j = graph.directed() ? 0 : i + 1; j < n; ++j)
        if (i != j) lp += e.logf[z[i] * Q + z[j]](i, j);
    visit(z, lp);
    int k = 0;
    while (k < n && ++z[k] == Q) z[k++] = 0;
    if (k == n) break;
  }
}

}  // namespace

double exact_loglik(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                    const MixtureParams& params) {
  const Enumeration e = prepare(graph, cov, spec, params);
  const int Q = params.num_groups();
  double mx = -std::numeric_limits<double>::infinity();
  enumerate(graph, Q, e, [&](const std::vector<int>&, double lp) { mx = std::max(mx, lp); });
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  enumerate(graph, Q, e, [&](const std::vector<int>&, double lp) { acc += std::exp(lp - mx); });
  return mx + std::log(acc);
}

Eigen::MatrixXd exact_posterior_marginals(const ValuedGraph& graph, const EdgeCovariates* cov,
                                          const FamilySpec& spec, const MixtureParams& params) {
  const Enumeration e = prepare(graph, cov, spec, params);
  const int Q = params.num_groups();
  const int n = graph.size();
  double mx = -std::numeric_limits<double>::infinity();
  enumerate(graph, Q, e, [&](const std::vector<int>&, double lp) { mx = std::max(mx, lp); });
  Eigen::MatrixXd marg = Eigen::MatrixXd::Zero(n, Q);
  double total = 0.0;
  enumerate(graph, Q, e, [&](const std::vector<int>& z, double lp) {
    const double w = std::exp(lp - mx);
    total += w;
    for (int i = 0; i < n; ++i) marg(i, z[i]) += w;
  });
  return marg / total;
}

}  // namespace blockfit
