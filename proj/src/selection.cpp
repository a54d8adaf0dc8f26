#include "blockfit/selection.hpp"

#include <cmath>

#include "blockfit/error.hpp"
#include "blockfit/random.hpp"

namespace blockfit {

double icl_penalty(long long param_count, int Q, int n, EdgeCountConvention convention) {
  double edges = static_cast<double>(n) * (n - 1);
  if (convention == EdgeCountConvention::Unordered) edges /= 2.0;
  return 0.5 * (static_cast<double>(param_count) * std::log(edges) - (Q - 1) * std::log(n));
}

double complete_loglik(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                       std::span<const int> labels, const MixtureParams& params) {
  const int n = graph.size();
  const int Q = params.num_groups();
  if (static_cast<int>(labels.size()) != n) throw DimensionError("one label per node required");
  validate_params(spec, params.theta);
  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= Q) throw InputError("label outside 0..Q-1");
    ll += std::log(params.alpha(labels[i]));
  }
  for (int i = 0; i < n; ++i)
    for (int j = graph.directed() ? 0 : i + 1; j < n; ++j)
      if (i != j) ll += edge_log_density(spec, params.theta, labels[i], labels[j], graph, cov, i, j);
  return ll;
}

IclBreakdown icl(const ValuedGraph& graph, const EdgeCovariates* cov, const FitResult& fit,
                 EdgeCountConvention convention) {
  const int Q = fit.num_groups();
  const int n = graph.size();
  IclBreakdown out;
  const Eigen::MatrixXd hard = one_hot(fit.map_assignment, Q);
  out.params = mstep(graph, cov, fit.family, hard, &fit.params.theta);
  out.complete_loglik = complete_loglik(graph, cov, fit.family, fit.map_assignment, out.params);
  out.param_count = param_count(fit.family, Q, graph.directed());
  out.penalty = icl_penalty(out.param_count, Q, n, convention);
  out.icl = out.complete_loglik - out.penalty;
  return out;
}

const SelectionRecord* SelectionResult::chosen() const {
  for (const auto& r : records)
    if (r.Q == chosen_q) return &r;
  return nullptr;
}

SelectionResult select_q(const ValuedGraph& graph, const EdgeCovariates* cov,
                         const FamilySpec& spec, int q_min, int q_max, FitOptions options,
                         EdgeCountConvention convention) {
  if (q_min < 1 || q_max < q_min) throw InvalidParameter("invalid Q range");
  validate_data(spec, graph, cov);
  if (options.init == InitMethod::Hierarchical && !options.dendrogram)
    options.dendrogram = std::make_shared<Dendrogram>(ward_linkage(node_profiles(graph.values())));

  const std::uint64_t master = options.seed;
  SelectionResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (int Q = q_min; Q <= std::min(q_max, graph.size()); ++Q) {
    SelectionRecord rec;
    rec.Q = Q;
    options.seed = make_rng(master, {static_cast<std::uint64_t>(Q)})();
    try {
      FitResult f = fit(graph, cov, spec, Q, options);
      const IclBreakdown b = icl(graph, cov, f, convention);
      rec.icl = b.icl;
      rec.complete_loglik = b.complete_loglik;
      rec.penalty = b.penalty;
      rec.fit = std::move(f);
      rec.ok = std::isfinite(rec.icl);
    } catch (const NumericalError& e) {
      rec.error = e.what();
    } catch (const InvalidParameter& e) {
      rec.error = e.what();
    }
    if (rec.ok && rec.icl > best) {
      best = rec.icl;
      result.chosen_q = Q;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace blockfit
