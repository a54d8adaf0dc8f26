#include "blockfit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace blockfit {

namespace {

std::string pair_name(int i, int j) {
  return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

void check_value(ValueKind kind, double v, int i, int j) {
  if (!std::isfinite(v)) throw InputError("non-finite value at pair " + pair_name(i, j));
  switch (kind) {
    case ValueKind::Count:
      if (v < 0 || v != std::floor(v))
        throw InputError("count value must be a nonnegative integer at pair " + pair_name(i, j));
      break;
    case ValueKind::Label:
      if (v < 1 || v != std::floor(v))
        throw InputError("label value must be a positive integer at pair " + pair_name(i, j));
      break;
    case ValueKind::Real:
    case ValueKind::PairedReal:
      break;
  }
}

}  // namespace

long long ValuedGraph::num_pairs() const {
  const long long n = size();
  return directed_ ? n * (n - 1) : n * (n - 1) / 2;
}

std::vector<EdgeEntry> ValuedGraph::entries() const {
  std::vector<EdgeEntry> out;
  const int n = size();
  out.reserve(static_cast<std::size_t>(num_pairs()));
  for (int i = 0; i < n; ++i) {
    for (int j = directed_ ? 0 : i + 1; j < n; ++j) {
      if (i == j) continue;
      EdgeEntry e{i, j, values_(i, j), 0.0};
      if (kind_ == ValueKind::PairedReal) e.second = values_(j, i);
      out.push_back(e);
    }
  }
  return out;
}

ValuedGraph build_graph(int n, bool directed, std::span<const EdgeEntry> entries, ValueKind kind,
                        const BuildOptions& options) {
  if (n < 2) throw InputError("a graph needs at least 2 nodes, got " + std::to_string(n));
  if (kind == ValueKind::PairedReal && directed)
    throw InputError("paired values describe undirected dyads; the graph must be undirected");

  const double nan = std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(n, n, nan);

  auto assign = [&](int i, int j, double v) {
    double& slot = values(i, j);
    if (std::isnan(slot)) {
      slot = v;
    } else if (slot != v) {
      throw InputError("conflicting duplicate entry for pair " + pair_name(i, j));
    }
  };

  for (const EdgeEntry& e : entries) {
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n)
      throw InputError("node index out of range in pair " + pair_name(e.i, e.j));
    if (e.i == e.j) throw InputError("self-loop entry at node " + std::to_string(e.i));
    check_value(kind, e.first, e.i, e.j);
    assign(e.i, e.j, e.first);
    if (kind == ValueKind::PairedReal) {
      check_value(kind, e.second, e.j, e.i);
      assign(e.j, e.i, e.second);
    } else if (!directed) {
      assign(e.j, e.i, e.first);
    }
  }

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        values(i, j) = 0.0;
        continue;
      }
      if (!std::isnan(values(i, j))) continue;
      if (!options.fill) throw InputError("missing value for pair " + pair_name(i, j));
      check_value(kind, *options.fill, i, j);
      values(i, j) = *options.fill;
    }
  }

  return graph_from_matrix(values, directed, kind, options.num_labels);
}

ValuedGraph graph_from_matrix(const Eigen::MatrixXd& values, bool directed, ValueKind kind,
                              int num_labels) {
  const int n = static_cast<int>(values.rows());
  if (n < 2) throw InputError("a graph needs at least 2 nodes");
  if (values.cols() != n) throw DimensionError("value matrix must be square");
  if (kind == ValueKind::PairedReal && directed)
    throw InputError("paired values describe undirected dyads; the graph must be undirected");

  ValuedGraph g;
  g.values_ = values;
  g.values_.diagonal().setZero();
  g.directed_ = directed;
  g.kind_ = kind;

  int max_label = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = g.values_(i, j);
      check_value(kind, v, i, j);
      if (!directed && kind != ValueKind::PairedReal && v != g.values_(j, i))
        throw InputError("undirected graph has unequal values for pair " + pair_name(i, j));
      if (kind == ValueKind::Label) max_label = std::max(max_label, static_cast<int>(v));
    }
  }
  if (kind == ValueKind::Label) {
    if (num_labels == 0) num_labels = max_label;
    if (max_label > num_labels)
      throw InputError("label " + std::to_string(max_label) + " exceeds the label count " +
                       std::to_string(num_labels));
    g.num_labels_ = num_labels;
    g.label_mirror_.resize(num_labels);
    for (int k = 0; k < num_labels; ++k) g.label_mirror_[k] = k + 1;
  }
  return g;
}

ValuedGraph encode_dyads(const ValuedGraph& graph) {
  if (!graph.directed()) throw InputError("dyad encoding needs a directed graph");
  const int n = graph.size();
  const Eigen::MatrixXd& x = graph.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && x(i, j) != 0.0 && x(i, j) != 1.0)
        throw InputError("dyad encoding needs binary edge values");

  ValuedGraph g;
  g.values_ = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool out = x(i, j) != 0.0;
      const bool in = x(j, i) != 0.0;
      g.values_(i, j) = !out && !in ? 1 : (out && !in ? 2 : (!out && in ? 3 : 4));
    }
  }
  g.directed_ = false;
  g.kind_ = ValueKind::Label;
  g.num_labels_ = 4;
  g.label_mirror_ = {1, 3, 2, 4};
  return g;
}

Eigen::VectorXd EdgeCovariates::at(int i, int j) const {
  Eigen::VectorXd y(dim());
  for (int k = 0; k < dim(); ++k) y(k) = components_[k](i, j);
  return y;
}

Eigen::VectorXd EdgeCovariates::mean() const {
  Eigen::VectorXd m(dim());
  const double n = size();
  for (int k = 0; k < dim(); ++k) m(k) = components_[k].sum() / (n * (n - 1));
  return m;
}

EdgeCovariates covariates_from_matrices(const ValuedGraph& graph,
                                        std::vector<Eigen::MatrixXd> components) {
  const int n = graph.size();
  if (components.empty()) throw DimensionError("covariate dimension must be at least 1");
  for (std::size_t k = 0; k < components.size(); ++k) {
    Eigen::MatrixXd& y = components[k];
    if (y.rows() != n || y.cols() != n)
      throw DimensionError("covariate matrix " + std::to_string(k + 1) + " is not " +
                           std::to_string(n) + "x" + std::to_string(n));
    y.diagonal().setZero();
    if (!y.allFinite()) throw InputError("non-finite covariate entry");
    if (!graph.directed() && !y.isApprox(y.transpose(), 0.0))
      throw InputError("covariates of an undirected graph must be symmetric");
  }
  EdgeCovariates cov;
  cov.components_ = std::move(components);
  cov.directed_ = graph.directed();
  return cov;
}

EdgeCovariates attach_covariates(const ValuedGraph& graph,
                                 std::span<const CovariateEntry> entries) {
  const int n = graph.size();
  if (entries.empty()) throw InputError("no covariate entries");
  const std::size_t p = entries.front().y.size();
  if (p == 0) throw DimensionError("covariate dimension must be at least 1");

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::MatrixXd> comps(p, Eigen::MatrixXd::Constant(n, n, nan));
  auto assign = [&](int i, int j, std::size_t k, double v) {
    double& slot = comps[k](i, j);
    if (std::isnan(slot))
      slot = v;
    else if (slot != v)
      throw InputError("conflicting duplicate covariate for pair " + pair_name(i, j));
  };

  for (const CovariateEntry& e : entries) {
    if (e.y.size() != p)
      throw DimensionError("covariate dimension mismatch at pair " + pair_name(e.i, e.j) +
                           ": expected " + std::to_string(p) + ", got " +
                           std::to_string(e.y.size()));
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n)
      throw InputError("node index out of range in covariate pair " + pair_name(e.i, e.j));
    if (e.i == e.j) throw InputError("covariate given for self-loop at node " + std::to_string(e.i));
    for (std::size_t k = 0; k < p; ++k) {
      if (!std::isfinite(e.y[k]))
        throw InputError("non-finite covariate at pair " + pair_name(e.i, e.j));
      assign(e.i, e.j, k, e.y[k]);
      if (!graph.directed()) assign(e.j, e.i, k, e.y[k]);
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && std::isnan(comps[0](i, j)))
        throw InputError("missing covariate for pair " + pair_name(i, j));
  return covariates_from_matrices(graph, std::move(comps));
}

}  // namespace blockfit
