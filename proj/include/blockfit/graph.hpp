#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

#include "blockfit/error.hpp"

namespace blockfit {

/// What an edge value represents. Bernoulli data is stored as Count restricted to {0,1}.
enum class ValueKind { Count, Real, Label, PairedReal };

/// One edge-list record. `second` is only read for PairedReal graphs, where
/// the record (i, j, first, second) means X_ij = first and X_ji = second.
struct EdgeEntry {
  int i = 0;
  int j = 0;
  double first = 0.0;
  double second = 0.0;
};

struct BuildOptions {
  /// Number of labels m for Label graphs; 0 infers m from the largest label seen.
  int num_labels = 0;
  /// Value used for pairs absent from the entry list. Without it, absence is an error.
  std::optional<double> fill;
};

/// Dense, immutable valued graph without self-loops.
///
/// Values are kept in an n x n matrix with a zero diagonal. For undirected
/// graphs with scalar values the matrix is symmetric. For undirected
/// PairedReal graphs the unordered pair {i, j} carries (X_ij, X_ji), which is
/// again the (i, j) and (j, i) entries of the matrix. Undirected Label graphs
/// may carry a label mirror (see encode_dyads): X_ji = mirror(X_ij).
class ValuedGraph {
 public:
  ValuedGraph() = default;

  int size() const { return static_cast<int>(values_.rows()); }
  bool directed() const { return directed_; }
  ValueKind kind() const { return kind_; }
  int num_labels() const { return num_labels_; }

  /// X_ij, oriented from i to j. Requires i != j.
  double operator()(int i, int j) const { return values_(i, j); }

  /// n x n value matrix with zero diagonal.
  const Eigen::MatrixXd& values() const { return values_; }

  /// Label permutation applied when reading an undirected Label edge backwards
  /// (1-based, identity unless built by encode_dyads).
  const std::vector<int>& label_mirror() const { return label_mirror_; }

  /// n(n-1) for directed graphs, n(n-1)/2 for undirected ones.
  long long num_pairs() const;

  /// Read-back of every stored pair, in the entry format accepted by build_graph.
  std::vector<EdgeEntry> entries() const;

  friend ValuedGraph build_graph(int, bool, std::span<const EdgeEntry>, ValueKind,
                                 const BuildOptions&);
  friend ValuedGraph encode_dyads(const ValuedGraph&);
  friend ValuedGraph graph_from_matrix(const Eigen::MatrixXd&, bool, ValueKind, int);

 private:
  Eigen::MatrixXd values_;
  bool directed_ = true;
  ValueKind kind_ = ValueKind::Count;
  int num_labels_ = 0;
  std::vector<int> label_mirror_;
};

/// Validated construction from an edge list. Throws InputError on self-loops,
/// out-of-range indices, conflicting duplicates, missing pairs (without fill)
/// and values that do not match `kind`.
ValuedGraph build_graph(int n, bool directed, std::span<const EdgeEntry> entries, ValueKind kind,
                        const BuildOptions& options = {});

/// Builds a graph from a full n x n matrix (the diagonal is ignored). Same
/// validation as build_graph; used by the simulator.
ValuedGraph graph_from_matrix(const Eigen::MatrixXd& values, bool directed, ValueKind kind,
                              int num_labels = 0);

/// Maps a directed binary graph to an undirected 4-label dyad graph:
/// (X_ij, X_ji) = (0,0) -> 1, (1,0) -> 2, (0,1) -> 3, (1,1) -> 4, read from i.
ValuedGraph encode_dyads(const ValuedGraph& directed_binary);

struct CovariateEntry {
  int i = 0;
  int j = 0;
  std::vector<double> y;
};

/// Per-edge covariate vectors y_ij in R^p, with the host graph's symmetry convention.
class EdgeCovariates {
 public:
  EdgeCovariates() = default;

  int dim() const { return static_cast<int>(components_.size()); }
  int size() const { return components_.empty() ? 0 : static_cast<int>(components_[0].rows()); }

  /// Component k of y as an n x n matrix with zero diagonal.
  const Eigen::MatrixXd& component(int k) const { return components_[k]; }
  const std::vector<Eigen::MatrixXd>& components() const { return components_; }

  /// y_ij as a vector.
  Eigen::VectorXd at(int i, int j) const;

  /// Mean covariate vector over the graph's pairs.
  Eigen::VectorXd mean() const;

  friend EdgeCovariates attach_covariates(const ValuedGraph&, std::span<const CovariateEntry>);
  friend EdgeCovariates covariates_from_matrices(const ValuedGraph&, std::vector<Eigen::MatrixXd>);

 private:
  std::vector<Eigen::MatrixXd> components_;
  bool directed_ = true;
};

/// Binds covariates to `graph`. Every pair of the graph must be specified,
/// with a common dimension p >= 1 and finite entries.
EdgeCovariates attach_covariates(const ValuedGraph& graph, std::span<const CovariateEntry> entries);

/// Binds p covariate matrices (n x n each, diagonal ignored) to `graph`.
EdgeCovariates covariates_from_matrices(const ValuedGraph& graph,
                                        std::vector<Eigen::MatrixXd> components);

}  // namespace blockfit
