#pragma once

#include <Eigen/Dense>

#include <vector>

namespace blockfit {

/// One agglomeration step. `a` and `b` are leaf representatives of the two
/// merged clusters; `height` is the increase in within-cluster sum of squares.
struct Merge {
  int a = 0;
  int b = 0;
  double height = 0.0;
};

/// Ward dendrogram over the rows of a data matrix, merges sorted by height.
struct Dendrogram {
  int n = 0;
  std::vector<Merge> merges;
};

/// Ward linkage (nearest-neighbour chain with Lance-Williams updates on
/// squared Euclidean distances) of the rows of `points`.
Dendrogram ward_linkage(const Eigen::MatrixXd& points);

/// Labels 0..k-1 after undoing the top k-1 merges; numbered by first appearance.
std::vector<int> cut(const Dendrogram& tree, int k);

/// Node profiles used for hierarchical initialisation: row i of X followed by column i.
Eigen::MatrixXd node_profiles(const Eigen::MatrixXd& values);

}  // namespace blockfit
