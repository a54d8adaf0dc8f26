#include "blockfit/ward.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "blockfit/error.hpp"

namespace blockfit {

Eigen::MatrixXd node_profiles(const Eigen::MatrixXd& values) {
  Eigen::MatrixXd p(values.rows(), 2 * values.cols());
  p << values, values.transpose();
  return p;
}

Dendrogram ward_linkage(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  if (n < 1) throw InputError("ward linkage needs at least one point");
  Dendrogram tree;
  tree.n = n;
  if (n == 1) return tree;

  const Eigen::VectorXd norms = points.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * points * points.transpose();
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);

  std::vector<int> size(n, 1);
  std::vector<bool> active(n, true);
  std::vector<int> chain;
  chain.reserve(n);

  for (int step = 0; step < n - 1; ++step) {
    if (chain.empty()) {
      chain.push_back(static_cast<int>(std::find(active.begin(), active.end(), true) - active.begin()));
    }
    int a = 0, b = 0;
    while (true) {
      a = chain.back();
      const int prev = chain.size() >= 2 ? chain[chain.size() - 2] : -1;
      double best = std::numeric_limits<double>::infinity();
      int nn = -1;
      if (prev >= 0) {
        best = d(a, prev);
        nn = prev;
      }
      for (int k = 0; k < n; ++k) {
        if (!active[k] || k == a) continue;
        if (d(a, k) < best) {
          best = d(a, k);
          nn = k;
        }
      }
      if (nn == prev) {
        b = prev;
        chain.pop_back();
        chain.pop_back();
        break;
      }
      chain.push_back(nn);
    }

    const double dab = d(a, b);
    const int keep = std::min(a, b), drop = std::max(a, b);
    const double na = size[a], nb = size[b];
    for (int k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double nk = size[k];
      const double v = ((na + nk) * d(a, k) + (nb + nk) * d(b, k) - nk * dab) / (na + nb + nk);
      d(keep, k) = d(k, keep) = v;
    }
    active[drop] = false;
    size[keep] += size[drop];
    tree.merges.push_back({keep, drop, 0.5 * dab});
  }
  std::stable_sort(tree.merges.begin(), tree.merges.end(),
                   [](const Merge& x, const Merge& y) { return x.height < y.height; });
  return tree;
}

std::vector<int> cut(const Dendrogram& tree, int k) {
  const int n = tree.n;
  if (k < 1 || k > n) throw InvalidParameter("cannot cut a dendrogram of " + std::to_string(n) +
                                             " leaves into " + std::to_string(k) + " groups");
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int m = 0; m < n - k; ++m) {
    const int ra = find(tree.merges[m].a), rb = find(tree.merges[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> label(n, -1), root_label(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

}  // namespace blockfit
