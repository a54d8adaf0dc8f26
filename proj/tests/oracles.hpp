// Independent reference computations for the tests: plain loops over edges,
// no block sums and no feature decomposition.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "blockfit/blockfit.hpp"

namespace oracle {

inline Eigen::MatrixXd random_tau(int n, int Q, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd t(n, Q);
  for (int i = 0; i < n; ++i) {
    for (int q = 0; q < Q; ++q) t(i, q) = u(rng);
    t.row(i) /= t.row(i).sum();
  }
  return t;
}

inline Eigen::VectorXd random_simplex(int Q, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::VectorXd a(Q);
  for (int q = 0; q < Q; ++q) a(q) = u(rng);
  return a / a.sum();
}

inline Eigen::MatrixXd random_counts(int n, bool directed, double mean, std::mt19937_64& rng) {
  std::poisson_distribution<int> p(mean);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = directed ? 0 : i + 1; j < n; ++j) {
      if (i == j) continue;
      x(i, j) = p(rng);
      if (!directed) x(j, i) = x(i, j);
    }
  return x;
}

inline Eigen::MatrixXd random_real(int n, bool directed, std::mt19937_64& rng) {
  std::normal_distribution<double> g(1.0, 2.0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = directed ? 0 : i + 1; j < n; ++j) {
      if (i == j) continue;
      x(i, j) = g(rng);
      if (!directed) x(j, i) = x(i, j);
    }
  return x;
}

/// Pair weights w_ij = tau_iq tau_jl.
inline Eigen::MatrixXd pair_weights(const Eigen::MatrixXd& tau, int q, int l) {
  Eigen::MatrixXd w = tau.col(q) * tau.col(l).transpose();
  w.diagonal().setZero();
  return w;
}

/// sum_{i != j} w_ij f(i, j)
template <class F>
double wsum(const Eigen::MatrixXd& w, F&& f) {
  double s = 0.0;
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j)
      if (i != j) s += w(i, j) * f(i, j);
  return s;
}

inline double wmean(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x) {
  return wsum(w, [&](int i, int j) { return x(i, j); }) / wsum(w, [](int, int) { return 1.0; });
}

inline double wvar(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x) {
  const double m = wmean(w, x);
  return wsum(w, [&](int i, int j) { return (x(i, j) - m) * (x(i, j) - m); }) /
         wsum(w, [](int, int) { return 1.0; });
}

inline double log_poisson(double x, double lambda) {
  return x * std::log(lambda) - lambda - std::lgamma(x + 1.0);
}

/// Within-cluster sum of squares of a partition of the rows of p.
inline double wss(const Eigen::MatrixXd& p, const std::vector<std::vector<int>>& clusters) {
  double total = 0.0;
  for (const auto& c : clusters) {
    Eigen::RowVectorXd centre = Eigen::RowVectorXd::Zero(p.cols());
    for (int i : c) centre += p.row(i);
    centre /= static_cast<double>(c.size());
    for (int i : c) total += (p.row(i) - centre).squaredNorm();
  }
  return total;
}

/// Greedy Ward agglomeration by exhaustive search over cluster pairs.
/// Returns merge heights (WSS increase) in merge order and the partitions
/// reached at every cluster count (index k holds the k-cluster partition).
struct WardTrace {
  std::vector<double> heights;
  std::vector<std::vector<std::vector<int>>> partitions;
};

inline WardTrace brute_ward(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.rows());
  std::vector<std::vector<int>> clusters;
  for (int i = 0; i < n; ++i) clusters.push_back({i});
  WardTrace t;
  t.partitions.resize(n + 1);
  t.partitions[n] = clusters;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    const double base = wss(p, clusters);
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        auto trial = clusters;
        trial[a].insert(trial[a].end(), trial[b].begin(), trial[b].end());
        trial.erase(trial.begin() + static_cast<long>(b));
        const double inc = wss(p, trial) - base;
        if (inc < best) {
          best = inc;
          ba = a;
          bb = b;
        }
      }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<long>(bb));
    t.heights.push_back(best);
    t.partitions[clusters.size()] = clusters;
  }
  return t;
}

/// Labels of a partition in first-appearance order.
inline std::vector<int> labels_of(const std::vector<std::vector<int>>& clusters, int n) {
  std::vector<int> owner(n);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (int i : clusters[c]) owner[i] = static_cast<int>(c);
  std::vector<int> relabel(clusters.size(), -1), out(n);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (relabel[owner[i]] < 0) relabel[owner[i]] = next++;
    out[i] = relabel[owner[i]];
  }
  return out;
}

/// Lower bound written as a plain double loop over pairs and classes.
inline double direct_bound(const blockfit::ValuedGraph& g, const blockfit::EdgeCovariates* cov,
                           const blockfit::FamilySpec& spec, const Eigen::MatrixXd& tau,
                           const blockfit::MixtureParams& gamma) {
  const int n = g.size();
  const int Q = gamma.num_groups();
  double j = 0.0;
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < Q; ++q)
      if (tau(i, q) > 0.0) j += tau(i, q) * (std::log(gamma.alpha(q)) - std::log(tau(i, q)));
  for (int i = 0; i < n; ++i)
    for (int k = g.directed() ? 0 : i + 1; k < n; ++k) {
      if (i == k) continue;
      for (int q = 0; q < Q; ++q)
        for (int l = 0; l < Q; ++l)
          j += tau(i, q) * tau(k, l) *
               blockfit::edge_log_density(spec, gamma.theta, q, l, g, cov, i, k);
    }
  return j;
}

}  // namespace oracle
