#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "blockfit/variational.hpp"

namespace blockfit {

/// X_hat_ij = sum_{q,l} tau_iq tau_jl E_ql[X_ij]; zero diagonal.
Eigen::MatrixXd predict_edges(const FitResult& fit, const ValuedGraph& graph,
                              const EdgeCovariates* cov = nullptr);

/// K_hat_i = sum_{j != i} X_hat_ij.
Eigen::VectorXd predict_degrees(const FitResult& fit, const ValuedGraph& graph,
                                const EdgeCovariates* cov = nullptr);

/// Observed weighted degrees K_i = sum_{j != i} X_ij.
Eigen::VectorXd weighted_degrees(const ValuedGraph& graph);

/// 1 - SS_res / SS_tot. Throws InputError when the observations have no variance.
double r_squared(std::span<const double> observed, std::span<const double> predicted);

struct PredictionReport {
  Eigen::VectorXd degree;
  Eigen::VectorXd degree_hat;
  /// Edge pairs in row-major order (i < j when undirected).
  std::vector<std::pair<int, int>> pairs;
  Eigen::VectorXd edge;
  Eigen::VectorXd edge_hat;
  double r2_degree = 0.0;
  double r2_edge = 0.0;
};

PredictionReport predict(const FitResult& fit, const ValuedGraph& graph,
                         const EdgeCovariates* cov = nullptr);

}  // namespace blockfit
