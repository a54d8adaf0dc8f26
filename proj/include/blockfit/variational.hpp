#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockfit/family.hpp"
#include "blockfit/graph.hpp"
#include "blockfit/ward.hpp"

namespace blockfit {

/// gamma = (alpha, theta).
struct MixtureParams {
  Eigen::VectorXd alpha;
  BlockParams theta;

  int num_groups() const { return static_cast<int>(alpha.size()); }
};

enum class EStepSchedule {
  /// Node-by-node updates using the latest rows (default).
  Sequential,
  /// All rows from the previous sweep, damped when the change grows.
  Synchronous,
};

struct EStepOptions {
  int max_sweeps = 200;
  double tolerance = 1e-6;
  EStepSchedule schedule = EStepSchedule::Sequential;
  /// Step used by the synchronous schedule once oscillation is detected.
  double damping = 0.5;
};

struct EStepResult {
  Eigen::MatrixXd tau;
  int sweeps = 0;
  bool converged = false;
  /// Max-norm distance between tau and its image under the fixed-point map.
  double residual = 0.0;
};

enum class InitMethod { Hierarchical, Random, Given };

struct FitOptions {
  InitMethod init = InitMethod::Hierarchical;
  int max_outer = 500;
  double tolerance = 1e-6;
  /// Restart 0 uses `init`; the others start from random partitions.
  int restarts = 5;
  std::uint64_t seed = 0;
  std::vector<int> given_labels;
  EStepOptions estep;
  /// Ward tree reused across calls on the same graph.
  std::shared_ptr<const Dendrogram> dendrogram;
};

struct FitResult {
  FamilySpec family;
  bool directed = false;
  MixtureParams params;
  Eigen::MatrixXd tau;
  std::vector<double> bound_trajectory;
  double entropy = 0.0;
  std::vector<int> map_assignment;
  bool converged = false;
  int iterations = 0;
  /// Index of the restart that produced this fit.
  int restart = 0;
  std::vector<std::string> diagnostics;

  int num_groups() const { return params.num_groups(); }
  double bound() const { return bound_trajectory.empty() ? 0.0 : bound_trajectory.back(); }
};

/// Variational bound J(tau, gamma). Undirected graphs count each pair once.
double lower_bound(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                   const Eigen::MatrixXd& tau, const MixtureParams& params);

/// Iterates the mean-field fixed point from `tau_init`.
EStepResult estep_fixed_point(const ValuedGraph& graph, const EdgeCovariates* cov,
                              const FamilySpec& spec, const MixtureParams& params,
                              const Eigen::MatrixXd& tau_init, const EStepOptions& options = {});

/// max |F(tau) - tau| for the fixed-point map F.
double fixed_point_residual(const ValuedGraph& graph, const EdgeCovariates* cov,
                            const FamilySpec& spec, const MixtureParams& params,
                            const Eigen::MatrixXd& tau);

/// alpha = column means of tau; theta by weighted_mle.
MixtureParams mstep(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                    const Eigen::MatrixXd& tau, const BlockParams* previous = nullptr);

/// Variational EM with restarts. Throws NumericalError when every restart fails.
FitResult fit(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec, int Q,
              const FitOptions& options = {});

/// Softened hard partition: 1 - 1e-3 on the assigned class, the rest spread evenly.
Eigen::MatrixXd soften(std::span<const int> labels, int Q);

Eigen::MatrixXd init_partition(const ValuedGraph& graph, int Q, InitMethod method,
                               std::uint64_t seed, std::span<const int> labels = {},
                               const Dendrogram* tree = nullptr);

/// H = -sum tau log tau with 0 log 0 = 0.
double classification_entropy(const Eigen::MatrixXd& tau);

/// Permutes classes so that alpha is non-increasing; ties keep the original order.
void relabel_descending(MixtureParams& params, Eigen::MatrixXd& tau);

/// Row-wise argmax; ties go to the smallest class index.
std::vector<int> map_assignment(const Eigen::MatrixXd& tau);

/// Hard 0/1 membership matrix.
Eigen::MatrixXd one_hot(std::span<const int> labels, int Q);

/// log P(X; gamma) by enumeration of all Q^n assignments (Q^n <= 1e7).
double exact_loglik(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                    const MixtureParams& params);

/// P(Z_i = q | X; gamma) by enumeration.
Eigen::MatrixXd exact_posterior_marginals(const ValuedGraph& graph, const EdgeCovariates* cov,
                                          const FamilySpec& spec, const MixtureParams& params);

}  // namespace blockfit
