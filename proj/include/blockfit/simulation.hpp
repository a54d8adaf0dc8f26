#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "blockfit/random.hpp"
#include "blockfit/selection.hpp"
#include "blockfit/variational.hpp"

namespace blockfit {

/// alpha_q proportional to a^q; lambda_pp = lambda', lambda_pq = lambda' * gamma with
/// lambda' chosen so that sum alpha_q alpha_l lambda_ql = lambda.
MixtureParams grid_params(double a, double lambda, double gamma, int Q);

struct SampledGraph {
  ValuedGraph graph;
  std::vector<int> labels;
};

/// Z_i iid from alpha, then X_ij | Z independently from f_{Z_i Z_j} (i < j once if undirected).
/// Covariate families read the fixed design from `cov`.
SampledGraph sample_graph(const MixtureParams& params, const FamilySpec& spec, int n, bool directed,
                          Rng& rng, const EdgeCovariates* cov = nullptr);

/// sqrt(mean (estimate - truth)^2).
double rmse(std::span<const double> estimates, double truth);

enum class ExperimentMode { Estimation, Selection };

struct GridConfig {
  std::vector<int> n{100, 500};
  std::vector<double> a{1.0, 0.5, 0.2};
  std::vector<double> lambda{2.0, 5.0};
  std::vector<double> gamma{0.1, 0.5, 0.9, 1.5};
  int q_star = 3;
  int replicates = 100;
  std::uint64_t seed = 1;
  bool directed = false;
  ExperimentMode mode = ExperimentMode::Estimation;
  int q_min = 1;
  /// 0: 10 below n = 1000, 5 from there on.
  int q_max = 0;
  int restarts = 5;
  /// Worker threads; 0 reads BLOCKFIT_THREADS, falling back to the hardware count.
  int threads = 0;

  void validate() const;
};

struct CellReport {
  int n = 0;
  double a = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  MixtureParams truth;
  int completed = 0;
  int failed = 0;
  std::vector<std::string> failures;
  /// Estimation mode.
  Eigen::VectorXd rmse_alpha;
  Eigen::MatrixXd rmse_lambda;
  double mean_entropy = 0.0;  // H / n averaged over replicates
  /// Selection mode: selected Q -> fraction of completed replicates.
  std::map<int, double> selection;
  std::vector<int> selected;
};

struct ExperimentReport {
  ExperimentMode mode = ExperimentMode::Estimation;
  std::vector<CellReport> cells;
};

int worker_count(int requested);

ExperimentReport run_experiment(const GridConfig& config);

}  // namespace blockfit
