#pragma once

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blockfit/graph.hpp"

namespace blockfit {

enum class FamilyKind {
  Bernoulli,
  Multinomial,
  Gaussian,
  BivariateGaussian,
  PoissonPM,
  PoissonPRMI,
  PoissonPRMH,
  LinearRegression,
  SimpleRegression,
};

/// Log-density value returned where the true value is -inf (zero rate with a
/// positive count, zero probability for an observed label).
inline constexpr double kLogFloor = -1e12;

/// Blocks whose total weight falls below this fraction of the total are degenerate.
inline constexpr double kDegenerateWeight = 1e-12;

/// Edge distribution family f(.; theta_ql).
struct FamilySpec {
  FamilyKind kind = FamilyKind::PoissonPM;
  /// Label count m (multinomial only).
  int num_labels = 0;
  /// Covariate dimension p (regression families only; simple regression has p = 1).
  int covariate_dim = 0;

  bool uses_covariates() const;
  /// Number of Q x Q parameter components stored in BlockParams.
  int num_components() const;
  /// Number of parameters shared by every block.
  int num_shared() const;
  /// Value kind the family reads.
  ValueKind value_kind() const;
  /// Symbolic names of the components, e.g. {"mu", "sigma2"}.
  std::vector<std::string> component_names() const;
  std::vector<std::string> shared_names() const;
  /// CLI name: bernoulli, multinomial, gaussian, bigauss, poisson, poisson-prmh, ...
  std::string name() const;

  friend bool operator==(const FamilySpec&, const FamilySpec&) = default;
};

/// Parses a CLI family name. Throws InputError for unknown names.
FamilySpec parse_family(std::string_view name, int num_labels = 0, int covariate_dim = 0);

/// Connectivity parameters theta: one Q x Q matrix per parameter component
/// plus the parameters shared across blocks.
///
/// Component layout per family:
///   Bernoulli          {pi}
///   Multinomial(m)     {p^1, ..., p^m}
///   Gaussian           {mu, sigma2}
///   BivariateGaussian  {mu1, mu2, s11, s12, s22}    (mean and covariance of (X_ij, X_ji))
///   PoissonPM          {lambda}
///   PoissonPRMI        {lambda, beta_1, ..., beta_p}
///   PoissonPRMH        {lambda}, shared {beta_1, ..., beta_p}
///   LinearRegression   {beta_1, ..., beta_p, sigma2}
///   SimpleRegression   {a}, shared {b, sigma2}
struct BlockParams {
  std::vector<Eigen::MatrixXd> components;
  Eigen::VectorXd shared;
  /// Blocks left at their previous value because their weight vanished.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> degenerate;

  int num_groups() const { return components.empty() ? 0 : static_cast<int>(components[0].rows()); }
  /// Parameter vector of block (q, l).
  Eigen::VectorXd block(int q, int l) const;
  /// Permutes groups: new group k is old group order[k].
  BlockParams permuted(std::span<const int> order) const;
};

/// Zero-initialised parameter storage with the right shape for `spec`.
BlockParams make_params(const FamilySpec& spec, int Q);

/// Checks every parameter against its domain; throws InvalidParameter.
void validate_params(const FamilySpec& spec, const BlockParams& params);

/// Checks that the graph (and covariates) can be modelled by `spec`.
void validate_data(const FamilySpec& spec, const ValuedGraph& graph, const EdgeCovariates* cov);

/// An edge observation: the scalar X_ij in `first`, or (X_ij, X_ji) for paired values.
struct EdgeValue {
  double first = 0.0;
  double second = 0.0;
};

/// log f_ql(x; y). `y` must have size p for covariate families and is ignored otherwise.
double log_density(const FamilySpec& spec, const BlockParams& params, int q, int l, EdgeValue x,
                   std::span<const double> y = {});

/// log f_ql of edge (i, j) of `graph`, read in the orientation i -> j.
double edge_log_density(const FamilySpec& spec, const BlockParams& params, int q, int l,
                        const ValuedGraph& graph, const EdgeCovariates* cov, int i, int j);

/// Expected edge value under block (q, l). For paired values, the mean of X_ij.
double edge_mean(const FamilySpec& spec, const BlockParams& params, int q, int l,
                 std::span<const double> y = {});

/// Linear decomposition of the per-edge log-densities used by the E-step and
/// the bound:
///   log f_ql(i, j) = constant(q, l) + sum_k features[k](i, j) * weights[k](q, l)
///                    + offset(i, j) + block_logf[q * Q + l](i, j)
/// All n x n matrices have a zero diagonal. `block_logf` is only filled for
/// families whose density does not separate (PRMI).
struct LogDensityTerms {
  Eigen::MatrixXd constant;
  std::vector<Eigen::MatrixXd> features;
  std::vector<Eigen::MatrixXd> weights;
  Eigen::MatrixXd offset;
  std::vector<Eigen::MatrixXd> block_logf;
};

LogDensityTerms log_density_terms(const FamilySpec& spec, const BlockParams& params,
                                  const ValuedGraph& graph, const EdgeCovariates* cov);

/// Block sums tau^T M tau with M's diagonal ignored (M must have a zero diagonal).
inline Eigen::MatrixXd block_sums(const Eigen::MatrixXd& tau, const Eigen::MatrixXd& m) {
  return tau.transpose() * m * tau;
}

/// Total weights sum_{i != j} tau_iq tau_jl.
Eigen::MatrixXd block_weights(const Eigen::MatrixXd& tau);

/// M-step for theta: maximises sum_{i != j} sum_{q,l} tau_iq tau_jl log f_ql(X_ij).
/// `previous` supplies the values kept for degenerate blocks and the warm start
/// of iterative fits; it may be null.
BlockParams weighted_mle(const FamilySpec& spec, const ValuedGraph& graph,
                         const EdgeCovariates* cov, const Eigen::MatrixXd& tau,
                         const BlockParams* previous = nullptr);

/// lambda_ql = sum tau_iq tau_jl X_ij / sum tau_iq tau_jl.
Eigen::MatrixXd poisson_pm_mle(const ValuedGraph& graph, const Eigen::MatrixXd& tau);

enum class RegressionMode { Homogeneous, Inhomogeneous };

struct PoissonRegressionOptions {
  int max_iterations = 100;
  /// Relative parameter change below which Newton iterations stop.
  double tolerance = 1e-8;
};

struct PoissonRegressionFit {
  Eigen::MatrixXd lambda;
  /// Inhomogeneous mode: p matrices beta_ql. Empty otherwise.
  std::vector<Eigen::MatrixXd> block_beta;
  /// Homogeneous mode: shared beta. Empty otherwise.
  Eigen::VectorXd beta;
  /// Weighted log-likelihood at the returned parameters.
  double loglik = 0.0;
  /// Max-norm of the gradient in (log lambda, beta).
  double gradient_norm = 0.0;
  int iterations = 0;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> degenerate;
};

/// Weighted Poisson regression M-step (PRMH: shared beta, PRMI: beta per block).
/// Newton iterations on the profile likelihood in beta, with rates in closed
/// form given beta and step-halving on likelihood decrease. Throws
/// NumericalError on non-convergence or an unbounded likelihood.
PoissonRegressionFit poisson_regression_mle(const ValuedGraph& graph, const EdgeCovariates& cov,
                                            const Eigen::MatrixXd& tau, RegressionMode mode,
                                            const BlockParams* warm_start = nullptr,
                                            const PoissonRegressionOptions& options = {});

/// Exponential family in natural form f(x; theta) = exp(Psi(x)' theta - A(theta)).
struct NaturalFamily {
  std::function<Eigen::VectorXd(double)> sufficient_statistic;
  /// (grad A)^{-1}: mean parameter to natural parameter.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> inverse_mean_map;
  /// True when the mean vector lies in the image of grad A.
  std::function<bool(const Eigen::VectorXd&)> in_range;
};

NaturalFamily poisson_natural();
NaturalFamily bernoulli_natural();
NaturalFamily gaussian_natural();

/// Generic exponential-family M-step for one block:
/// theta = (grad A)^{-1}[sum w_ij Psi(X_ij) / sum w_ij] over i != j.
/// Throws NumericalError when the weighted mean is outside the range of grad A.
Eigen::VectorXd expfam_mle(const NaturalFamily& family, const Eigen::MatrixXd& weights,
                           const ValuedGraph& graph);

/// Number of independent connectivity parameters P_Q.
long long param_count(const FamilySpec& spec, int Q, bool directed);

}  // namespace blockfit
