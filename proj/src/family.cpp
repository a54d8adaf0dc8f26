#include "blockfit/family.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace blockfit {

namespace {

// LDLT::rcond misses exact zero pivots, so look at D directly.
bool well_conditioned(const Eigen::LDLT<Eigen::MatrixXd>& ldlt, double tol) {
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  return d.minCoeff() >= tol * d.maxCoeff() && d.maxCoeff() > 0.0 && ldlt.rcond() >= tol;
}

// variance floor, relative to the pooled variance of the data
constexpr double kMinVariance = 1e-6;

double safe_log(double x) { return x > 0.0 ? std::max(std::log(x), kLogFloor) : kLogFloor; }

Eigen::MatrixXd zero_diagonal(Eigen::MatrixXd m) {
  m.diagonal().setZero();
  return m;
}

std::string block_name(int q, int l) {
  return "(" + std::to_string(q) + "," + std::to_string(l) + ")";
}

void mirror_upper(Eigen::MatrixXd& m) {
  for (Eigen::Index q = 0; q < m.rows(); ++q)
    for (Eigen::Index l = 0; l < q; ++l) m(q, l) = m(l, q);
}

}  // namespace

// ---------------------------------------------------------------------------
// FamilySpec

bool FamilySpec::uses_covariates() const {
  switch (kind) {
    case FamilyKind::PoissonPRMI:
    case FamilyKind::PoissonPRMH:
    case FamilyKind::LinearRegression:
    case FamilyKind::SimpleRegression:
      return true;
    default:
      return false;
  }
}

int FamilySpec::num_components() const { return static_cast<int>(component_names().size()); }

int FamilySpec::num_shared() const { return static_cast<int>(shared_names().size()); }

ValueKind FamilySpec::value_kind() const {
  switch (kind) {
    case FamilyKind::Bernoulli:
    case FamilyKind::PoissonPM:
    case FamilyKind::PoissonPRMI:
    case FamilyKind::PoissonPRMH:
      return ValueKind::Count;
    case FamilyKind::Multinomial:
      return ValueKind::Label;
    case FamilyKind::BivariateGaussian:
      return ValueKind::PairedReal;
    default:
      return ValueKind::Real;
  }
}

std::vector<std::string> FamilySpec::component_names() const {
  std::vector<std::string> names;
  auto betas = [&] {
    for (int a = 1; a <= covariate_dim; ++a) names.push_back("beta" + std::to_string(a));
  };
  switch (kind) {
    case FamilyKind::Bernoulli:
      return {"pi"};
    case FamilyKind::Multinomial:
      for (int k = 1; k <= num_labels; ++k) names.push_back("p" + std::to_string(k));
      return names;
    case FamilyKind::Gaussian:
      return {"mu", "sigma2"};
    case FamilyKind::BivariateGaussian:
      return {"mu1", "mu2", "s11", "s12", "s22"};
    case FamilyKind::PoissonPM:
    case FamilyKind::PoissonPRMH:
      return {"lambda"};
    case FamilyKind::PoissonPRMI:
      names.push_back("lambda");
      betas();
      return names;
    case FamilyKind::LinearRegression:
      betas();
      names.push_back("sigma2");
      return names;
    case FamilyKind::SimpleRegression:
      return {"a"};
  }
  return names;
}

std::vector<std::string> FamilySpec::shared_names() const {
  std::vector<std::string> names;
  if (kind == FamilyKind::PoissonPRMH)
    for (int a = 1; a <= covariate_dim; ++a) names.push_back("beta" + std::to_string(a));
  if (kind == FamilyKind::SimpleRegression) names = {"b", "sigma2"};
  return names;
}

std::string FamilySpec::name() const {
  switch (kind) {
    case FamilyKind::Bernoulli: return "bernoulli";
    case FamilyKind::Multinomial: return "multinomial";
    case FamilyKind::Gaussian: return "gaussian";
    case FamilyKind::BivariateGaussian: return "bigauss";
    case FamilyKind::PoissonPM: return "poisson";
    case FamilyKind::PoissonPRMI: return "poisson-prmi";
    case FamilyKind::PoissonPRMH: return "poisson-prmh";
    case FamilyKind::LinearRegression: return "linreg";
    case FamilyKind::SimpleRegression: return "simplereg";
  }
  return "unknown";
}

FamilySpec parse_family(std::string_view name, int num_labels, int covariate_dim) {
  FamilySpec spec;
  if (name == "bernoulli") spec.kind = FamilyKind::Bernoulli;
  else if (name == "multinomial") spec.kind = FamilyKind::Multinomial;
  else if (name == "gaussian") spec.kind = FamilyKind::Gaussian;
  else if (name == "bigauss") spec.kind = FamilyKind::BivariateGaussian;
  else if (name == "poisson") spec.kind = FamilyKind::PoissonPM;
  else if (name == "poisson-prmi") spec.kind = FamilyKind::PoissonPRMI;
  else if (name == "poisson-prmh") spec.kind = FamilyKind::PoissonPRMH;
  else if (name == "linreg") spec.kind = FamilyKind::LinearRegression;
  else if (name == "simplereg") spec.kind = FamilyKind::SimpleRegression;
  else throw InputError("unknown family '" + std::string(name) + "'");
  if (spec.kind == FamilyKind::Multinomial) spec.num_labels = num_labels;
  if (spec.kind == FamilyKind::SimpleRegression) spec.covariate_dim = 1;
  else if (spec.uses_covariates()) spec.covariate_dim = covariate_dim;
  return spec;
}

// ---------------------------------------------------------------------------
// BlockParams

Eigen::VectorXd BlockParams::block(int q, int l) const {
  Eigen::VectorXd v(components.size());
  for (std::size_t c = 0; c < components.size(); ++c) v(c) = components[c](q, l);
  return v;
}

BlockParams BlockParams::permuted(std::span<const int> order) const {
  const int Q = num_groups();
  BlockParams out = *this;
  for (std::size_t c = 0; c < components.size(); ++c)
    for (int q = 0; q < Q; ++q)
      for (int l = 0; l < Q; ++l) out.components[c](q, l) = components[c](order[q], order[l]);
  if (degenerate.size() > 0)
    for (int q = 0; q < Q; ++q)
      for (int l = 0; l < Q; ++l) out.degenerate(q, l) = degenerate(order[q], order[l]);
  return out;
}

BlockParams make_params(const FamilySpec& spec, int Q) {
  BlockParams p;
  p.components.assign(spec.num_components(), Eigen::MatrixXd::Zero(Q, Q));
  p.shared = Eigen::VectorXd::Zero(spec.num_shared());
  p.degenerate = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(Q, Q, false);
  return p;
}

void validate_params(const FamilySpec& spec, const BlockParams& params) {
  const int Q = params.num_groups();
  if (static_cast<int>(params.components.size()) != spec.num_components())
    throw DimensionError("expected " + std::to_string(spec.num_components()) +
                         " parameter components for family " + spec.name());
  if (params.shared.size() != spec.num_shared())
    throw DimensionError("expected " + std::to_string(spec.num_shared()) +
                         " shared parameters for family " + spec.name());
  for (const auto& c : params.components) {
    if (c.rows() != Q || c.cols() != Q) throw DimensionError("parameter components must be QxQ");
    if (!c.allFinite()) throw InvalidParameter("non-finite block parameter");
  }
  if (!params.shared.allFinite()) throw InvalidParameter("non-finite shared parameter");

  for (int q = 0; q < Q; ++q) {
    for (int l = 0; l < Q; ++l) {
      const std::string where = " in block " + block_name(q, l);
      switch (spec.kind) {
        case FamilyKind::Bernoulli: {
          const double pi = params.components[0](q, l);
          if (pi < 0.0 || pi > 1.0) throw InvalidParameter("probability outside [0,1]" + where);
          break;
        }
        case FamilyKind::Multinomial: {
          double total = 0.0;
          for (const auto& c : params.components) {
            if (c(q, l) < 0.0 || c(q, l) > 1.0)
              throw InvalidParameter("probability outside [0,1]" + where);
            total += c(q, l);
          }
          if (std::abs(total - 1.0) > 1e-9)
            throw InvalidParameter("label probabilities do not sum to 1" + where);
          break;
        }
        case FamilyKind::Gaussian:
          if (params.components[1](q, l) <= 0.0)
            throw InvalidParameter("non-positive variance" + where);
          break;
        case FamilyKind::BivariateGaussian: {
          const double s11 = params.components[2](q, l), s12 = params.components[3](q, l),
                       s22 = params.components[4](q, l);
          if (s11 <= 0.0 || s22 <= 0.0 || s11 * s22 - s12 * s12 <= 0.0)
            throw InvalidParameter("covariance matrix not positive definite" + where);
          break;
        }
        case FamilyKind::PoissonPM:
        case FamilyKind::PoissonPRMI:
        case FamilyKind::PoissonPRMH:
          if (params.components[0](q, l) < 0.0) throw InvalidParameter("negative rate" + where);
          break;
        case FamilyKind::LinearRegression:
          if (params.components.back()(q, l) <= 0.0)
            throw InvalidParameter("non-positive variance" + where);
          break;
        case FamilyKind::SimpleRegression:
          break;
      }
    }
  }
  if (spec.kind == FamilyKind::SimpleRegression && params.shared(1) <= 0.0)
    throw InvalidParameter("non-positive shared variance");
}

void validate_data(const FamilySpec& spec, const ValuedGraph& graph, const EdgeCovariates* cov) {
  if (graph.kind() != spec.value_kind())
    throw InputError("graph value kind does not match family " + spec.name());
  if (spec.kind == FamilyKind::Bernoulli) {
    const auto& x = graph.values();
    if (((x.array() != 0.0) && (x.array() != 1.0)).any())
      throw InputError("bernoulli family needs 0/1 edge values");
  }
  if (spec.kind == FamilyKind::Multinomial && spec.num_labels != graph.num_labels())
    throw DimensionError("family has " + std::to_string(spec.num_labels) +
                         " labels but the graph has " + std::to_string(graph.num_labels()));
  if (spec.uses_covariates()) {
    if (cov == nullptr) throw InputError("family " + spec.name() + " needs edge covariates");
    if (cov->size() != graph.size())
      throw DimensionError("covariates are bound to a graph of a different size");
    if (cov->dim() != spec.covariate_dim)
      throw DimensionError("family expects " + std::to_string(spec.covariate_dim) +
                           " covariates, got " + std::to_string(cov->dim()));
  }
}

// ---------------------------------------------------------------------------
// Densities

double log_density(const FamilySpec& spec, const BlockParams& params, int q, int l, EdgeValue x,
                   std::span<const double> y) {
  auto comp = [&](int c) { return params.components[c](q, l); };
  auto dot = [&](auto&& coef) {
    double s = 0.0;
    for (int a = 0; a < spec.covariate_dim; ++a) s += coef(a) * y[a];
    return s;
  };
  if (spec.uses_covariates() && static_cast<int>(y.size()) != spec.covariate_dim)
    throw InputError("covariate vector required by family " + spec.name());
  const double log2pi = std::log(2.0 * std::numbers::pi);

  switch (spec.kind) {
    case FamilyKind::Bernoulli: {
      const double pi = comp(0);
      if (pi < 0.0 || pi > 1.0) throw InvalidParameter("probability outside [0,1]");
      return x.first != 0.0 ? safe_log(pi) : safe_log(1.0 - pi);
    }
    case FamilyKind::Multinomial: {
      const int k = static_cast<int>(x.first);
      if (k < 1 || k > spec.num_labels) throw InputError("label outside 1..m");
      const double p = comp(k - 1);
      if (p < 0.0 || p > 1.0) throw InvalidParameter("probability outside [0,1]");
      return safe_log(p);
    }
    case FamilyKind::Gaussian: {
      const double mu = comp(0), s2 = comp(1);
      if (s2 <= 0.0) throw InvalidParameter("non-positive variance");
      const double r = x.first - mu;
      return -0.5 * (log2pi + std::log(s2)) - r * r / (2.0 * s2);
    }
    case FamilyKind::BivariateGaussian: {
      const double s11 = comp(2), s12 = comp(3), s22 = comp(4);
      const double det = s11 * s22 - s12 * s12;
      if (s11 <= 0.0 || det <= 0.0) throw InvalidParameter("covariance not positive definite");
      const double r1 = x.first - comp(0), r2 = x.second - comp(1);
      const double quad = (s22 * r1 * r1 - 2.0 * s12 * r1 * r2 + s11 * r2 * r2) / det;
      return -log2pi - 0.5 * std::log(det) - 0.5 * quad;
    }
    case FamilyKind::PoissonPM:
    case FamilyKind::PoissonPRMI:
    case FamilyKind::PoissonPRMH: {
      const double lambda = comp(0);
      if (lambda < 0.0) throw InvalidParameter("negative rate");
      double eta = 0.0;
      if (spec.kind == FamilyKind::PoissonPRMH) eta = dot([&](int a) { return params.shared(a); });
      if (spec.kind == FamilyKind::PoissonPRMI) eta = dot([&](int a) { return comp(1 + a); });
      return x.first * (safe_log(lambda) + eta) - lambda * std::exp(eta) -
             std::lgamma(x.first + 1.0);
    }
    case FamilyKind::LinearRegression: {
      const double s2 = comp(spec.covariate_dim);
      if (s2 <= 0.0) throw InvalidParameter("non-positive variance");
      const double r = x.first - dot([&](int a) { return comp(a); });
      return -0.5 * (log2pi + std::log(s2)) - r * r / (2.0 * s2);
    }
    case FamilyKind::SimpleRegression: {
      const double b = params.shared(0), s2 = params.shared(1);
      if (s2 <= 0.0) throw InvalidParameter("non-positive variance");
      const double r = x.first - comp(0) - b * y[0];
      return -0.5 * (log2pi + std::log(s2)) - r * r / (2.0 * s2);
    }
  }
  return 0.0;
}

double edge_log_density(const FamilySpec& spec, const BlockParams& params, int q, int l,
                        const ValuedGraph& graph, const EdgeCovariates* cov, int i, int j) {
  EdgeValue x{graph(i, j), graph(j, i)};
  if (!spec.uses_covariates()) return log_density(spec, params, q, l, x);
  const Eigen::VectorXd y = cov->at(i, j);
  return log_density(spec, params, q, l, x, std::span<const double>(y.data(), y.size()));
}

double edge_mean(const FamilySpec& spec, const BlockParams& params, int q, int l,
                 std::span<const double> y) {
  auto comp = [&](int c) { return params.components[c](q, l); };
  auto dot = [&](auto&& coef) {
    double s = 0.0;
    for (int a = 0; a < spec.covariate_dim; ++a) s += coef(a) * y[a];
    return s;
  };
  if (spec.uses_covariates() && static_cast<int>(y.size()) != spec.covariate_dim)
    throw InputError("covariate vector required by family " + spec.name());
  switch (spec.kind) {
    case FamilyKind::Bernoulli:
    case FamilyKind::Gaussian:
    case FamilyKind::BivariateGaussian:
    case FamilyKind::PoissonPM:
      return comp(0);
    case FamilyKind::Multinomial: {
      double m = 0.0;
      for (int k = 0; k < spec.num_labels; ++k) m += (k + 1) * comp(k);
      return m;
    }
    case FamilyKind::PoissonPRMH:
      return comp(0) * std::exp(dot([&](int a) { return params.shared(a); }));
    case FamilyKind::PoissonPRMI:
      return comp(0) * std::exp(dot([&](int a) { return comp(1 + a); }));
    case FamilyKind::LinearRegression:
      return dot([&](int a) { return comp(a); });
    case FamilyKind::SimpleRegression:
      return comp(0) + params.shared(0) * y[0];
  }
  return 0.0;
}

LogDensityTerms log_density_terms(const FamilySpec& spec, const BlockParams& params,
                                  const ValuedGraph& graph, const EdgeCovariates* cov) {
  validate_params(spec, params);
  validate_data(spec, graph, cov);
  const int Q = params.num_groups();
  const Eigen::MatrixXd& x = graph.values();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  auto comp = [&](int c) -> const Eigen::MatrixXd& { return params.components[c]; };
  auto lgamma_of = [&] {
    return zero_diagonal(-x.unaryExpr([](double v) { return std::lgamma(v + 1.0); }));
  };
  auto linear_predictor = [&](auto&& coef) {
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    for (int a = 0; a < spec.covariate_dim; ++a) eta += coef(a) * cov->component(a);
    return eta;
  };

  LogDensityTerms t;
  switch (spec.kind) {
    case FamilyKind::Bernoulli: {
      const Eigen::MatrixXd lp = comp(0).unaryExpr(&safe_log);
      const Eigen::MatrixXd lq = comp(0).unaryExpr([](double p) { return safe_log(1.0 - p); });
      // x and 1-x as separate features, no log(p/(1-p))
      t.constant = Eigen::MatrixXd::Zero(Q, Q);
      t.features = {x, zero_diagonal(1.0 - x.array())};
      t.weights = {lp, lq};
      break;
    }
    case FamilyKind::Multinomial:
      for (int k = 1; k <= spec.num_labels; ++k) {
        t.features.push_back(zero_diagonal((x.array() == k).cast<double>().matrix()));
        t.weights.push_back(comp(k - 1).unaryExpr(&safe_log));
      }
      break;
    case FamilyKind::Gaussian: {
      const Eigen::ArrayXXd mu = comp(0).array(), s2 = comp(1).array();
      t.constant = (-0.5 * (log2pi + s2.log()) - mu.square() / (2.0 * s2)).matrix();
      t.features = {x, x.cwiseAbs2()};
      t.weights = {(mu / s2).matrix(), (-0.5 / s2).matrix()};
      break;
    }
    case FamilyKind::BivariateGaussian: {
      const Eigen::ArrayXXd m1 = comp(0).array(), m2 = comp(1).array();
      const Eigen::ArrayXXd s11 = comp(2).array(), s12 = comp(3).array(), s22 = comp(4).array();
      const Eigen::ArrayXXd det = s11 * s22 - s12.square();
      const Eigen::ArrayXXd p11 = s22 / det, p12 = -s12 / det, p22 = s11 / det;
      const Eigen::ArrayXXd h1 = p11 * m1 + p12 * m2, h2 = p12 * m1 + p22 * m2;
      t.constant = (-log2pi - 0.5 * det.log() - 0.5 * (m1 * h1 + m2 * h2)).matrix();
      const Eigen::MatrixXd xt = x.transpose();
      t.features = {x, xt, x.cwiseAbs2(), xt.cwiseAbs2(), x.cwiseProduct(xt)};
      t.weights = {h1.matrix(), h2.matrix(), (-0.5 * p11).matrix(), (-0.5 * p22).matrix(),
                   (-p12).matrix()};
      break;
    }
    case FamilyKind::PoissonPM:
      t.constant = -comp(0);
      t.features = {x};
      t.weights = {comp(0).unaryExpr(&safe_log)};
      t.offset = lgamma_of();
      break;
    case FamilyKind::PoissonPRMH: {
      const Eigen::MatrixXd eta = linear_predictor([&](int a) { return params.shared(a); });
      t.features = {x, zero_diagonal(eta.array().exp().matrix())};
      t.weights = {comp(0).unaryExpr(&safe_log), -comp(0)};
      t.offset = x.cwiseProduct(eta) + lgamma_of();
      break;
    }
    case FamilyKind::PoissonPRMI: {
      const Eigen::MatrixXd lg = lgamma_of();
      t.block_logf.resize(static_cast<std::size_t>(Q) * Q);
      for (int q = 0; q < Q; ++q) {
        for (int l = 0; l < Q; ++l) {
          const Eigen::MatrixXd eta = linear_predictor([&](int a) { return comp(1 + a)(q, l); });
          const double lambda = comp(0)(q, l);
          Eigen::MatrixXd lf = (x.array() * (safe_log(lambda) + eta.array()) -
                                lambda * eta.array().exp())
                                   .matrix() +
                               lg;
          lf.diagonal().setZero();
          t.block_logf[static_cast<std::size_t>(q) * Q + l] = std::move(lf);
        }
      }
      break;
    }
    case FamilyKind::LinearRegression: {
      const int p = spec.covariate_dim;
      const Eigen::ArrayXXd s2 = comp(p).array();
      t.constant = (-0.5 * (log2pi + s2.log())).matrix();
      t.features.push_back(x.cwiseAbs2());
      t.weights.push_back((-0.5 / s2).matrix());
      for (int a = 0; a < p; ++a) {
        t.features.push_back(x.cwiseProduct(cov->component(a)));
        t.weights.push_back((comp(a).array() / s2).matrix());
      }
      for (int a = 0; a < p; ++a) {
        for (int b = a; b < p; ++b) {
          const double mult = a == b ? 1.0 : 2.0;
          t.features.push_back(cov->component(a).cwiseProduct(cov->component(b)));
          t.weights.push_back((-mult * comp(a).array() * comp(b).array() / (2.0 * s2)).matrix());
        }
      }
      break;
    }
    case FamilyKind::SimpleRegression: {
      const double b = params.shared(0), s2 = params.shared(1);
      const Eigen::MatrixXd r = x - b * cov->component(0);
      const Eigen::ArrayXXd a = comp(0).array();
      t.constant = (-0.5 * (log2pi + std::log(s2)) - a.square() / (2.0 * s2)).matrix();
      t.features = {r};
      t.weights = {(a / s2).matrix()};
      t.offset = -r.cwiseAbs2() / (2.0 * s2);
      break;
    }
  }
  return t;
}

Eigen::MatrixXd block_weights(const Eigen::MatrixXd& tau) {
  const Eigen::VectorXd s = tau.colwise().sum().transpose();
  return s * s.transpose() - tau.transpose() * tau;
}

// ---------------------------------------------------------------------------
// Poisson regression

namespace {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Weighted Poisson log-likelihood with the block rates profiled out:
///   sum_b [Sx_b log(Sx_b / M0_b(beta)) - Sx_b + beta' Sxy_b],
/// with block sums S(M) = left' M right.
class ProfiledPoisson {
 public:
  struct State {
    double objective = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd neg_hessian;
    Eigen::MatrixXd lambda;
    Eigen::MatrixXd m0;
    bool bounded = true;
  };

  ProfiledPoisson(const Eigen::MatrixXd& x, const std::vector<Eigen::MatrixXd>& y,
                  const Eigen::MatrixXd& left, const Eigen::MatrixXd& right,
                  const BoolArray& active)
      : y_(y), left_(left), right_(right), active_(active) {
    sx_ = sums(x);
    for (const auto& ya : y_) sxy_.push_back(sums(x.cwiseProduct(ya)));
  }

  double scale() const { return std::max(1.0, masked(sx_).sum()); }
  double total_count() const { return masked(sx_).sum(); }

  /// Coordinates whose covariate vanishes wherever the likelihood has weight.
  std::vector<bool> inert() const {
    std::vector<bool> out(y_.size());
    for (std::size_t a = 0; a < y_.size(); ++a)
      out[a] = effective(sums(y_[a].cwiseAbs2())).sum() == 0.0;
    return out;
  }

  /// Largest mean square covariate over the weighted pairs.
  double covariate_scale() const {
    double s = 0.0;
    const double w = effective(sums(Eigen::MatrixXd::Ones(left_.rows(), left_.rows()))).sum();
    if (w <= 0.0) return 1.0;
    for (const auto& ya : y_) s = std::max(s, effective(sums(ya.cwiseAbs2())).sum() / w);
    return std::max(s, 1e-300);
  }

  State evaluate(const Eigen::VectorXd& beta, bool derivatives) const {
    const int p = static_cast<int>(y_.size());
    State st;
    Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(left_.rows(), left_.rows());
    for (int a = 0; a < p; ++a) eta += beta(a) * y_[a];
    if (eta.cwiseAbs().maxCoeff() > 700.0) {
      st.bounded = false;
      return st;
    }
    Eigen::MatrixXd e = eta.array().exp().matrix();
    e.diagonal().setZero();
    st.m0 = sums(e);
    st.lambda = Eigen::MatrixXd::Zero(sx_.rows(), sx_.cols());
    double obj = 0.0;
    for (Eigen::Index b = 0; b < sx_.size(); ++b) {
      if (!active_(b) || sx_(b) <= 0.0) continue;
      st.lambda(b) = sx_(b) / st.m0(b);
      obj += sx_(b) * (std::log(st.lambda(b)) - 1.0);
    }
    for (int a = 0; a < p; ++a) obj += beta(a) * masked(sxy_[a]).sum();
    st.objective = obj;
    if (!derivatives) return st;

    std::vector<Eigen::MatrixXd> m1(p);
    for (int a = 0; a < p; ++a) m1[a] = sums(e.cwiseProduct(y_[a]));
    st.gradient.resize(p);
    st.neg_hessian.resize(p, p);
    for (int a = 0; a < p; ++a) {
      st.gradient(a) = masked(sxy_[a] - st.lambda.cwiseProduct(m1[a])).sum();
      for (int c = a; c < p; ++c) {
        const Eigen::MatrixXd m2 = sums(e.cwiseProduct(y_[a]).cwiseProduct(y_[c]));
        double h = 0.0;
        for (Eigen::Index b = 0; b < sx_.size(); ++b) {
          if (!active_(b) || sx_(b) <= 0.0) continue;
          h += st.lambda(b) * (m2(b) - m1[a](b) * m1[c](b) / st.m0(b));
        }
        st.neg_hessian(a, c) = st.neg_hessian(c, a) = h;
      }
    }
    return st;
  }

  /// Gradient of the unprofiled likelihood in log lambda, at the profiled rates.
  double rate_gradient_norm(const State& st) const {
    return masked(sx_ - st.lambda.cwiseProduct(st.m0)).cwiseAbs().maxCoeff();
  }

  double loglik(const State& st, const Eigen::VectorXd& beta) const {
    double ll = 0.0;
    for (Eigen::Index b = 0; b < sx_.size(); ++b) {
      if (!active_(b)) continue;
      ll += sx_(b) * safe_log(st.lambda(b)) * (sx_(b) > 0.0) - st.lambda(b) * st.m0(b);
    }
    for (std::size_t a = 0; a < y_.size(); ++a) ll += beta(a) * masked(sxy_[a]).sum();
    return ll;
  }

  const Eigen::MatrixXd& sx() const { return sx_; }

 private:
  Eigen::MatrixXd sums(const Eigen::MatrixXd& m) const { return left_.transpose() * m * right_; }
  Eigen::MatrixXd masked(const Eigen::MatrixXd& m) const {
    return active_.select(m, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  }
  Eigen::MatrixXd effective(const Eigen::MatrixXd& m) const {
    return (active_ && (sx_.array() > 0.0)).select(m, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  }

  const std::vector<Eigen::MatrixXd>& y_;
  const Eigen::MatrixXd& left_;
  const Eigen::MatrixXd& right_;
  BoolArray active_;
  Eigen::MatrixXd sx_;
  std::vector<Eigen::MatrixXd> sxy_;
};

struct ProfiledFit {
  Eigen::VectorXd beta;
  ProfiledPoisson::State state;
  int iterations = 0;
  double gradient_norm = 0.0;
};

ProfiledFit newton_profiled(const ProfiledPoisson& problem, Eigen::VectorXd beta,
                            const PoissonRegressionOptions& options, const std::string& where) {
  ProfiledFit fit;
  const std::vector<bool> inert = problem.inert();
  std::vector<int> free;
  for (std::size_t a = 0; a < inert.size(); ++a) {
    if (inert[a]) beta(a) = 0.0;
    else free.push_back(static_cast<int>(a));
  }
  if (problem.total_count() <= 0.0) free.clear();
  const int k = static_cast<int>(free.size());
  auto sub_gradient = [&](const ProfiledPoisson::State& st) {
    Eigen::VectorXd g(k);
    for (int a = 0; a < k; ++a) g(a) = st.gradient(free[a]);
    return g;
  };
  auto sub_hessian = [&](const ProfiledPoisson::State& st) {
    Eigen::MatrixXd h(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) h(a, b) = st.neg_hessian(free[a], free[b]);
    return h;
  };

  ProfiledPoisson::State st = problem.evaluate(beta, true);
  if (!st.bounded) {
    beta.setZero();
    st = problem.evaluate(beta, true);
  }
  const double gtol = 1e-10 * problem.scale();
  int small_steps = 0;
  int it = 0;
  bool stalled = false;
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd g = sub_gradient(st);
    if (k == 0 || g.cwiseAbs().maxCoeff() <= gtol) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub_hessian(st));
    if (!well_conditioned(ldlt, 1e-14))
      throw NumericalError("singular covariate design in Poisson regression" + where);
    Eigen::VectorXd step = Eigen::VectorXd::Zero(beta.size());
    const Eigen::VectorXd d = ldlt.solve(g);
    for (int a = 0; a < k; ++a) step(free[a]) = d(a);

    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const ProfiledPoisson::State cand = problem.evaluate(beta + t * step, false);
      if (cand.bounded && cand.objective >= st.objective) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      stalled = true;
      break;
    }
    const double rel = (t * step).cwiseAbs().maxCoeff() / (1.0 + beta.cwiseAbs().maxCoeff());
    beta += t * step;
    st = problem.evaluate(beta, true);
    if (!st.bounded) throw NumericalError("unbounded likelihood in Poisson regression" + where);
    if (rel < options.tolerance && ++small_steps >= 2) {
      ++it;
      break;
    }
  }
  const double gnorm = k == 0 ? 0.0 : sub_gradient(st).cwiseAbs().maxCoeff();
  if (gnorm > 1e-6 * problem.scale()) {
    if (stalled) throw NumericalError("Poisson regression cannot improve the likelihood" + where);
    throw NumericalError("Poisson regression did not converge in " +
                         std::to_string(options.max_iterations) + " iterations" + where);
  }
  if (k > 0) {
    // Separation: the likelihood keeps increasing along a direction whose
    // curvature has collapsed.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub_hessian(st));
    if (eig.eigenvalues().minCoeff() < 1e-7 * problem.scale() * problem.covariate_scale())
      throw NumericalError("unbounded likelihood (separation) or covariate collinear with the block rates" + where);
  }
  fit.beta = beta;
  fit.iterations = it;
  fit.gradient_norm = std::max(problem.rate_gradient_norm(st), gnorm);
  fit.state = std::move(st);
  return fit;
}

BoolArray degenerate_blocks(const Eigen::MatrixXd& weights) {
  return weights.array() < kDegenerateWeight * weights.sum();
}

}  // namespace

PoissonRegressionFit poisson_regression_mle(const ValuedGraph& graph, const EdgeCovariates& cov,
                                            const Eigen::MatrixXd& tau, RegressionMode mode,
                                            const BlockParams* warm_start,
                                            const PoissonRegressionOptions& options) {
  const int n = graph.size();
  const int Q = static_cast<int>(tau.cols());
  const int p = cov.dim();
  if (tau.rows() != n) throw DimensionError("tau has the wrong number of rows");
  if (cov.size() != n) throw DimensionError("covariates are bound to a different graph");
  if (graph.kind() != ValueKind::Count) throw InputError("Poisson regression needs count values");
  if (warm_start && warm_start->num_groups() != Q) warm_start = nullptr;

  const Eigen::MatrixXd& x = graph.values();
  const Eigen::MatrixXd lg = zero_diagonal(x.unaryExpr([](double v) { return std::lgamma(v + 1.0); }));
  const Eigen::MatrixXd weights = block_weights(tau);

  PoissonRegressionFit out;
  out.degenerate = degenerate_blocks(weights);
  out.lambda = Eigen::MatrixXd::Zero(Q, Q);
  const double lgamma_total = (block_sums(tau, lg).array() * (!out.degenerate).cast<double>()).sum();

  if (mode == RegressionMode::Homogeneous) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    if (warm_start && warm_start->shared.size() == p) beta = warm_start->shared;
    const ProfiledPoisson problem(x, cov.components(), tau, tau, !out.degenerate);
    ProfiledFit fit = newton_profiled(problem, beta, options, "");
    out.beta = fit.beta;
    out.lambda = fit.state.lambda;
    out.loglik = problem.loglik(fit.state, fit.beta) - lgamma_total;
    out.gradient_norm = fit.gradient_norm;
    out.iterations = fit.iterations;
  } else {
    out.block_beta.assign(p, Eigen::MatrixXd::Zero(Q, Q));
    out.loglik = -lgamma_total;
    for (int q = 0; q < Q; ++q) {
      for (int l = graph.directed() ? 0 : q; l < Q; ++l) {
        if (out.degenerate(q, l)) continue;
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        if (warm_start)
          for (int a = 0; a < p; ++a) beta(a) = warm_start->components[1 + a](q, l);
        const Eigen::MatrixXd left = tau.col(q), right = tau.col(l);
        const ProfiledPoisson problem(x, cov.components(), left, right,
                                      BoolArray::Constant(1, 1, true));
        ProfiledFit fit = newton_profiled(problem, beta, options, " in block " + block_name(q, l));
        out.lambda(q, l) = fit.state.lambda(0, 0);
        for (int a = 0; a < p; ++a) out.block_beta[a](q, l) = fit.beta(a);
        const double ll = problem.loglik(fit.state, fit.beta);
        out.loglik += (!graph.directed() && q != l) ? 2.0 * ll : ll;
        out.gradient_norm = std::max(out.gradient_norm, fit.gradient_norm);
        out.iterations = std::max(out.iterations, fit.iterations);
      }
    }
    if (!graph.directed()) {
      mirror_upper(out.lambda);
      for (auto& b : out.block_beta) mirror_upper(b);
    }
  }
  if (!graph.directed()) {
    // Ordered-pair sums are symmetric up to rounding; make it exact.
    mirror_upper(out.lambda);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form M-steps

Eigen::MatrixXd poisson_pm_mle(const ValuedGraph& graph, const Eigen::MatrixXd& tau) {
  if (tau.rows() != graph.size()) throw DimensionError("tau has the wrong number of rows");
  Eigen::MatrixXd lambda = block_sums(tau, graph.values()).cwiseQuotient(block_weights(tau));
  if (!graph.directed()) mirror_upper(lambda);
  return lambda;
}

namespace {

void symmetrize(const FamilySpec& spec, const ValuedGraph& graph, BlockParams& out) {
  const int Q = out.num_groups();
  switch (spec.kind) {
    case FamilyKind::Multinomial: {
      const auto& mirror = graph.label_mirror();
      std::vector<Eigen::MatrixXd> src = out.components;
      for (int k = 0; k < spec.num_labels; ++k) {
        const int mk = mirror.empty() ? k : mirror[k] - 1;
        for (int q = 0; q < Q; ++q) {
          out.components[k](q, q) = 0.5 * (src[k](q, q) + src[mk](q, q));
          for (int l = 0; l < q; ++l) out.components[k](q, l) = src[mk](l, q);
        }
      }
      break;
    }
    case FamilyKind::BivariateGaussian: {
      auto& c = out.components;
      for (int q = 0; q < Q; ++q) {
        const double m = 0.5 * (c[0](q, q) + c[1](q, q));
        const double s = 0.5 * (c[2](q, q) + c[4](q, q));
        c[0](q, q) = c[1](q, q) = m;
        c[2](q, q) = c[4](q, q) = s;
        for (int l = 0; l < q; ++l) {
          c[0](q, l) = c[1](l, q);
          c[1](q, l) = c[0](l, q);
          c[2](q, l) = c[4](l, q);
          c[4](q, l) = c[2](l, q);
          c[3](q, l) = c[3](l, q);
        }
      }
      break;
    }
    default:
      for (auto& c : out.components) mirror_upper(c);
      break;
  }
}

/// Closed forms from ordered-pair block sums; degenerate blocks hold garbage
/// and are overwritten by the caller.
BlockParams closed_form(const FamilySpec& spec, const ValuedGraph& graph, const EdgeCovariates* cov,
                        const Eigen::MatrixXd& tau, const Eigen::MatrixXd& w,
                        const BoolArray& degenerate, const BlockParams* previous) {
  const int Q = static_cast<int>(tau.cols());
  const Eigen::MatrixXd& x = graph.values();
  const double npairs = static_cast<double>(graph.size()) * (graph.size() - 1);
  const double center = x.sum() / npairs;
  const double spread = zero_diagonal(x.array() - center).squaredNorm() / npairs;
  const double vfloor = kMinVariance * (spread > 0.0 ? spread : 1.0);
  BlockParams out = make_params(spec, Q);
  auto S = [&](const Eigen::MatrixXd& m) { return block_sums(tau, m); };

  switch (spec.kind) {
    case FamilyKind::PoissonPM:
      out.components[0] = S(x).cwiseQuotient(w);
      break;
    case FamilyKind::Bernoulli:
      out.components[0] = S(x).cwiseQuotient(w).cwiseMax(0.0).cwiseMin(1.0);
      break;
    case FamilyKind::Multinomial:
      for (int k = 1; k <= spec.num_labels; ++k) {
        const Eigen::MatrixXd ind = zero_diagonal((x.array() == k).cast<double>().matrix());
        out.components[k - 1] = S(ind).cwiseQuotient(w).cwiseMax(0.0).cwiseMin(1.0);
      }
      break;
    case FamilyKind::Gaussian: {
      const Eigen::MatrixXd xc = zero_diagonal(x.array() - center);
      const Eigen::ArrayXXd m1 = S(xc).cwiseQuotient(w).array();
      const Eigen::ArrayXXd m2 = S(xc.cwiseAbs2()).cwiseQuotient(w).array();
      out.components[0] = (m1 + center).matrix();
      out.components[1] = (m2 - m1.square()).max(vfloor).matrix();
      break;
    }
    case FamilyKind::BivariateGaussian: {
      const Eigen::MatrixXd x1 = zero_diagonal(x.array() - center);
      const Eigen::MatrixXd x2 = x1.transpose();
      const Eigen::ArrayXXd m1 = S(x1).cwiseQuotient(w).array();
      const Eigen::ArrayXXd m2 = S(x2).cwiseQuotient(w).array();
      out.components[0] = (m1 + center).matrix();
      out.components[1] = (m2 + center).matrix();
      out.components[2] = (S(x1.cwiseAbs2()).cwiseQuotient(w).array() - m1.square()).matrix();
      out.components[3] = (S(x1.cwiseProduct(x2)).cwiseQuotient(w).array() - m1 * m2).matrix();
      out.components[4] = (S(x2.cwiseAbs2()).cwiseQuotient(w).array() - m2.square()).matrix();
      break;
    }
    case FamilyKind::PoissonPRMH:
    case FamilyKind::PoissonPRMI: {
      const RegressionMode mode = spec.kind == FamilyKind::PoissonPRMH
                                      ? RegressionMode::Homogeneous
                                      : RegressionMode::Inhomogeneous;
      PoissonRegressionFit fit = poisson_regression_mle(graph, *cov, tau, mode, previous);
      out.components[0] = fit.lambda;
      if (mode == RegressionMode::Homogeneous) {
        out.shared = fit.beta;
      } else {
        for (int a = 0; a < spec.covariate_dim; ++a) out.components[1 + a] = fit.block_beta[a];
      }
      break;
    }
    case FamilyKind::LinearRegression: {
      const int p = spec.covariate_dim;
      const Eigen::MatrixXd xx = S(x.cwiseAbs2());
      std::vector<Eigen::MatrixXd> xy(p);
      std::vector<std::vector<Eigen::MatrixXd>> yy(p, std::vector<Eigen::MatrixXd>(p));
      for (int a = 0; a < p; ++a) {
        xy[a] = S(x.cwiseProduct(cov->component(a)));
        for (int b = a; b < p; ++b) yy[a][b] = yy[b][a] = S(cov->component(a).cwiseProduct(cov->component(b)));
      }
      for (int q = 0; q < Q; ++q) {
        for (int l = 0; l < Q; ++l) {
          if (degenerate(q, l)) continue;
          Eigen::MatrixXd gram(p, p);
          Eigen::VectorXd rhs(p);
          for (int a = 0; a < p; ++a) {
            rhs(a) = xy[a](q, l);
            for (int b = 0; b < p; ++b) gram(a, b) = yy[a][b](q, l);
          }
          Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
          if (!well_conditioned(ldlt, 1e-12))
            throw NumericalError("singular regression design in block " + block_name(q, l));
          const Eigen::VectorXd beta = ldlt.solve(rhs);
          for (int a = 0; a < p; ++a) out.components[a](q, l) = beta(a);
          const double rss = xx(q, l) - 2.0 * beta.dot(rhs) + beta.dot(gram * beta);
          out.components[p](q, l) = std::max(rss / w(q, l), vfloor);
        }
      }
      break;
    }
    case FamilyKind::SimpleRegression: {
      const Eigen::MatrixXd& y = cov->component(0);
      const double ycenter = y.sum() / npairs;
      const Eigen::MatrixXd xc = zero_diagonal(x.array() - center);
      const Eigen::MatrixXd yc = zero_diagonal(y.array() - ycenter);
      const Eigen::ArrayXXd sx = S(xc).array(), sy = S(yc).array();
      const Eigen::ArrayXXd sxy = S(xc.cwiseProduct(yc)).array(), syy = S(yc.cwiseAbs2()).array();
      const Eigen::ArrayXXd wa = w.array();
      const Eigen::ArrayXXd keep = (!degenerate).cast<double>();
      const double cxy = (keep * (sxy - sx * sy / wa)).sum();
      const double cyy = (keep * (syy - sy.square() / wa)).sum();
      if (!(cyy > 1e-12 * std::max(1.0, (keep * syy).sum())))
        throw NumericalError("singular regression design: covariate has no within-block variance");
      const double b = cxy / cyy;
      out.components[0] = (center + sx / wa - b * (ycenter + sy / wa)).matrix();
      const Eigen::MatrixXd r = zero_diagonal(xc - b * yc);
      const Eigen::ArrayXXd sr = S(r).array(), srr = S(r.cwiseAbs2()).array();
      const double s2 = (keep * (srr - sr.square() / wa)).sum() / (keep * wa).sum();
      out.shared(0) = b;
      out.shared(1) = std::max(s2, vfloor);
      break;
    }
  }
  return out;
}

}  // namespace

BlockParams weighted_mle(const FamilySpec& spec, const ValuedGraph& graph,
                         const EdgeCovariates* cov, const Eigen::MatrixXd& tau,
                         const BlockParams* previous) {
  validate_data(spec, graph, cov);
  if (tau.rows() != graph.size()) throw DimensionError("tau has the wrong number of rows");
  if ((tau.array() < 0.0).any()) throw InputError("weights must be nonnegative");
  const int Q = static_cast<int>(tau.cols());
  if (previous && (previous->num_groups() != Q ||
                   static_cast<int>(previous->components.size()) != spec.num_components()))
    previous = nullptr;

  const Eigen::MatrixXd w = block_weights(tau);
  const BoolArray degenerate = degenerate_blocks(w);
  BlockParams out = closed_form(spec, graph, cov, tau, w, degenerate, previous);
  out.degenerate = degenerate;

  if (degenerate.any()) {
    BlockParams fallback;
    if (previous) {
      fallback = *previous;
    } else {
      const BlockParams pooled =
          weighted_mle(spec, graph, cov, Eigen::MatrixXd::Ones(graph.size(), 1), nullptr);
      fallback = make_params(spec, Q);
      for (std::size_t c = 0; c < fallback.components.size(); ++c)
        fallback.components[c].setConstant(pooled.components[c](0, 0));
    }
    for (std::size_t c = 0; c < out.components.size(); ++c)
      out.components[c] = degenerate.select(fallback.components[c], out.components[c]);
  }
  if (!graph.directed()) symmetrize(spec, graph, out);
  validate_params(spec, out);
  return out;
}

// ---------------------------------------------------------------------------
// Exponential families in natural form

NaturalFamily poisson_natural() {
  return {[](double x) { return Eigen::VectorXd::Constant(1, x); },
          [](const Eigen::VectorXd& m) { return Eigen::VectorXd(m.array().log()); },
          [](const Eigen::VectorXd& m) { return m(0) > 0.0; }};
}

NaturalFamily bernoulli_natural() {
  return {[](double x) { return Eigen::VectorXd::Constant(1, x); },
          [](const Eigen::VectorXd& m) {
            return Eigen::VectorXd::Constant(1, std::log(m(0) / (1.0 - m(0))));
          },
          [](const Eigen::VectorXd& m) { return m(0) > 0.0 && m(0) < 1.0; }};
}

NaturalFamily gaussian_natural() {
  return {[](double x) {
            Eigen::VectorXd v(2);
            v << x, x * x;
            return v;
          },
          [](const Eigen::VectorXd& m) {
            const double s2 = m(1) - m(0) * m(0);
            Eigen::VectorXd theta(2);
            theta << m(0) / s2, -0.5 / s2;
            return theta;
          },
          [](const Eigen::VectorXd& m) { return m(1) - m(0) * m(0) > 0.0; }};
}

Eigen::VectorXd expfam_mle(const NaturalFamily& family, const Eigen::MatrixXd& weights,
                           const ValuedGraph& graph) {
  const int n = graph.size();
  if (weights.rows() != n || weights.cols() != n) throw DimensionError("weights must be n x n");
  double total = 0.0;
  Eigen::VectorXd acc;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      const double w = weights(i, j);
      if (w < 0.0) throw InputError("weights must be nonnegative");
      if (w == 0.0) continue;
      const Eigen::VectorXd psi = family.sufficient_statistic(graph(i, j));
      if (acc.size() == 0) acc = Eigen::VectorXd::Zero(psi.size());
      acc += w * psi;
      total += w;
    }
  }
  if (total <= 0.0) throw NumericalError("degenerate block: zero total weight");
  const Eigen::VectorXd mean = acc / total;
  if (!family.in_range(mean))
    throw NumericalError("degenerate block: weighted mean outside the range of grad A");
  return family.inverse_mean_map(mean);
}

long long param_count(const FamilySpec& spec, int Q, bool directed) {
  const long long q = Q;
  const long long sym = q * (q + 1) / 2;
  const long long blocks = directed ? q * q : sym;
  const long long p = spec.covariate_dim;
  switch (spec.kind) {
    case FamilyKind::Bernoulli:
    case FamilyKind::PoissonPM:
      return blocks;
    case FamilyKind::Multinomial:
      return (spec.num_labels - 1) * blocks;
    case FamilyKind::Gaussian:
      return 2 * blocks;
    case FamilyKind::BivariateGaussian:
      return 5 * sym;
    case FamilyKind::PoissonPRMI:
      return (1 + p) * blocks;
    case FamilyKind::PoissonPRMH:
      return p + blocks;
    case FamilyKind::LinearRegression:
      return (p + 1) * blocks;
    case FamilyKind::SimpleRegression:
      return blocks + 2;
  }
  return 0;
}

}  // namespace blockfit
