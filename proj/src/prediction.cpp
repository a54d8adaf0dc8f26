#include "blockfit/prediction.hpp"

#include <cmath>

#include "blockfit/error.hpp"

namespace blockfit {

Eigen::MatrixXd predict_edges(const FitResult& fit, const ValuedGraph& graph,
                              const EdgeCovariates* cov) {
  const FamilySpec& spec = fit.family;
  const BlockParams& theta = fit.params.theta;
  const Eigen::MatrixXd& tau = fit.tau;
  const int Q = fit.num_groups();
  const int n = graph.size();
  validate_data(spec, graph, cov);
  if (tau.rows() != n) throw DimensionError("fit was made on a graph with a different node count");
  auto eta = [&](auto&& coef) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < spec.covariate_dim; ++a) e += coef(a) * cov->component(a);
    return e;
  };

  Eigen::MatrixXd xhat;
  switch (spec.kind) {
    case FamilyKind::PoissonPRMH:
      xhat = (tau * theta.components[0] * tau.transpose())
                 .cwiseProduct(eta([&](int a) { return theta.shared(a); }).array().exp().matrix());
      break;
    case FamilyKind::PoissonPRMI:
      xhat = Eigen::MatrixXd::Zero(n, n);
      for (int q = 0; q < Q; ++q)
        for (int l = 0; l < Q; ++l)
          xhat += (theta.components[0](q, l) * tau.col(q) * tau.col(l).transpose())
                      .cwiseProduct(eta([&](int a) { return theta.components[1 + a](q, l); })
                                        .array()
                                        .exp()
                                        .matrix());
      break;
    case FamilyKind::LinearRegression:
      xhat = Eigen::MatrixXd::Zero(n, n);
      for (int a = 0; a < spec.covariate_dim; ++a)
        xhat += (tau * theta.components[a] * tau.transpose()).cwiseProduct(cov->component(a));
      break;
    case FamilyKind::SimpleRegression:
      xhat = tau * theta.components[0] * tau.transpose() + theta.shared(0) * cov->component(0);
      break;
    default: {
      Eigen::MatrixXd mean(Q, Q);
      for (int q = 0; q < Q; ++q)
        for (int l = 0; l < Q; ++l) mean(q, l) = edge_mean(spec, theta, q, l);
      xhat = tau * mean * tau.transpose();
      break;
    }
  }
  xhat.diagonal().setZero();
  return xhat;
}

namespace {

// sum over j != i in index order
Eigen::VectorXd off_diagonal_row_sums(const Eigen::MatrixXd& m) {
  Eigen::VectorXd k = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (j != i) k(i) += m(i, j);
  return k;
}

}  // namespace

Eigen::VectorXd predict_degrees(const FitResult& fit, const ValuedGraph& graph,
                                const EdgeCovariates* cov) {
  return off_diagonal_row_sums(predict_edges(fit, graph, cov));
}

Eigen::VectorXd weighted_degrees(const ValuedGraph& graph) { return off_diagonal_row_sums(graph.values()); }

double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size()) throw DimensionError("r_squared needs equal lengths");
  if (observed.size() < 2) throw InputError("r_squared needs at least two points");
  const Eigen::Map<const Eigen::VectorXd> y(observed.data(), static_cast<Eigen::Index>(observed.size()));
  const Eigen::Map<const Eigen::VectorXd> f(predicted.data(), static_cast<Eigen::Index>(predicted.size()));
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (!(ss_tot > 0.0)) throw InputError("observed values have zero variance");
  return 1.0 - (y - f).squaredNorm() / ss_tot;
}

PredictionReport predict(const FitResult& fit, const ValuedGraph& graph, const EdgeCovariates* cov) {
  PredictionReport r;
  const Eigen::MatrixXd xhat = predict_edges(fit, graph, cov);
  const int n = graph.size();
  r.degree = weighted_degrees(graph);
  r.degree_hat = off_diagonal_row_sums(xhat);
  for (int i = 0; i < n; ++i)
    for (int j = graph.directed() ? 0 : i + 1; j < n; ++j)
      if (i != j) r.pairs.emplace_back(i, j);
  r.edge.resize(static_cast<Eigen::Index>(r.pairs.size()));
  r.edge_hat.resize(r.edge.size());
  for (std::size_t k = 0; k < r.pairs.size(); ++k) {
    r.edge(k) = graph(r.pairs[k].first, r.pairs[k].second);
    r.edge_hat(k) = xhat(r.pairs[k].first, r.pairs[k].second);
  }
  r.r2_degree = r_squared({r.degree.data(), static_cast<std::size_t>(n)},
                          {r.degree_hat.data(), static_cast<std::size_t>(n)});
  r.r2_edge = r_squared({r.edge.data(), r.pairs.size()}, {r.edge_hat.data(), r.pairs.size()});
  return r;
}

}  // namespace blockfit
