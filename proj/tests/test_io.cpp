#include <doctest.h>

#include <sstream>

#include "blockfit/io.hpp"
#include "oracles.hpp"

using namespace blockfit;

namespace {

std::string message_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("edge CSV parsing") {
  std::istringstream in("i,j,value\n0,1,2\n0,2,5\n\n1,2,0\n");
  EdgeCsvOptions opt;
  const ValuedGraph g = read_edge_csv(in, opt);
  CHECK(g.size() == 3);
  CHECK_FALSE(g.directed());
  CHECK(g(1, 0) == 2.0);
  CHECK(g(2, 0) == 5.0);

  std::istringstream sparse("i,j,value\n0,1,4\n");
  opt.n = 4;
  opt.fill = 0.0;
  opt.directed = true;
  const ValuedGraph s = read_edge_csv(sparse, opt);
  CHECK(s.size() == 4);
  CHECK(s(0, 1) == 4.0);
  CHECK(s(1, 0) == 0.0);

  std::istringstream paired("i,j,v1,v2\n0,1,1.5,-2\n");
  EdgeCsvOptions popt;
  popt.kind = ValueKind::PairedReal;
  const ValuedGraph p = read_edge_csv(paired, popt);
  CHECK(p(0, 1) == 1.5);
  CHECK(p(1, 0) == -2.0);
}

TEST_CASE("edge CSV errors carry the line") {
  EdgeCsvOptions opt;
  std::istringstream bad_number("i,j,value\n0,1,2\n0,2,x\n1,2,0\n");
  CHECK(message_of([&] { read_edge_csv(bad_number, opt); }).find("line 3") != std::string::npos);
  std::istringstream bad_width("i,j,value\n0,1\n");
  CHECK(message_of([&] { read_edge_csv(bad_width, opt); }).find("line 2") != std::string::npos);
  std::istringstream bad_header("a,b,c\n0,1,2\n");
  CHECK_THROWS_AS(read_edge_csv(bad_header, opt), InputError);
  std::istringstream empty("");
  CHECK_THROWS_AS(read_edge_csv(empty, opt), InputError);
  std::istringstream loop("i,j,value\n0,0,1\n0,1,1\n");
  CHECK_THROWS_AS(read_edge_csv(loop, opt), InputError);
  std::istringstream missing("i,j,value\n0,1,1\n");
  opt.n = 3;
  CHECK_THROWS_AS(read_edge_csv(missing, opt), InputError);
  std::istringstream too_big("i,j,value\n0,5,1\n");
  opt.fill = 0.0;
  CHECK_THROWS_AS(read_edge_csv(too_big, opt), InputError);
  std::istringstream negative("i,j,value\n0,1,-1\n");
  CHECK_THROWS_AS(read_edge_csv(negative, opt), InputError);
}

TEST_CASE("covariates and labels") {
  std::istringstream edges("i,j,value\n0,1,1\n0,2,0\n1,2,3\n");
  const ValuedGraph g = read_edge_csv(edges, {});
  std::istringstream cov("i,j,y1,y2\n0,1,0.5,1\n0,2,1,2\n1,2,2,3\n");
  const EdgeCovariates c = read_covariate_csv(cov, g);
  CHECK(c.dim() == 2);
  CHECK(c.at(2, 1)(1) == 3.0);
  std::istringstream partial("i,j,y\n0,1,0.5\n");
  CHECK_THROWS_AS(read_covariate_csv(partial, g), InputError);

  std::istringstream labels("0, 1,2\n2 1\n");
  CHECK(read_labels(labels) == std::vector<int>{0, 1, 2, 2, 1});
  std::istringstream bad("0 a\n");
  CHECK_THROWS_AS(read_labels(bad), InputError);
}

TEST_CASE("fit JSON round trip reproduces predictions bit for bit") {
  std::mt19937_64 rng(1);
  const int n = 12;
  const ValuedGraph g = graph_from_matrix(oracle::random_counts(n, false, 3.0, rng), false, ValueKind::Count);
  const EdgeCovariates cov = covariates_from_matrices(g, {oracle::random_real(n, false, rng) / 3.0});
  const FamilySpec spec = parse_family("poisson-prmh", 0, 1);
  FitOptions opt;
  opt.seed = 2;
  StoredFit s;
  s.fit = fit(g, &cov, spec, 2, opt);
  s.n = n;
  s.mean_covariate = cov.mean();
  const IclBreakdown b = icl(g, &cov, s.fit);
  s.icl = IclSummary{b.icl, b.complete_loglik, b.penalty, b.param_count, EdgeCountConvention::Ordered};

  const std::string text = fit_to_json(s).dump(2);
  const StoredFit back = fit_from_json(Json::parse(text));
  CHECK(back.fit.family == spec);
  CHECK(back.fit.tau == s.fit.tau);
  CHECK(back.fit.params.alpha == s.fit.params.alpha);
  CHECK(back.fit.params.theta.shared == s.fit.params.theta.shared);
  CHECK(back.fit.bound_trajectory == s.fit.bound_trajectory);
  CHECK(back.fit.map_assignment == s.fit.map_assignment);
  CHECK(back.icl->icl == s.icl->icl);
  CHECK(back.mean_covariate == s.mean_covariate);
  CHECK(predict_edges(back.fit, g, &cov) == predict_edges(s.fit, g, &cov));
  CHECK(fit_to_json(back).dump(2) == text);
}

TEST_CASE("fit JSON validation") {
  CHECK_THROWS_AS(fit_from_json(Json::parse(R"({"family":"poisson"})")), InputError);
  const Json wrong = Json::parse(R"({"family":"poisson","directed":false,"n":2,"Q":2,"alpha":[1.0],
                                     "theta":{"lambda":[[1,1],[1,1]]},"tau":[[1,0],[0,1]]})");
  CHECK_THROWS_AS(fit_from_json(wrong), DimensionError);
  const Json negative = Json::parse(R"({"family":"poisson","directed":false,"n":2,"Q":1,"alpha":[1.0],
                                        "theta":{"lambda":[[-1]]},"tau":[[1],[1]]})");
  CHECK_THROWS_AS(fit_from_json(negative), InvalidParameter);
}

TEST_CASE("grid configuration") {
  std::istringstream kv("# grid\nn = 50, 100\na = 0.5\nlambda=2\ngamma = 0.1,0.9 # two\nreplicates = 7\nmode = selection\nseed = 3\n");
  const GridConfig c = parse_grid_config(kv);
  CHECK(c.n == std::vector<int>{50, 100});
  CHECK(c.a == std::vector<double>{0.5});
  CHECK(c.gamma == std::vector<double>{0.1, 0.9});
  CHECK(c.replicates == 7);
  CHECK(c.mode == ExperimentMode::Selection);
  CHECK(c.seed == 3u);

  std::istringstream js(R"({"n": [40], "lambda": [5.0], "directed": true, "q_max": 4})");
  const GridConfig d = parse_grid_config(js);
  CHECK(d.n == std::vector<int>{40});
  CHECK(d.directed);
  CHECK(d.q_max == 4);

  std::istringstream unknown("colour = red\n");
  CHECK_THROWS_AS(parse_grid_config(unknown), InputError);
  std::istringstream no_eq("n 50\n");
  CHECK(message_of([&] { parse_grid_config(no_eq); }).find("line 1") != std::string::npos);
  std::istringstream bad_value("replicates = 0\n");
  CHECK_THROWS_AS(parse_grid_config(bad_value), InvalidParameter);
}

TEST_CASE("report writers") {
  GridConfig c;
  c.n = {20};
  c.a = {1.0};
  c.lambda = {3.0};
  c.gamma = {0.3};
  c.replicates = 2;
  c.restarts = 1;
  c.threads = 1;
  const ExperimentReport r = run_experiment(c);
  std::ostringstream csv, summary;
  write_report_csv(csv, r);
  write_report_summary(summary, r);
  CHECK(csv.str().rfind("n,a,lambda,gamma,parameter,value\n", 0) == 0);
  CHECK(csv.str().find("rmse_alpha") != std::string::npos);
  CHECK_FALSE(summary.str().empty());

  CHECK(parse_convention(convention_name(EdgeCountConvention::Unordered)) == EdgeCountConvention::Unordered);
  CHECK_THROWS_AS(parse_convention("both"), InputError);
}
