#include <doctest.h>

#include <random>

#include "blockfit/graph.hpp"

using namespace blockfit;

TEST_CASE("directed count graph keeps both orientations") {
  const std::vector<EdgeEntry> e{{0, 1, 3}, {1, 0, 0}};
  const ValuedGraph g = build_graph(2, true, e, ValueKind::Count);
  CHECK(g.size() == 2);
  CHECK(g(0, 1) == 3);
  CHECK(g(1, 0) == 0);
  CHECK(g.num_pairs() == 2);
}

TEST_CASE("undirected graph reads symmetrically") {
  const std::vector<EdgeEntry> e{{0, 1, 2}, {0, 2, 5}, {1, 2, 0}};
  const ValuedGraph g = build_graph(3, false, e, ValueKind::Count);
  CHECK(g(1, 0) == 2);
  CHECK(g(2, 0) == 5);
  CHECK(g.num_pairs() == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g(i, j) == g(j, i));
}

TEST_CASE("builder errors") {
  SUBCASE("self-loop") {
    const std::vector<EdgeEntry> e{{0, 0, 1}};
    CHECK_THROWS_AS(build_graph(2, true, e, ValueKind::Count), InputError);
  }
  SUBCASE("out of range") {
    const std::vector<EdgeEntry> e{{0, 2, 1}, {1, 0, 1}};
    CHECK_THROWS_AS(build_graph(2, true, e, ValueKind::Count), InputError);
  }
  SUBCASE("conflicting undirected duplicate") {
    const std::vector<EdgeEntry> e{{0, 1, 1}, {1, 0, 2}};
    CHECK_THROWS_AS(build_graph(2, false, e, ValueKind::Count), InputError);
  }
  SUBCASE("consistent duplicate is fine") {
    const std::vector<EdgeEntry> e{{0, 1, 1}, {1, 0, 1}};
    CHECK_NOTHROW(build_graph(2, false, e, ValueKind::Count));
  }
  SUBCASE("non-finite value") {
    const std::vector<EdgeEntry> e{{0, 1, std::nan("")}};
    CHECK_THROWS_AS(build_graph(2, false, e, ValueKind::Real), InputError);
  }
  SUBCASE("missing pair without fill") {
    const std::vector<EdgeEntry> e{{0, 1, 1}};
    CHECK_THROWS_AS(build_graph(3, false, e, ValueKind::Count), InputError);
  }
  SUBCASE("fill densifies") {
    const std::vector<EdgeEntry> e{{0, 1, 1}};
    BuildOptions o;
    o.fill = 0.0;
    const ValuedGraph g = build_graph(3, false, e, ValueKind::Count, o);
    CHECK(g(2, 1) == 0);
    CHECK(g(1, 0) == 1);
  }
  SUBCASE("negative or fractional counts") {
    const std::vector<EdgeEntry> neg{{0, 1, -1}};
    const std::vector<EdgeEntry> frac{{0, 1, 0.5}};
    CHECK_THROWS_AS(build_graph(2, false, neg, ValueKind::Count), InputError);
    CHECK_THROWS_AS(build_graph(2, false, frac, ValueKind::Count), InputError);
  }
  SUBCASE("labels outside 1..m") {
    const std::vector<EdgeEntry> e{{0, 1, 3}};
    BuildOptions o;
    o.num_labels = 2;
    CHECK_THROWS_AS(build_graph(2, false, e, ValueKind::Label, o), InputError);
    const std::vector<EdgeEntry> z{{0, 1, 0}};
    CHECK_THROWS_AS(build_graph(2, false, z, ValueKind::Label), InputError);
  }
  SUBCASE("single node") {
    CHECK_THROWS(build_graph(1, false, {}, ValueKind::Count));
  }
}

TEST_CASE("round trip of entries") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> v(0, 9);
  for (bool directed : {true, false}) {
    std::vector<EdgeEntry> e;
    const int n = 7;
    for (int i = 0; i < n; ++i)
      for (int j = directed ? 0 : i + 1; j < n; ++j)
        if (i != j) e.push_back({i, j, static_cast<double>(v(rng))});
    const ValuedGraph g = build_graph(n, directed, e, ValueKind::Count);
    const auto back = g.entries();
    REQUIRE(back.size() == e.size());
    for (std::size_t k = 0; k < e.size(); ++k) {
      CHECK(back[k].i == e[k].i);
      CHECK(back[k].j == e[k].j);
      CHECK(back[k].first == e[k].first);
    }
    CHECK(static_cast<long long>(back.size()) == (directed ? n * (n - 1) : n * (n - 1) / 2));
  }
}

TEST_CASE("paired values live on undirected pairs") {
  const std::vector<EdgeEntry> e{{0, 1, 1.5, -2.0}, {0, 2, 0.0, 1.0}, {2, 1, 3.0, 4.0}};
  const ValuedGraph g = build_graph(3, false, e, ValueKind::PairedReal);
  CHECK(g(0, 1) == 1.5);
  CHECK(g(1, 0) == -2.0);
  CHECK(g(2, 1) == 3.0);
  CHECK(g(1, 2) == 4.0);
}

TEST_CASE("dyad encoding") {
  Eigen::MatrixXd x(3, 3);
  x << 0, 1, 0,
       0, 0, 1,
       1, 1, 0;
  const ValuedGraph d = graph_from_matrix(x, true, ValueKind::Count);
  const ValuedGraph g = encode_dyads(d);
  CHECK_FALSE(g.directed());
  CHECK(g.num_labels() == 4);
  // (X_01, X_10) = (1, 0) -> 2 read from 0, (0, 1) -> 3 read from 1
  CHECK(g(0, 1) == 2);
  CHECK(g(1, 0) == 3);
  // (X_12, X_21) = (1, 1) -> 4 both ways
  CHECK(g(1, 2) == 4);
  CHECK(g(2, 1) == 4);
  CHECK(g(0, 2) == 3);
  CHECK(g.label_mirror() == std::vector<int>{1, 3, 2, 4});
}

TEST_CASE("covariates") {
  const std::vector<EdgeEntry> e{{0, 1, 1}, {0, 2, 0}, {1, 2, 2}};
  const ValuedGraph g = build_graph(3, false, e, ValueKind::Count);
  SUBCASE("complete p = 1") {
    const std::vector<CovariateEntry> c{{0, 1, {1.0}}, {0, 2, {2.0}}, {2, 1, {3.0}}};
    const EdgeCovariates cov = attach_covariates(g, c);
    CHECK(cov.dim() == 1);
    CHECK(cov.at(1, 2)(0) == 3.0);
    CHECK(cov.at(2, 1)(0) == 3.0);
    CHECK(cov.mean()(0) == doctest::Approx(2.0));
  }
  SUBCASE("missing pair") {
    const std::vector<CovariateEntry> c{{0, 1, {1.0}}, {0, 2, {2.0}}};
    CHECK_THROWS_AS(attach_covariates(g, c), InputError);
  }
  SUBCASE("mixed dimensions") {
    const std::vector<CovariateEntry> c{{0, 1, {1.0}}, {0, 2, {2.0, 1.0}}, {1, 2, {3.0}}};
    CHECK_THROWS(attach_covariates(g, c));
  }
  SUBCASE("non-finite") {
    const std::vector<CovariateEntry> c{
        {0, 1, {1.0}}, {0, 2, {std::numeric_limits<double>::infinity()}}, {1, 2, {3.0}}};
    CHECK_THROWS_AS(attach_covariates(g, c), InputError);
  }
}
