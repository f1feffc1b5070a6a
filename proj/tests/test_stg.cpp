#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cl4st/stg.hpp"

using namespace cl4st;

TEST_CASE("feature tensor shape and indexing") {
  FeatureTensor x(2, 3, 4);
  CHECK(x.size() == 24);
  x.at(1, 2, 3) = 7.0;
  CHECK(x.data[(1 * 3 + 2) * 4 + 3] == 7.0);
  CHECK(x.all_finite());
  x.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(x.all_finite());
  CHECK_THROWS_AS(FeatureTensor(2, 2, 2, std::vector<double>(7, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("sensor graph thresholds gaussian kernel weights") {
  // Three sensors: d(0,1) = 1 keeps weight e^-1, the rest fall below kappa.
  std::vector<double> dist = {0, 1, 2,  //
                              1, 0, 3,  //
                              2, 3, 0};
  SpatialGraph g = build_sensor_graph(dist, 3, /*sigma=*/1.0, /*kappa=*/0.1);
  CHECK(g.adj(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(g.adj(1, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(g.adj(0, 2) == 0.0);  // e^-4 < 0.1
  CHECK(g.adj(1, 2) == 0.0);  // e^-9 < 0.1
  CHECK(g.adj(0, 0) == 0.0);
  CHECK(g.edge_list.size() == 2);

  // Symmetric weights and no self loops for arbitrary inputs.
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.adj(i, i) == 0.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(g.adj(i, j) == g.adj(j, i));
  }
}

TEST_CASE("sensor graph input validation") {
  std::vector<double> bad_diag = {1, 1, 1, 0};
  CHECK_THROWS(build_sensor_graph(bad_diag, 2, 1.0, 0.1));
  std::vector<double> asym = {0, 1, 2, 0};
  CHECK_THROWS(build_sensor_graph(asym, 2, 1.0, 0.1));
  std::vector<double> ok = {0, 1, 1, 0};
  CHECK_THROWS(build_sensor_graph(ok, 2, 0.0, 0.1));
  CHECK_THROWS(build_sensor_graph(ok, 3, 1.0, 0.1));
}

TEST_CASE("default sigma is the off-diagonal distance standard deviation") {
  std::vector<double> dist = {0, 1, 2,  //
                              1, 0, 3,  //
                              2, 3, 0};
  // Off-diagonal entries {1,2,1,3,2,3}: mean 2, population variance 2/3.
  CHECK(default_sensor_sigma(dist, 3) ==
        doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("grid graph four neighborhood") {
  SpatialGraph g = build_grid_graph(3, 3, Neighborhood::four);
  CHECK(g.n_nodes == 9);
  // Center node (1,1) = index 4 touches exactly the four axis neighbors.
  CHECK(g.adj(4, 1) == 1.0);
  CHECK(g.adj(4, 3) == 1.0);
  CHECK(g.adj(4, 5) == 1.0);
  CHECK(g.adj(4, 7) == 1.0);
  CHECK(g.adj(4, 0) == 0.0);
  // Corner (0,0) has two neighbors.
  int deg0 = 0;
  for (std::size_t j = 0; j < 9; ++j) deg0 += g.adj(0, j) > 0.0 ? 1 : 0;
  CHECK(deg0 == 2);
  // 3x3 four-neighbor grid: 12 undirected edges -> 24 directed entries.
  CHECK(g.edge_list.size() == 24);
}

TEST_CASE("grid graph eight neighborhood") {
  SpatialGraph g = build_grid_graph(2, 2, Neighborhood::eight);
  // Every 2x2 cell touches the other three.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(g.adj(i, j) == (i == j ? 0.0 : 1.0));
  CHECK(g.edge_list.size() == 12);
  CHECK_THROWS(build_grid_graph(0, 3, Neighborhood::four));
}

TEST_CASE("temporal graph is complete") {
  TemporalGraph g = build_temporal_graph(4);
  CHECK(g.n_steps == 4);
  CHECK(g.edge_list.size() == 12);
  for (std::size_t i = 0; i < 16; ++i) CHECK(g.adjacency[i] == 1.0);
  CHECK_THROWS(build_temporal_graph(0));
}

TEST_CASE("model config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.d_s = 30;  // not divisible by k_spatial = 4
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.tau_gumbel = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.d = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
