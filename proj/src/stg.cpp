#include "cl4st/stg.hpp"

#include <cmath>

namespace cl4st {

bool FeatureTensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void SpatialGraph::rebuild_edges() {
  edge_list.clear();
  for (std::size_t i = 0; i < n_nodes; ++i)
    for (std::size_t j = 0; j < n_nodes; ++j)
      if (i != j && adjacency[i * n_nodes + j] > 0.0) edge_list.emplace_back(i, j);
}

void ModelConfig::validate() const {
  if (d < 1 || d_s < 1 || d_t < 1 || d_z < 1 || d_pos < 1 || d_proj < 1 ||
      k_spatial < 1 || k_temporal < 1 || n_gat_layers < 1) {
    throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
  }
  if (d_s % k_spatial != 0)
    throw std::invalid_argument("ModelConfig: d_s must be divisible by k_spatial");
  if (d_t % k_temporal != 0)
    throw std::invalid_argument("ModelConfig: d_t must be divisible by k_temporal");
  if (tau_gumbel <= 0.0)
    throw std::invalid_argument("ModelConfig: tau_gumbel must be > 0");
}

SpatialGraph build_sensor_graph(const std::vector<double>& dist, std::size_t n,
                                double sigma, double kappa) {
  if (dist.size() != n * n)
    throw std::invalid_argument("build_sensor_graph: distance matrix size mismatch");
  if (sigma <= 0.0) throw std::invalid_argument("build_sensor_graph: sigma must be > 0");
  if (kappa < 0.0) throw std::invalid_argument("build_sensor_graph: kappa must be >= 0");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dij = dist[i * n + j];
      if (dij < 0.0)
        throw std::invalid_argument("build_sensor_graph: negative distance");
      if (dij != dist[j * n + i])
        throw std::invalid_argument("build_sensor_graph: distance matrix not symmetric");
    }
    if (dist[i * n + i] != 0.0)
      throw std::invalid_argument("build_sensor_graph: nonzero diagonal distance");
  }
  SpatialGraph g;
  g.n_nodes = n;
  g.adjacency.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dij = dist[i * n + j];
      const double w = std::exp(-(dij * dij) / (sigma * sigma));
      if (w >= kappa) g.adjacency[i * n + j] = w;
    }
  }
  g.rebuild_edges();
  return g;
}

SpatialGraph build_grid_graph(std::size_t rows, std::size_t cols, Neighborhood nb) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("build_grid_graph: empty grid");
  const std::size_t n = rows * cols;
  SpatialGraph g;
  g.n_nodes = n;
  g.adjacency.assign(n * n, 0.0);
  const int dr4[] = {-1, 1, 0, 0};
  const int dc4[] = {0, 0, -1, 1};
  const int dr8[] = {-1, 1, 0, 0, -1, -1, 1, 1};
  const int dc8[] = {0, 0, -1, 1, -1, 1, -1, 1};
  const int k = nb == Neighborhood::four ? 4 : 8;
  const int* dr = nb == Neighborhood::four ? dr4 : dr8;
  const int* dc = nb == Neighborhood::four ? dc4 : dc8;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      for (int q = 0; q < k; ++q) {
        const long long rr = static_cast<long long>(r) + dr[q];
        const long long cc = static_cast<long long>(c) + dc[q];
        if (rr < 0 || cc < 0 || rr >= static_cast<long long>(rows) ||
            cc >= static_cast<long long>(cols))
          continue;
        g.adjacency[(r * cols + c) * n + (rr * cols + cc)] = 1.0;
      }
    }
  }
  g.rebuild_edges();
  return g;
}

TemporalGraph build_temporal_graph(std::size_t t) {
  if (t < 1) throw std::invalid_argument("build_temporal_graph: T must be >= 1");
  TemporalGraph g;
  g.n_steps = t;
  g.adjacency.assign(t * t, 1.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j)
      if (i != j) g.edge_list.emplace_back(i, j);
  return g;
}

double default_sensor_sigma(const std::vector<double>& dist, std::size_t n) {
  if (dist.size() != n * n || n < 2)
    throw std::invalid_argument("default_sensor_sigma: bad distance matrix");
  double mean = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        mean += dist[i * n + j];
        ++count;
      }
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        const double dd = dist[i * n + j] - mean;
        var += dd * dd;
      }
  var /= static_cast<double>(count);
  return std::sqrt(var);
}

}  // namespace cl4st
