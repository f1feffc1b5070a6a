#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

// Core spatio-temporal graph types. Everything here is immutable after
// construction and safe to share across threads.

namespace cl4st {

// Dense real array of shape (T x N x F), row-major.
struct FeatureTensor {
  std::size_t t = 0, n = 0, f = 0;
  std::vector<double> data;

  FeatureTensor() = default;
  FeatureTensor(std::size_t t_, std::size_t n_, std::size_t f_)
      : t(t_), n(n_), f(f_), data(t_ * n_ * f_, 0.0) {}
  FeatureTensor(std::size_t t_, std::size_t n_, std::size_t f_, std::vector<double> d)
      : t(t_), n(n_), f(f_), data(std::move(d)) {
    if (data.size() != t * n * f)
      throw std::invalid_argument("FeatureTensor: storage/shape mismatch");
  }

  double& at(std::size_t ti, std::size_t ni, std::size_t fi) {
    return data[(ti * n + ni) * f + fi];
  }
  double at(std::size_t ti, std::size_t ni, std::size_t fi) const {
    return data[(ti * n + ni) * f + fi];
  }
  std::size_t size() const { return data.size(); }
  bool all_finite() const;
};

struct SpatialGraph {
  std::size_t n_nodes = 0;
  std::vector<double> adjacency;                         // N x N, row-major
  std::vector<std::pair<std::size_t, std::size_t>> edge_list;  // nonzero off-diagonal

  double adj(std::size_t i, std::size_t j) const { return adjacency[i * n_nodes + j]; }

  // Rebuilds edge_list from adjacency (nonzero off-diagonal entries, row order).
  void rebuild_edges();
};

struct TemporalGraph {
  std::size_t n_steps = 0;
  std::vector<double> adjacency;  // T x T binary
  std::vector<std::pair<std::size_t, std::size_t>> edge_list;
};

struct STGSample {
  FeatureTensor x;                  // T x N x F
  FeatureTensor y;                  // T' x N x F'
  std::vector<int> tod_index;       // length T, in [0, 288)
  std::vector<int> dow_index;       // length T, in [0, 7)
};

struct ModelConfig {
  std::size_t d = 16;        // embed dim
  std::size_t d_s = 32;      // spatial dim
  std::size_t d_t = 32;      // temporal dim
  std::size_t d_z = 16;      // meta latent dim
  std::size_t d_pos = 8;     // positional embedding dim D
  std::size_t d_proj = 16;   // projection head output dim
  std::size_t k_spatial = 4;
  std::size_t k_temporal = 1;
  std::size_t n_gat_layers = 2;
  double gin_eps1 = 0.0;
  double gin_eps2 = 0.0;
  std::size_t gin_d1 = 8;        // GIN embedding width d1
  std::size_t gin_hidden = 16;   // hidden width of generated MLPs
  std::size_t phi_hidden = 32;   // hidden width of the latent-inference MLP
  std::size_t psi_hidden = 32;   // hidden width of the parameter-emitting MLP
  std::size_t dec_hidden = 64;   // decoder MLP hidden width
  std::size_t proj_hidden = 32;  // projection head hidden width
  double tau_gumbel = 1.0;
  double leaky_slope = 0.2;
  bool average_last_gat = false;  // average heads in the final GAT layer
  bool share_theta3_latent = true;
  bool decoder_uses_last_step = true;  // tod/dow index taken from last input step

  void validate() const;
};

inline constexpr int kTodSlots = 288;
inline constexpr int kDowSlots = 7;

// adjacency[i][j] = exp(-d(i,j)^2 / sigma^2) if >= kappa and i != j, else 0.
SpatialGraph build_sensor_graph(const std::vector<double>& pairwise_distances,
                                std::size_t n, double sigma, double kappa);

enum class Neighborhood { four, eight };

SpatialGraph build_grid_graph(std::size_t rows, std::size_t cols, Neighborhood nb);

TemporalGraph build_temporal_graph(std::size_t t);

// Default sigma: standard deviation of the off-diagonal distance entries.
double default_sensor_sigma(const std::vector<double>& pairwise_distances, std::size_t n);

inline constexpr double kDefaultKappa = 0.1;

}  // namespace cl4st
