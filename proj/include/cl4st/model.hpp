#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cl4st/stg.hpp"
#include "cl4st/tensor.hpp"

// Decoupled spatio-temporal GAT encoder, position-aware decoder, and the
// contrastive projection head.

namespace cl4st::model {

using ad::Var;

// Attention support of a graph: for every node, its neighbors plus itself.
// `entry_edge` maps each (i, j) entry to the index of (i, j) in the source
// edge list, or npos for the self entry.
struct GraphStructure {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> offsets;     // n_nodes + 1
  std::vector<std::size_t> row;         // entry -> i
  std::vector<std::size_t> col;         // entry -> j
  std::vector<std::size_t> entry_edge;  // entry -> edge index or npos
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

GraphStructure build_structure(std::size_t n_nodes,
                               const std::vector<std::pair<std::size_t, std::size_t>>& edges);

struct GatHead {
  Var w;  // d_in x d_head
  Var a;  // 2*d_head x 1
};

struct GatLayerParams {
  std::vector<GatHead> heads;
};

struct MlpParams {
  Var w1, b1, w2, b2;
};

struct EncoderDecoder {
  ModelConfig cfg;
  std::size_t t_in = 0, t_out = 0, n_nodes = 0, f_in = 0, f_out = 0;

  Var w0, b0;  // F -> d
  Var w_s, b_s;  // T*d -> d_s
  std::vector<GatLayerParams> spatial_layers;
  Var w1, b1;  // d_s -> T*d
  Var w_t, b_t;  // N*d -> d_t
  std::vector<GatLayerParams> temporal_layers;
  Var w2, b2;  // d_t -> N*d

  Var e_spatial;  // N x D
  Var e_tod;      // 288 x D
  Var e_dow;      // 7 x D

  MlpParams omega1;  // T*d -> dec_hidden (shared by H and X0 branches)
  MlpParams omega2;  // fused -> T_out*F_out
  MlpParams proj;    // d -> d_proj

  std::vector<std::pair<std::string, Var>> named_parameters() const;
  std::vector<Var> parameters() const;
};

EncoderDecoder make_model(const ModelConfig& cfg, std::size_t t_in, std::size_t t_out,
                          std::size_t n_nodes, std::size_t f_in, std::size_t f_out,
                          std::mt19937_64& rng);

// Recorded attention coefficients of one pass, for export/inspection.
struct AttentionRecord {
  // [layer][head] -> per-entry alpha values aligned with GraphStructure.
  std::vector<std::vector<std::vector<double>>> alpha;
};

Var embed_input(const Var& x_flat, const EncoderDecoder& m);  // (T*N x F) -> (T*N x d)

// One multi-head GAT layer. `edge_weights` (per source edge, aligned with
// GraphStructure::entry_edge) reweights neighbor attention after the
// softmax; self entries always weigh 1.
Var gat_layer(const Var& x, const GraphStructure& g, const GatLayerParams& layer,
              double leaky_slope, bool average_heads,
              const std::optional<Var>& edge_weights = std::nullopt,
              std::vector<std::vector<double>>* alpha_out = nullptr);

Var spatial_pass(const Var& x0, const GraphStructure& g, const EncoderDecoder& m,
                 const std::optional<Var>& edge_weights = std::nullopt,
                 AttentionRecord* record = nullptr);

Var temporal_pass(const Var& h_s, const GraphStructure& g, const EncoderDecoder& m,
                  const std::optional<Var>& edge_weights = std::nullopt,
                  AttentionRecord* record = nullptr);

Var decode(const Var& h, const Var& x0, const EncoderDecoder& m, int tod_index,
           int dow_index);  // -> (T_out*N x F_out), time-major

Var project(const Var& h, const EncoderDecoder& m);  // -> 1 x d_proj

struct EncodeResult {
  Var x0;  // T*N x d
  Var h;   // T*N x d
  AttentionRecord spatial_attn, temporal_attn;
};

// Full encoder: embedding, spatial pass, temporal pass.
EncodeResult encode(const Var& x_flat, const GraphStructure& spatial,
                    const GraphStructure& temporal, const EncoderDecoder& m,
                    const std::optional<Var>& spatial_edge_weights = std::nullopt,
                    const std::optional<Var>& temporal_edge_weights = std::nullopt,
                    bool record_attention = false);

// Row permutations between time-major (t*N+n) and node-major (n*T+t) layouts.
std::vector<std::size_t> perm_time_to_node_major(std::size_t t, std::size_t n);
std::vector<std::size_t> perm_node_to_time_major(std::size_t t, std::size_t n);

}  // namespace cl4st::model
