#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cl4st/stg.hpp"
#include "cl4st/tensor.hpp"

// Learnable meta view generator: GIN encoding of a graph, Gumbel-Softmax
// node/edge view sampling, augmentation application, and the VAE-style
// meta networks that emit the GIN/MLP parameters.

namespace cl4st::gen {

using ad::Var;

// Two-layer perceptron with one rectified hidden layer.
struct MlpShape {
  std::size_t in = 0, hidden = 0, out = 0;
  std::size_t param_count() const { return in * hidden + hidden + hidden * out + out; }
};

struct MlpVars {
  Var w1, b1, w2, b2;  // (in x hidden), (1 x hidden), (hidden x out), (1 x out)
};

// Flattening order: w1 row-major, b1, w2 row-major, b2.
MlpVars unflatten_mlp(const Var& flat, const MlpShape& shape);
std::vector<double> flatten_mlp(const std::vector<double>& w1, const std::vector<double>& b1,
                                const std::vector<double>& w2, const std::vector<double>& b2);

Var mlp_apply(const Var& x, const MlpVars& m);

// Node action classes.
inline constexpr std::size_t kNodeDrop = 0, kNodeKeep = 1, kNodeMask = 2;
inline constexpr std::size_t kEdgeDrop = 0, kEdgeKeep = 1;

struct GINParams {
  MlpVars theta1;  // f -> d1
  MlpVars theta2;  // d1 -> 3
  double eps1 = 0.0, eps2 = 0.0;
};

struct EdgeViewParams {
  MlpVars theta3;  // 2*d1 -> 2
};

// h'_v = MLP[(1 + eps) h_v + sum_{u in N(v)} h_u]; no implicit self-loop.
Var gin_layer(const Var& h, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
              const MlpVars& mlp, double eps);

struct GumbelSample {
  Var soft;                        // softmax((logits + g)/tau)
  Var sample;                      // soft, or straight-through hard one-hot
  std::vector<double> hard;        // argmax one-hot of soft
  std::vector<std::size_t> action; // per-row argmax
};

std::vector<double> draw_gumbel_noise(std::size_t count, std::mt19937_64& rng);

GumbelSample gumbel_softmax(const Var& logits, double tau, bool hard,
                            const std::vector<double>& noise);
GumbelSample gumbel_softmax(const Var& logits, double tau, bool hard,
                            std::mt19937_64& rng);

struct AugmentationView {
  // Node part: n_units x 3 over {drop, keep, mask}.
  Var node_probs;
  Var node_sample;
  std::vector<std::size_t> node_actions;
  // Edge part: n_edges x 2 over {drop, keep}, aligned with the graph edge list.
  Var edge_probs;
  Var edge_sample;
  std::vector<std::size_t> edge_actions;
  Var h1;  // first GIN embedding, reused by the edge view
};

// Node view over any graph given as an edge list; features is n x f.
AugmentationView node_view(const Var& features,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                           const GINParams& gin, double tau, bool hard,
                           std::mt19937_64& rng);

// Fills in the edge part of an existing view from its h1 embeddings.
void edge_view(AugmentationView& view,
               const std::vector<std::pair<std::size_t, std::size_t>>& edges,
               const EdgeViewParams& params, double tau, bool hard, std::mt19937_64& rng);

// Structural (hard) augmentation application, edge view first then node view.
struct AppliedView {
  std::size_t n_nodes = 0;
  std::vector<double> adjacency;
  std::vector<std::pair<std::size_t, std::size_t>> edge_list;
  std::vector<double> features;  // n x width
};

AppliedView apply_views(std::size_t n_nodes, const std::vector<double>& adjacency,
                        const std::vector<std::pair<std::size_t, std::size_t>>& edge_list,
                        const std::vector<double>& features, std::size_t width,
                        const std::vector<std::size_t>& node_actions,
                        const std::vector<std::size_t>& edge_actions);

// Differentiable application on the feature side: mixes each row by its
// sampled action weights (keep * x + mask * mean, drop -> 0).
Var apply_node_view_features(const Var& features, const Var& node_sample);

// Per-edge weight combining the edge keep decision with both endpoints
// staying alive (drop removes incident edges).
Var edge_weights_from_view(const AugmentationView& view,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges);

// --- Meta networks -------------------------------------------------------

struct LatentGaussian {
  Var mu;       // 1 x d_z
  Var log_var;  // 1 x d_z
};

struct MetaGroup {
  LatentGaussian prior;
  MlpVars phi;  // features -> (mu_phi || log_var_phi), output width 2*d_z
  MlpVars psi;  // d_z -> flattened theta
  MlpShape theta_shape;
};

struct MetaGeneratorState {
  std::vector<MetaGroup> groups;  // theta1, theta2[, theta3]
  MlpShape theta3_shape;          // used when theta3 shares the theta2 latent
  Var psi3_w1, psi3_b1, psi3_w2, psi3_b2;  // emitter for theta3 under sharing
  bool share_theta3 = true;
  std::size_t d_z = 0;
  std::size_t feature_dim = 0;

  std::vector<Var> parameters() const;
};

MetaGeneratorState make_meta_generator(std::size_t feature_dim, std::size_t f_node,
                                       const ModelConfig& cfg, std::mt19937_64& rng);

MetaGroup make_meta_group(std::size_t feature_dim, const MlpShape& theta_shape,
                          const ModelConfig& cfg, std::mt19937_64& rng);

MlpShape theta1_shape(std::size_t f_node, const ModelConfig& cfg);
MlpShape theta2_shape(const ModelConfig& cfg);
MlpShape theta3_shape(const ModelConfig& cfg);

std::vector<Var> mlp_vars(const MlpVars& m);

struct KlInput {
  Var mu;       // 1 x d_z, prior + inference means
  Var var;      // 1 x d_z, sum of the two variances
};

struct ThetaEmission {
  MlpVars theta;
  KlInput kl;
  Var z;  // latent sum, reusable by a sharing group
};

// Draws the prior and inference latents for one group and emits its theta.
ThetaEmission emit_theta(const MetaGroup& g, const Var& features, std::size_t d_z,
                         std::mt19937_64& rng, bool deterministic);

struct GeneratedParams {
  GINParams gin;
  EdgeViewParams edge;
  std::vector<KlInput> kl_inputs;  // one per latent group
};

// Emits theta1/theta2/theta3 from latent draws conditioned on the flattened
// graph signal. With deterministic=true the latent means are used directly.
GeneratedParams generate_params(const std::vector<double>& flat_features,
                                const MetaGeneratorState& state, const ModelConfig& cfg,
                                std::mt19937_64& rng, bool deterministic = false);

// Closed-form KL of N(mu, diag(var)) against the standard normal, summed
// over all groups.
Var kl_loss(const std::vector<KlInput>& inputs);
double kl_closed_form(const std::vector<double>& mu, const std::vector<double>& var);

}  // namespace cl4st::gen
