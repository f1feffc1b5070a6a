#include "cl4st/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace cl4st::gen {

using namespace ad;

MlpVars unflatten_mlp(const Var& flat, const MlpShape& s) {
  if (flat->rows != 1 || flat->cols != s.param_count())
    throw std::invalid_argument("unflatten_mlp: flattened size mismatch");
  std::size_t off = 0;
  MlpVars m;
  m.w1 = reshape(slice_cols(flat, off, off + s.in * s.hidden), s.in, s.hidden);
  off += s.in * s.hidden;
  m.b1 = slice_cols(flat, off, off + s.hidden);
  off += s.hidden;
  m.w2 = reshape(slice_cols(flat, off, off + s.hidden * s.out), s.hidden, s.out);
  off += s.hidden * s.out;
  m.b2 = slice_cols(flat, off, off + s.out);
  return m;
}

std::vector<double> flatten_mlp(const std::vector<double>& w1, const std::vector<double>& b1,
                                const std::vector<double>& w2, const std::vector<double>& b2) {
  std::vector<double> out;
  out.reserve(w1.size() + b1.size() + w2.size() + b2.size());
  out.insert(out.end(), w1.begin(), w1.end());
  out.insert(out.end(), b1.begin(), b1.end());
  out.insert(out.end(), w2.begin(), w2.end());
  out.insert(out.end(), b2.begin(), b2.end());
  return out;
}

Var mlp_apply(const Var& x, const MlpVars& m) {
  Var h = relu(add_row_broadcast(matmul(x, m.w1), m.b1));
  return add_row_broadcast(matmul(h, m.w2), m.b2);
}

Var gin_layer(const Var& h, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
              const MlpVars& mlp, double eps) {
  std::vector<std::size_t> src, dst;
  src.reserve(edges.size());
  dst.reserve(edges.size());
  for (const auto& [v, u] : edges) {
    src.push_back(u);  // message from neighbor u ...
    dst.push_back(v);  // ... into node v
  }
  Var agg = scale(h, 1.0 + eps);
  if (!edges.empty()) {
    Var messages = gather_rows(h, src);
    agg = add(agg, scatter_add_rows(messages, dst, h->rows));
  }
  return mlp_apply(agg, mlp);
}

std::vector<double> draw_gumbel_noise(std::size_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1e-12, 1.0);
  std::vector<double> g(count);
  for (auto& v : g) v = -std::log(-std::log(u(rng)));
  return g;
}

GumbelSample gumbel_softmax(const Var& logits, double tau, bool hard,
                            const std::vector<double>& noise) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel_softmax: tau must be > 0");
  if (noise.size() != logits->size())
    throw std::invalid_argument("gumbel_softmax: noise size mismatch");
  Var noisy = add(logits, constant(logits->rows, logits->cols, noise));
  GumbelSample out;
  out.soft = softmax_rows(scale(noisy, 1.0 / tau));
  out.hard.assign(out.soft->size(), 0.0);
  out.action.resize(out.soft->rows);
  for (std::size_t r = 0; r < out.soft->rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < out.soft->cols; ++c)
      if (out.soft->at(r, c) > out.soft->at(r, best)) best = c;
    out.action[r] = best;
    out.hard[r * out.soft->cols + best] = 1.0;
  }
  out.sample = hard ? straight_through(out.soft, out.hard) : out.soft;
  return out;
}

GumbelSample gumbel_softmax(const Var& logits, double tau, bool hard,
                            std::mt19937_64& rng) {
  return gumbel_softmax(logits, tau, hard, draw_gumbel_noise(logits->size(), rng));
}

AugmentationView node_view(const Var& features,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                           const GINParams& gin, double tau, bool hard,
                           std::mt19937_64& rng) {
  AugmentationView view;
  view.h1 = gin_layer(features, edges, gin.theta1, gin.eps1);
  Var h2 = gin_layer(view.h1, edges, gin.theta2, gin.eps2);
  if (h2->cols != 3) throw std::invalid_argument("node_view: theta2 output width must be 3");
  GumbelSample gs = gumbel_softmax(h2, tau, hard, rng);
  view.node_probs = gs.soft;
  view.node_sample = gs.sample;
  view.node_actions = gs.action;
  return view;
}

void edge_view(AugmentationView& view,
               const std::vector<std::pair<std::size_t, std::size_t>>& edges,
               const EdgeViewParams& params, double tau, bool hard,
               std::mt19937_64& rng) {
  if (edges.empty()) {
    view.edge_actions.clear();
    view.edge_probs = constant(0, 2, {});
    view.edge_sample = view.edge_probs;
    return;
  }
  std::vector<std::size_t> src, dst;
  for (const auto& [v, u] : edges) {
    src.push_back(v);
    dst.push_back(u);
  }
  Var he = concat_cols({gather_rows(view.h1, src), gather_rows(view.h1, dst)});
  Var logits = mlp_apply(he, params.theta3);
  if (logits->cols != 2)
    throw std::invalid_argument("edge_view: theta3 output width must be 2");
  GumbelSample gs = gumbel_softmax(logits, tau, hard, rng);
  view.edge_probs = gs.soft;
  view.edge_sample = gs.sample;
  view.edge_actions = gs.action;
}

AppliedView apply_views(std::size_t n_nodes, const std::vector<double>& adjacency,
                        const std::vector<std::pair<std::size_t, std::size_t>>& edge_list,
                        const std::vector<double>& features, std::size_t width,
                        const std::vector<std::size_t>& node_actions,
                        const std::vector<std::size_t>& edge_actions) {
  if (node_actions.size() != n_nodes)
    throw std::invalid_argument("apply_views: stale node view (size mismatch)");
  if (edge_actions.size() != edge_list.size())
    throw std::invalid_argument("apply_views: stale edge view (size mismatch)");
  if (features.size() != n_nodes * width)
    throw std::invalid_argument("apply_views: feature size mismatch");

  AppliedView out;
  out.n_nodes = n_nodes;
  out.adjacency.assign(n_nodes * n_nodes, 0.0);

  // Edge view first: dropped edges leave the adjacency.
  for (std::size_t e = 0; e < edge_list.size(); ++e) {
    if (edge_actions[e] == kEdgeKeep) {
      const auto& [i, j] = edge_list[e];
      out.adjacency[i * n_nodes + j] = adjacency[i * n_nodes + j];
    }
  }
  // Node view second. Mean row computed over all nodes of this graph.
  std::vector<double> mean_row(width, 0.0);
  for (std::size_t v = 0; v < n_nodes; ++v)
    for (std::size_t c = 0; c < width; ++c) mean_row[c] += features[v * width + c];
  for (double& m : mean_row) m /= static_cast<double>(n_nodes);

  out.features = features;
  for (std::size_t v = 0; v < n_nodes; ++v) {
    switch (node_actions[v]) {
      case kNodeDrop:
        for (std::size_t c = 0; c < width; ++c) out.features[v * width + c] = 0.0;
        for (std::size_t u = 0; u < n_nodes; ++u) {
          out.adjacency[v * n_nodes + u] = 0.0;
          out.adjacency[u * n_nodes + v] = 0.0;
        }
        break;
      case kNodeMask:
        for (std::size_t c = 0; c < width; ++c) out.features[v * width + c] = mean_row[c];
        break;
      case kNodeKeep:
        break;
      default:
        throw std::invalid_argument("apply_views: unknown node action");
    }
  }
  for (std::size_t i = 0; i < n_nodes; ++i)
    for (std::size_t j = 0; j < n_nodes; ++j)
      if (i != j && out.adjacency[i * n_nodes + j] > 0.0)
        out.edge_list.emplace_back(i, j);
  return out;
}

Var apply_node_view_features(const Var& features, const Var& node_sample) {
  if (node_sample->rows != features->rows || node_sample->cols != 3)
    throw std::invalid_argument("apply_node_view_features: view shape mismatch");
  Var keep_col = reshape(slice_cols(node_sample, kNodeKeep, kNodeKeep + 1),
                         features->rows, 1);
  Var mask_col = reshape(slice_cols(node_sample, kNodeMask, kNodeMask + 1),
                         features->rows, 1);
  Var kept = mul_col_broadcast(features, keep_col);
  Var masked = matmul(mask_col, mean_rows(features));
  return add(kept, masked);
}

Var edge_weights_from_view(const AugmentationView& view,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (view.edge_actions.size() != edges.size())
    throw std::invalid_argument("edge_weights_from_view: stale edge view");
  // alive_v = keep + mask probability mass (anything but drop).
  Var alive = add(
      reshape(slice_cols(view.node_sample, kNodeKeep, kNodeKeep + 1),
              view.node_sample->rows, 1),
      reshape(slice_cols(view.node_sample, kNodeMask, kNodeMask + 1),
              view.node_sample->rows, 1));
  Var w = reshape(slice_cols(view.edge_sample, kEdgeKeep, kEdgeKeep + 1),
                  edges.size(), 1);
  std::vector<std::size_t> src, dst;
  for (const auto& [v, u] : edges) {
    src.push_back(v);
    dst.push_back(u);
  }
  w = mul(w, gather_rows(alive, src));
  w = mul(w, gather_rows(alive, dst));
  return w;
}

// --- Meta networks -------------------------------------------------------

namespace {

std::vector<double> uniform_fan_in(std::size_t rows, std::size_t cols,
                                   std::mt19937_64& rng, double scale = 1.0) {
  const double bound = scale / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> out(rows * cols);
  for (auto& v : out) v = u(rng);
  return out;
}

// `out_scale` shrinks the final layer; parameter-emitting networks start
// near zero so the sampled views begin in the noise-dominated regime
// instead of saturating the categorical logits.
MlpVars init_mlp_leaves(const MlpShape& s, std::mt19937_64& rng, double out_scale = 1.0) {
  MlpVars m;
  m.w1 = leaf(s.in, s.hidden, uniform_fan_in(s.in, s.hidden, rng));
  m.b1 = zeros_like_leaf(1, s.hidden);
  m.w2 = leaf(s.hidden, s.out, uniform_fan_in(s.hidden, s.out, rng, out_scale));
  m.b2 = zeros_like_leaf(1, s.out);
  return m;
}

constexpr double kEmitterOutScale = 0.05;

void collect(const MlpVars& m, std::vector<Var>& out) {
  out.push_back(m.w1);
  out.push_back(m.b1);
  out.push_back(m.w2);
  out.push_back(m.b2);
}

}  // namespace

std::vector<Var> MetaGeneratorState::parameters() const {
  std::vector<Var> out;
  for (const auto& g : groups) {
    out.push_back(g.prior.mu);
    out.push_back(g.prior.log_var);
    collect(g.phi, out);
    collect(g.psi, out);
  }
  if (share_theta3 && psi3_w1) {
    out.push_back(psi3_w1);
    out.push_back(psi3_b1);
    out.push_back(psi3_w2);
    out.push_back(psi3_b2);
  }
  return out;
}

MlpShape theta1_shape(std::size_t f_node, const ModelConfig& cfg) {
  return {f_node, cfg.gin_hidden, cfg.gin_d1};
}
MlpShape theta2_shape(const ModelConfig& cfg) { return {cfg.gin_d1, cfg.gin_hidden, 3}; }
MlpShape theta3_shape(const ModelConfig& cfg) {
  return {2 * cfg.gin_d1, cfg.gin_hidden, 2};
}

std::vector<Var> mlp_vars(const MlpVars& m) { return {m.w1, m.b1, m.w2, m.b2}; }

MetaGroup make_meta_group(std::size_t feature_dim, const MlpShape& theta_shape,
                          const ModelConfig& cfg, std::mt19937_64& rng) {
  MetaGroup g;
  g.theta_shape = theta_shape;
  g.prior.mu = zeros_like_leaf(1, cfg.d_z);
  g.prior.log_var = zeros_like_leaf(1, cfg.d_z);
  g.phi = init_mlp_leaves({feature_dim, cfg.phi_hidden, 2 * cfg.d_z}, rng);
  g.psi = init_mlp_leaves({cfg.d_z, cfg.psi_hidden, theta_shape.param_count()}, rng,
                          kEmitterOutScale);
  return g;
}

MetaGeneratorState make_meta_generator(std::size_t feature_dim, std::size_t f_node,
                                       const ModelConfig& cfg, std::mt19937_64& rng) {
  MetaGeneratorState st;
  st.share_theta3 = cfg.share_theta3_latent;
  st.d_z = cfg.d_z;
  st.feature_dim = feature_dim;
  st.theta3_shape = theta3_shape(cfg);
  st.groups.push_back(make_meta_group(feature_dim, theta1_shape(f_node, cfg), cfg, rng));
  st.groups.push_back(make_meta_group(feature_dim, theta2_shape(cfg), cfg, rng));
  if (st.share_theta3) {
    MlpVars psi3 = init_mlp_leaves(
        {cfg.d_z, cfg.psi_hidden, st.theta3_shape.param_count()}, rng, kEmitterOutScale);
    st.psi3_w1 = psi3.w1;
    st.psi3_b1 = psi3.b1;
    st.psi3_w2 = psi3.w2;
    st.psi3_b2 = psi3.b2;
  } else {
    st.groups.push_back(make_meta_group(feature_dim, st.theta3_shape, cfg, rng));
  }
  return st;
}

ThetaEmission emit_theta(const MetaGroup& g, const Var& features, std::size_t d_z,
                         std::mt19937_64& rng, bool deterministic) {
  Var phi_out = mlp_apply(features, g.phi);
  Var mu_phi = slice_cols(phi_out, 0, d_z);
  Var lv_phi = slice_cols(phi_out, d_z, 2 * d_z);

  ThetaEmission out;
  Var mu_sum = add(g.prior.mu, mu_phi);
  if (deterministic) {
    out.z = mu_sum;
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> eta1(d_z), eta2(d_z);
    for (auto& v : eta1) v = gauss(rng);
    for (auto& v : eta2) v = gauss(rng);
    Var n1 = mul(exp_(scale(g.prior.log_var, 0.5)), constant(1, d_z, eta1));
    Var n2 = mul(exp_(scale(lv_phi, 0.5)), constant(1, d_z, eta2));
    out.z = add(mu_sum, add(n1, n2));
  }
  out.kl.mu = mu_sum;
  out.kl.var = add(exp_(g.prior.log_var), exp_(lv_phi));
  out.theta = unflatten_mlp(mlp_apply(out.z, g.psi), g.theta_shape);
  return out;
}

GeneratedParams generate_params(const std::vector<double>& flat_features,
                                const MetaGeneratorState& state, const ModelConfig& cfg,
                                std::mt19937_64& rng, bool deterministic) {
  if (flat_features.size() != state.feature_dim)
    throw std::invalid_argument("generate_params: feature size mismatch");
  Var feat = constant(1, state.feature_dim, flat_features);

  GeneratedParams out;
  ThetaEmission z1 = emit_theta(state.groups[0], feat, state.d_z, rng, deterministic);
  ThetaEmission z2 = emit_theta(state.groups[1], feat, state.d_z, rng, deterministic);
  out.kl_inputs.push_back(z1.kl);
  out.kl_inputs.push_back(z2.kl);

  out.gin.eps1 = cfg.gin_eps1;
  out.gin.eps2 = cfg.gin_eps2;
  out.gin.theta1 = z1.theta;
  out.gin.theta2 = z2.theta;

  if (state.share_theta3) {
    MlpVars psi3{state.psi3_w1, state.psi3_b1, state.psi3_w2, state.psi3_b2};
    out.edge.theta3 = unflatten_mlp(mlp_apply(z2.z, psi3), state.theta3_shape);
  } else {
    ThetaEmission z3 = emit_theta(state.groups[2], feat, state.d_z, rng, deterministic);
    out.kl_inputs.push_back(z3.kl);
    out.edge.theta3 = z3.theta;
  }
  return out;
}

Var kl_loss(const std::vector<KlInput>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("kl_loss: no inputs");
  Var total = constant_scalar(0.0);
  for (const auto& in : inputs) {
    for (double v : in.var->val)
      if (v <= 0.0) throw std::invalid_argument("kl_loss: non-positive variance");
    // 0.5 * sum(var + mu^2 - 1 - log var)
    Var term = sub(add(in.var, square(in.mu)), add_scalar(log_(in.var), 1.0));
    total = add(total, scale(sum(term), 0.5));
  }
  return total;
}

double kl_closed_form(const std::vector<double>& mu, const std::vector<double>& var) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (var[i] <= 0.0) throw std::invalid_argument("kl_closed_form: non-positive variance");
    acc += var[i] + mu[i] * mu[i] - 1.0 - std::log(var[i]);
  }
  return 0.5 * acc;
}

}  // namespace cl4st::gen
