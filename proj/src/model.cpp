#include "cl4st/model.hpp"

#include <cmath>
#include <stdexcept>

namespace cl4st::model {

using namespace ad;

GraphStructure build_structure(
    std::size_t n_nodes, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  GraphStructure g;
  g.n_nodes = n_nodes;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> per_node(n_nodes);
  for (std::size_t e = 0; e < edges.size(); ++e)
    per_node[edges[e].first].emplace_back(edges[e].second, e);
  g.offsets.push_back(0);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    // Self entry first, then stored neighbors.
    g.row.push_back(i);
    g.col.push_back(i);
    g.entry_edge.push_back(GraphStructure::npos);
    for (const auto& [j, e] : per_node[i]) {
      g.row.push_back(i);
      g.col.push_back(j);
      g.entry_edge.push_back(e);
    }
    g.offsets.push_back(g.row.size());
  }
  return g;
}

std::vector<std::size_t> perm_time_to_node_major(std::size_t t, std::size_t n) {
  std::vector<std::size_t> perm(t * n);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ti = 0; ti < t; ++ti) perm[ni * t + ti] = ti * n + ni;
  return perm;
}

std::vector<std::size_t> perm_node_to_time_major(std::size_t t, std::size_t n) {
  std::vector<std::size_t> perm(t * n);
  for (std::size_t ti = 0; ti < t; ++ti)
    for (std::size_t ni = 0; ni < n; ++ni) perm[ti * n + ni] = ni * t + ti;
  return perm;
}

namespace {

std::vector<double> uniform_fan_in(std::size_t rows, std::size_t cols,
                                   std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> out(rows * cols);
  for (auto& v : out) v = u(rng);
  return out;
}

MlpParams init_mlp(std::size_t in, std::size_t hidden, std::size_t out,
                   std::mt19937_64& rng) {
  MlpParams m;
  m.w1 = leaf(in, hidden, uniform_fan_in(in, hidden, rng));
  // Small positive hidden bias keeps ReLU units alive at init; a fully dead
  // hidden layer would emit an exactly-zero row, which degenerates the
  // cosine-based contrastive term.
  m.b1 = leaf(1, hidden, std::vector<double>(hidden, 0.01));
  m.w2 = leaf(hidden, out, uniform_fan_in(hidden, out, rng));
  m.b2 = zeros_like_leaf(1, out);
  return m;
}

Var mlp_forward(const Var& x, const MlpParams& m) {
  Var h = relu(add_row_broadcast(matmul(x, m.w1), m.b1));
  return add_row_broadcast(matmul(h, m.w2), m.b2);
}

std::vector<GatLayerParams> init_gat_stack(std::size_t n_layers, std::size_t width,
                                           std::size_t k_heads, std::mt19937_64& rng) {
  const std::size_t d_head = width / k_heads;
  std::vector<GatLayerParams> layers(n_layers);
  for (auto& layer : layers) {
    layer.heads.resize(k_heads);
    for (auto& head : layer.heads) {
      head.w = leaf(width, d_head, uniform_fan_in(width, d_head, rng));
      head.a = leaf(2 * d_head, 1, uniform_fan_in(2 * d_head, 1, rng));
    }
  }
  return layers;
}

}  // namespace

EncoderDecoder make_model(const ModelConfig& cfg, std::size_t t_in, std::size_t t_out,
                          std::size_t n_nodes, std::size_t f_in, std::size_t f_out,
                          std::mt19937_64& rng) {
  cfg.validate();
  EncoderDecoder m;
  m.cfg = cfg;
  m.t_in = t_in;
  m.t_out = t_out;
  m.n_nodes = n_nodes;
  m.f_in = f_in;
  m.f_out = f_out;

  m.w0 = leaf(f_in, cfg.d, uniform_fan_in(f_in, cfg.d, rng));
  m.b0 = zeros_like_leaf(1, cfg.d);
  m.w_s = leaf(t_in * cfg.d, cfg.d_s, uniform_fan_in(t_in * cfg.d, cfg.d_s, rng));
  m.b_s = zeros_like_leaf(1, cfg.d_s);
  m.spatial_layers = init_gat_stack(cfg.n_gat_layers, cfg.d_s, cfg.k_spatial, rng);
  m.w1 = leaf(cfg.d_s, t_in * cfg.d, uniform_fan_in(cfg.d_s, t_in * cfg.d, rng));
  m.b1 = zeros_like_leaf(1, t_in * cfg.d);
  m.w_t = leaf(n_nodes * cfg.d, cfg.d_t, uniform_fan_in(n_nodes * cfg.d, cfg.d_t, rng));
  m.b_t = zeros_like_leaf(1, cfg.d_t);
  m.temporal_layers = init_gat_stack(cfg.n_gat_layers, cfg.d_t, cfg.k_temporal, rng);
  m.w2 = leaf(cfg.d_t, n_nodes * cfg.d, uniform_fan_in(cfg.d_t, n_nodes * cfg.d, rng));
  m.b2 = zeros_like_leaf(1, n_nodes * cfg.d);

  m.e_spatial = leaf(n_nodes, cfg.d_pos, uniform_fan_in(n_nodes, cfg.d_pos, rng));
  m.e_tod = leaf(kTodSlots, cfg.d_pos, uniform_fan_in(kTodSlots, cfg.d_pos, rng));
  m.e_dow = leaf(kDowSlots, cfg.d_pos, uniform_fan_in(kDowSlots, cfg.d_pos, rng));

  m.omega1 = init_mlp(t_in * cfg.d, cfg.dec_hidden, cfg.dec_hidden, rng);
  m.omega2 = init_mlp(2 * cfg.dec_hidden + 3 * cfg.d_pos, cfg.dec_hidden,
                      t_out * f_out, rng);
  m.proj = init_mlp(cfg.d, cfg.proj_hidden, cfg.d_proj, rng);
  return m;
}

std::vector<std::pair<std::string, Var>> EncoderDecoder::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  auto put = [&](const std::string& name, const Var& v) { out.emplace_back(name, v); };
  put("w0", w0);
  put("b0", b0);
  put("ws", w_s);
  put("bs", b_s);
  for (std::size_t l = 0; l < spatial_layers.size(); ++l)
    for (std::size_t k = 0; k < spatial_layers[l].heads.size(); ++k) {
      const std::string p = "spatial_gat" + std::to_string(l) + "_head" + std::to_string(k);
      put(p + "_W", spatial_layers[l].heads[k].w);
      put(p + "_a", spatial_layers[l].heads[k].a);
    }
  put("w1", w1);
  put("b1", b1);
  put("wt", w_t);
  put("bt", b_t);
  for (std::size_t l = 0; l < temporal_layers.size(); ++l)
    for (std::size_t k = 0; k < temporal_layers[l].heads.size(); ++k) {
      const std::string p = "temporal_gat" + std::to_string(l) + "_head" + std::to_string(k);
      put(p + "_W", temporal_layers[l].heads[k].w);
      put(p + "_a", temporal_layers[l].heads[k].a);
    }
  put("w2", w2);
  put("b2", b2);
  put("e_spatial", e_spatial);
  put("e_tod", e_tod);
  put("e_dow", e_dow);
  auto put_mlp = [&](const std::string& p, const MlpParams& m) {
    put(p + "_w1", m.w1);
    put(p + "_b1", m.b1);
    put(p + "_w2", m.w2);
    put(p + "_b2", m.b2);
  };
  put_mlp("omega1", omega1);
  put_mlp("omega2", omega2);
  put_mlp("proj", proj);
  return out;
}

std::vector<Var> EncoderDecoder::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

Var embed_input(const Var& x_flat, const EncoderDecoder& m) {
  if (x_flat->cols != m.f_in) throw std::invalid_argument("embed_input: feature mismatch");
  return add_row_broadcast(matmul(x_flat, m.w0), m.b0);
}

Var gat_layer(const Var& x, const GraphStructure& g, const GatLayerParams& layer,
              double leaky_slope, bool average_heads,
              const std::optional<Var>& edge_weights,
              std::vector<std::vector<double>>* alpha_out) {
  if (x->rows != g.n_nodes) throw std::invalid_argument("gat_layer: node count mismatch");
  const std::size_t n_entries = g.row.size();

  // Per-entry weight column: self entries weigh 1, edge entries take the
  // view weight. Only built when weights are supplied.
  std::optional<Var> entry_w;
  if (edge_weights) {
    std::vector<Var> ones_and_w;
    std::vector<std::size_t> sel;
    sel.reserve(n_entries);
    // Compose via gather from [edge_weights ; 1] stacked column.
    Var one = constant(1, 1, {1.0});
    Var stacked = (*edge_weights)->rows > 0
                      ? concat_rows({*edge_weights, one})
                      : one;
    const std::size_t one_idx = stacked->rows - 1;
    for (std::size_t e = 0; e < n_entries; ++e)
      sel.push_back(g.entry_edge[e] == GraphStructure::npos ? one_idx : g.entry_edge[e]);
    entry_w = gather_rows(stacked, sel);
  }

  std::vector<Var> head_outputs;
  if (alpha_out) alpha_out->clear();
  for (const auto& head : layer.heads) {
    Var wx = matmul(x, head.w);
    Var wx_i = gather_rows(wx, g.row);
    Var wx_j = gather_rows(wx, g.col);
    Var logits = leaky_relu(matmul(concat_cols({wx_i, wx_j}), head.a), leaky_slope);
    Var alpha = segment_softmax(logits, g.offsets);
    if (entry_w) {
      // Renormalize attention mass over surviving neighbors.
      Var aw = mul(alpha, *entry_w);
      Var seg_sums = scatter_add_rows(aw, g.row, g.n_nodes);
      alpha = div(aw, gather_rows(seg_sums, g.row));
    }
    if (alpha_out) alpha_out->push_back(alpha->val);
    head_outputs.push_back(scatter_add_rows(mul_col_broadcast(wx_j, alpha), g.row,
                                            g.n_nodes));
  }
  if (head_outputs.size() == 1) return head_outputs[0];
  if (average_heads) {
    Var acc = head_outputs[0];
    for (std::size_t k = 1; k < head_outputs.size(); ++k) acc = add(acc, head_outputs[k]);
    return scale(acc, 1.0 / static_cast<double>(head_outputs.size()));
  }
  return concat_cols(head_outputs);
}

namespace {

Var run_gat_stack(Var x, const GraphStructure& g,
                  const std::vector<GatLayerParams>& layers, const ModelConfig& cfg,
                  const std::optional<Var>& edge_weights, AttentionRecord* record) {
  if (record) record->alpha.clear();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<std::vector<double>> alphas;
    const bool last = l + 1 == layers.size();
    x = gat_layer(x, g, layers[l], cfg.leaky_slope, last && cfg.average_last_gat,
                  edge_weights, record ? &alphas : nullptr);
    if (record) record->alpha.push_back(std::move(alphas));
    if (!last) x = elu(x);
  }
  return x;
}

}  // namespace

Var spatial_pass(const Var& x0, const GraphStructure& g, const EncoderDecoder& m,
                 const std::optional<Var>& edge_weights, AttentionRecord* record) {
  const std::size_t t = m.t_in, n = m.n_nodes, d = m.cfg.d;
  if (x0->rows != t * n || x0->cols != d)
    throw std::invalid_argument("spatial_pass: input shape mismatch");
  Var xn = reshape(permute_rows(x0, perm_time_to_node_major(t, n)), n, t * d);
  Var xs = add_row_broadcast(matmul(xn, m.w_s), m.b_s);
  Var hs = run_gat_stack(xs, g, m.spatial_layers, m.cfg, edge_weights, record);
  Var back = add_row_broadcast(matmul(hs, m.w1), m.b1);  // n x (t*d)
  return permute_rows(reshape(back, t * n, d), perm_node_to_time_major(t, n));
}

Var temporal_pass(const Var& h_s, const GraphStructure& g, const EncoderDecoder& m,
                  const std::optional<Var>& edge_weights, AttentionRecord* record) {
  const std::size_t t = m.t_in, n = m.n_nodes, d = m.cfg.d;
  if (h_s->rows != t * n || h_s->cols != d)
    throw std::invalid_argument("temporal_pass: input shape mismatch");
  Var xt_in = reshape(h_s, t, n * d);
  Var xt = add_row_broadcast(matmul(xt_in, m.w_t), m.b_t);
  Var ht = run_gat_stack(xt, g, m.temporal_layers, m.cfg, edge_weights, record);
  Var back = add_row_broadcast(matmul(ht, m.w2), m.b2);  // t x (n*d)
  return reshape(back, t * n, d);
}

Var decode(const Var& h, const Var& x0, const EncoderDecoder& m, int tod_index,
           int dow_index) {
  if (tod_index < 0 || tod_index >= kTodSlots)
    throw std::out_of_range("decode: tod index out of range");
  if (dow_index < 0 || dow_index >= kDowSlots)
    throw std::out_of_range("decode: dow index out of range");
  const std::size_t t = m.t_in, n = m.n_nodes, d = m.cfg.d;
  const auto to_node_major = perm_time_to_node_major(t, n);
  Var hn = reshape(permute_rows(h, to_node_major), n, t * d);
  Var x0n = reshape(permute_rows(x0, to_node_major), n, t * d);
  Var o1h = mlp_forward(hn, m.omega1);
  Var o1x = mlp_forward(x0n, m.omega1);
  Var e_tod_rows = gather_rows(m.e_tod, std::vector<std::size_t>(n, tod_index));
  Var e_dow_rows = gather_rows(m.e_dow, std::vector<std::size_t>(n, dow_index));
  Var fused = concat_cols({o1h, m.e_spatial, e_tod_rows, e_dow_rows, o1x});
  Var out = mlp_forward(fused, m.omega2);  // n x (t_out * f_out)
  return permute_rows(reshape(out, m.t_out * n, m.f_out),
                      perm_node_to_time_major(m.t_out, n));
}

Var project(const Var& h, const EncoderDecoder& m) {
  return mlp_forward(mean_rows(h), m.proj);
}

EncodeResult encode(const Var& x_flat, const GraphStructure& spatial,
                    const GraphStructure& temporal, const EncoderDecoder& m,
                    const std::optional<Var>& spatial_edge_weights,
                    const std::optional<Var>& temporal_edge_weights,
                    bool record_attention) {
  EncodeResult r;
  r.x0 = embed_input(x_flat, m);
  Var hs = spatial_pass(r.x0, spatial, m, spatial_edge_weights,
                        record_attention ? &r.spatial_attn : nullptr);
  r.h = temporal_pass(hs, temporal, m, temporal_edge_weights,
                      record_attention ? &r.temporal_attn : nullptr);
  return r;
}

}  // namespace cl4st::model
