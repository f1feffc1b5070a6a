#include "cl4st/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cl4st::train {

using namespace ad;

// --- Adam ------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Node& p = *params_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      p.val[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() { ad::zero_grad(params_); }

// --- Ablation variants -----------------------------------------------------

AblationVariant variant_from_string(const std::string& name) {
  if (name == "full") return AblationVariant::full;
  if (name == "wo_node_meta") return AblationVariant::wo_node_meta;
  if (name == "wo_edge_meta") return AblationVariant::wo_edge_meta;
  if (name == "wo_meta") return AblationVariant::wo_meta;
  if (name == "wo_gcl") return AblationVariant::wo_gcl;
  throw std::invalid_argument("unknown ablation variant: " + name);
}

std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::wo_node_meta: return "wo_node_meta";
    case AblationVariant::wo_edge_meta: return "wo_edge_meta";
    case AblationVariant::wo_meta: return "wo_meta";
    case AblationVariant::wo_gcl: return "wo_gcl";
  }
  throw std::logic_error("bad variant");
}

// --- ViewModule --------------------------------------------------------------

namespace {

std::vector<double> uniform_fan_in(std::size_t rows, std::size_t cols,
                                   std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> out(rows * cols);
  for (auto& v : out) v = u(rng);
  return out;
}

// Final layer starts near zero: these MLPs either emit view-network
// parameters or categorical logits, and large initial values saturate the
// sampled views (see the matching emitter init in the generator module).
gen::MlpVars init_direct_mlp(const gen::MlpShape& s, std::mt19937_64& rng) {
  constexpr double kOutScale = 0.05;
  const double bound = kOutScale / std::sqrt(static_cast<double>(s.hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w2(s.hidden * s.out);
  for (auto& v : w2) v = u(rng);
  gen::MlpVars m;
  m.w1 = leaf(s.in, s.hidden, uniform_fan_in(s.in, s.hidden, rng));
  m.b1 = zeros_like_leaf(1, s.hidden);
  m.w2 = leaf(s.hidden, s.out, w2);
  m.b2 = zeros_like_leaf(1, s.out);
  return m;
}

void put_mlp(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
             const gen::MlpVars& m) {
  out.emplace_back(prefix + "_w1", m.w1);
  out.emplace_back(prefix + "_b1", m.b1);
  out.emplace_back(prefix + "_w2", m.w2);
  out.emplace_back(prefix + "_b2", m.b2);
}

void put_group(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
               const gen::MetaGroup& g) {
  out.emplace_back(prefix + "_prior_mu", g.prior.mu);
  out.emplace_back(prefix + "_prior_logvar", g.prior.log_var);
  put_mlp(out, prefix + "_phi", g.phi);
  put_mlp(out, prefix + "_psi", g.psi);
}

}  // namespace

ViewModule make_view_module(std::size_t feature_dim, std::size_t f_node,
                            const ModelConfig& cfg, bool node_meta, bool edge_meta,
                            std::mt19937_64& rng) {
  ViewModule vm;
  vm.node_meta = node_meta;
  vm.edge_meta = edge_meta;
  vm.d_z = cfg.d_z;
  vm.feature_dim = feature_dim;
  vm.theta3_shape = gen::theta3_shape(cfg);
  if (node_meta) {
    vm.group1 = gen::make_meta_group(feature_dim, gen::theta1_shape(f_node, cfg), cfg, rng);
    vm.group2 = gen::make_meta_group(feature_dim, gen::theta2_shape(cfg), cfg, rng);
  } else {
    vm.direct_theta1 = init_direct_mlp(gen::theta1_shape(f_node, cfg), rng);
    vm.direct_theta2 = init_direct_mlp(gen::theta2_shape(cfg), rng);
  }
  if (edge_meta) {
    if (node_meta && cfg.share_theta3_latent) {
      vm.share_theta3 = true;
      gen::MlpVars psi3 = init_direct_mlp(
          {cfg.d_z, cfg.psi_hidden, vm.theta3_shape.param_count()}, rng);
      vm.psi3_w1 = psi3.w1;
      vm.psi3_b1 = psi3.b1;
      vm.psi3_w2 = psi3.w2;
      vm.psi3_b2 = psi3.b2;
    } else {
      vm.group3 = gen::make_meta_group(feature_dim, vm.theta3_shape, cfg, rng);
    }
  } else {
    vm.direct_theta3 = init_direct_mlp(vm.theta3_shape, rng);
  }
  return vm;
}

gen::GeneratedParams ViewModule::forward(const std::vector<double>& flat_features,
                                         const ModelConfig& cfg, std::mt19937_64& rng,
                                         bool deterministic) const {
  if (flat_features.size() != feature_dim)
    throw std::invalid_argument("ViewModule: feature size mismatch");
  Var feat = constant(1, feature_dim, flat_features);
  gen::GeneratedParams out;
  out.gin.eps1 = cfg.gin_eps1;
  out.gin.eps2 = cfg.gin_eps2;

  Var z2;
  if (node_meta) {
    gen::ThetaEmission e1 = gen::emit_theta(*group1, feat, d_z, rng, deterministic);
    gen::ThetaEmission e2 = gen::emit_theta(*group2, feat, d_z, rng, deterministic);
    out.gin.theta1 = e1.theta;
    out.gin.theta2 = e2.theta;
    out.kl_inputs.push_back(e1.kl);
    out.kl_inputs.push_back(e2.kl);
    z2 = e2.z;
  } else {
    out.gin.theta1 = *direct_theta1;
    out.gin.theta2 = *direct_theta2;
  }
  if (edge_meta) {
    if (share_theta3) {
      gen::MlpVars psi3{psi3_w1, psi3_b1, psi3_w2, psi3_b2};
      out.edge.theta3 = gen::unflatten_mlp(gen::mlp_apply(z2, psi3), theta3_shape);
    } else {
      gen::ThetaEmission e3 = gen::emit_theta(*group3, feat, d_z, rng, deterministic);
      out.edge.theta3 = e3.theta;
      out.kl_inputs.push_back(e3.kl);
    }
  } else {
    out.edge.theta3 = *direct_theta3;
  }
  return out;
}

std::vector<std::pair<std::string, Var>> ViewModule::named_parameters(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Var>> out;
  if (group1) put_group(out, prefix + "_group1", *group1);
  if (group2) put_group(out, prefix + "_group2", *group2);
  if (group3) put_group(out, prefix + "_group3", *group3);
  if (share_theta3) {
    out.emplace_back(prefix + "_psi3_w1", psi3_w1);
    out.emplace_back(prefix + "_psi3_b1", psi3_b1);
    out.emplace_back(prefix + "_psi3_w2", psi3_w2);
    out.emplace_back(prefix + "_psi3_b2", psi3_b2);
  }
  if (direct_theta1) put_mlp(out, prefix + "_direct_theta1", *direct_theta1);
  if (direct_theta2) put_mlp(out, prefix + "_direct_theta2", *direct_theta2);
  if (direct_theta3) put_mlp(out, prefix + "_direct_theta3", *direct_theta3);
  return out;
}

// --- Trainer -----------------------------------------------------------------

Trainer make_trainer(const TrainerConfig& cfg, std::size_t t_in, std::size_t t_out,
                     std::size_t f_in, std::size_t f_out, const SpatialGraph& graph) {
  Trainer tr;
  tr.cfg = cfg;
  tr.rng.seed(cfg.train.seed);
  tr.spatial_graph = graph;
  tr.temporal_graph = build_temporal_graph(t_in);
  tr.spatial_structure = model::build_structure(graph.n_nodes, graph.edge_list);
  tr.temporal_structure = model::build_structure(t_in, tr.temporal_graph.edge_list);
  tr.net = model::make_model(cfg.model, t_in, t_out, graph.n_nodes, f_in, f_out, tr.rng);
  if (cfg.variant != AblationVariant::wo_gcl) {
    const bool node_meta = cfg.variant == AblationVariant::full ||
                           cfg.variant == AblationVariant::wo_edge_meta;
    const bool edge_meta = cfg.variant == AblationVariant::full ||
                           cfg.variant == AblationVariant::wo_node_meta;
    const std::size_t flat = t_in * graph.n_nodes * f_in;
    tr.sgen = make_view_module(flat, t_in * f_in, cfg.model, node_meta, edge_meta, tr.rng);
    tr.tgen = make_view_module(flat, graph.n_nodes * f_in, cfg.model, node_meta,
                               edge_meta, tr.rng);
  }
  tr.norm.mean.assign(f_in, 0.0);
  tr.norm.std.assign(f_in, 1.0);
  return tr;
}

std::vector<std::pair<std::string, Var>> Trainer::named_parameters() const {
  auto out = net.named_parameters();
  if (sgen)
    for (auto& nv : sgen->named_parameters("sgen")) out.push_back(nv);
  if (tgen)
    for (auto& nv : tgen->named_parameters("tgen")) out.push_back(nv);
  return out;
}

std::vector<Var> Trainer::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

namespace {

// All-keep view over n units / m edges, with no gradient path.
gen::AugmentationView all_keep_view(std::size_t n_units, std::size_t n_edges) {
  gen::AugmentationView v;
  std::vector<double> node(n_units * 3, 0.0);
  for (std::size_t i = 0; i < n_units; ++i) node[i * 3 + gen::kNodeKeep] = 1.0;
  v.node_probs = constant(n_units, 3, node);
  v.node_sample = v.node_probs;
  v.node_actions.assign(n_units, gen::kNodeKeep);
  std::vector<double> edge(n_edges * 2, 0.0);
  for (std::size_t e = 0; e < n_edges; ++e) edge[e * 2 + gen::kEdgeKeep] = 1.0;
  v.edge_probs = constant(n_edges, 2, edge);
  v.edge_sample = v.edge_probs;
  v.edge_actions.assign(n_edges, gen::kEdgeKeep);
  return v;
}

std::vector<double> node_major_features(const STGSample& s) {
  const std::size_t t = s.x.t, n = s.x.n, f = s.x.f;
  std::vector<double> out(t * n * f);
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t fi = 0; fi < f; ++fi)
        out[(ni * t + ti) * f + fi] = s.x.at(ti, ni, fi);
  return out;
}

}  // namespace

AugmentedBranch Trainer::augment(const STGSample& sample, bool deterministic,
                                 bool all_keep) {
  if (!sgen || !tgen) throw std::logic_error("augment: generators disabled");
  const std::size_t t = sample.x.t, n = sample.x.n, f = sample.x.f;
  const double tau = cfg.model.tau_gumbel;
  const bool hard = cfg.hard_sampling;
  AugmentedBranch ab;

  // Spatial view: nodes carry their stacked history (N x T*F).
  Var xn = constant(n, t * f, node_major_features(sample));
  if (all_keep) {
    ab.spatial_view = all_keep_view(n, spatial_graph.edge_list.size());
  } else {
    gen::GeneratedParams sp =
        sgen->forward(sample.x.data, cfg.model, rng, deterministic);
    ab.spatial_view =
        gen::node_view(xn, spatial_graph.edge_list, sp.gin, tau, hard, rng);
    gen::edge_view(ab.spatial_view, spatial_graph.edge_list, sp.edge, tau, hard, rng);
    ab.kl_spatial = sp.kl_inputs.empty() ? constant_scalar(0.0)
                                         : gen::kl_loss(sp.kl_inputs);
  }
  if (all_keep) ab.kl_spatial = constant_scalar(0.0);

  Var xn_aug = gen::apply_node_view_features(xn, ab.spatial_view.node_sample);
  if (!spatial_graph.edge_list.empty())
    ab.spatial_edge_weights =
        gen::edge_weights_from_view(ab.spatial_view, spatial_graph.edge_list);

  // Back to time-major (T*N x F).
  Var x_tmajor = permute_rows(reshape(xn_aug, t * n, f),
                              model::perm_node_to_time_major(t, n));

  // Temporal view: time steps carry the full frame (T x N*F). View logits
  // are computed from the original signal; mixing applies to the
  // spatially-augmented one.
  if (all_keep) {
    ab.temporal_view = all_keep_view(t, temporal_graph.edge_list.size());
    ab.kl_temporal = constant_scalar(0.0);
  } else {
    Var xt_orig = constant(t, n * f, sample.x.data);
    gen::GeneratedParams tp =
        tgen->forward(sample.x.data, cfg.model, rng, deterministic);
    ab.temporal_view =
        gen::node_view(xt_orig, temporal_graph.edge_list, tp.gin, tau, hard, rng);
    gen::edge_view(ab.temporal_view, temporal_graph.edge_list, tp.edge, tau, hard, rng);
    ab.kl_temporal = tp.kl_inputs.empty() ? constant_scalar(0.0)
                                          : gen::kl_loss(tp.kl_inputs);
  }

  Var xt = reshape(x_tmajor, t, n * f);
  Var xt_aug = gen::apply_node_view_features(xt, ab.temporal_view.node_sample);
  ab.x_aug_flat = reshape(xt_aug, t * n, f);
  if (!temporal_graph.edge_list.empty())
    ab.temporal_edge_weights =
        gen::edge_weights_from_view(ab.temporal_view, temporal_graph.edge_list);
  return ab;
}

// --- Data preparation --------------------------------------------------------

PreparedData prepare_data(const data::LoadedDataset& ds, std::size_t t_in,
                          std::size_t t_out, std::size_t stride) {
  PreparedData pd;
  pd.raw_windows = data::make_windows(ds.signal, ds.time_index, t_in, t_out, stride);
  pd.split = data::split_dataset(pd.raw_windows.size(), ds.kind, ds.interval_minutes);

  // Normalizer fit on the raw slice covered by the training windows only.
  const std::size_t train_end = pd.split.train.back() + t_in + t_out;
  FeatureTensor train_slice(train_end, ds.signal.n, ds.signal.f);
  std::copy_n(ds.signal.data.begin(), train_slice.size(), train_slice.data.begin());
  pd.norm = data::fit_normalizer(train_slice);

  FeatureTensor normalized = data::apply_normalizer(ds.signal, pd.norm);
  pd.norm_windows = data::make_windows(normalized, ds.time_index, t_in, t_out, stride);

  FeatureTensor train_targets(train_end - t_in, ds.signal.n, ds.signal.f);
  std::copy_n(ds.signal.data.begin() + t_in * ds.signal.n * ds.signal.f,
              train_targets.size(), train_targets.data.begin());
  pd.density_class = data::density_bins(train_targets);
  return pd;
}

// --- Forward helpers -----------------------------------------------------------

FeatureTensor predict(Trainer& tr, const STGSample& s) {
  Var x = constant(s.x.t * s.x.n, s.x.f, s.x.data);
  auto enc = model::encode(x, tr.spatial_structure, tr.temporal_structure, tr.net);
  const int tod = tr.cfg.model.decoder_uses_last_step ? s.tod_index.back() : s.tod_index.front();
  const int dow = tr.cfg.model.decoder_uses_last_step ? s.dow_index.back() : s.dow_index.front();
  Var y = model::decode(enc.h, enc.x0, tr.net, tod, dow);
  FeatureTensor out(tr.net.t_out, tr.net.n_nodes, tr.net.f_out, y->val);
  return data::invert_normalizer(out, tr.norm);
}

FeatureTensor historical_average(const STGSample& raw, std::size_t t_out) {
  FeatureTensor out(t_out, raw.x.n, raw.x.f);
  for (std::size_t i = 0; i < raw.x.n; ++i)
    for (std::size_t j = 0; j < raw.x.f; ++j) {
      double m = 0.0;
      for (std::size_t t = 0; t < raw.x.t; ++t) m += raw.x.at(t, i, j);
      m /= static_cast<double>(raw.x.t);
      for (std::size_t t = 0; t < t_out; ++t) out.at(t, i, j) = m;
    }
  return out;
}

metrics::MetricsReport evaluate_split(Trainer& tr, const PreparedData& pd,
                                      const std::vector<std::size_t>& indices,
                                      double missing_rate, std::uint64_t seed,
                                      const std::vector<int>* density_class) {
  std::vector<FeatureTensor> y, yhat;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    const STGSample& raw = pd.raw_windows[i];
    STGSample input = pd.norm_windows[i];
    if (missing_rate > 0.0) {
      auto [corrupted, mask] =
          data::corrupt_missing(raw.x, missing_rate, seed + 0x9e3779b9ull * k);
      input.x = data::apply_normalizer(corrupted, tr.norm);
    }
    y.push_back(raw.y);
    yhat.push_back(predict(tr, input));
  }
  return metrics::compute_metrics(y, yhat, nullptr, density_class);
}

// --- Checkpoints ----------------------------------------------------------------

namespace {

json config_to_json(const Trainer& tr) {
  const ModelConfig& m = tr.cfg.model;
  return json{{"d", m.d},
              {"d_s", m.d_s},
              {"d_t", m.d_t},
              {"d_z", m.d_z},
              {"d_pos", m.d_pos},
              {"d_proj", m.d_proj},
              {"k_spatial", m.k_spatial},
              {"k_temporal", m.k_temporal},
              {"n_gat_layers", m.n_gat_layers},
              {"gin_eps1", m.gin_eps1},
              {"gin_eps2", m.gin_eps2},
              {"gin_d1", m.gin_d1},
              {"gin_hidden", m.gin_hidden},
              {"phi_hidden", m.phi_hidden},
              {"psi_hidden", m.psi_hidden},
              {"dec_hidden", m.dec_hidden},
              {"proj_hidden", m.proj_hidden},
              {"tau_gumbel", m.tau_gumbel},
              {"leaky_slope", m.leaky_slope},
              {"average_last_gat", m.average_last_gat},
              {"share_theta3_latent", m.share_theta3_latent},
              {"decoder_uses_last_step", m.decoder_uses_last_step},
              {"t_in", tr.net.t_in},
              {"t_out", tr.net.t_out},
              {"f_in", tr.net.f_in},
              {"f_out", tr.net.f_out},
              {"n_nodes", tr.net.n_nodes},
              {"task", tr.cfg.loss.task == losses::Task::traffic ? "traffic" : "crime"},
              {"delta", tr.cfg.loss.delta},
              {"tau_cl", tr.cfg.loss.tau_cl},
              {"variant", variant_name(tr.cfg.variant)},
              {"hard_sampling", tr.cfg.hard_sampling},
              {"seed", tr.cfg.train.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig m;
  m.d = j.at("d");
  m.d_s = j.at("d_s");
  m.d_t = j.at("d_t");
  m.d_z = j.at("d_z");
  m.d_pos = j.at("d_pos");
  m.d_proj = j.at("d_proj");
  m.k_spatial = j.at("k_spatial");
  m.k_temporal = j.at("k_temporal");
  m.n_gat_layers = j.at("n_gat_layers");
  m.gin_eps1 = j.at("gin_eps1");
  m.gin_eps2 = j.at("gin_eps2");
  m.gin_d1 = j.at("gin_d1");
  m.gin_hidden = j.at("gin_hidden");
  m.phi_hidden = j.at("phi_hidden");
  m.psi_hidden = j.at("psi_hidden");
  m.dec_hidden = j.at("dec_hidden");
  m.proj_hidden = j.at("proj_hidden");
  m.tau_gumbel = j.at("tau_gumbel");
  m.leaky_slope = j.at("leaky_slope");
  m.average_last_gat = j.at("average_last_gat");
  m.share_theta3_latent = j.at("share_theta3_latent");
  m.decoder_uses_last_step = j.at("decoder_uses_last_step");
  return m;
}

}  // namespace

void save_checkpoint(const Trainer& tr, std::size_t, std::size_t, std::size_t,
                     std::size_t, const std::string& path) {
  json j;
  j["config"] = config_to_json(tr);
  j["normalizer"] = {{"mean", tr.norm.mean}, {"std", tr.norm.std}};
  json params = json::object();
  for (const auto& [name, v] : tr.named_parameters())
    params[name] = {{"rows", v->rows}, {"cols", v->cols}, {"data", v->val}};
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
}

Trainer load_checkpoint(const std::string& path, const SpatialGraph& graph) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  const json& cj = j.at("config");

  TrainerConfig cfg;
  cfg.model = config_from_json(cj);
  cfg.loss.task = cj.at("task") == "traffic" ? losses::Task::traffic : losses::Task::crime;
  cfg.loss.delta = cj.at("delta");
  cfg.loss.tau_cl = cj.at("tau_cl");
  cfg.variant = variant_from_string(cj.at("variant"));
  cfg.hard_sampling = cj.at("hard_sampling");
  cfg.train.seed = cj.at("seed");

  const std::size_t n_nodes = cj.at("n_nodes");
  if (graph.n_nodes != n_nodes)
    throw std::runtime_error("checkpoint/dataset node count mismatch");
  Trainer tr = make_trainer(cfg, cj.at("t_in"), cj.at("t_out"), cj.at("f_in"),
                            cj.at("f_out"), graph);
  tr.norm.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
  tr.norm.std = j.at("normalizer").at("std").get<std::vector<double>>();

  const json& params = j.at("params");
  for (auto& [name, v] : tr.named_parameters()) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint missing parameter: " + name);
    const json& pj = params.at(name);
    if (pj.at("rows") != v->rows || pj.at("cols") != v->cols)
      throw std::runtime_error("checkpoint parameter shape mismatch: " + name);
    v->val = pj.at("data").get<std::vector<double>>();
  }
  return tr;
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  CheckpointInfo info;
  info.t_in = j.at("config").at("t_in");
  info.t_out = j.at("config").at("t_out");
  info.f_in = j.at("config").at("f_in");
  info.f_out = j.at("config").at("f_out");
  info.n_nodes = j.at("config").at("n_nodes");
  for (auto& [name, val] : j.at("params").items()) info.param_names.push_back(name);
  return info;
}

// --- Training loop ---------------------------------------------------------------

TrainResult run_training(Trainer& tr, const PreparedData& pd, const std::string& out_dir) {
  const auto& tcfg = tr.cfg.train;
  if (tcfg.batch_size < 2 && tr.augmented_enabled())
    throw std::invalid_argument("run_training: batch size must be >= 2 for contrastive");

  const std::vector<Var> params = tr.parameters();
  Adam opt(params);
  std::ofstream log_out;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log_out.open(fs::path(out_dir) / "log.ndjson");
  }

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_best = 0;

  std::vector<std::size_t> train_idx = pd.split.train;
  std::mt19937_64 shuffle_rng(tcfg.seed ^ 0x5bd1e995u);

  for (std::size_t epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    const double lr = losses::lr_at(epoch, tr.cfg.train);
    const auto lambdas = tr.cfg.anneal.at(epoch);
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += tcfg.batch_size) {
      const std::size_t b1 = std::min(b0 + tcfg.batch_size, train_idx.size());
      const std::size_t bsz = b1 - b0;
      if (tr.augmented_enabled() && bsz < 2) break;

      opt.zero_grad();
      Var pred_sum = constant_scalar(0.0);
      Var kl_s_sum = constant_scalar(0.0);
      Var kl_t_sum = constant_scalar(0.0);
      std::vector<Var> z_orig, z_aug;

      for (std::size_t k = b0; k < b1; ++k) {
        const STGSample& s = pd.norm_windows[train_idx[k]];
        Var x = constant(s.x.t * s.x.n, s.x.f, s.x.data);
        auto enc = model::encode(x, tr.spatial_structure, tr.temporal_structure, tr.net);
        const int tod = tr.cfg.model.decoder_uses_last_step ? s.tod_index.back()
                                                            : s.tod_index.front();
        const int dow = tr.cfg.model.decoder_uses_last_step ? s.dow_index.back()
                                                            : s.dow_index.front();
        Var yhat = model::decode(enc.h, enc.x0, tr.net, tod, dow);

        if (tr.augmented_enabled()) {
          AugmentedBranch ab = tr.augment(s);
          auto enc_a = model::encode(ab.x_aug_flat, tr.spatial_structure,
                                     tr.temporal_structure, tr.net,
                                     ab.spatial_edge_weights, ab.temporal_edge_weights);
          Var yhat_a = model::decode(enc_a.h, enc_a.x0, tr.net, tod, dow);
          pred_sum = add(pred_sum,
                         losses::prediction_loss(s.y.data, yhat, yhat_a, tr.cfg.loss));
          kl_s_sum = add(kl_s_sum, ab.kl_spatial);
          kl_t_sum = add(kl_t_sum, ab.kl_temporal);
          z_orig.push_back(model::project(enc.h, tr.net));
          z_aug.push_back(model::project(enc_a.h, tr.net));
        } else {
          Var single = tr.cfg.loss.task == losses::Task::traffic
                           ? losses::huber_loss(yhat, s.y.data, tr.cfg.loss.delta)
                           : losses::squared_error_loss(yhat, s.y.data);
          pred_sum = add(pred_sum, single);
        }
      }

      const double inv_b = 1.0 / static_cast<double>(bsz);
      Var pred_mean = scale(pred_sum, inv_b);
      Var cl = constant_scalar(0.0);
      if (tr.augmented_enabled()) {
        Var zo = concat_rows(z_orig);
        Var za = concat_rows(z_aug);
        // A degenerate augmentation can zero out an entire projection row;
        // the contrastive direction is undefined there, so drop the term for
        // this batch instead of aborting the run.
        auto rows_ok = [](const Var& m) {
          for (std::size_t r = 0; r < m->rows; ++r) {
            double n2 = 0.0;
            for (std::size_t c = 0; c < m->cols; ++c) {
              const double v = m->val[r * m->cols + c];
              n2 += v * v;
            }
            if (n2 == 0.0) return false;
          }
          return true;
        };
        if (rows_ok(zo) && rows_ok(za))
          cl = losses::contrastive_loss(zo, za, tr.cfg.loss);
      }
      Var loss = losses::joint_loss(pred_mean, cl, scale(kl_s_sum, inv_b),
                                    scale(kl_t_sum, inv_b), lambdas);
      ad::backward(loss);

      if (tcfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const auto& p : params)
          for (double g : p->grad) norm_sq += g * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > tcfg.grad_clip) {
          const double s = tcfg.grad_clip / norm;
          for (const auto& p : params)
            for (double& g : p->grad) g *= s;
        }
      }
      opt.step(lr);
      epoch_loss += loss->scalar();
      ++n_batches;
    }

    auto val_report = evaluate_split(tr, pd, pd.split.val);
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = n_batches ? epoch_loss / static_cast<double>(n_batches) : 0.0;
    em.val_mae = val_report.overall.mae;
    em.val_rmse = val_report.overall.rmse;
    em.val_mape = val_report.overall.mape_percent.value_or(0.0);
    em.lr = lr;
    em.lambdas = lambdas;
    result.log.push_back(em);
    if (log_out) {
      json line = {{"epoch", em.epoch},       {"train_loss", em.train_loss},
                   {"val_mae", em.val_mae},   {"val_rmse", em.val_rmse},
                   {"val_mape", em.val_mape}, {"lr", em.lr},
                   {"lambda1", em.lambdas[0]}, {"lambda2", em.lambdas[1]},
                   {"lambda3", em.lambdas[2]}};
      log_out << line.dump() << "\n";
      log_out.flush();
    }

    if (em.val_mae < best_val) {
      best_val = em.val_mae;
      result.best_epoch = epoch;
      epochs_since_best = 0;
      if (!out_dir.empty())
        save_checkpoint(tr, tr.net.t_in, tr.net.t_out, tr.net.f_in, tr.net.f_out,
                        (fs::path(out_dir) / "best.ckpt").string());
    } else if (++epochs_since_best >= tcfg.patience) {
      break;
    }
  }

  // Final test metrics from the best-on-validation parameters.
  if (!out_dir.empty() && fs::exists(fs::path(out_dir) / "best.ckpt")) {
    Trainer best = load_checkpoint((fs::path(out_dir) / "best.ckpt").string(),
                                   tr.spatial_graph);
    result.test_report = evaluate_split(best, pd, pd.split.test);
  } else {
    result.test_report = evaluate_split(tr, pd, pd.split.test);
  }

  std::vector<FeatureTensor> y, yhat_ha;
  for (std::size_t i : pd.split.test) {
    y.push_back(pd.raw_windows[i].y);
    yhat_ha.push_back(historical_average(pd.raw_windows[i], tr.net.t_out));
  }
  result.ha_report = metrics::compute_metrics(y, yhat_ha);
  return result;
}

}  // namespace cl4st::train
