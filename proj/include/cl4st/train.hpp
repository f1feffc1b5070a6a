#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cl4st/data.hpp"
#include "cl4st/generator.hpp"
#include "cl4st/losses.hpp"
#include "cl4st/metrics.hpp"
#include "cl4st/model.hpp"

namespace cl4st::train {

using ad::Var;

class Adam {
 public:
  Adam(std::vector<Var> params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(double lr);
  void zero_grad();

 private:
  std::vector<Var> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
};

enum class AblationVariant { full, wo_node_meta, wo_edge_meta, wo_meta, wo_gcl };

AblationVariant variant_from_string(const std::string& name);
std::string variant_name(AblationVariant v);

// View generator for one graph (spatial or temporal). Theta groups are
// either meta-generated or plain learnable parameters, per ablation.
struct ViewModule {
  bool node_meta = true;
  bool edge_meta = true;
  std::size_t d_z = 0;
  std::size_t feature_dim = 0;

  // Meta groups, present when the corresponding flag is set.
  std::optional<gen::MetaGroup> group1, group2, group3;
  // Theta3 emitter under latent sharing (node_meta && edge_meta && sharing).
  Var psi3_w1, psi3_b1, psi3_w2, psi3_b2;
  bool share_theta3 = false;
  gen::MlpShape theta3_shape;

  // Direct parameters for non-meta groups.
  std::optional<gen::MlpVars> direct_theta1, direct_theta2, direct_theta3;

  gen::GeneratedParams forward(const std::vector<double>& flat_features,
                               const ModelConfig& cfg, std::mt19937_64& rng,
                               bool deterministic) const;
  std::vector<std::pair<std::string, Var>> named_parameters(const std::string& prefix) const;
};

ViewModule make_view_module(std::size_t feature_dim, std::size_t f_node,
                            const ModelConfig& cfg, bool node_meta, bool edge_meta,
                            std::mt19937_64& rng);

struct TrainerConfig {
  ModelConfig model;
  losses::LossConfig loss;
  losses::TrainConfig train;
  losses::AnnealSchedule anneal;
  AblationVariant variant = AblationVariant::full;
  bool hard_sampling = true;  // straight-through during training
};

// One sample's augmented-branch artifacts.
struct AugmentedBranch {
  Var x_aug_flat;          // (T*N x F), time-major, after both node views
  std::optional<Var> spatial_edge_weights;
  std::optional<Var> temporal_edge_weights;
  Var kl_spatial, kl_temporal;
  gen::AugmentationView spatial_view, temporal_view;
};

struct Trainer {
  TrainerConfig cfg;
  model::EncoderDecoder net;
  std::optional<ViewModule> sgen, tgen;  // absent for wo_gcl
  model::GraphStructure spatial_structure, temporal_structure;
  SpatialGraph spatial_graph;
  TemporalGraph temporal_graph;
  data::NormalizationStats norm;
  std::mt19937_64 rng;

  bool augmented_enabled() const { return cfg.variant != AblationVariant::wo_gcl; }

  // Builds the augmented branch for one normalized sample.
  AugmentedBranch augment(const STGSample& sample, bool deterministic = false,
                          bool hard_override_all_keep = false);

  std::vector<std::pair<std::string, Var>> named_parameters() const;
  std::vector<Var> parameters() const;
};

Trainer make_trainer(const TrainerConfig& cfg, std::size_t t_in, std::size_t t_out,
                     std::size_t f_in, std::size_t f_out, const SpatialGraph& graph);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0, val_rmse = 0.0, val_mape = 0.0;
  double lr = 0.0;
  std::array<double, 3> lambdas{};
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  metrics::MetricsReport test_report;
  metrics::MetricsReport ha_report;  // historical-average baseline on test
  std::size_t best_epoch = 0;
};

struct PreparedData {
  std::vector<STGSample> raw_windows;   // original units
  std::vector<STGSample> norm_windows;  // normalized units
  data::SplitIndices split;
  data::NormalizationStats norm;
  std::vector<int> density_class;       // from train targets, raw units
};

PreparedData prepare_data(const data::LoadedDataset& ds, std::size_t t_in,
                          std::size_t t_out, std::size_t stride = 1);

// Full training loop; writes best.ckpt and log.ndjson under out_dir when
// out_dir is non-empty.
TrainResult run_training(Trainer& trainer, const PreparedData& data,
                         const std::string& out_dir);

// Predicts one sample through the original branch (no sampling).
FeatureTensor predict(Trainer& trainer, const STGSample& norm_sample);

// Historical-average baseline: per node/feature mean of the input window.
FeatureTensor historical_average(const STGSample& raw_sample, std::size_t t_out);

metrics::MetricsReport evaluate_split(Trainer& trainer, const PreparedData& data,
                                      const std::vector<std::size_t>& indices,
                                      double missing_rate = 0.0, std::uint64_t seed = 0,
                                      const std::vector<int>* density_class = nullptr);

void save_checkpoint(const Trainer& trainer, std::size_t t_in, std::size_t t_out,
                     std::size_t f_in, std::size_t f_out, const std::string& path);
Trainer load_checkpoint(const std::string& path, const SpatialGraph& graph);

// Checkpoint metadata needed to rebuild the dataset pipeline.
struct CheckpointInfo {
  std::size_t t_in = 0, t_out = 0, f_in = 0, f_out = 0, n_nodes = 0;
  std::vector<std::string> param_names;
};
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace cl4st::train
