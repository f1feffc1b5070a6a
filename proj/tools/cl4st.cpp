// cl4st command-line harness: train / evaluate / ablate / export / synth /
// convert. Configuration files are JSON; CL4ST_SEED overrides the config
// seed when set.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cl4st/data.hpp"
#include "cl4st/report.hpp"
#include "cl4st/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cl4st;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CL4ST_SEED");
  if (!s || !*s) return std::nullopt;
  return std::strtoull(s, nullptr, 10);
}

struct RunConfig {
  std::string dataset;
  std::string out_dir = "run";
  std::size_t t_in = 12, t_out = 12;
  std::size_t stride = 1;  // window stride during training
  train::TrainerConfig trainer;
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j = json::parse(in);

  RunConfig c;
  c.dataset = j.at("dataset").get<std::string>();
  maybe(j, "out_dir", c.out_dir);
  maybe(j, "t_in", c.t_in);
  maybe(j, "t_out", c.t_out);
  maybe(j, "stride", c.stride);

  ModelConfig& m = c.trainer.model;
  if (j.contains("model")) {
    const json& mj = j["model"];
    maybe(mj, "d", m.d);
    maybe(mj, "d_s", m.d_s);
    maybe(mj, "d_t", m.d_t);
    maybe(mj, "d_z", m.d_z);
    maybe(mj, "d_pos", m.d_pos);
    maybe(mj, "d_proj", m.d_proj);
    maybe(mj, "k_spatial", m.k_spatial);
    maybe(mj, "k_temporal", m.k_temporal);
    maybe(mj, "n_gat_layers", m.n_gat_layers);
    maybe(mj, "gin_d1", m.gin_d1);
    maybe(mj, "gin_hidden", m.gin_hidden);
    maybe(mj, "phi_hidden", m.phi_hidden);
    maybe(mj, "psi_hidden", m.psi_hidden);
    maybe(mj, "dec_hidden", m.dec_hidden);
    maybe(mj, "proj_hidden", m.proj_hidden);
    maybe(mj, "tau_gumbel", m.tau_gumbel);
    maybe(mj, "share_theta3_latent", m.share_theta3_latent);
  }

  losses::TrainConfig& t = c.trainer.train;
  if (j.contains("train")) {
    const json& tj = j["train"];
    maybe(tj, "batch_size", t.batch_size);
    maybe(tj, "lr", t.lr);
    maybe(tj, "decay_ratio", t.decay_ratio);
    maybe(tj, "decay_epochs", t.decay_epochs);
    maybe(tj, "max_epochs", t.max_epochs);
    maybe(tj, "grad_clip", t.grad_clip);
    maybe(tj, "patience", t.patience);
  }
  maybe(j, "seed", t.seed);
  if (auto s = env_seed()) t.seed = *s;

  if (j.contains("loss")) {
    const json& lj = j["loss"];
    maybe(lj, "delta", c.trainer.loss.delta);
    maybe(lj, "tau_cl", c.trainer.loss.tau_cl);
  }

  losses::AnnealSchedule& a = c.trainer.anneal;
  a.ramp_epochs = std::max<std::size_t>(1, t.max_epochs / 4);
  if (j.contains("anneal")) {
    const json& aj = j["anneal"];
    if (aj.contains("lambda_max")) {
      auto lm = aj["lambda_max"].get<std::vector<double>>();
      if (lm.size() != 3) throw std::runtime_error("anneal.lambda_max needs 3 entries");
      std::copy(lm.begin(), lm.end(), a.lambda_max.begin());
    }
    maybe(aj, "ramp_epochs", a.ramp_epochs);
    if (aj.contains("shape"))
      a.shape = aj["shape"] == "cosine" ? losses::AnnealShape::cosine
                                        : losses::AnnealShape::linear;
  }

  if (j.contains("variant"))
    c.trainer.variant = train::variant_from_string(j["variant"].get<std::string>());
  maybe(j, "hard_sampling", c.trainer.hard_sampling);
  return c;
}

int require_dataset(const std::string& path) {
  if (!fs::exists(path)) {
    std::cerr << "error: dataset path not found: " << path << "\n";
    return 2;
  }
  return 0;
}

int run_train(const std::string& config_path, const std::string& variant_override,
              const std::string& command_name) {
  RunConfig cfg = parse_config(config_path);
  if (!variant_override.empty())
    cfg.trainer.variant = train::variant_from_string(variant_override);
  if (int rc = require_dataset(cfg.dataset)) return rc;

  data::DatasetSpec spec;
  spec.path = cfg.dataset;
  data::LoadedDataset ds = data::load_dataset(spec);
  cfg.trainer.loss.task = ds.kind == data::DatasetKind::traffic_graph
                              ? losses::Task::traffic
                              : losses::Task::crime;

  train::PreparedData pd = train::prepare_data(ds, cfg.t_in, cfg.t_out, cfg.stride);
  std::string out_dir = cfg.out_dir;
  if (command_name == "ablate")
    out_dir += "_" + train::variant_name(cfg.trainer.variant);
  train::Trainer tr = train::make_trainer(cfg.trainer, cfg.t_in, cfg.t_out,
                                          ds.signal.f, ds.signal.f, ds.graph);
  tr.norm = pd.norm;
  train::TrainResult res = train::run_training(tr, pd, out_dir);

  report::ReportMeta meta;
  meta.command = command_name;
  meta.dataset = cfg.dataset;
  meta.variant = train::variant_name(cfg.trainer.variant);
  meta.seed = cfg.trainer.train.seed;
  meta.best_epoch = res.best_epoch;
  json rep = report::build_report(meta, res.test_report, &res.ha_report);
  report::write_report((fs::path(out_dir) / "report.json").string(), rep);

  std::cout << "test MAE " << res.test_report.overall.mae << "  RMSE "
            << res.test_report.overall.rmse << "  (historical average MAE "
            << res.ha_report.overall.mae << ")\n"
            << "artifacts in " << out_dir << "\n";
  return 0;
}

int run_evaluate(const std::string& ckpt, const std::string& dataset, double missing_rate,
                 std::uint64_t seed, bool density_bins, const std::string& out_path) {
  if (int rc = require_dataset(dataset)) return rc;
  data::DatasetSpec spec;
  spec.path = dataset;
  data::LoadedDataset ds = data::load_dataset(spec);

  train::Trainer tr = train::load_checkpoint(ckpt, ds.graph);
  if (auto s = env_seed()) seed = *s;
  train::PreparedData pd = train::prepare_data(ds, tr.net.t_in, tr.net.t_out);
  pd.norm = tr.norm;  // evaluation uses the checkpoint's training statistics
  FeatureTensor normalized = data::apply_normalizer(ds.signal, tr.norm);
  pd.norm_windows = data::make_windows(normalized, ds.time_index, tr.net.t_in, tr.net.t_out);

  auto rep = train::evaluate_split(tr, pd, pd.split.test, missing_rate, seed,
                                   density_bins ? &pd.density_class : nullptr);

  report::ReportMeta meta;
  meta.command = "evaluate";
  meta.dataset = dataset;
  meta.variant = train::variant_name(tr.cfg.variant);
  meta.seed = seed;
  meta.missing_rate = missing_rate;
  report::write_report(out_path, report::build_report(meta, rep));
  std::cout << "test MAE " << rep.overall.mae << "  RMSE " << rep.overall.rmse
            << "  -> " << out_path << "\n";
  return 0;
}

int run_export(const std::string& ckpt, const std::string& dataset, const std::string& what,
               std::size_t sample, const std::string& out_dir) {
  if (int rc = require_dataset(dataset)) return rc;
  data::DatasetSpec spec;
  spec.path = dataset;
  data::LoadedDataset ds = data::load_dataset(spec);
  train::Trainer tr = train::load_checkpoint(ckpt, ds.graph);
  train::PreparedData pd = train::prepare_data(ds, tr.net.t_in, tr.net.t_out);
  if (sample >= pd.norm_windows.size()) {
    std::cerr << "error: sample " << sample << " out of range (have "
              << pd.norm_windows.size() << " windows)\n";
    return 1;
  }
  FeatureTensor normalized = data::apply_normalizer(ds.signal, tr.norm);
  pd.norm_windows = data::make_windows(normalized, ds.time_index, tr.net.t_in, tr.net.t_out);

  if (what == "attention")
    report::export_attention(tr, pd.norm_windows[sample], out_dir);
  else if (what == "augmentations")
    report::export_augmentations(tr, pd.norm_windows[sample], ds.grid_rows, ds.grid_cols,
                                 out_dir);
  else {
    std::cerr << "error: --what must be attention or augmentations\n";
    return 1;
  }
  std::cout << "exported " << what << " for sample " << sample << " to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CL4ST: spatio-temporal graph learning with contrastive views"};
  app.require_subcommand(1);

  std::string config_path, variant, ckpt, dataset, what, out;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  bool density_bins = false;
  std::size_t sample = 0, nodes = 64, steps = 2000;
  std::string distance_csv, signal_csv, start_ts = "1970-01-01T00:00:00Z";
  std::size_t conv_nodes = 0;
  int interval = 5;

  auto* t = app.add_subcommand("train", "train a model from a config file");
  t->add_option("--config", config_path, "JSON config")->required();

  auto* e = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  e->add_option("--ckpt", ckpt)->required();
  e->add_option("--data", dataset)->required();
  e->add_option("--missing-rate", missing_rate);
  e->add_option("--seed", seed);
  e->add_flag("--density-bins", density_bins);
  e->add_option("--out", out, "report path")->default_val("report.json");

  auto* a = app.add_subcommand("ablate", "train one ablation variant");
  a->add_option("--config", config_path)->required();
  a->add_option("--variant", variant)->required();

  auto* x = app.add_subcommand("export", "export attention or augmentations");
  x->add_option("--ckpt", ckpt)->required();
  x->add_option("--data", dataset)->required();
  x->add_option("--what", what)->required();
  x->add_option("--sample", sample)->default_val(0);
  x->add_option("--out", out, "output directory")->default_val("export");

  auto* s = app.add_subcommand("synth", "write a synthetic sensor dataset");
  s->add_option("--out", out)->required();
  s->add_option("--nodes", nodes)->default_val(64);
  s->add_option("--steps", steps)->default_val(2000);
  s->add_option("--seed", seed)->default_val(0);

  auto* c = app.add_subcommand("convert", "convert a public archive layout");
  c->add_option("--distances", distance_csv)->required();
  c->add_option("--signals", signal_csv)->required();
  c->add_option("--nodes", conv_nodes)->required();
  c->add_option("--interval-minutes", interval)->default_val(5);
  c->add_option("--start", start_ts);
  c->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return run_train(config_path, "", "train");
    if (e->parsed()) return run_evaluate(ckpt, dataset, missing_rate, seed, density_bins, out);
    if (a->parsed()) return run_train(config_path, variant, "ablate");
    if (x->parsed()) return run_export(ckpt, dataset, what, sample, out);
    if (s->parsed()) {
      if (auto es = env_seed()) seed = *es;
      data::write_synthetic_dataset(out, nodes, steps, seed);
      std::cout << "wrote synthetic dataset to " << out << "\n";
      return 0;
    }
    if (c->parsed()) {
      data::convert_pems_archive(distance_csv, signal_csv, conv_nodes, interval, start_ts, out);
      std::cout << "wrote converted dataset to " << out << "\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
