#include "cl4st/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cl4st::report {

namespace {

json triple_to_json(const metrics::MetricsTriple& t) {
  json j = {{"mae", t.mae}, {"rmse", t.rmse}};
  if (t.mape_percent)
    j["mape_percent"] = *t.mape_percent;
  else
    j["mape_percent"] = nullptr;
  return j;
}

void check_triple(const json& j, const std::string& where) {
  for (const char* key : {"mae", "rmse", "mape_percent"})
    if (!j.contains(key))
      throw std::runtime_error("report: " + where + " missing field '" + key + "'");
  if (!j["mae"].is_number() || j["mae"].get<double>() < 0.0)
    throw std::runtime_error("report: " + where + ".mae must be a nonnegative number");
  if (!j["rmse"].is_number() || j["rmse"].get<double>() < 0.0)
    throw std::runtime_error("report: " + where + ".rmse must be a nonnegative number");
  if (j["rmse"].get<double>() + 1e-9 < j["mae"].get<double>())
    throw std::runtime_error("report: " + where + " violates rmse >= mae");
  if (!j["mape_percent"].is_null() &&
      (!j["mape_percent"].is_number() || j["mape_percent"].get<double>() < 0.0))
    throw std::runtime_error("report: " + where + ".mape_percent must be null or >= 0");
}

void check_report_block(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("overall"))
    throw std::runtime_error("report: " + where + " must be an object with 'overall'");
  check_triple(j["overall"], where + ".overall");
  if (!j.contains("per_horizon") || !j["per_horizon"].is_array())
    throw std::runtime_error("report: " + where + ".per_horizon must be an array");
  for (std::size_t i = 0; i < j["per_horizon"].size(); ++i)
    check_triple(j["per_horizon"][i], where + ".per_horizon[" + std::to_string(i) + "]");
  if (j.contains("per_density_class")) {
    if (!j["per_density_class"].is_object())
      throw std::runtime_error("report: " + where + ".per_density_class must be an object");
    for (auto& [k, v] : j["per_density_class"].items())
      check_triple(v, where + ".per_density_class." + k);
  }
}

}  // namespace

json metrics_to_json(const metrics::MetricsReport& r) {
  json j;
  j["overall"] = triple_to_json(r.overall);
  j["per_horizon"] = json::array();
  for (const auto& t : r.per_horizon) j["per_horizon"].push_back(triple_to_json(t));
  if (!r.per_density_class.empty()) {
    json d = json::object();
    for (const auto& [cls, t] : r.per_density_class) d[std::to_string(cls)] = triple_to_json(t);
    j["per_density_class"] = std::move(d);
  }
  return j;
}

json build_report(const ReportMeta& meta, const metrics::MetricsReport& test,
                  const metrics::MetricsReport* baseline) {
  json j;
  j["command"] = meta.command;
  j["dataset"] = meta.dataset;
  j["variant"] = meta.variant;
  j["seed"] = meta.seed;
  j["missing_rate"] = meta.missing_rate;
  if (meta.best_epoch) j["best_epoch"] = *meta.best_epoch;
  j["metrics"] = metrics_to_json(test);
  if (baseline) j["baseline_historical_average"] = metrics_to_json(*baseline);
  return j;
}

void write_report(const std::string& path, const json& report) {
  validate_report(report);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << report.dump(2) << "\n";
}

void validate_report(const json& report) {
  if (!report.is_object()) throw std::runtime_error("report: root must be an object");
  for (const char* key : {"command", "dataset", "variant", "seed", "missing_rate", "metrics"})
    if (!report.contains(key))
      throw std::runtime_error(std::string("report: missing field '") + key + "'");
  if (!report["command"].is_string())
    throw std::runtime_error("report: command must be a string");
  const std::string cmd = report["command"];
  if (cmd != "train" && cmd != "evaluate" && cmd != "ablate")
    throw std::runtime_error("report: unknown command '" + cmd + "'");
  if (!report["variant"].is_string())
    throw std::runtime_error("report: variant must be a string");
  if (!report["seed"].is_number_integer() && !report["seed"].is_number_unsigned())
    throw std::runtime_error("report: seed must be an integer");
  if (!report["missing_rate"].is_number() || report["missing_rate"].get<double>() < 0.0 ||
      report["missing_rate"].get<double>() > 1.0)
    throw std::runtime_error("report: missing_rate must be in [0, 1]");
  check_report_block(report["metrics"], "metrics");
  if (report.contains("baseline_historical_average"))
    check_report_block(report["baseline_historical_average"], "baseline_historical_average");
}

// --- Images --------------------------------------------------------------

void write_pgm_heatmap(const std::string& path, const std::vector<double>& values,
                       std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols)
    throw std::invalid_argument("write_pgm_heatmap: size mismatch");
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it, mx = *mx_it;
  const double span = mx > mn ? mx - mn : 1.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : values) {
    const int px = static_cast<int>(std::lround(255.0 * (v - mn) / span));
    out.put(static_cast<char>(std::clamp(px, 0, 255)));
  }
}

void write_ppm_action_map(const std::string& path, const std::vector<std::size_t>& actions,
                          std::size_t rows, std::size_t cols) {
  if (actions.size() != rows * cols)
    throw std::invalid_argument("write_ppm_action_map: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << cols << " " << rows << "\n255\n";
  for (std::size_t a : actions) {
    unsigned char rgb[3] = {0, 0, 0};
    if (a == gen::kNodeDrop) rgb[0] = 220;        // red
    else if (a == gen::kNodeKeep) rgb[1] = 200;   // green
    else rgb[2] = 220;                            // blue (mask)
    out.write(reinterpret_cast<const char*>(rgb), 3);
  }
}

// --- Exports -------------------------------------------------------------

namespace {

std::vector<double> dense_alpha(const model::GraphStructure& g,
                                const std::vector<double>& alpha) {
  std::vector<double> m(g.n_nodes * g.n_nodes, 0.0);
  for (std::size_t e = 0; e < g.row.size(); ++e)
    m[g.row[e] * g.n_nodes + g.col[e]] = alpha[e];
  return m;
}

void write_matrix_csv(const std::string& path, const std::vector<double>& m,
                      std::size_t rows, std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out.precision(17);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << m[i * cols + j];
    out << "\n";
  }
}

void export_pass(const model::GraphStructure& g, const model::AttentionRecord& rec,
                 const std::string& tag, const fs::path& dir) {
  for (std::size_t l = 0; l < rec.alpha.size(); ++l)
    for (std::size_t h = 0; h < rec.alpha[l].size(); ++h) {
      const auto& alpha = rec.alpha[l][h];
      // Re-check the softmax invariant before emitting anything.
      for (std::size_t i = 0; i < g.n_nodes; ++i) {
        double s = 0.0;
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) s += alpha[e];
        if (std::abs(s - 1.0) > 1e-6)
          throw std::runtime_error("export_attention: " + tag + " row does not sum to 1");
      }
      std::vector<double> dense = dense_alpha(g, alpha);
      const std::string stem =
          "attention_" + tag + "_l" + std::to_string(l) + "_h" + std::to_string(h);
      write_matrix_csv((dir / (stem + ".csv")).string(), dense, g.n_nodes, g.n_nodes);
      write_pgm_heatmap((dir / (stem + ".pgm")).string(), dense, g.n_nodes, g.n_nodes);
    }
}

const char* node_action_name(std::size_t a) {
  if (a == gen::kNodeDrop) return "drop";
  if (a == gen::kNodeKeep) return "keep";
  return "mask";
}

void write_view_csvs(const gen::AugmentationView& view,
                     const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                     const std::string& tag, const fs::path& dir) {
  {
    std::ofstream out(dir / (tag + "_nodes.csv"));
    out << "node,action\n";
    for (std::size_t i = 0; i < view.node_actions.size(); ++i)
      out << i << "," << node_action_name(view.node_actions[i]) << "\n";
  }
  {
    std::ofstream out(dir / (tag + "_edges.csv"));
    out << "src,dst,action\n";
    for (std::size_t e = 0; e < edges.size(); ++e)
      out << edges[e].first << "," << edges[e].second << ","
          << (view.edge_actions[e] == gen::kEdgeKeep ? "keep" : "drop") << "\n";
  }
}

}  // namespace

void export_attention(train::Trainer& tr, const STGSample& norm_sample,
                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  ad::Var x = ad::constant(norm_sample.x.t * norm_sample.x.n, norm_sample.x.f,
                           norm_sample.x.data);
  auto enc = model::encode(x, tr.spatial_structure, tr.temporal_structure, tr.net,
                           std::nullopt, std::nullopt, /*record_attention=*/true);
  export_pass(tr.spatial_structure, enc.spatial_attn, "spatial", out_dir);
  export_pass(tr.temporal_structure, enc.temporal_attn, "temporal", out_dir);
}

void export_augmentations(train::Trainer& tr, const STGSample& norm_sample,
                          std::size_t grid_rows, std::size_t grid_cols,
                          const std::string& out_dir) {
  if (!tr.augmented_enabled())
    throw std::runtime_error("export_augmentations: variant has no view generators");
  fs::create_directories(out_dir);
  train::AugmentedBranch ab = tr.augment(norm_sample, /*deterministic=*/true);
  write_view_csvs(ab.spatial_view, tr.spatial_graph.edge_list, "spatial", out_dir);
  write_view_csvs(ab.temporal_view, tr.temporal_graph.edge_list, "temporal", out_dir);
  if (grid_rows > 0 && grid_cols > 0 &&
      grid_rows * grid_cols == ab.spatial_view.node_actions.size())
    write_ppm_action_map((fs::path(out_dir) / "spatial_actions.ppm").string(),
                         ab.spatial_view.node_actions, grid_rows, grid_cols);
}

}  // namespace cl4st::report
