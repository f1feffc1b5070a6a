#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cl4st/metrics.hpp"
#include "cl4st/train.hpp"

// report.json emission and validation, plus file-based exports (CSV and
// static image files) of attention scores and augmentation decisions.

namespace cl4st::report {

struct ReportMeta {
  std::string command;            // train | evaluate | ablate
  std::string dataset;            // dataset directory
  std::string variant = "full";
  std::uint64_t seed = 0;
  double missing_rate = 0.0;
  std::optional<std::size_t> best_epoch;
};

nlohmann::json metrics_to_json(const metrics::MetricsReport& r);

nlohmann::json build_report(const ReportMeta& meta, const metrics::MetricsReport& test,
                            const metrics::MetricsReport* baseline = nullptr);

void write_report(const std::string& path, const nlohmann::json& report);

// Throws std::runtime_error naming the first violated constraint. Mirrors
// the shipped schemas/report.schema.json.
void validate_report(const nlohmann::json& report);

// Grayscale heatmap (binary PGM), values min-max normalized.
void write_pgm_heatmap(const std::string& path, const std::vector<double>& values,
                       std::size_t rows, std::size_t cols);

// Color map (binary PPM) of per-cell action codes: keep green, mask blue,
// drop red.
void write_ppm_action_map(const std::string& path, const std::vector<std::size_t>& actions,
                          std::size_t rows, std::size_t cols);

// Writes attention_{spatial|temporal}_l{L}_h{K}.csv dense matrices plus a
// heatmap image per matrix. Re-checks that every row sums to 1 +- 1e-6.
void export_attention(train::Trainer& tr, const STGSample& norm_sample,
                      const std::string& out_dir);

// Writes {spatial|temporal}_nodes.csv (node,action) and _edges.csv
// (src,dst,action); for grid datasets also a color-coded I x J map image.
void export_augmentations(train::Trainer& tr, const STGSample& norm_sample,
                          std::size_t grid_rows, std::size_t grid_cols,
                          const std::string& out_dir);

}  // namespace cl4st::report
