#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cl4st/stg.hpp"

namespace cl4st::data {

enum class DatasetKind { traffic_graph, crime_grid };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::traffic_graph;
  std::string path;
  int interval_minutes = 5;
  std::size_t t_in = 12;
  std::size_t t_out = 12;
  // traffic defaults 6:2:2 over windows; crime 7:1 train:test with a
  // 30-day validation carve-out from the training span.
};

struct TimeIndex {
  std::vector<int> tod;  // per step, in [0, 288)
  std::vector<int> dow;  // per step, in [0, 7)
};

struct LoadedDataset {
  FeatureTensor signal;  // T_total x N x F, un-normalized
  SpatialGraph graph;
  TimeIndex time_index;
  DatasetKind kind = DatasetKind::traffic_graph;
  std::size_t grid_rows = 0, grid_cols = 0;  // crime grids only
  int interval_minutes = 5;
};

// Dataset directory layout: meta.json + signals.csv|signals.bin
// (+ distances.csv for traffic graphs). See README for the format.
LoadedDataset load_dataset(const DatasetSpec& spec);

struct NormalizationStats {
  std::vector<double> mean;  // per feature
  std::vector<double> std;   // per feature, > 0
};

NormalizationStats fit_normalizer(const FeatureTensor& train_slice);
FeatureTensor apply_normalizer(const FeatureTensor& x, const NormalizationStats& s);
FeatureTensor invert_normalizer(const FeatureTensor& x, const NormalizationStats& s);

std::vector<STGSample> make_windows(const FeatureTensor& data, const TimeIndex& time_index,
                                    std::size_t t_in, std::size_t t_out,
                                    std::size_t stride = 1);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

SplitIndices split_dataset(std::size_t n_samples, DatasetKind kind,
                           int interval_minutes = 1440);

struct CorruptionMask {
  std::vector<std::uint8_t> mask;  // T_total x N; 1 = zeroed
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::size_t t = 0, n = 0;
};

std::pair<FeatureTensor, CorruptionMask> corrupt_missing(const FeatureTensor& data,
                                                         double rate,
                                                         std::uint64_t seed);

// Per-node density class in {0, 1, 2, 3} covering (right-closed) bins
// 0-0.25, 0.25-0.5, 0.5-0.75, 0.75-1.0 of max-normalized nonzero density.
std::vector<int> density_bins(const FeatureTensor& train_targets);

// Synthetic sensor dataset: graph-diffused sinusoids plus noise, written
// in the documented directory layout.
void write_synthetic_dataset(const std::string& out_dir, std::size_t n_nodes,
                             std::size_t n_steps, std::uint64_t seed);

// Converts the common public PeMS archive layout (adj CSV "from,to,cost"
// plus a flat signal CSV) into the documented directory layout.
void convert_pems_archive(const std::string& distance_csv, const std::string& signal_csv,
                          std::size_t n_nodes, int interval_minutes,
                          const std::string& start_timestamp, const std::string& out_dir);

// Serialization helpers shared by loaders and tests.
void write_signals_bin(const std::string& path, const FeatureTensor& x);
FeatureTensor read_signals_bin(const std::string& path);

}  // namespace cl4st::data
