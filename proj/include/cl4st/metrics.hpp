#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "cl4st/stg.hpp"

namespace cl4st::metrics {

struct MetricsTriple {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape_percent;  // undefined when no entry clears the floor
};

struct MetricsReport {
  MetricsTriple overall;
  std::vector<MetricsTriple> per_horizon;             // length T'
  std::map<int, MetricsTriple> per_density_class;     // class -> metrics
};

// Entries with |y| <= mape_floor are excluded from MAPE.
inline constexpr double kMapeFloor = 1e-4;

// y/y_hat: stacked predictions, each sample (T' x N x F'). mask, when given,
// marks excluded (missing) ground-truth entries per (sample, t', node).
MetricsReport compute_metrics(const std::vector<FeatureTensor>& y,
                              const std::vector<FeatureTensor>& y_hat,
                              const std::vector<std::uint8_t>* mask = nullptr,
                              const std::vector<int>* density_class = nullptr);

}  // namespace cl4st::metrics
