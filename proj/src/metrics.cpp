#include "cl4st/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace cl4st::metrics {

namespace {

struct Accumulator {
  double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
  std::size_t count = 0, ape_count = 0;

  void add(double y, double yh) {
    const double r = y - yh;
    abs_sum += std::abs(r);
    sq_sum += r * r;
    ++count;
    if (std::abs(y) > kMapeFloor) {
      ape_sum += std::abs(r / y) * 100.0;
      ++ape_count;
    }
  }

  MetricsTriple finish() const {
    MetricsTriple m;
    if (count > 0) {
      m.mae = abs_sum / static_cast<double>(count);
      m.rmse = std::sqrt(sq_sum / static_cast<double>(count));
    }
    if (ape_count > 0) m.mape_percent = ape_sum / static_cast<double>(ape_count);
    return m;
  }
};

}  // namespace

MetricsReport compute_metrics(const std::vector<FeatureTensor>& y,
                              const std::vector<FeatureTensor>& y_hat,
                              const std::vector<std::uint8_t>* mask,
                              const std::vector<int>* density_class) {
  if (y.size() != y_hat.size() || y.empty())
    throw std::invalid_argument("compute_metrics: sample count mismatch");
  const std::size_t t_out = y[0].t, n = y[0].n, f = y[0].f;
  if (mask && mask->size() != y.size() * t_out * n)
    throw std::invalid_argument("compute_metrics: mask size mismatch");
  if (density_class && density_class->size() != n)
    throw std::invalid_argument("compute_metrics: density class size mismatch");

  Accumulator overall;
  std::vector<Accumulator> horizon(t_out);
  std::map<int, Accumulator> by_class;

  for (std::size_t s = 0; s < y.size(); ++s) {
    if (y[s].t != t_out || y[s].n != n || y[s].f != f ||
        y_hat[s].t != t_out || y_hat[s].n != n || y_hat[s].f != f)
      throw std::invalid_argument("compute_metrics: shape mismatch at sample " +
                                  std::to_string(s));
    for (std::size_t t = 0; t < t_out; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        if (mask && (*mask)[(s * t_out + t) * n + i]) continue;
        for (std::size_t j = 0; j < f; ++j) {
          const double yy = y[s].at(t, i, j), yh = y_hat[s].at(t, i, j);
          overall.add(yy, yh);
          horizon[t].add(yy, yh);
          if (density_class) by_class[(*density_class)[i]].add(yy, yh);
        }
      }
  }

  MetricsReport report;
  report.overall = overall.finish();
  for (const auto& h : horizon) report.per_horizon.push_back(h.finish());
  for (const auto& [cls, acc] : by_class) report.per_density_class[cls] = acc.finish();
  return report;
}

}  // namespace cl4st::metrics
