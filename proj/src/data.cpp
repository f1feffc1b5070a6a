#include "cl4st/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cl4st::data {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
long long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

struct Timestamp {
  long long days;      // since epoch
  int minutes_of_day;  // [0, 1440)
};

Timestamp parse_iso8601(const std::string& s) {
  int y, mo, d, h = 0, mi = 0, sec = 0;
  const int got = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
  if (got < 3) throw std::runtime_error("bad ISO-8601 timestamp: " + s);
  return {days_from_civil(y, mo, d), h * 60 + mi};
}

TimeIndex derive_time_index(const Timestamp& start, int interval_minutes,
                            std::size_t n_steps) {
  TimeIndex ti;
  ti.tod.resize(n_steps);
  ti.dow.resize(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const long long total_min = static_cast<long long>(start.days) * 1440 +
                                start.minutes_of_day +
                                static_cast<long long>(k) * interval_minutes;
    const long long day = total_min / 1440;
    const int mod_min = static_cast<int>(total_min - day * 1440);
    // 288 five-minute slots per day; daily-or-coarser data pins slot 0.
    ti.tod[k] = interval_minutes >= 1440 ? 0 : (mod_min * kTodSlots) / 1440;
    ti.dow[k] = static_cast<int>(((day % 7) + 7 + 3) % 7);  // 1970-01-01 = Thursday
  }
  return ti;
}

std::vector<std::vector<double>> read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_signals_bin(const std::string& path, const FeatureTensor& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::uint64_t hdr[3] = {x.t, x.n, x.f};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(x.data.data()),
            static_cast<std::streamsize>(x.data.size() * sizeof(double)));
}

FeatureTensor read_signals_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::uint64_t hdr[3];
  if (!in.read(reinterpret_cast<char*>(hdr), sizeof(hdr)))
    throw std::runtime_error("truncated signal file: " + path);
  FeatureTensor x(hdr[0], hdr[1], hdr[2]);
  if (!in.read(reinterpret_cast<char*>(x.data.data()),
               static_cast<std::streamsize>(x.data.size() * sizeof(double))))
    throw std::runtime_error("truncated signal file: " + path);
  return x;
}

LoadedDataset load_dataset(const DatasetSpec& spec) {
  const fs::path dir(spec.path);
  const fs::path meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw std::runtime_error("dataset not found: " + meta_path.string());
  json meta = json::parse(meta_in);

  LoadedDataset out;
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "traffic_graph") {
    out.kind = DatasetKind::traffic_graph;
  } else if (kind == "crime_grid") {
    out.kind = DatasetKind::crime_grid;
  } else {
    throw std::runtime_error("unknown dataset kind: " + kind);
  }
  out.interval_minutes = meta.value("interval_minutes", spec.interval_minutes);
  const std::size_t f = meta.at("F").get<std::size_t>();
  std::size_t n;
  if (out.kind == DatasetKind::crime_grid) {
    out.grid_rows = meta.at("I").get<std::size_t>();
    out.grid_cols = meta.at("J").get<std::size_t>();
    n = out.grid_rows * out.grid_cols;
  } else {
    n = meta.at("N").get<std::size_t>();
  }

  // Signals: binary variant preferred, CSV fallback.
  if (fs::exists(dir / "signals.bin")) {
    out.signal = read_signals_bin((dir / "signals.bin").string());
  } else if (fs::exists(dir / "signals.csv")) {
    auto rows = read_csv_matrix((dir / "signals.csv").string());
    if (rows.empty()) throw std::runtime_error("empty signal file in " + spec.path);
    out.signal = FeatureTensor(rows.size(), n, f);
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != n * f)
        throw std::runtime_error("signal row " + std::to_string(t) + " has " +
                                 std::to_string(rows[t].size()) + " columns, expected " +
                                 std::to_string(n * f));
      std::copy(rows[t].begin(), rows[t].end(), out.signal.data.begin() + t * n * f);
    }
  } else {
    throw std::runtime_error("no signals.bin or signals.csv in " + spec.path);
  }
  if (out.signal.t == 0) throw std::runtime_error("empty signal file in " + spec.path);
  if (out.signal.n != n || out.signal.f != f)
    throw std::runtime_error("signal shape (" + std::to_string(out.signal.n) + "," +
                             std::to_string(out.signal.f) + ") does not match meta (" +
                             std::to_string(n) + "," + std::to_string(f) + ")");
  for (std::size_t t = 0; t < out.signal.t; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < f; ++j)
        if (!std::isfinite(out.signal.at(t, i, j)))
          throw std::runtime_error("NaN/Inf in signals at (t=" + std::to_string(t) +
                                   ", node=" + std::to_string(i) +
                                   ", feature=" + std::to_string(j) + ")");

  if (out.kind == DatasetKind::traffic_graph) {
    auto rows = read_csv_matrix((dir / "distances.csv").string());
    if (rows.size() != n) throw std::runtime_error("distances.csv row count != N");
    std::vector<double> dist(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw std::runtime_error("distances.csv column count != N");
      std::copy(rows[i].begin(), rows[i].end(), dist.begin() + i * n);
    }
    const double sigma = meta.value("sigma", default_sensor_sigma(dist, n));
    const double kappa = meta.value("kappa", kDefaultKappa);
    out.graph = build_sensor_graph(dist, n, sigma, kappa);
  } else {
    const std::string nb = meta.value("neighborhood", std::string("four"));
    out.graph = build_grid_graph(out.grid_rows, out.grid_cols,
                                 nb == "eight" ? Neighborhood::eight : Neighborhood::four);
  }

  const std::string start = meta.value("start_timestamp", std::string("1970-01-01T00:00:00"));
  out.time_index = derive_time_index(parse_iso8601(start), out.interval_minutes, out.signal.t);
  return out;
}

NormalizationStats fit_normalizer(const FeatureTensor& x) {
  if (x.size() == 0) throw std::invalid_argument("fit_normalizer: empty tensor");
  NormalizationStats s;
  s.mean.assign(x.f, 0.0);
  s.std.assign(x.f, 0.0);
  const double count = static_cast<double>(x.t * x.n);
  for (std::size_t t = 0; t < x.t; ++t)
    for (std::size_t i = 0; i < x.n; ++i)
      for (std::size_t j = 0; j < x.f; ++j) s.mean[j] += x.at(t, i, j);
  for (std::size_t j = 0; j < x.f; ++j) s.mean[j] /= count;
  for (std::size_t t = 0; t < x.t; ++t)
    for (std::size_t i = 0; i < x.n; ++i)
      for (std::size_t j = 0; j < x.f; ++j) {
        const double d = x.at(t, i, j) - s.mean[j];
        s.std[j] += d * d;
      }
  for (std::size_t j = 0; j < x.f; ++j) {
    s.std[j] = std::sqrt(s.std[j] / count);
    if (s.std[j] <= 0.0)
      throw std::invalid_argument("fit_normalizer: zero-variance feature " +
                                  std::to_string(j));
  }
  return s;
}

FeatureTensor apply_normalizer(const FeatureTensor& x, const NormalizationStats& s) {
  FeatureTensor out = x;
  for (std::size_t t = 0; t < x.t; ++t)
    for (std::size_t i = 0; i < x.n; ++i)
      for (std::size_t j = 0; j < x.f; ++j)
        out.at(t, i, j) = (x.at(t, i, j) - s.mean[j]) / s.std[j];
  return out;
}

FeatureTensor invert_normalizer(const FeatureTensor& x, const NormalizationStats& s) {
  FeatureTensor out = x;
  for (std::size_t t = 0; t < x.t; ++t)
    for (std::size_t i = 0; i < x.n; ++i)
      for (std::size_t j = 0; j < x.f; ++j)
        out.at(t, i, j) = x.at(t, i, j) * s.std[j] + s.mean[j];
  return out;
}

std::vector<STGSample> make_windows(const FeatureTensor& data, const TimeIndex& time_index,
                                    std::size_t t_in, std::size_t t_out,
                                    std::size_t stride) {
  if (data.t < t_in + t_out)
    throw std::invalid_argument("make_windows: series too short for t_in + t_out");
  if (stride < 1) throw std::invalid_argument("make_windows: stride must be >= 1");
  if (time_index.tod.size() != data.t)
    throw std::invalid_argument("make_windows: time index length mismatch");
  std::vector<STGSample> out;
  for (std::size_t k = 0; k + t_in + t_out <= data.t; k += stride) {
    STGSample s;
    s.x = FeatureTensor(t_in, data.n, data.f);
    std::copy_n(data.data.begin() + k * data.n * data.f, t_in * data.n * data.f,
                s.x.data.begin());
    s.y = FeatureTensor(t_out, data.n, data.f);
    std::copy_n(data.data.begin() + (k + t_in) * data.n * data.f,
                t_out * data.n * data.f, s.y.data.begin());
    s.tod_index.assign(time_index.tod.begin() + k, time_index.tod.begin() + k + t_in);
    s.dow_index.assign(time_index.dow.begin() + k, time_index.dow.begin() + k + t_in);
    out.push_back(std::move(s));
  }
  return out;
}

SplitIndices split_dataset(std::size_t n, DatasetKind kind, int interval_minutes) {
  SplitIndices s;
  if (kind == DatasetKind::traffic_graph) {
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
      throw std::invalid_argument("split_dataset: too few samples for 6:2:2 split");
    for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(i);
    for (std::size_t i = n_train; i < n_train + n_val; ++i) s.val.push_back(i);
    for (std::size_t i = n_train + n_val; i < n; ++i) s.test.push_back(i);
  } else {
    // 7:1 train:test; validation = windows covering the last 30 days of the
    // training span, removed from train.
    const std::size_t n_train_total = n * 7 / 8;
    if (n_train_total == 0 || n_train_total >= n)
      throw std::invalid_argument("split_dataset: too few samples for 7:1 split");
    const std::size_t month_windows =
        static_cast<std::size_t>(30LL * 1440 / std::max(interval_minutes, 1));
    const std::size_t n_val = std::min(month_windows, n_train_total - 1);
    const std::size_t n_train = n_train_total - n_val;
    for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(i);
    for (std::size_t i = n_train; i < n_train_total; ++i) s.val.push_back(i);
    for (std::size_t i = n_train_total; i < n; ++i) s.test.push_back(i);
  }
  return s;
}

std::pair<FeatureTensor, CorruptionMask> corrupt_missing(const FeatureTensor& data,
                                                         double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0)
    throw std::invalid_argument("corrupt_missing: rate must be in [0,1]");
  CorruptionMask m;
  m.rate = rate;
  m.seed = seed;
  m.t = data.t;
  m.n = data.n;
  m.mask.assign(data.t * data.n, 0);
  FeatureTensor out = data;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t t = 0; t < data.t; ++t)
    for (std::size_t i = 0; i < data.n; ++i)
      if (u(rng) < rate) {
        m.mask[t * data.n + i] = 1;
        for (std::size_t j = 0; j < data.f; ++j) out.at(t, i, j) = 0.0;
      }
  return {std::move(out), std::move(m)};
}

std::vector<int> density_bins(const FeatureTensor& y) {
  if (y.size() == 0) throw std::invalid_argument("density_bins: empty targets");
  std::vector<double> density(y.n, 0.0);
  for (std::size_t i = 0; i < y.n; ++i) {
    std::size_t nz = 0;
    for (std::size_t t = 0; t < y.t; ++t) {
      bool any = false;
      for (std::size_t j = 0; j < y.f; ++j)
        if (y.at(t, i, j) != 0.0) any = true;
      if (any) ++nz;
    }
    density[i] = static_cast<double>(nz) / static_cast<double>(y.t);
  }
  const double dmax = *std::max_element(density.begin(), density.end());
  std::vector<int> cls(y.n, 0);
  for (std::size_t i = 0; i < y.n; ++i) {
    const double v = dmax > 0.0 ? density[i] / dmax : 0.0;
    cls[i] = v <= 0.25 ? 0 : v <= 0.5 ? 1 : v <= 0.75 ? 2 : 3;
  }
  return cls;
}

void write_synthetic_dataset(const std::string& out_dir, std::size_t n_nodes,
                             std::size_t n_steps, std::uint64_t seed) {
  if (n_nodes < 2 || n_steps < 2)
    throw std::invalid_argument("write_synthetic_dataset: need >= 2 nodes and steps");
  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Random sensor positions on the unit square; Euclidean distances.
  std::vector<double> px(n_nodes), py(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    px[i] = u(rng);
    py[i] = u(rng);
  }
  std::vector<double> dist(n_nodes * n_nodes, 0.0);
  for (std::size_t i = 0; i < n_nodes; ++i)
    for (std::size_t j = 0; j < n_nodes; ++j)
      dist[i * n_nodes + j] = std::hypot(px[i] - px[j], py[i] - py[j]);

  const double sigma = default_sensor_sigma(dist, n_nodes);
  SpatialGraph g = build_sensor_graph(dist, n_nodes, sigma, kDefaultKappa);

  // Per-node daily sinusoid, diffused over the sensor graph, plus noise.
  FeatureTensor x(n_steps, n_nodes, 1);
  std::vector<double> phase(n_nodes), amp(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    phase[i] = 2.0 * M_PI * (0.5 * px[i] + 0.5 * py[i]);
    amp[i] = 20.0 + 20.0 * u(rng);
  }
  std::vector<double> base(n_nodes), diffused(n_nodes);
  for (std::size_t t = 0; t < n_steps; ++t) {
    const double day_angle = 2.0 * M_PI * static_cast<double>(t % kTodSlots) / kTodSlots;
    for (std::size_t i = 0; i < n_nodes; ++i)
      base[i] = 60.0 + amp[i] * std::sin(day_angle + phase[i]);
    // 3 rounds of mean-of-neighbors smoothing mixes signals along the graph.
    for (int round = 0; round < 3; ++round) {
      for (std::size_t i = 0; i < n_nodes; ++i) {
        double acc = base[i], wsum = 1.0;
        for (std::size_t j = 0; j < n_nodes; ++j) {
          const double w = g.adj(i, j);
          if (w > 0.0) {
            acc += w * base[j];
            wsum += w;
          }
        }
        diffused[i] = acc / wsum;
      }
      base = diffused;
    }
    for (std::size_t i = 0; i < n_nodes; ++i)
      x.at(t, i, 0) = base[i] + 1.5 * gauss(rng);
  }

  json meta = {{"kind", "traffic_graph"},
               {"N", n_nodes},
               {"F", 1},
               {"interval_minutes", 5},
               {"start_timestamp", "2024-01-01T00:00:00"}};
  std::ofstream((fs::path(out_dir) / "meta.json").string()) << meta.dump(2) << "\n";
  write_signals_bin((fs::path(out_dir) / "signals.bin").string(), x);
  std::ofstream dout((fs::path(out_dir) / "distances.csv").string());
  dout.precision(17);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    for (std::size_t j = 0; j < n_nodes; ++j)
      dout << dist[i * n_nodes + j] << (j + 1 < n_nodes ? "," : "");
    dout << "\n";
  }
}

void convert_pems_archive(const std::string& distance_csv, const std::string& signal_csv,
                          std::size_t n_nodes, int interval_minutes,
                          const std::string& start_timestamp, const std::string& out_dir) {
  // Edge-list distances: "from,to,cost" with an optional header line.
  std::ifstream in(distance_csv);
  if (!in) throw std::runtime_error("cannot open " + distance_csv);
  constexpr double kUnreachable = 1e9;
  std::vector<double> dist(n_nodes * n_nodes, kUnreachable);
  for (std::size_t i = 0; i < n_nodes; ++i) dist[i * n_nodes + i] = 0.0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t a, b;
    double c;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &a, &b, &c) != 3) continue;  // header
    if (a >= n_nodes || b >= n_nodes)
      throw std::runtime_error("edge index out of range in " + distance_csv);
    dist[a * n_nodes + b] = c;
    dist[b * n_nodes + a] = c;
  }

  auto rows = read_csv_matrix(signal_csv);
  if (rows.empty()) throw std::runtime_error("empty signal file: " + signal_csv);
  const std::size_t f = rows[0].size() / n_nodes;
  if (f == 0 || rows[0].size() != n_nodes * f)
    throw std::runtime_error("signal column count not a multiple of N");
  FeatureTensor x(rows.size(), n_nodes, f);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != n_nodes * f)
      throw std::runtime_error("ragged signal row " + std::to_string(t));
    std::copy(rows[t].begin(), rows[t].end(), x.data.begin() + t * n_nodes * f);
  }

  fs::create_directories(out_dir);
  json meta = {{"kind", "traffic_graph"},
               {"N", n_nodes},
               {"F", f},
               {"interval_minutes", interval_minutes},
               {"start_timestamp", start_timestamp}};
  std::ofstream((fs::path(out_dir) / "meta.json").string()) << meta.dump(2) << "\n";
  write_signals_bin((fs::path(out_dir) / "signals.bin").string(), x);
  std::ofstream dout((fs::path(out_dir) / "distances.csv").string());
  dout.precision(17);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    for (std::size_t j = 0; j < n_nodes; ++j)
      dout << dist[i * n_nodes + j] << (j + 1 < n_nodes ? "," : "");
    dout << "\n";
  }
}

}  // namespace cl4st::data
