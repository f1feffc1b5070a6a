// Benchmark: OpenMP matrix kernels against the serial reference.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "cl4st/kernels.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::printf("threads: %d\n\n", cl4st::kernels::thread_count());
  std::printf("%8s %12s %12s %8s\n", "size", "serial(ms)", "omp(ms)", "speedup");

  for (std::size_t n : {64, 128, 256, 512, 1024}) {
    std::vector<double> a(n * n), b(n * n), c1(n * n), c2(n * n);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);

    const int reps = n <= 256 ? 20 : 5;
    const double ts = time_ms(
        [&] { cl4st::kernels::matmul_serial(a.data(), b.data(), c1.data(), n, n, n); }, reps);
    const double tp = time_ms(
        [&] { cl4st::kernels::matmul_omp(a.data(), b.data(), c2.data(), n, n, n); }, reps);

    bool identical = c1 == c2;
    std::printf("%8zu %12.3f %12.3f %7.2fx %s\n", n, ts, tp, ts / tp,
                identical ? "" : "MISMATCH");
  }
  return 0;
}
