// Compares the serial reference kernels against the OpenMP production kernels
// at one and at all available threads. Usage: kernel_bench [size ...]
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "diffconv/core.hpp"
#include "diffconv/grouping.hpp"
#include "diffconv/ref.hpp"

using namespace diffconv;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

PointCloud random_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PointCloud c(n);
  for (auto& v : c.coords.data) v = static_cast<real_t>((rng() >> 11) * 0x1.0p-53) * 2 - 1;
  return c;
}

template <typename F>
double time_ms(F&& f, int repeats) {
  const auto t0 = Clock::now();
  for (int r = 0; r < repeats; ++r) f();
  return ms_since(t0) / repeats;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> sizes{512, 2048, 8192};
  if (argc > 1) {
    sizes.clear();
    for (int i = 1; i < argc; ++i) sizes.push_back(std::atoi(argv[i]));
  }
  const int max_threads = omp_get_max_threads();
  const real_t bandwidth = real_t(0.1);
  const real_t radius = real_t(0.1);

  std::printf("threads available: %d\n", max_threads);
  std::printf("%8s | %10s %10s %10s | %10s %10s %10s | %10s %10s\n", "N", "kde_ref", "kde_1t", "kde_nt", "ball_ref",
              "ball_1t", "ball_nt", "spmm_1t", "spmm_nt");
  std::printf("---------+----------------------------------+----------------------------------+---------------------"
              "--\n");

  for (const int n : sizes) {
    if (n < 2) continue;
    const PointCloud cloud = random_cloud(n, 42 + static_cast<std::uint64_t>(n));
    const int repeats = n <= 1024 ? 5 : 2;

    const double kde_ref = time_ms([&] { ref::kernel_density(cloud, bandwidth); }, repeats);
    omp_set_num_threads(1);
    const double kde_1t = time_ms([&] { kernel_density(cloud, bandwidth); }, repeats);
    omp_set_num_threads(max_threads);
    const double kde_nt = time_ms([&] { kernel_density(cloud, bandwidth); }, repeats);

    const double ball_ref = time_ms([&] { ref::ball_query(cloud, cloud, radius); }, repeats);
    omp_set_num_threads(1);
    const double ball_1t = time_ms([&] { ball_query(cloud, cloud, radius); }, repeats);
    omp_set_num_threads(max_threads);
    const double ball_nt = time_ms([&] { ball_query(cloud, cloud, radius); }, repeats);

    const SparseDirectedGraph g = with_uniform_row_weights(ball_query(cloud, cloud, radius));
    std::mt19937_64 rng(7);
    Matrix x(n, 64);
    for (auto& v : x.data) v = static_cast<real_t>((rng() >> 11) * 0x1.0p-53) * 2 - 1;
    omp_set_num_threads(1);
    const double spmm_1t = time_ms([&] { spmm(g, x); }, repeats);
    omp_set_num_threads(max_threads);
    const double spmm_nt = time_ms([&] { spmm(g, x); }, repeats);

    std::printf("%8d | %10.3f %10.3f %10.3f | %10.3f %10.3f %10.3f | %10.3f %10.3f\n", n, kde_ref, kde_1t, kde_nt,
                ball_ref, ball_1t, ball_nt, spmm_1t, spmm_nt);
  }
  return 0;
}
