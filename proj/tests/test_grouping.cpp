#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffconv/grouping.hpp"
#include "diffconv/ref.hpp"
#include "test_util.hpp"

using namespace diffconv;
using namespace diffconv::testutil;

namespace {
bool same_rows(const SparseDirectedGraph& got, const std::vector<std::vector<int>>& want) {
  if (got.num_rows() != static_cast<int>(want.size())) return false;
  for (int i = 0; i < got.num_rows(); ++i) {
    const auto row = got.row(i);
    if (row.size() != want[i].size()) return false;
    for (std::size_t k = 0; k < want[i].size(); ++k)
      if (row[k] != want[i][k]) return false;
  }
  return true;
}
}  // namespace

TEST_CASE("kernel density matches the double-loop evaluation") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud cloud = random_cloud(64, rng);
    const auto got = kernel_density(cloud, real_t(0.1));
    const auto want = ref::kernel_density(cloud, real_t(0.1));
    for (int i = 0; i < 64; ++i) CHECK(rel_err(got[i], want[i]) < 1e-12);
  }
}

TEST_CASE("kernel density of a single point is the kernel value at zero") {
  PointCloud cloud(1);
  const real_t h = real_t(0.1);
  const auto d = kernel_density(cloud, h);
  CHECK(d[0] == doctest::Approx(kInvSqrt2Pi / h).epsilon(1e-14));
}

TEST_CASE("kernel density of two points evaluates by hand") {
  PointCloud cloud(2);
  cloud.coords(1, 0) = real_t(0.3);
  const real_t h = real_t(0.1);
  const auto d = kernel_density(cloud, h);
  const real_t expected = kInvSqrt2Pi / (2 * h) * (1 + std::exp(real_t(-0.09) / (2 * h * h)));
  CHECK(d[0] == doctest::Approx(expected).epsilon(1e-13));
  CHECK(d[1] == doctest::Approx(expected).epsilon(1e-13));
  CHECK_THROWS_AS(kernel_density(cloud, 0), InvalidInput);
}

TEST_CASE("normalized density peaks at 1 and dilated radii stay in bounds") {
  std::mt19937_64 rng(55);
  const real_t base_sq = real_t(0.0125);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud cloud = random_cloud(128, rng);
    const DilationField field = dilation_field(cloud, real_t(0.1), base_sq);
    real_t max_norm = 0;
    for (real_t v : field.normalized_density) {
      CHECK(v > 0);
      CHECK(v <= 1);
      max_norm = std::max(max_norm, v);
    }
    CHECK(max_norm == 1);
    const real_t lo = std::sqrt(base_sq);
    const real_t hi = std::sqrt(2 * base_sq);
    for (real_t r : field.radii) {
      CHECK(r >= lo);
      CHECK(r <= hi);
    }
  }
}

TEST_CASE("zero dilation gives the base radius") {
  const std::vector<real_t> nd{0};
  const auto r = dilated_radii(nd, real_t(0.0125));
  CHECK(r[0] == doctest::Approx(0.1118033988749895).epsilon(1e-14));
}

TEST_CASE("ball query is strict: boundary points are excluded") {
  PointCloud keys(1);
  PointCloud sources(3);
  sources.coords(0, 0) = real_t(0.5);    // exactly on the boundary
  sources.coords(1, 0) = real_t(0.4999);
  sources.coords(2, 0) = real_t(0.5001);
  const SparseDirectedGraph g = ball_query(keys, sources, real_t(0.5));
  CHECK(same_rows(g, {{1}}));
}

TEST_CASE("kd-tree ball query equals the brute-force filter exactly") {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<real_t> rdist(real_t(0.05), real_t(0.8));
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 32 + 16 * trial;
    const PointCloud sources = random_cloud(n, rng);
    const PointCloud keys = random_cloud(n / 2, rng);
    const real_t radius = rdist(rng);
    CHECK(same_rows(ball_query(keys, sources, radius), ref::ball_query(keys, sources, radius)));

    std::vector<real_t> radii(keys.size());
    for (auto& r : radii) r = rdist(rng);
    CHECK(same_rows(ball_query(keys, sources, radii), ref::ball_query(keys, sources, radii)));
  }
}

TEST_CASE("kd-tree ball query handles duplicated points") {
  PointCloud sources(40);
  for (int i = 0; i < 40; ++i) sources.coords(i, 0) = real_t(i % 2);  // two fat clusters
  PointCloud keys(1);
  const SparseDirectedGraph g = ball_query(keys, sources, real_t(0.5));
  CHECK(g.row(0).size() == 20);
  for (int j : g.row(0)) CHECK(j % 2 == 0);
}

TEST_CASE("knn equals brute force including distance ties") {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 24 + 8 * trial;
    const PointCloud sources = random_cloud(n, rng);
    const PointCloud keys = random_cloud(10, rng);
    const int k = 1 + trial % 12;
    CHECK(same_rows(knn_query(keys, sources, k), ref::knn_query(keys, sources, k)));
  }

  // Four equidistant sources: ties resolve to the smallest indices.
  PointCloud keys(1);
  PointCloud sources(4);
  sources.coords(0, 0) = 1;
  sources.coords(1, 1) = 1;
  sources.coords(2, 2) = 1;
  sources.coords(3, 0) = -1;
  CHECK(same_rows(knn_query(keys, sources, 2), {{0, 1}}));
  CHECK(same_rows(knn_query(keys, sources, 2), ref::knn_query(keys, sources, 2)));
}

TEST_CASE("knn rejects out-of-range k") {
  std::mt19937_64 rng(1);
  const PointCloud cloud = random_cloud(5, rng);
  CHECK_THROWS_AS(knn_query(cloud, cloud, 0), InvalidInput);
  CHECK_THROWS_AS(knn_query(cloud, cloud, 6), InvalidInput);
}

TEST_CASE("dilated ball query can be asymmetric") {
  // A tight pair raises density (hence radius) at A and B; the lone point C
  // sits where A reaches it but its own smaller radius cannot reach back.
  PointCloud cloud(3);
  cloud.coords(1, 0) = real_t(0.001);
  cloud.coords(2, 0) = real_t(0.148);
  const DilationField field = dilation_field(cloud, real_t(0.1), real_t(0.0125));
  const SparseDirectedGraph g = ball_query(cloud, cloud, field.radii);
  auto has_edge = [&](int i, int j) {
    for (int c : g.row(i))
      if (c == j) return true;
    return false;
  };
  CHECK(has_edge(0, 2));
  CHECK_FALSE(has_edge(2, 0));
}

TEST_CASE("density ordering: noise points are less dense than object points") {
  std::mt19937_64 rng(404);
  std::normal_distribution<real_t> gauss(0, 1);
  // 120 points on a unit sphere plus 12 uniform noise points.
  PointCloud cloud(132);
  for (int i = 0; i < 120; ++i) {
    real_t v[3] = {gauss(rng), gauss(rng), gauss(rng)};
    const real_t norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (int c = 0; c < 3; ++c) cloud.coords(i, c) = v[c] / norm;
  }
  std::uniform_real_distribution<real_t> uni(-1, 1);
  for (int i = 120; i < 132; ++i)
    for (int c = 0; c < 3; ++c) cloud.coords(i, c) = uni(rng);
  const auto nd = normalize_density(kernel_density(cloud, real_t(0.1)));
  real_t object_mean = 0, noise_mean = 0;
  for (int i = 0; i < 120; ++i) object_mean += nd[i];
  for (int i = 120; i < 132; ++i) noise_mean += nd[i];
  object_mean /= 120;
  noise_mean /= 12;
  CHECK(noise_mean < object_mean);
}
