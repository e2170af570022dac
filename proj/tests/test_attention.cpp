#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffconv/attention.hpp"
#include "diffconv/grouping.hpp"
#include "diffconv/ref.hpp"
#include "test_util.hpp"

using namespace diffconv;
using namespace diffconv::testutil;

namespace {

struct Instance {
  Matrix x_keys, x_sources;
  PointCloud p_keys, p_sources;
  SparseDirectedGraph neighborhoods;
  AttentionParams params;
};

// Random dilated-query instance with keys subsampled from the sources.
Instance random_instance(std::mt19937_64& rng, int n = 48, int d = 6) {
  Instance inst;
  inst.p_sources = random_cloud(n, rng, real_t(0.35));
  inst.x_sources = random_matrix(n, d, rng);
  const int m = n / 2;
  std::vector<int> keys(m);
  for (int i = 0; i < m; ++i) keys[i] = 2 * i;  // fixed subset keeps the test deterministic
  inst.p_keys = PointCloud(take_rows(inst.p_sources.coords, keys));
  inst.x_keys = take_rows(inst.x_sources, keys);
  const DilationField field = dilation_field(inst.p_sources, real_t(0.2), real_t(0.05));
  std::vector<real_t> radii(m);
  for (int i = 0; i < m; ++i) radii[i] = field.radii[keys[i]];
  inst.neighborhoods = ball_query(inst.p_keys, inst.p_sources, radii);
  const int dk = attention_dim(d);
  inst.params.proj_q = random_matrix(d + 3, dk, rng);
  inst.params.proj_k = random_matrix(d + 3, dk, rng);
  return inst;
}

Matrix mask_of(const SparseDirectedGraph& g) {
  Matrix mask(g.num_rows(), g.num_sources);
  for (int i = 0; i < g.num_rows(); ++i)
    for (int j : g.row(i)) mask(i, j) = 1;
  return mask;
}

}  // namespace

TEST_CASE("attention projection width is the ceiling of (d+3)/4") {
  CHECK(attention_dim(1) == 1);
  CHECK(attention_dim(5) == 2);
  CHECK(attention_dim(29) == 8);
  CHECK(attention_dim(32) == 9);
}

TEST_CASE("attention scores: zero projections give zero scores") {
  std::mt19937_64 rng(19);
  Instance inst = random_instance(rng);
  inst.params.proj_q.fill(0);
  const SparseDirectedGraph s = attention_scores(hcat(inst.x_keys, inst.p_keys.coords),
                                                 hcat(inst.x_sources, inst.p_sources.coords), inst.params.proj_q,
                                                 inst.params.proj_k, inst.neighborhoods);
  for (real_t w : s.weights) CHECK(w == 0);
}

TEST_CASE("attention scores: single edge with 1-d projections is a product") {
  Matrix key_attrs(1, 1), source_attrs(1, 1), pq(1, 1), pk(1, 1);
  key_attrs(0, 0) = real_t(0.7);
  source_attrs(0, 0) = real_t(-1.3);
  pq(0, 0) = 1;
  pk(0, 0) = 1;
  const SparseDirectedGraph g = graph_from_rows({{0}}, 1);
  const SparseDirectedGraph s = attention_scores(key_attrs, source_attrs, pq, pk, g);
  CHECK(s.weights[0] == doctest::Approx(0.7 * -1.3).epsilon(1e-15));
}

TEST_CASE("attention scores match the dense product on edges") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = random_instance(rng);
    const Matrix key_attrs = hcat(inst.x_keys, inst.p_keys.coords);
    const Matrix source_attrs = hcat(inst.x_sources, inst.p_sources.coords);
    const SparseDirectedGraph s =
        attention_scores(key_attrs, source_attrs, inst.params.proj_q, inst.params.proj_k, inst.neighborhoods);
    const Matrix q = ref::matmul(key_attrs, inst.params.proj_q);
    const Matrix k = ref::matmul(source_attrs, inst.params.proj_k);
    for (int i = 0; i < s.num_rows(); ++i)
      for (int e = s.row_offsets[i]; e < s.row_offsets[i + 1]; ++e) {
        real_t want = 0;
        for (int c = 0; c < q.cols; ++c) want += q(i, c) * k(s.col_indices[e], c);
        CHECK(std::abs(s.weights[e] - want) < 1e-10);
      }
  }
}

TEST_CASE("masked softmax: singleton and uniform rows") {
  SparseDirectedGraph g = graph_from_rows({{2}, {0, 1, 3}}, 4);
  g.weights = {real_t(5), real_t(1.25), real_t(1.25), real_t(1.25)};
  const SparseDirectedGraph sm = masked_softmax(g);
  CHECK(sm.weights[0] == 1);
  for (int e = 1; e < 4; ++e) CHECK(sm.weights[e] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("masked softmax rejects empty rows") {
  SparseDirectedGraph g = graph_from_rows({{0}, {}}, 2);
  g.weights = {real_t(1)};
  CHECK_THROWS_AS(masked_softmax(g), InvalidInput);
}

TEST_CASE("masked softmax matches the dense sentinel oracle and is shift invariant") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = random_instance(rng);
    SparseDirectedGraph scores = attention_scores(hcat(inst.x_keys, inst.p_keys.coords),
                                                  hcat(inst.x_sources, inst.p_sources.coords), inst.params.proj_q,
                                                  inst.params.proj_k, inst.neighborhoods);
    const SparseDirectedGraph sm = masked_softmax(scores);

    const Matrix mask = mask_of(inst.neighborhoods);
    const Matrix dense = ref::sentinel_softmax(ref::dense_from_graph(scores), mask);
    for (int i = 0; i < sm.num_rows(); ++i) {
      real_t sum = 0;
      for (int e = sm.row_offsets[i]; e < sm.row_offsets[i + 1]; ++e) {
        sum += sm.weights[e];
        CHECK(std::abs(sm.weights[e] - dense(i, sm.col_indices[e])) < 1e-9);
      }
      CHECK(std::abs(sum - 1) < 1e-9);
    }

    // Adding a constant to one row's scores must not change the weights.
    SparseDirectedGraph shifted = scores;
    const int row = trial % shifted.num_rows();
    for (int e = shifted.row_offsets[row]; e < shifted.row_offsets[row + 1]; ++e) shifted.weights[e] += real_t(3.25);
    const SparseDirectedGraph sm2 = masked_softmax(shifted);
    for (int e = 0; e < sm.num_edges(); ++e) CHECK(std::abs(sm.weights[e] - sm2.weights[e]) < 1e-9);
  }
}

TEST_CASE("balanced renormalization: identity and symmetric cases") {
  SparseDirectedGraph tiny = graph_from_rows({{0}}, 1);
  tiny.weights = {real_t(1)};
  CHECK(balanced_renormalize(tiny).weights[0] == doctest::Approx(1.0).epsilon(1e-15));

  SparseDirectedGraph full = graph_from_rows({{0, 1}, {0, 1}}, 2);
  full.weights = {real_t(0.5), real_t(0.5), real_t(0.5), real_t(0.5)};
  const SparseDirectedGraph out = balanced_renormalize(full);
  for (real_t w : out.weights) CHECK(w == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("balanced renormalization matches the dense two-pass oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<real_t> wdist(real_t(0.01), real_t(1));
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = random_instance(rng);
    SparseDirectedGraph attn = inst.neighborhoods;
    attn.weights.resize(attn.num_edges());
    for (auto& w : attn.weights) w = wdist(rng);
    const SparseDirectedGraph out = balanced_renormalize(attn);
    const Matrix dense = ref::balanced_renormalize(ref::dense_from_graph(attn));
    for (int i = 0; i < out.num_rows(); ++i) {
      real_t sum = 0;
      for (int e = out.row_offsets[i]; e < out.row_offsets[i + 1]; ++e) {
        CHECK(std::abs(out.weights[e] - dense(i, out.col_indices[e])) < 1e-10);
        sum += out.weights[e];
      }
      if (out.row_offsets[i] < out.row_offsets[i + 1]) CHECK(std::abs(sum - 1) < 1e-9);
    }
    // Support must be preserved: same structure, and dense zeros off-support.
    real_t off_support = 0;
    const Matrix mask = mask_of(inst.neighborhoods);
    for (int i = 0; i < dense.rows; ++i)
      for (int j = 0; j < dense.cols; ++j)
        if (mask(i, j) == 0) off_support = std::max(off_support, std::abs(dense(i, j)));
    CHECK(off_support == 0);
  }
}

TEST_CASE("balanced renormalization rejects bad weights") {
  SparseDirectedGraph g = graph_from_rows({{0, 1}}, 2);
  g.weights = {real_t(0), real_t(0)};
  CHECK_THROWS_AS(balanced_renormalize(g), InvalidInput);
  g.weights = {real_t(-0.1), real_t(0.5)};
  CHECK_THROWS_AS(balanced_renormalize(g), InvalidInput);
}

TEST_CASE("full adjacency: single point gives weight 1") {
  Matrix x(1, 4);
  x(0, 1) = real_t(2.5);
  PointCloud p(1);
  const SparseDirectedGraph nb = graph_from_rows({{0}}, 1);
  AttentionParams params;
  std::mt19937_64 rng(37);
  params.proj_q = random_matrix(7, attention_dim(4), rng);
  params.proj_k = random_matrix(7, attention_dim(4), rng);
  const SparseDirectedGraph a = masked_attention_adjacency(x, p, x, p, nb, params);
  REQUIRE(a.num_edges() == 1);
  CHECK(a.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("full adjacency: zero projections on a complete equal-degree graph are uniform") {
  std::mt19937_64 rng(41);
  const int n = 6, d = 4;
  const Matrix x = random_matrix(n, d, rng);
  const PointCloud p = random_cloud(n, rng);
  std::vector<std::vector<int>> rows(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) rows[i].push_back(j);
  const SparseDirectedGraph nb = graph_from_rows(rows, n);
  AttentionParams params;
  params.proj_q = Matrix(d + 3, attention_dim(d));
  params.proj_k = Matrix(d + 3, attention_dim(d));
  const SparseDirectedGraph a = masked_attention_adjacency(x, p, x, p, nb, params);
  for (real_t w : a.weights) CHECK(w == doctest::Approx(1.0 / n).epsilon(1e-12));
}

TEST_CASE("full adjacency: row-stochastic, support-preserving, equals dense pipeline") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance inst = random_instance(rng);
    const SparseDirectedGraph a = masked_attention_adjacency(inst.x_keys, inst.p_keys, inst.x_sources,
                                                             inst.p_sources, inst.neighborhoods, inst.params);
    REQUIRE(a.num_edges() == inst.neighborhoods.num_edges());
    for (int e = 0; e < a.num_edges(); ++e) CHECK(a.col_indices[e] == inst.neighborhoods.col_indices[e]);

    const Matrix dense =
        ref::masked_attention_dense(inst.x_keys, inst.p_keys.coords, inst.x_sources, inst.p_sources.coords,
                                    mask_of(inst.neighborhoods), inst.params.proj_q, inst.params.proj_k);
    for (int i = 0; i < a.num_rows(); ++i) {
      real_t sum = 0;
      for (int e = a.row_offsets[i]; e < a.row_offsets[i + 1]; ++e) {
        sum += a.weights[e];
        CHECK(std::abs(a.weights[e] - dense(i, a.col_indices[e])) < 1e-9);
      }
      CHECK(std::abs(sum - 1) < 1e-9);
    }
  }
}

TEST_CASE("row normalization divides by row sums and validates") {
  SparseDirectedGraph g = graph_from_rows({{0, 1}}, 2);
  const std::vector<real_t> w{real_t(1), real_t(3)};
  const auto out = row_normalize_weights(g, w);
  CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.75).epsilon(1e-15));
  const std::vector<real_t> zeros{real_t(0), real_t(0)};
  CHECK_THROWS_AS(row_normalize_weights(g, zeros), InvalidInput);
}

TEST_CASE("edge squared distances match direct evaluation") {
  std::mt19937_64 rng(47);
  const Matrix a = random_matrix(5, 4, rng);
  const Matrix b = random_matrix(7, 4, rng);
  const SparseDirectedGraph g = graph_from_rows({{0, 6}, {3}, {1, 2, 4}, {5}, {0}}, 7);
  const auto w = edge_sq_dist_weights(g, a, b);
  for (int i = 0; i < g.num_rows(); ++i)
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      real_t want = 0;
      for (int c = 0; c < 4; ++c) {
        const real_t dd = a(i, c) - b(g.col_indices[e], c);
        want += dd * dd;
      }
      CHECK(w[e] == doctest::Approx(want).epsilon(1e-14));
    }
}
