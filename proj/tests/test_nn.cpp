#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "diffconv/nn.hpp"
#include "diffconv/ref.hpp"
#include "test_util.hpp"

using namespace diffconv;
using namespace diffconv::testutil;

namespace {

Parameter random_param(const std::string& name, int rows, int cols, std::mt19937_64& rng, real_t scale = 1) {
  return Parameter(name, random_matrix(rows, cols, rng, scale));
}

// Identity-structured graph pairing row i with source i.
SparseDirectedGraph pair_graph(int n) {
  std::vector<std::vector<int>> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = {i};
  return graph_from_rows(rows, n);
}

}  // namespace

TEST_CASE("gelu: exact Gaussian-CDF values and monotonicity on a grid") {
  CHECK(gelu(real_t(0)) == 0);
  real_t prev = gelu(real_t(0));
  for (int i = 0; i <= 200; ++i) {
    const real_t x = real_t(-5) + real_t(0.05) * i;
    const real_t y = gelu(x);
    const real_t want = real_t(0.5) * x * (1 + std::erf(x / std::sqrt(real_t(2))));
    CHECK(std::abs(y - want) < 1e-7);
    if (x >= 0) {
      CHECK(y >= prev);  // monotone on the nonnegative half
      prev = y;
    } else {
      CHECK(y <= 0);  // shallow negative dip left of zero
      CHECK(y > real_t(-0.2));
    }
  }
}

TEST_CASE("quadratic loss on a linear layer differentiates almost exactly") {
  std::mt19937_64 rng(11);
  Parameter w = random_param("w", 4, 3, rng);
  Parameter b = random_param("b", 1, 3, rng);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix target = random_matrix(6, 3, rng);
  const SparseDirectedGraph pairs = pair_graph(6);

  auto run = [&](bool with_grad) {
    Tape tape;
    const auto z = tape.linear(tape.leaf(x), tape.param(w), tape.param(b));
    const auto sq = tape.edge_sq_dist(z, tape.leaf(target), pairs);  // per-row squared error
    const auto loss = tape.row_avg_pool(sq);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  std::vector<Parameter*> params{&w, &b};
  const GradCheckResult r = grad_check(run, params);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("max pool: single row passes through, ties give gradient to the first row") {
  Tape tape;
  Matrix x(3, 2);
  x(0, 0) = 2;
  x(1, 0) = 2;  // tie on column 0
  x(2, 0) = 1;
  x(0, 1) = -5;
  x(1, 1) = 0;
  x(2, 1) = -1;
  Parameter p("x", x);
  const auto in = tape.param(p);
  const auto pooled = tape.row_max_pool(in);
  CHECK(tape.value(pooled)(0, 0) == 2);
  CHECK(tape.value(pooled)(0, 1) == 0);
  const auto twice = tape.concat_cols(pooled, pooled);  // 1 x 4
  Matrix target(1, 4);
  target.fill(1);  // keep the squared-error gradient away from zero
  const auto loss = tape.row_avg_pool(tape.edge_sq_dist(twice, tape.leaf(target), pair_graph(1)));
  tape.backward(loss);
  CHECK(p.grad(0, 0) != 0);  // first maximal row won the tie
  CHECK(p.grad(1, 0) == 0);
  CHECK(p.grad(2, 0) == 0);
  CHECK(p.grad(1, 1) != 0);
}

TEST_CASE("cross-entropy matches the log-sum-exp oracle") {
  std::mt19937_64 rng(13);
  const Matrix logits = random_matrix(5, 7, rng, 3);
  const std::vector<int> labels{0, 6, 3, 3, 1};
  Tape tape;
  const auto loss = tape.softmax_cross_entropy(tape.leaf(logits), labels);
  real_t want = 0;
  for (int i = 0; i < 5; ++i) want += ref::log_sum_exp(logits.row(i)) - logits(i, labels[i]);
  want /= 5;
  CHECK(std::abs(tape.value(loss)(0, 0) - want) < 1e-10);
}

TEST_CASE("cross-entropy gradient passes finite differences") {
  std::mt19937_64 rng(17);
  Parameter w = random_param("w", 4, 5, rng);
  const Matrix x = random_matrix(6, 4, rng);
  const std::vector<int> labels{0, 4, 2, 1, 3, 2};
  auto run = [&](bool with_grad) {
    Tape tape;
    const auto loss = tape.softmax_cross_entropy(tape.linear(tape.leaf(x), tape.param(w), -1), labels);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  std::vector<Parameter*> params{&w};
  CHECK(grad_check(run, params).max_rel_error < 1e-6);
}

TEST_CASE("dropout: identity in eval mode, unbiased scaling in train mode") {
  std::mt19937_64 rng(19);
  Matrix x(200, 500);
  for (auto& v : x.data) v = 1;
  Parameter p("x", x);
  {
    Tape tape;
    const auto out = tape.dropout(tape.param(p), real_t(0.5), rng, false);
    CHECK(max_abs_diff(tape.value(out), x) == 0);
  }
  Tape tape;
  const auto out = tape.dropout(tape.param(p), real_t(0.5), rng, true);
  const Matrix& y = tape.value(out);
  double sum = 0;
  int kept = 0;
  for (real_t v : y.data) {
    CHECK((v == 0 || v == 2));  // inverted dropout doubles survivors at rate 0.5
    sum += v;
    kept += v != 0;
  }
  const double mean = sum / static_cast<double>(y.data.size());
  CHECK(std::abs(mean - 1.0) < 0.01);  // 1e5 samples, 1% band
  CHECK(kept > 0);
  CHECK(kept < static_cast<int>(y.data.size()));
}

TEST_CASE("attention chain gradient: scores -> softmax -> renormalize") {
  std::mt19937_64 rng(23);
  const int n = 7, d = 3;
  const Matrix x = random_matrix(n, d, rng);
  std::vector<std::vector<int>> nb(n);
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int i = 0; i < n; ++i) {
    nb[i] = {i};
    nb[i].push_back(pick(rng));
    nb[i].push_back(pick(rng));
  }
  const SparseDirectedGraph g = graph_from_rows(nb, n);
  Parameter pq = random_param("pq", d, 2, rng);
  Parameter pk = random_param("pk", d, 2, rng);
  const Matrix features = random_matrix(n, 2, rng);
  const std::vector<int> labels{1};

  auto run = [&](bool with_grad) {
    Tape tape;
    const auto xs = tape.leaf(x);
    const auto q = tape.matmul(xs, tape.param(pq));
    const auto k = tape.matmul(xs, tape.param(pk));
    const auto scores = tape.edge_dot(q, k, g);
    const auto attn = tape.balanced_renorm(tape.masked_softmax(scores, g), g);
    const auto mixed = tape.spmm(attn, tape.leaf(features), g);
    const auto pooled = tape.concat_cols(tape.row_max_pool(mixed), tape.row_avg_pool(mixed));
    const auto loss = tape.softmax_cross_entropy(pooled, labels);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  std::vector<Parameter*> params{&pq, &pk};
  const GradCheckResult r = grad_check(run, params);
  INFO("worst: ", r.worst_param, "[", r.worst_coord, "] analytic=", r.analytic, " numeric=", r.numeric);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gaussian edge weights gradient: exp of scaled squared distances") {
  std::mt19937_64 rng(29);
  const int n = 6, d = 3;
  Parameter feat = random_param("f", n, d, rng);
  std::vector<std::vector<int>> nb(n);
  for (int i = 0; i < n; ++i) nb[i] = {i, (i + 1) % n, (i + 3) % n};
  const SparseDirectedGraph g = graph_from_rows(nb, n);
  const Matrix mix_in = random_matrix(n, 2, rng);
  const std::vector<int> labels{0};

  auto run = [&](bool with_grad) {
    Tape tape;
    const auto f = tape.param(feat);
    const auto w = tape.row_normalize(
        tape.exp_elem(tape.scale(tape.edge_sq_dist(f, f, g), real_t(-0.5))), g);
    const auto mixed = tape.spmm(w, f, g);
    const auto pooled = tape.concat_cols(tape.row_max_pool(mixed), tape.row_avg_pool(mixed));
    const auto loss = tape.softmax_cross_entropy(pooled, labels);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  std::vector<Parameter*> params{&feat};
  CHECK(grad_check(run, params).max_rel_error < 1e-4);
}

TEST_CASE("composite with take_rows duplicates, sub, add, and spmm feature grads") {
  std::mt19937_64 rng(31);
  const int n = 8, d = 4;
  Parameter w1 = random_param("w1", d, 5, rng);
  Parameter b1 = random_param("b1", 1, 5, rng);
  Parameter w2 = random_param("w2", 10, 3, rng);
  const Matrix x = random_matrix(n, d, rng);
  std::vector<std::vector<int>> nb(4);
  for (int i = 0; i < 4; ++i) nb[i] = {2 * i, 2 * i + 1, (2 * i + 3) % n};
  const SparseDirectedGraph g = graph_from_rows(nb, n);
  std::vector<real_t> wts(g.num_edges());
  std::uniform_real_distribution<real_t> dist(real_t(0.1), 1);
  for (auto& v : wts) v = dist(rng);
  const std::vector<int> keys{1, 1, 5, 7};  // duplicate index exercises accumulation
  const std::vector<int> labels{2};

  auto run = [&](bool with_grad) {
    Tape tape;
    const auto h = tape.gelu(tape.linear(tape.leaf(x), tape.param(w1), tape.param(b1)));
    Matrix wcol(g.num_edges(), 1);
    for (int e = 0; e < g.num_edges(); ++e) wcol(e, 0) = wts[e];
    const auto mixed = tape.spmm(tape.leaf(wcol), h, g);
    const auto taken = tape.take_rows(h, keys);
    const auto s = tape.sub(taken, mixed);
    const auto both = tape.concat_cols(s, tape.add(taken, mixed));
    const auto z = tape.linear(both, tape.param(w2), -1);
    const auto pooled = tape.concat_cols(tape.row_max_pool(z), tape.row_avg_pool(z));
    const auto loss = tape.softmax_cross_entropy(tape.scale(pooled, real_t(1.5)), labels);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)(0, 0);
  };
  std::vector<Parameter*> params{&w1, &b1, &w2};
  const GradCheckResult r = grad_check(run, params);
  INFO("worst: ", r.worst_param, "[", r.worst_coord, "]");
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("sgd: zero gradients leave parameters fixed while momentum decays") {
  Parameter p("p", Matrix(1, 1));
  p.value(0, 0) = 5;
  OptimizerConfig cfg;
  SgdOptimizer opt({&p}, cfg);
  p.zero_grad();
  opt.step(0);
  CHECK(p.value(0, 0) == 5);  // fresh state, no velocity yet

  opt.velocity(0)(0, 0) = 2;  // preloaded velocity keeps decaying by the momentum factor
  opt.step(0);
  CHECK(opt.velocity(0)(0, 0) == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(p.value(0, 0) == doctest::Approx(5 - 0.1 * 1.8).epsilon(1e-12));
}

TEST_CASE("sgd: two steps on a quadratic match the hand recursion") {
  Parameter p("p", Matrix(1, 1));
  const double p0 = 3;
  p.value(0, 0) = static_cast<real_t>(p0);
  OptimizerConfig cfg;
  cfg.base_lr = real_t(0.1);
  cfg.cosine_period = 1000000;  // effectively constant lr for two steps
  SgdOptimizer opt({&p}, cfg);

  // Loss 0.5 * p^2, gradient p.
  p.grad(0, 0) = p.value(0, 0);
  opt.step(0);
  const double lr = opt.learning_rate(0);
  const double v1 = p0;
  const double p1 = p0 - lr * v1;
  CHECK(std::abs(p.value(0, 0) - p1) < 1e-12);

  p.zero_grad();
  p.grad(0, 0) = p.value(0, 0);
  opt.step(0);
  const double v2 = 0.9 * v1 + p1;
  const double p2 = p1 - lr * v2;
  CHECK(std::abs(p.value(0, 0) - p2) < 1e-12);
}

TEST_CASE("cosine schedule hits both endpoints and restarts") {
  Parameter p("p", Matrix(1, 1));
  OptimizerConfig cfg;
  cfg.cosine_period = 300;
  SgdOptimizer opt({&p}, cfg);
  CHECK(opt.learning_rate(0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(opt.learning_rate(300) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(opt.learning_rate(150) == doctest::Approx(0.001 + 0.099 / 2).epsilon(1e-9));
  CHECK(opt.learning_rate(301) == doctest::Approx(opt.learning_rate(1)).epsilon(1e-12));
  CHECK(opt.learning_rate(600) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("sgd rejects non-finite gradients") {
  Parameter p("p", Matrix(1, 1));
  SgdOptimizer opt({&p}, OptimizerConfig{});
  p.grad(0, 0) = std::numeric_limits<real_t>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(0), std::runtime_error);
}

TEST_CASE("checkpoint round-trip restores exact values and validates") {
  std::mt19937_64 rng(37);
  Parameter a = random_param("layer0.weight", 3, 4, rng);
  Parameter b = random_param("layer0.bias", 1, 4, rng);
  const Matrix a_saved = a.value;
  const Matrix b_saved = b.value;
  const std::string path = (std::filesystem::temp_directory_path() / "diffconv_ckpt_test.bin").string();
  std::vector<Parameter*> params{&a, &b};
  save_checkpoint(path, params);

  a.value.fill(0);
  b.value.fill(7);
  load_checkpoint(path, params);
  CHECK(max_abs_diff(a.value, a_saved) == 0);
  CHECK(max_abs_diff(b.value, b_saved) == 0);

  Parameter renamed("other.weight", Matrix(3, 4));
  std::vector<Parameter*> wrong_name{&renamed, &b};
  CHECK_THROWS_AS(load_checkpoint(path, wrong_name), IoError);

  Parameter reshaped("layer0.weight", Matrix(4, 3));
  std::vector<Parameter*> wrong_shape{&reshaped, &b};
  CHECK_THROWS_AS(load_checkpoint(path, wrong_shape), IoError);

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin", params), IoError);

  // Truncated file must fail cleanly.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path, params), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("tape validates shapes and labels") {
  Tape tape;
  const auto a = tape.leaf(Matrix(2, 3));
  const auto b = tape.leaf(Matrix(3, 2));
  CHECK_THROWS_AS(tape.add(a, b), InvalidInput);
  CHECK_THROWS_AS(tape.softmax_cross_entropy(a, {0, 1, 2}), InvalidInput);
  CHECK_THROWS_AS(tape.softmax_cross_entropy(a, {0, 5}), InvalidInput);
  CHECK_THROWS_AS(tape.backward(a), InvalidInput);
}
