#include "diffconv/ref.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

namespace diffconv::ref {

Matrix dense_from_graph(const SparseDirectedGraph& g) {
  Matrix out(g.num_rows(), g.num_sources);
  for (int i = 0; i < g.num_rows(); ++i)
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e)
      out(i, g.col_indices[e]) = g.has_weights() ? g.weights[e] : real_t(1);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw InvalidInput("ref::matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const real_t av = a(i, k);
      for (int j = 0; j < b.cols; ++j) out(i, j) += av * b(k, j);
    }
  return out;
}

std::vector<real_t> kernel_density(const PointCloud& cloud, real_t bandwidth) {
  const int n = cloud.size();
  if (n == 0) throw InvalidInput("ref::kernel_density: empty cloud");
  const real_t inv_2h2 = real_t(1) / (2 * bandwidth * bandwidth);
  const real_t scale = kInvSqrt2Pi / (static_cast<real_t>(n) * bandwidth);
  std::vector<real_t> out(n);
  for (int i = 0; i < n; ++i) {
    real_t acc = 0;
    for (int j = 0; j < n; ++j) acc += std::exp(-sq_dist3(cloud.point(i), cloud.point(j)) * inv_2h2);
    out[i] = scale * acc;
  }
  return out;
}

std::vector<std::vector<int>> ball_query(const PointCloud& keys, const PointCloud& sources, real_t radius) {
  const std::vector<real_t> radii(static_cast<std::size_t>(keys.size()), radius);
  return diffconv::ref::ball_query(keys, sources, radii);
}

std::vector<std::vector<int>> ball_query(const PointCloud& keys, const PointCloud& sources,
                                         std::span<const real_t> radii) {
  std::vector<std::vector<int>> rows(keys.size());
  for (int i = 0; i < keys.size(); ++i) {
    const real_t sq_radius = radii[i] * radii[i];
    for (int j = 0; j < sources.size(); ++j)
      if (sq_dist3(keys.point(i), sources.point(j)) < sq_radius) rows[i].push_back(j);
  }
  return rows;
}

std::vector<std::vector<int>> knn_query(const PointCloud& keys, const PointCloud& sources, int k) {
  if (k < 1 || k > sources.size()) throw InvalidInput("ref::knn_query: k out of range");
  std::vector<std::vector<int>> rows(keys.size());
  for (int i = 0; i < keys.size(); ++i) {
    std::vector<std::pair<real_t, int>> by_dist(sources.size());
    for (int j = 0; j < sources.size(); ++j) by_dist[j] = {sq_dist3(keys.point(i), sources.point(j)), j};
    std::sort(by_dist.begin(), by_dist.end());
    rows[i].resize(k);
    for (int j = 0; j < k; ++j) rows[i][j] = by_dist[j].second;
    std::sort(rows[i].begin(), rows[i].end());
  }
  return rows;
}

Matrix sentinel_softmax(const Matrix& scores, const Matrix& mask) {
  if (!scores.same_shape(mask)) throw InvalidInput("ref::sentinel_softmax: shape mismatch");
  constexpr real_t kSentinel = static_cast<real_t>(-1e9);
  Matrix out(scores.rows, scores.cols);
  for (int i = 0; i < scores.rows; ++i) {
    real_t mx = std::numeric_limits<real_t>::lowest();
    for (int j = 0; j < scores.cols; ++j) {
      const real_t s = mask(i, j) != 0 ? scores(i, j) : kSentinel;
      mx = std::max(mx, s);
    }
    real_t sum = 0;
    for (int j = 0; j < scores.cols; ++j) {
      const real_t s = mask(i, j) != 0 ? scores(i, j) : kSentinel;
      out(i, j) = std::exp(s - mx);
      sum += out(i, j);
    }
    for (int j = 0; j < scores.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

Matrix balanced_renormalize(const Matrix& attn) {
  Matrix sq(attn.rows, attn.cols);
  for (std::size_t v = 0; v < attn.data.size(); ++v) {
    if (attn.data[v] < 0) throw InvalidInput("ref::balanced_renormalize: negative weight");
    sq.data[v] = std::sqrt(attn.data[v]);
  }
  std::vector<real_t> col_sum(attn.cols, 0);
  for (int i = 0; i < attn.rows; ++i)
    for (int j = 0; j < attn.cols; ++j) col_sum[j] += sq(i, j);
  Matrix out(attn.rows, attn.cols);
  for (int i = 0; i < attn.rows; ++i) {
    real_t row_sum = 0;
    for (int j = 0; j < attn.cols; ++j) {
      out(i, j) = col_sum[j] > 0 ? sq(i, j) / col_sum[j] : 0;
      row_sum += out(i, j);
    }
    for (int j = 0; j < attn.cols; ++j) out(i, j) = row_sum > 0 ? out(i, j) / row_sum : 0;
  }
  return out;
}

namespace {
Matrix hcat2(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, a.cols + b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int c = 0; c < a.cols; ++c) out(i, c) = a(i, c);
    for (int c = 0; c < b.cols; ++c) out(i, a.cols + c) = b(i, c);
  }
  return out;
}

Matrix affine(const Matrix& x, const LinearMap& map) {
  Matrix out = diffconv::ref::matmul(x, map.weight);
  if (!map.bias.empty())
    for (int i = 0; i < out.rows; ++i)
      for (int c = 0; c < out.cols; ++c) out(i, c) += map.bias[c];
  return out;
}
}  // namespace

Matrix masked_attention_dense(const Matrix& x_keys, const Matrix& p_keys, const Matrix& x_sources,
                              const Matrix& p_sources, const Matrix& mask, const Matrix& proj_q,
                              const Matrix& proj_k) {
  const Matrix q = diffconv::ref::matmul(hcat2(x_keys, p_keys), proj_q);
  const Matrix k = diffconv::ref::matmul(hcat2(x_sources, p_sources), proj_k);
  Matrix scores(q.rows, k.rows);
  for (int i = 0; i < q.rows; ++i)
    for (int j = 0; j < k.rows; ++j) {
      real_t acc = 0;
      for (int c = 0; c < q.cols; ++c) acc += q(i, c) * k(j, c);
      scores(i, j) = acc;
    }
  return balanced_renormalize(sentinel_softmax(scores, mask));
}

Matrix laplacian_smooth_dense(const Matrix& x_keys, const Matrix& a, const Matrix& x_sources) {
  Matrix out = diffconv::ref::matmul(a, x_sources);
  for (int i = 0; i < out.rows; ++i)
    for (int c = 0; c < out.cols; ++c) out(i, c) = x_keys(i, c) - out(i, c);
  return out;
}

Matrix diffconv_full_dense(const PointCloud& p_sources, const Matrix& x_sources, std::span<const int> key_indices,
                           const DiffConvLayer& layer) {
  // Brute-force dilated grouping; arithmetic mirrors the production path so
  // the strict-inequality supports agree bitwise.
  const std::vector<real_t> density = diffconv::ref::kernel_density(p_sources, layer.bandwidth);
  const real_t mx = *std::max_element(density.begin(), density.end());
  std::vector<real_t> key_radii(key_indices.size());
  for (std::size_t i = 0; i < key_indices.size(); ++i)
    key_radii[i] = std::sqrt(layer.base_sq_radius * (real_t(1) + density[key_indices[i]] / mx));

  const PointCloud p_keys(take_rows(p_sources.coords, key_indices));
  const Matrix x_keys = take_rows(x_sources, key_indices);
  const auto rows = diffconv::ref::ball_query(p_keys, p_sources, key_radii);
  Matrix mask(p_keys.size(), p_sources.size());
  for (int i = 0; i < p_keys.size(); ++i)
    for (int j : rows[i]) mask(i, j) = 1;

  const Matrix a_hat = masked_attention_dense(x_keys, p_keys.coords, x_sources, p_sources.coords, mask,
                                              layer.attention.proj_q, layer.attention.proj_k);

  const Matrix smoothed = laplacian_smooth_dense(x_keys, a_hat, x_sources);
  Matrix g = affine(hcat2(smoothed, x_keys), layer.l_theta);

  const Matrix centroid = diffconv::ref::matmul(a_hat, p_sources.coords);
  Matrix block(p_keys.size(), 9);
  for (int i = 0; i < p_keys.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      block(i, c) = p_keys.coords(i, c);
      block(i, 3 + c) = centroid(i, c);
      block(i, 6 + c) = p_keys.coords(i, c) - centroid(i, c);
    }
  const Matrix pos = affine(block, layer.l_pi);

  for (std::size_t v = 0; v < g.data.size(); ++v) {
    g.data[v] += pos.data[v];
    if (layer.use_gelu) g.data[v] = gelu(g.data[v]);
  }
  return g;
}

real_t log_sum_exp(std::span<const real_t> v) {
  if (v.empty()) throw InvalidInput("ref::log_sum_exp: empty input");
  const real_t mx = *std::max_element(v.begin(), v.end());
  real_t sum = 0;
  for (real_t x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

real_t point_triangle_sq_dist(std::span<const real_t> p, std::span<const real_t> a, std::span<const real_t> b,
                              std::span<const real_t> c) {
  auto sub = [](std::span<const real_t> u, std::span<const real_t> v) {
    return std::array<real_t, 3>{u[0] - v[0], u[1] - v[1], u[2] - v[2]};
  };
  auto dot = [](const std::array<real_t, 3>& u, const std::array<real_t, 3>& v) {
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  };
  auto at = [&](real_t v, real_t w) {
    std::array<real_t, 3> q;
    for (int i = 0; i < 3; ++i) q[i] = a[i] + v * (b[i] - a[i]) + w * (c[i] - a[i]);
    return q;
  };
  auto sq_to = [&](const std::array<real_t, 3>& q) {
    const real_t dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    return dx * dx + dy * dy + dz * dz;
  };

  // Closest point on a triangle by Voronoi-region classification.
  const auto ab = sub(b, a), ac = sub(c, a), ap = sub(p, a);
  const real_t d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return sq_to(at(0, 0));

  const auto bp = sub(p, b);
  const real_t d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return sq_to(at(1, 0));

  const real_t vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return sq_to(at(d1 / (d1 - d3), 0));

  const auto cp = sub(p, c);
  const real_t d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return sq_to(at(0, 1));

  const real_t vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return sq_to(at(0, d2 / (d2 - d6)));

  const real_t va = d3 * d6 - d5 * d4;
  if (va <= 0 && d4 - d3 >= 0 && d5 - d6 >= 0) {
    const real_t w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return sq_to(at(1 - w, w));
  }

  const real_t denom = real_t(1) / (va + vb + vc);
  return sq_to(at(vb * denom, vc * denom));
}

}  // namespace diffconv::ref
