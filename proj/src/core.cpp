#include "diffconv/core.hpp"

#include <algorithm>
#include <numeric>

namespace diffconv {

bool Matrix::all_finite() const {
  for (real_t v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

PointCloud::PointCloud(Matrix m) : coords(std::move(m)) {
  if (coords.cols != 3) throw InvalidInput("point cloud requires 3 columns, got " + std::to_string(coords.cols));
}

Matrix pairwise_sq_distances(const PointCloud& a, const PointCloud& b) {
  Matrix out(a.size(), b.size());
#pragma omp parallel for
  for (int i = 0; i < a.size(); ++i) {
    const auto pi = a.point(i);
    for (int j = 0; j < b.size(); ++j) out(i, j) = sq_dist3(pi, b.point(j));
  }
  return out;
}

static void check_row_indices(const std::vector<int>& row, int num_sources, int r) {
  for (int j : row)
    if (j < 0 || j >= num_sources)
      throw InvalidInput("neighbor index " + std::to_string(j) + " out of range in row " + std::to_string(r));
}

SparseDirectedGraph graph_from_rows(const std::vector<std::vector<int>>& rows, int num_sources) {
  SparseDirectedGraph g;
  g.num_sources = num_sources;
  g.row_offsets.resize(rows.size() + 1, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check_row_indices(rows[r], num_sources, static_cast<int>(r));
    std::vector<int> sorted = rows[r];
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    g.col_indices.insert(g.col_indices.end(), sorted.begin(), sorted.end());
    g.row_offsets[r + 1] = static_cast<int>(g.col_indices.size());
  }
  return g;
}

SparseDirectedGraph graph_from_rows(const std::vector<std::vector<int>>& rows, int num_sources,
                                    const std::vector<std::vector<real_t>>& weights) {
  if (rows.size() != weights.size()) throw InvalidInput("graph_from_rows: rows/weights length mismatch");
  SparseDirectedGraph g;
  g.num_sources = num_sources;
  g.row_offsets.resize(rows.size() + 1, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != weights[r].size()) throw InvalidInput("graph_from_rows: row/weight length mismatch");
    check_row_indices(rows[r], num_sources, static_cast<int>(r));
    std::vector<int> order(rows[r].size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return rows[r][a] < rows[r][b]; });
    for (std::size_t k = 0; k + 1 < order.size(); ++k)
      if (rows[r][order[k]] == rows[r][order[k + 1]])
        throw InvalidInput("graph_from_rows: duplicate neighbor in weighted row " + std::to_string(r));
    for (int k : order) {
      g.col_indices.push_back(rows[r][k]);
      g.weights.push_back(weights[r][k]);
    }
    g.row_offsets[r + 1] = static_cast<int>(g.col_indices.size());
  }
  return g;
}

std::vector<std::vector<int>> rows_of(const SparseDirectedGraph& g) {
  std::vector<std::vector<int>> rows(g.num_rows());
  for (int i = 0; i < g.num_rows(); ++i) {
    auto r = g.row(i);
    rows[i].assign(r.begin(), r.end());
  }
  return rows;
}

Matrix spmm(const SparseDirectedGraph& g, const Matrix& x) {
  if (g.num_sources != x.rows) throw InvalidInput("spmm: graph sources != feature rows");
  const int n = g.num_rows();
  Matrix out(n, x.cols);
#pragma omp parallel for
  for (int i = 0; i < n; ++i) {
    real_t* dst = out.data.data() + static_cast<std::size_t>(i) * x.cols;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const real_t w = g.has_weights() ? g.weights[e] : real_t(1);
      const real_t* src = x.data.data() + static_cast<std::size_t>(g.col_indices[e]) * x.cols;
      for (int c = 0; c < x.cols; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

SparseDirectedGraph with_uniform_row_weights(const SparseDirectedGraph& g) {
  SparseDirectedGraph out = g;
  out.weights.assign(g.col_indices.size(), 0);
  for (int i = 0; i < g.num_rows(); ++i) {
    const int deg = g.row_offsets[i + 1] - g.row_offsets[i];
    if (deg == 0) continue;
    const real_t w = real_t(1) / static_cast<real_t>(deg);
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) out.weights[e] = w;
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw InvalidInput("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
#pragma omp parallel for
  for (int i = 0; i < a.rows; ++i) {
    const real_t* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
    real_t* orow = out.data.data() + static_cast<std::size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      const real_t av = arow[k];
      const real_t* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw InvalidInput("hcat: row counts differ");
  Matrix out(a.rows, a.cols + b.cols);
#pragma omp parallel for
  for (int i = 0; i < a.rows; ++i) {
    std::copy_n(a.row(i).data(), a.cols, out.row(i).data());
    std::copy_n(b.row(i).data(), b.cols, out.row(i).data() + a.cols);
  }
  return out;
}

Matrix hcat(const Matrix& a, const Matrix& b, const Matrix& c) { return hcat(hcat(a, b), c); }

Matrix take_rows(const Matrix& x, std::span<const int> indices) {
  Matrix out(static_cast<int>(indices.size()), x.cols);
  for (int i = 0; i < out.rows; ++i) {
    const int src = indices[i];
    if (src < 0 || src >= x.rows) throw InvalidInput("take_rows: index out of range");
    std::copy_n(x.row(src).data(), x.cols, out.row(i).data());
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace diffconv
