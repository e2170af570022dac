#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace diffconv {

#if defined(DIFFCONV_SINGLE_PRECISION)
using real_t = float;
#else
using real_t = double;
#endif

inline constexpr std::string_view kVersion = "0.1.0";

/// Thrown when an operation receives arguments violating its preconditions.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown by file-format readers; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of reals. Rank-1 data is stored as a single column.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<real_t> data;

  Matrix() = default;
  Matrix(int r, int c, real_t fill = 0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  real_t& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  real_t operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<real_t> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const real_t> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
  void fill(real_t v) { std::fill(data.begin(), data.end(), v); }
};

using FeatureMatrix = Matrix;

/// N points in 3-D model space, one per row.
struct PointCloud {
  Matrix coords;  // N x 3

  PointCloud() = default;
  explicit PointCloud(int n) : coords(n, 3) {}
  explicit PointCloud(Matrix m);

  int size() const { return coords.rows; }
  std::span<const real_t> point(int i) const { return coords.row(i); }
  std::span<real_t> point(int i) { return coords.row(i); }
};

/// Row-compressed directed graph: row i holds the neighbor (source) indices of
/// key point i in strictly increasing order. Weights, when present, align with
/// col_indices.
struct SparseDirectedGraph {
  int num_sources = 0;
  std::vector<int> row_offsets;  // num_rows + 1 entries
  std::vector<int> col_indices;
  std::vector<real_t> weights;   // empty or col_indices.size()

  int num_rows() const { return row_offsets.empty() ? 0 : static_cast<int>(row_offsets.size()) - 1; }
  int num_edges() const { return static_cast<int>(col_indices.size()); }
  bool has_weights() const { return !weights.empty(); }

  std::span<const int> row(int i) const {
    return {col_indices.data() + row_offsets[i], static_cast<std::size_t>(row_offsets[i + 1] - row_offsets[i])};
  }
  std::span<const real_t> row_weights(int i) const {
    return {weights.data() + row_offsets[i], static_cast<std::size_t>(row_offsets[i + 1] - row_offsets[i])};
  }
};

/// A dataset slice materialized in memory.
struct LabeledClouds {
  std::vector<PointCloud> clouds;
  std::vector<int> labels;
  int size() const { return static_cast<int>(clouds.size()); }
};

inline real_t sq_dist3(std::span<const real_t> a, std::span<const real_t> b) {
  const real_t dx = a[0] - b[0];
  const real_t dy = a[1] - b[1];
  const real_t dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline constexpr real_t kInvSqrt2Pi = static_cast<real_t>(0.3989422804014327);

/// Exact Gaussian-CDF GELU (not the tanh approximation).
inline real_t gelu(real_t x) {
  return static_cast<real_t>(0.5) * x * (real_t(1) + std::erf(x * static_cast<real_t>(0.7071067811865476)));
}

inline real_t gelu_grad(real_t x) {
  const real_t cdf = static_cast<real_t>(0.5) * (real_t(1) + std::erf(x * static_cast<real_t>(0.7071067811865476)));
  const real_t pdf = kInvSqrt2Pi * std::exp(static_cast<real_t>(-0.5) * x * x);
  return cdf + x * pdf;
}

/// Entry (i, j) = squared Euclidean distance between a_i and b_j.
Matrix pairwise_sq_distances(const PointCloud& a, const PointCloud& b);

/// Canonicalizes per-row neighbor lists (sorted, deduplicated) into CSR form.
SparseDirectedGraph graph_from_rows(const std::vector<std::vector<int>>& rows, int num_sources);

/// Weighted variant; rows must be duplicate-free since duplicate weights have
/// no single meaning.
SparseDirectedGraph graph_from_rows(const std::vector<std::vector<int>>& rows, int num_sources,
                                    const std::vector<std::vector<real_t>>& weights);

/// Extracts per-row neighbor lists back out of a graph.
std::vector<std::vector<int>> rows_of(const SparseDirectedGraph& g);

/// Row i of the result = sum_j weight(i, j) * x_j. Rows without edges yield
/// zero rows.
Matrix spmm(const SparseDirectedGraph& g, const Matrix& x);

/// Copies the structure of g with uniform row weights 1/degree (arithmetic
/// mean aggregation).
SparseDirectedGraph with_uniform_row_weights(const SparseDirectedGraph& g);

/// Dense product a*b, parallel over rows.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Horizontal concatenation.
Matrix hcat(const Matrix& a, const Matrix& b);
Matrix hcat(const Matrix& a, const Matrix& b, const Matrix& c);

/// Gathers rows of x at the given indices.
Matrix take_rows(const Matrix& x, std::span<const int> indices);

/// SplitMix64 step; used to derive independent seed streams from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace diffconv
