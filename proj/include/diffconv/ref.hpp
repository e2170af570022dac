#pragma once

#include "diffconv/conv.hpp"
#include "diffconv/core.hpp"

// Deliberately naive serial implementations (double loops, dense matrices)
// used as oracles by the tests and as baselines by the kernel benchmark.
namespace diffconv::ref {

/// Densifies a sparse graph into a num_rows x num_sources matrix (weight, or
/// 1 for unweighted edges; 0 elsewhere).
Matrix dense_from_graph(const SparseDirectedGraph& g);

Matrix matmul(const Matrix& a, const Matrix& b);

/// Double-loop Gaussian kernel density (self-term included).
std::vector<real_t> kernel_density(const PointCloud& cloud, real_t bandwidth);

/// O(M*N) radius filter, strict inequality.
std::vector<std::vector<int>> ball_query(const PointCloud& keys, const PointCloud& sources, real_t radius);
std::vector<std::vector<int>> ball_query(const PointCloud& keys, const PointCloud& sources,
                                         std::span<const real_t> radii);

/// Full sort per key by (squared distance, index).
std::vector<std::vector<int>> knn_query(const PointCloud& keys, const PointCloud& sources, int k);

/// Dense softmax where non-edges carry an additive -1e9 sentinel instead of
/// being skipped. `mask` is 0/1 with the same shape as `scores`.
Matrix sentinel_softmax(const Matrix& scores, const Matrix& mask);

/// Dense two-pass balanced renormalization.
Matrix balanced_renormalize(const Matrix& attn);

/// Dense pipeline: scores = (X_k||P_k) Wq ((X_s||P_s) Wk)^T, sentinel softmax
/// over the mask, balanced renormalization. Returns the dense adjacency.
Matrix masked_attention_dense(const Matrix& x_keys, const Matrix& p_keys, const Matrix& x_sources,
                              const Matrix& p_sources, const Matrix& mask, const Matrix& proj_q,
                              const Matrix& proj_k);

/// S = X_keys - A * X_sources with a dense adjacency.
Matrix laplacian_smooth_dense(const Matrix& x_keys, const Matrix& a, const Matrix& x_sources);

/// Dense end-to-end layer forward mirroring diffconv_full: dilated grouping by
/// brute force, dense attention, dense smoothing and encoding.
Matrix diffconv_full_dense(const PointCloud& p_sources, const Matrix& x_sources, std::span<const int> key_indices,
                           const DiffConvLayer& layer);

/// log(sum(exp(v))) with max shift; oracle for cross-entropy checks.
real_t log_sum_exp(std::span<const real_t> v);

/// Squared distance from point p to triangle (a, b, c).
real_t point_triangle_sq_dist(std::span<const real_t> p, std::span<const real_t> a, std::span<const real_t> b,
                              std::span<const real_t> c);

}  // namespace diffconv::ref
