#pragma once

#include "diffconv/core.hpp"

namespace diffconv {

/// Projection dimension for d feature channels plus 3 coordinates: ceil((d+3)/4).
inline int attention_dim(int feature_dim) { return (feature_dim + 3 + 3) / 4; }

/// Query/key projections; each maps (d+3) attribute columns to d_k columns.
struct AttentionParams {
  Matrix proj_q;  // (d+3) x d_k
  Matrix proj_k;  // (d+3) x d_k
};

/// Per-edge dot products q_i . k_j for edges (i, j) of the graph, in edge order.
std::vector<real_t> edge_dot_weights(const SparseDirectedGraph& g, const Matrix& q, const Matrix& k);

/// Per-edge squared feature distance ||a_i - b_j||^2, in edge order.
std::vector<real_t> edge_sq_dist_weights(const SparseDirectedGraph& g, const Matrix& a, const Matrix& b);

/// Row-wise softmax over each key's stored edges (max-shifted for stability).
/// Rows must be non-empty.
std::vector<real_t> masked_softmax_weights(const SparseDirectedGraph& g, std::span<const real_t> scores);

/// Square-root double normalization: column pass then row pass.
/// Every row must contain at least one positive weight.
std::vector<real_t> balanced_renorm_weights(const SparseDirectedGraph& g, std::span<const real_t> attn);

/// Intermediates of the two normalization passes, kept for backpropagation.
struct BalancedRenormWork {
  std::vector<real_t> sqrt_w;          // per edge
  std::vector<real_t> col_sum;         // per source
  std::vector<real_t> col_normalized;  // per edge
  std::vector<real_t> row_sum;         // per key
  std::vector<real_t> out;             // per edge
};
BalancedRenormWork balanced_renorm_detail(const SparseDirectedGraph& g, std::span<const real_t> attn);

/// Divides each row's weights by the row sum; rows must have positive sums.
std::vector<real_t> row_normalize_weights(const SparseDirectedGraph& g, std::span<const real_t> w);

/// Raw attention scores on the graph's edges: projects key/source attribute
/// rows and stores the pairwise dot products as edge weights.
SparseDirectedGraph attention_scores(const Matrix& key_attrs, const Matrix& source_attrs, const Matrix& proj_q,
                                     const Matrix& proj_k, const SparseDirectedGraph& graph);

/// Softmax of the stored scores within each row's neighborhood.
SparseDirectedGraph masked_softmax(const SparseDirectedGraph& scores);

/// Balanced renormalization of softmaxed weights.
SparseDirectedGraph balanced_renormalize(const SparseDirectedGraph& attn);

/// Full chain: scores on the given neighborhoods, masked softmax, balanced
/// renormalization. Attribute rows are the features concatenated with coords.
SparseDirectedGraph masked_attention_adjacency(const Matrix& x_keys, const PointCloud& p_keys,
                                               const Matrix& x_sources, const PointCloud& p_sources,
                                               const SparseDirectedGraph& neighborhoods,
                                               const AttentionParams& params);

}  // namespace diffconv
