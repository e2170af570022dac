#pragma once

#include "diffconv/attention.hpp"
#include "diffconv/core.hpp"
#include "diffconv/grouping.hpp"

namespace diffconv {

/// Single affine map y = x W + b; an empty bias means a pure linear map.
struct LinearMap {
  Matrix weight;              // in x out
  std::vector<real_t> bias;   // empty or `out` entries

  Matrix apply(const Matrix& x) const;
  int in_dim() const { return weight.rows; }
  int out_dim() const { return weight.cols; }
};

enum class Aggregation { Max, Avg };

/// S = X_keys - A_hat * X_sources; each row contrasts a key's features with
/// its attention-weighted neighborhood mean.
Matrix laplacian_smooth(const Matrix& x_keys, const SparseDirectedGraph& a_hat, const Matrix& x_sources);

/// Keys-equal-sources convenience overload.
Matrix laplacian_smooth(const Matrix& x, const SparseDirectedGraph& a_hat);

/// G = l_theta(S || X_keys) with S from laplacian_smooth.
Matrix diffconv_basic(const Matrix& x_keys, const SparseDirectedGraph& a_hat, const Matrix& x_sources,
                      const LinearMap& l_theta);
Matrix diffconv_basic(const Matrix& x, const SparseDirectedGraph& a_hat, const LinearMap& l_theta);

/// Edge-convolution baseline: per edge (i, j) apply l_theta(x_i - x_j || x_i),
/// then aggregate channel-wise over each row (MAX or AVG). Rows must be
/// non-empty.
Matrix edgeconv_reference(const Matrix& x, const SparseDirectedGraph& neighbors, const LinearMap& l_theta,
                          Aggregation aggregation);

/// l_pi applied to the 9-column block (P_keys || A_hat*P_sources || difference).
Matrix positional_encoding(const PointCloud& p_keys, const PointCloud& p_sources, const SparseDirectedGraph& a_hat,
                           const LinearMap& l_pi);

/// One full convolution layer: density-dilated grouping, masked attention,
/// Laplacian smoothing, positional encoding, shared nonlinearity.
struct DiffConvLayer {
  LinearMap l_theta;          // 2d -> d_out
  LinearMap l_pi;             // 9 -> d_out
  AttentionParams attention;  // (d+3) -> d_k
  real_t base_sq_radius = static_cast<real_t>(0.0125);
  real_t bandwidth = static_cast<real_t>(0.1);
  bool use_gelu = true;       // identity when false (linear-equivalence tests)
};

/// Forward pass over key points given by indices into the source cloud
/// (subsampling contract: keys are a subset of sources, M <= N). Dilated radii
/// come from the source cloud's own density field.
Matrix diffconv_full(const PointCloud& p_sources, const Matrix& x_sources, std::span<const int> key_indices,
                     const DiffConvLayer& layer);

}  // namespace diffconv
