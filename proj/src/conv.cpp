#include "diffconv/conv.hpp"

#include <algorithm>
#include <cmath>

namespace diffconv {

Matrix LinearMap::apply(const Matrix& x) const {
  if (x.cols != weight.rows) throw InvalidInput("LinearMap: input width " + std::to_string(x.cols) +
                                                " does not match weight rows " + std::to_string(weight.rows));
  Matrix out = matmul(x, weight);
  if (!bias.empty()) {
    if (static_cast<int>(bias.size()) != weight.cols) throw InvalidInput("LinearMap: bias length mismatch");
    for (int i = 0; i < out.rows; ++i) {
      real_t* row = out.row(i).data();
      for (int c = 0; c < out.cols; ++c) row[c] += bias[c];
    }
  }
  return out;
}

Matrix laplacian_smooth(const Matrix& x_keys, const SparseDirectedGraph& a_hat, const Matrix& x_sources) {
  if (a_hat.num_rows() != x_keys.rows || a_hat.num_sources != x_sources.rows || x_keys.cols != x_sources.cols)
    throw InvalidInput("laplacian_smooth: shape mismatch");
  Matrix smoothed = spmm(a_hat, x_sources);
#pragma omp parallel for
  for (int i = 0; i < x_keys.rows; ++i) {
    real_t* row = smoothed.row(i).data();
    const real_t* key = x_keys.row(i).data();
    for (int c = 0; c < x_keys.cols; ++c) row[c] = key[c] - row[c];
  }
  return smoothed;
}

Matrix laplacian_smooth(const Matrix& x, const SparseDirectedGraph& a_hat) {
  return laplacian_smooth(x, a_hat, x);
}

Matrix diffconv_basic(const Matrix& x_keys, const SparseDirectedGraph& a_hat, const Matrix& x_sources,
                      const LinearMap& l_theta) {
  return l_theta.apply(hcat(laplacian_smooth(x_keys, a_hat, x_sources), x_keys));
}

Matrix diffconv_basic(const Matrix& x, const SparseDirectedGraph& a_hat, const LinearMap& l_theta) {
  return diffconv_basic(x, a_hat, x, l_theta);
}

Matrix edgeconv_reference(const Matrix& x, const SparseDirectedGraph& neighbors, const LinearMap& l_theta,
                          Aggregation aggregation) {
  if (neighbors.num_sources != x.rows) throw InvalidInput("edgeconv_reference: graph sources != feature rows");
  if (l_theta.in_dim() != 2 * x.cols) throw InvalidInput("edgeconv_reference: map expects 2d inputs");
  const int rows = neighbors.num_rows();
  for (int i = 0; i < rows; ++i)
    if (neighbors.row_offsets[i] == neighbors.row_offsets[i + 1])
      throw InvalidInput("edgeconv_reference: row " + std::to_string(i) + " has no edges");
  Matrix out(rows, l_theta.out_dim());
#pragma omp parallel for
  for (int i = 0; i < rows; ++i) {
    Matrix edge_in(1, 2 * x.cols);
    const real_t* xi = x.row(i).data();
    bool first = true;
    for (int e = neighbors.row_offsets[i]; e < neighbors.row_offsets[i + 1]; ++e) {
      const real_t* xj = x.row(neighbors.col_indices[e]).data();
      for (int c = 0; c < x.cols; ++c) {
        edge_in(0, c) = xi[c] - xj[c];
        edge_in(0, x.cols + c) = xi[c];
      }
      const Matrix mapped = l_theta.apply(edge_in);
      real_t* dst = out.row(i).data();
      if (first) {
        std::copy_n(mapped.row(0).data(), out.cols, dst);
        first = false;
      } else if (aggregation == Aggregation::Max) {
        for (int c = 0; c < out.cols; ++c) dst[c] = std::max(dst[c], mapped(0, c));
      } else {
        for (int c = 0; c < out.cols; ++c) dst[c] += mapped(0, c);
      }
    }
    if (aggregation == Aggregation::Avg) {
      const int deg = neighbors.row_offsets[i + 1] - neighbors.row_offsets[i];
      real_t* dst = out.row(i).data();
      for (int c = 0; c < out.cols; ++c) dst[c] /= static_cast<real_t>(deg);
    }
  }
  return out;
}

Matrix positional_encoding(const PointCloud& p_keys, const PointCloud& p_sources, const SparseDirectedGraph& a_hat,
                           const LinearMap& l_pi) {
  if (l_pi.in_dim() != 9) throw InvalidInput("positional_encoding: map expects 9 input columns");
  if (a_hat.num_rows() != p_keys.size() || a_hat.num_sources != p_sources.size())
    throw InvalidInput("positional_encoding: shape mismatch");
  const Matrix centroid = spmm(a_hat, p_sources.coords);
  Matrix block(p_keys.size(), 9);
#pragma omp parallel for
  for (int i = 0; i < p_keys.size(); ++i) {
    const real_t* p = p_keys.point(i).data();
    const real_t* m = centroid.row(i).data();
    real_t* dst = block.row(i).data();
    for (int c = 0; c < 3; ++c) {
      dst[c] = p[c];
      dst[3 + c] = m[c];
      dst[6 + c] = p[c] - m[c];
    }
  }
  return l_pi.apply(block);
}

Matrix diffconv_full(const PointCloud& p_sources, const Matrix& x_sources, std::span<const int> key_indices,
                     const DiffConvLayer& layer) {
  if (x_sources.rows != p_sources.size()) throw InvalidInput("diffconv_full: features do not match cloud");
  if (static_cast<int>(key_indices.size()) > p_sources.size())
    throw InvalidInput("diffconv_full: more keys than sources");

  const DilationField field = dilation_field(p_sources, layer.bandwidth, layer.base_sq_radius);
  std::vector<real_t> key_radii(key_indices.size());
  for (std::size_t i = 0; i < key_indices.size(); ++i) {
    const int idx = key_indices[i];
    if (idx < 0 || idx >= p_sources.size()) throw InvalidInput("diffconv_full: key index out of range");
    key_radii[i] = field.radii[idx];
  }
  const PointCloud p_keys(take_rows(p_sources.coords, key_indices));
  const Matrix x_keys = take_rows(x_sources, key_indices);

  const SparseDirectedGraph neighborhoods = ball_query(p_keys, p_sources, key_radii);
  const SparseDirectedGraph a_hat =
      masked_attention_adjacency(x_keys, p_keys, x_sources, p_sources, neighborhoods, layer.attention);

  const Matrix smoothed = laplacian_smooth(x_keys, a_hat, x_sources);
  Matrix g = layer.l_theta.apply(hcat(smoothed, x_keys));
  const Matrix pos = positional_encoding(p_keys, p_sources, a_hat, layer.l_pi);
  if (!g.same_shape(pos)) throw InvalidInput("diffconv_full: l_theta and l_pi output widths differ");
  for (std::size_t v = 0; v < g.data.size(); ++v) {
    g.data[v] += pos.data[v];
    if (layer.use_gelu) g.data[v] = gelu(g.data[v]);
  }
  return g;
}

}  // namespace diffconv
