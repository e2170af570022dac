#include "diffconv/attention.hpp"

#include <algorithm>
#include <cmath>

namespace diffconv {

std::vector<real_t> edge_dot_weights(const SparseDirectedGraph& g, const Matrix& q, const Matrix& k) {
  if (q.cols != k.cols) throw InvalidInput("edge_dot_weights: projection widths differ");
  if (g.num_rows() != q.rows || g.num_sources != k.rows)
    throw InvalidInput("edge_dot_weights: graph shape does not match projections");
  std::vector<real_t> out(g.num_edges());
#pragma omp parallel for
  for (int i = 0; i < g.num_rows(); ++i) {
    const auto qi = q.row(i);
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const auto kj = k.row(g.col_indices[e]);
      real_t acc = 0;
      for (int c = 0; c < q.cols; ++c) acc += qi[c] * kj[c];
      out[e] = acc;
    }
  }
  return out;
}

std::vector<real_t> edge_sq_dist_weights(const SparseDirectedGraph& g, const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw InvalidInput("edge_sq_dist_weights: widths differ");
  if (g.num_rows() != a.rows || g.num_sources != b.rows)
    throw InvalidInput("edge_sq_dist_weights: graph shape does not match inputs");
  std::vector<real_t> out(g.num_edges());
#pragma omp parallel for
  for (int i = 0; i < g.num_rows(); ++i) {
    const auto ai = a.row(i);
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const auto bj = b.row(g.col_indices[e]);
      real_t acc = 0;
      for (int c = 0; c < a.cols; ++c) {
        const real_t d = ai[c] - bj[c];
        acc += d * d;
      }
      out[e] = acc;
    }
  }
  return out;
}

std::vector<real_t> masked_softmax_weights(const SparseDirectedGraph& g, std::span<const real_t> scores) {
  if (static_cast<int>(scores.size()) != g.num_edges())
    throw InvalidInput("masked_softmax_weights: one score per edge required");
  std::vector<real_t> out(scores.size());
#pragma omp parallel for
  for (int i = 0; i < g.num_rows(); ++i) {
    const int begin = g.row_offsets[i], end = g.row_offsets[i + 1];
    if (begin == end) {
      // Raising from inside a parallel region would terminate; handled below.
      continue;
    }
    real_t mx = scores[begin];
    for (int e = begin + 1; e < end; ++e) mx = std::max(mx, scores[e]);
    real_t sum = 0;
    for (int e = begin; e < end; ++e) {
      out[e] = std::exp(scores[e] - mx);
      sum += out[e];
    }
    for (int e = begin; e < end; ++e) out[e] /= sum;
  }
  for (int i = 0; i < g.num_rows(); ++i)
    if (g.row_offsets[i] == g.row_offsets[i + 1])
      throw InvalidInput("masked_softmax_weights: row " + std::to_string(i) + " has no edges");
  return out;
}

BalancedRenormWork balanced_renorm_detail(const SparseDirectedGraph& g, std::span<const real_t> attn) {
  if (static_cast<int>(attn.size()) != g.num_edges())
    throw InvalidInput("balanced_renorm_weights: one weight per edge required");
  const int rows = g.num_rows();
  BalancedRenormWork work;
  work.sqrt_w.resize(attn.size());
  work.col_sum.assign(g.num_sources, 0);
  for (int i = 0; i < rows; ++i) {
    real_t row_max = 0;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      if (attn[e] < 0) throw InvalidInput("balanced_renorm_weights: negative weight");
      work.sqrt_w[e] = std::sqrt(attn[e]);
      work.col_sum[g.col_indices[e]] += work.sqrt_w[e];
      row_max = std::max(row_max, attn[e]);
    }
    if (g.row_offsets[i] < g.row_offsets[i + 1] && row_max == 0)
      throw InvalidInput("balanced_renorm_weights: row " + std::to_string(i) + " is all zeros");
  }
  work.col_normalized.resize(attn.size());
  work.row_sum.assign(rows, 0);
  work.out.resize(attn.size());
#pragma omp parallel for
  for (int i = 0; i < rows; ++i) {
    real_t row_sum = 0;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      // A zero column sum only happens when every incoming entry underflowed;
      // those entries are treated as exact zeros.
      const real_t c = work.col_sum[g.col_indices[e]];
      work.col_normalized[e] = c > 0 ? work.sqrt_w[e] / c : 0;
      row_sum += work.col_normalized[e];
    }
    work.row_sum[i] = row_sum;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e)
      work.out[e] = row_sum > 0 ? work.col_normalized[e] / row_sum : 0;
  }
  return work;
}

std::vector<real_t> balanced_renorm_weights(const SparseDirectedGraph& g, std::span<const real_t> attn) {
  return balanced_renorm_detail(g, attn).out;
}

std::vector<real_t> row_normalize_weights(const SparseDirectedGraph& g, std::span<const real_t> w) {
  if (static_cast<int>(w.size()) != g.num_edges())
    throw InvalidInput("row_normalize_weights: one weight per edge required");
  std::vector<real_t> out(w.size());
#pragma omp parallel for
  for (int i = 0; i < g.num_rows(); ++i) {
    real_t sum = 0;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) sum += w[e];
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) out[e] = sum > 0 ? w[e] / sum : 0;
  }
  for (int i = 0; i < g.num_rows(); ++i) {
    if (g.row_offsets[i] == g.row_offsets[i + 1]) continue;
    real_t sum = 0;
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) sum += w[e];
    if (!(sum > 0)) throw InvalidInput("row_normalize_weights: row " + std::to_string(i) + " sum not positive");
  }
  return out;
}

SparseDirectedGraph attention_scores(const Matrix& key_attrs, const Matrix& source_attrs, const Matrix& proj_q,
                                     const Matrix& proj_k, const SparseDirectedGraph& graph) {
  if (key_attrs.cols != proj_q.rows || source_attrs.cols != proj_k.rows)
    throw InvalidInput("attention_scores: attribute width does not match projection");
  if (proj_q.cols != proj_k.cols) throw InvalidInput("attention_scores: projection output widths differ");
  const Matrix q = matmul(key_attrs, proj_q);
  const Matrix k = matmul(source_attrs, proj_k);
  SparseDirectedGraph out = graph;
  out.weights = edge_dot_weights(graph, q, k);
  return out;
}

SparseDirectedGraph masked_softmax(const SparseDirectedGraph& scores) {
  if (!scores.has_weights()) throw InvalidInput("masked_softmax: graph carries no scores");
  SparseDirectedGraph out = scores;
  out.weights = masked_softmax_weights(scores, scores.weights);
  return out;
}

SparseDirectedGraph balanced_renormalize(const SparseDirectedGraph& attn) {
  if (!attn.has_weights()) throw InvalidInput("balanced_renormalize: graph carries no weights");
  SparseDirectedGraph out = attn;
  out.weights = balanced_renorm_weights(attn, attn.weights);
  return out;
}

SparseDirectedGraph masked_attention_adjacency(const Matrix& x_keys, const PointCloud& p_keys,
                                               const Matrix& x_sources, const PointCloud& p_sources,
                                               const SparseDirectedGraph& neighborhoods,
                                               const AttentionParams& params) {
  const Matrix key_attrs = hcat(x_keys, p_keys.coords);
  const Matrix source_attrs = hcat(x_sources, p_sources.coords);
  return balanced_renormalize(masked_softmax(attention_scores(key_attrs, source_attrs, params.proj_q,
                                                              params.proj_k, neighborhoods)));
}

}  // namespace diffconv
