#include "diffconv/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "diffconv/attention.hpp"

namespace diffconv {

namespace {
void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}
}  // namespace

Tape::NodeId Tape::push(Matrix value, std::function<void(Tape&)> backprop, Parameter* p) {
  Node node;
  node.grad = Matrix(value.rows, value.cols);
  node.value = std::move(value);
  node.backprop = std::move(backprop);
  node.parameter = p;
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

int Tape::store_graph(const SparseDirectedGraph& g) {
  graphs_.push_back(g);
  return static_cast<int>(graphs_.size()) - 1;
}

Tape::NodeId Tape::leaf(Matrix value) { return push(std::move(value)); }

Tape::NodeId Tape::param(Parameter& p) {
  const auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  const NodeId id = push(p.value, {}, &p);
  param_nodes_.emplace(&p, id);
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const NodeId out = push(diffconv::matmul(value(a), value(b)));
  nodes_[out].backprop = [a, b, out](Tape& t) {
    accumulate(t.nodes_[a].grad, diffconv::matmul(t.grad(out), transpose(t.value(b))));
    accumulate(t.nodes_[b].grad, diffconv::matmul(transpose(t.value(a)), t.grad(out)));
  };
  return out;
}

Tape::NodeId Tape::linear(NodeId x, NodeId w, NodeId bias) {
  Matrix y = diffconv::matmul(value(x), value(w));
  if (bias >= 0) {
    const Matrix& b = value(bias);
    if (b.rows != 1 || b.cols != y.cols) throw InvalidInput("Tape::linear: bias must be 1 x out");
    for (int i = 0; i < y.rows; ++i) {
      real_t* row = y.row(i).data();
      for (int c = 0; c < y.cols; ++c) row[c] += b.data[c];
    }
  }
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [x, w, bias, out](Tape& t) {
    const Matrix& dy = t.grad(out);
    accumulate(t.nodes_[x].grad, diffconv::matmul(dy, transpose(t.value(w))));
    accumulate(t.nodes_[w].grad, diffconv::matmul(transpose(t.value(x)), dy));
    if (bias >= 0) {
      Matrix& db = t.nodes_[bias].grad;
      for (int i = 0; i < dy.rows; ++i)
        for (int c = 0; c < dy.cols; ++c) db(0, c) += dy(i, c);
    }
  };
  return out;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw InvalidInput("Tape::add: shape mismatch");
  Matrix y = value(a);
  accumulate(y, value(b));
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, b, out](Tape& t) {
    accumulate(t.nodes_[a].grad, t.grad(out));
    accumulate(t.nodes_[b].grad, t.grad(out));
  };
  return out;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw InvalidInput("Tape::sub: shape mismatch");
  Matrix y = value(a);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= value(b).data[i];
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, b, out](Tape& t) {
    accumulate(t.nodes_[a].grad, t.grad(out));
    const Matrix& dy = t.grad(out);
    Matrix& db = t.nodes_[b].grad;
    for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] -= dy.data[i];
  };
  return out;
}

Tape::NodeId Tape::scale(NodeId a, real_t factor) {
  Matrix y = value(a);
  for (auto& v : y.data) v *= factor;
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, out, factor](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += factor * dy.data[i];
  };
  return out;
}

Tape::NodeId Tape::gelu(NodeId a) {
  Matrix y = value(a);
  for (auto& v : y.data) v = diffconv::gelu(v);
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, out](Tape& t) {
    const Matrix& x = t.value(a);
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += gelu_grad(x.data[i]) * dy.data[i];
  };
  return out;
}

Tape::NodeId Tape::exp_elem(NodeId a) {
  Matrix y = value(a);
  for (auto& v : y.data) v = std::exp(v);
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, out](Tape& t) {
    const Matrix& y2 = t.value(out);
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += y2.data[i] * dy.data[i];
  };
  return out;
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
  const NodeId out = push(hcat(value(a), value(b)));
  const int a_cols = value(a).cols;
  nodes_[out].backprop = [a, b, out, a_cols](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    Matrix& db = t.nodes_[b].grad;
    for (int i = 0; i < dy.rows; ++i) {
      for (int c = 0; c < da.cols; ++c) da(i, c) += dy(i, c);
      for (int c = 0; c < db.cols; ++c) db(i, c) += dy(i, a_cols + c);
    }
  };
  return out;
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b, NodeId c) { return concat_cols(concat_cols(a, b), c); }

Tape::NodeId Tape::take_rows(NodeId a, std::vector<int> indices) {
  const NodeId out = push(diffconv::take_rows(value(a), indices));
  nodes_[out].backprop = [a, out, idx = std::move(indices)](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (int i = 0; i < dy.rows; ++i)
      for (int c = 0; c < dy.cols; ++c) da(idx[i], c) += dy(i, c);
  };
  return out;
}

Tape::NodeId Tape::row_max_pool(NodeId a) {
  const Matrix& x = value(a);
  if (x.rows == 0) throw InvalidInput("Tape::row_max_pool: empty input");
  Matrix y(1, x.cols);
  std::vector<int> argmax(x.cols, 0);
  for (int c = 0; c < x.cols; ++c) {
    real_t best = x(0, c);
    for (int i = 1; i < x.rows; ++i)
      if (x(i, c) > best) {  // strict: first maximal row wins ties
        best = x(i, c);
        argmax[c] = i;
      }
    y(0, c) = best;
  }
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, out, am = std::move(argmax)](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (int c = 0; c < dy.cols; ++c) da(am[c], c) += dy(0, c);
  };
  return out;
}

Tape::NodeId Tape::row_avg_pool(NodeId a) {
  const Matrix& x = value(a);
  if (x.rows == 0) throw InvalidInput("Tape::row_avg_pool: empty input");
  Matrix y(1, x.cols);
  for (int c = 0; c < x.cols; ++c) {
    real_t acc = 0;
    for (int i = 0; i < x.rows; ++i) acc += x(i, c);
    y(0, c) = acc / static_cast<real_t>(x.rows);
  }
  const NodeId out = push(std::move(y));
  const int rows = x.rows;
  nodes_[out].backprop = [a, out, rows](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    const real_t inv = real_t(1) / static_cast<real_t>(rows);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < dy.cols; ++c) da(i, c) += inv * dy(0, c);
  };
  return out;
}

Tape::NodeId Tape::dropout(NodeId a, real_t rate, std::mt19937_64& rng, bool train) {
  if (rate < 0 || rate >= 1) throw InvalidInput("Tape::dropout: rate must be in [0, 1)");
  if (!train || rate == 0) return a;
  const Matrix& x = value(a);
  Matrix mask(x.rows, x.cols);
  std::uniform_real_distribution<real_t> dist(0, 1);
  const real_t keep_scale = real_t(1) / (1 - rate);
  for (auto& m : mask.data) m = dist(rng) < rate ? real_t(0) : keep_scale;
  Matrix y = x;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= mask.data[i];
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [a, out, m = std::move(mask)](Tape& t) {
    const Matrix& dy = t.grad(out);
    Matrix& da = t.nodes_[a].grad;
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += m.data[i] * dy.data[i];
  };
  return out;
}

namespace {
Matrix column_of(std::vector<real_t> v) {
  Matrix m(static_cast<int>(v.size()), 1);
  m.data = std::move(v);
  return m;
}

std::span<const real_t> column_span(const Matrix& m) { return {m.data.data(), m.data.size()}; }
}  // namespace

Tape::NodeId Tape::edge_dot(NodeId q, NodeId k, const SparseDirectedGraph& g) {
  const int gid = store_graph(g);
  const NodeId out = push(column_of(edge_dot_weights(g, value(q), value(k))));
  nodes_[out].backprop = [q, k, out, gid](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& dy = t.grad(out);
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    Matrix& dq = t.nodes_[q].grad;
    Matrix& dk = t.nodes_[k].grad;
    for (int i = 0; i < gr.num_rows(); ++i)
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) {
        const int j = gr.col_indices[e];
        const real_t d = dy.data[e];
        for (int c = 0; c < qv.cols; ++c) {
          dq(i, c) += d * kv(j, c);
          dk(j, c) += d * qv(i, c);
        }
      }
  };
  return out;
}

Tape::NodeId Tape::edge_sq_dist(NodeId a, NodeId b, const SparseDirectedGraph& g) {
  const int gid = store_graph(g);
  const NodeId out = push(column_of(edge_sq_dist_weights(g, value(a), value(b))));
  nodes_[out].backprop = [a, b, out, gid](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& dy = t.grad(out);
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix& da = t.nodes_[a].grad;
    Matrix& db = t.nodes_[b].grad;
    for (int i = 0; i < gr.num_rows(); ++i)
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) {
        const int j = gr.col_indices[e];
        const real_t d = 2 * dy.data[e];
        for (int c = 0; c < av.cols; ++c) {
          const real_t diff = av(i, c) - bv(j, c);
          da(i, c) += d * diff;
          db(j, c) -= d * diff;
        }
      }
  };
  return out;
}

Tape::NodeId Tape::masked_softmax(NodeId scores, const SparseDirectedGraph& g) {
  if (value(scores).cols != 1 || value(scores).rows != g.num_edges())
    throw InvalidInput("Tape::masked_softmax: scores must be E x 1");
  const int gid = store_graph(g);
  const NodeId out = push(column_of(masked_softmax_weights(g, column_span(value(scores)))));
  nodes_[out].backprop = [scores, out, gid](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& y = t.value(out);
    const Matrix& dy = t.grad(out);
    Matrix& ds = t.nodes_[scores].grad;
    for (int i = 0; i < gr.num_rows(); ++i) {
      real_t dot = 0;
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) dot += dy.data[e] * y.data[e];
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e)
        ds.data[e] += y.data[e] * (dy.data[e] - dot);
    }
  };
  return out;
}

Tape::NodeId Tape::balanced_renorm(NodeId attn, const SparseDirectedGraph& g) {
  if (value(attn).cols != 1 || value(attn).rows != g.num_edges())
    throw InvalidInput("Tape::balanced_renorm: weights must be E x 1");
  const int gid = store_graph(g);
  BalancedRenormWork work = balanced_renorm_detail(g, column_span(value(attn)));
  const NodeId out = push(column_of(work.out));
  nodes_[out].backprop = [attn, out, gid, w = std::move(work)](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& dy = t.grad(out);
    Matrix& dt = t.nodes_[attn].grad;
    const int rows = gr.num_rows();
    // Row pass: out_e = col_normalized_e / row_sum_i.
    std::vector<real_t> d_colnorm(gr.num_edges(), 0);
    for (int i = 0; i < rows; ++i) {
      if (!(w.row_sum[i] > 0)) continue;
      real_t dot = 0;
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) dot += dy.data[e] * w.out[e];
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e)
        d_colnorm[e] = (dy.data[e] - dot) / w.row_sum[i];
    }
    // Column pass: col_normalized_e = sqrt_w_e / col_sum_j.
    std::vector<real_t> col_dot(gr.num_sources, 0);
    for (int e = 0; e < gr.num_edges(); ++e) col_dot[gr.col_indices[e]] += d_colnorm[e] * w.col_normalized[e];
    for (int e = 0; e < gr.num_edges(); ++e) {
      const real_t c = w.col_sum[gr.col_indices[e]];
      if (!(c > 0)) continue;
      const real_t d_sqrt = (d_colnorm[e] - col_dot[gr.col_indices[e]]) / c;
      // sqrt_w = sqrt(attn); entries that underflowed to zero stay pinned.
      if (w.sqrt_w[e] > 0) dt.data[e] += d_sqrt / (2 * w.sqrt_w[e]);
    }
  };
  return out;
}

Tape::NodeId Tape::row_normalize(NodeId w, const SparseDirectedGraph& g) {
  if (value(w).cols != 1 || value(w).rows != g.num_edges())
    throw InvalidInput("Tape::row_normalize: weights must be E x 1");
  const int gid = store_graph(g);
  const NodeId out = push(column_of(row_normalize_weights(g, column_span(value(w)))));
  nodes_[out].backprop = [w, out, gid](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& wv = t.value(w);
    const Matrix& y = t.value(out);
    const Matrix& dy = t.grad(out);
    Matrix& dw = t.nodes_[w].grad;
    for (int i = 0; i < gr.num_rows(); ++i) {
      real_t sum = 0, dot = 0;
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) {
        sum += wv.data[e];
        dot += dy.data[e] * y.data[e];
      }
      if (!(sum > 0)) continue;
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e)
        dw.data[e] += (dy.data[e] - dot) / sum;
    }
  };
  return out;
}

Tape::NodeId Tape::spmm(NodeId w, NodeId x, const SparseDirectedGraph& g) {
  const Matrix& wv = value(w);
  const Matrix& xv = value(x);
  if (wv.cols != 1 || wv.rows != g.num_edges()) throw InvalidInput("Tape::spmm: weights must be E x 1");
  if (xv.rows != g.num_sources) throw InvalidInput("Tape::spmm: feature rows must match graph sources");
  Matrix y(g.num_rows(), xv.cols);
  for (int i = 0; i < g.num_rows(); ++i) {
    real_t* dst = y.row(i).data();
    for (int e = g.row_offsets[i]; e < g.row_offsets[i + 1]; ++e) {
      const real_t* src = xv.row(g.col_indices[e]).data();
      const real_t we = wv.data[e];
      for (int c = 0; c < xv.cols; ++c) dst[c] += we * src[c];
    }
  }
  const int gid = store_graph(g);
  const NodeId out = push(std::move(y));
  nodes_[out].backprop = [w, x, out, gid](Tape& t) {
    const SparseDirectedGraph& gr = t.graph(gid);
    const Matrix& dy = t.grad(out);
    const Matrix& wv2 = t.value(w);
    const Matrix& xv2 = t.value(x);
    Matrix& dw = t.nodes_[w].grad;
    Matrix& dx = t.nodes_[x].grad;
    for (int i = 0; i < gr.num_rows(); ++i) {
      const real_t* dyi = dy.row(i).data();
      for (int e = gr.row_offsets[i]; e < gr.row_offsets[i + 1]; ++e) {
        const int j = gr.col_indices[e];
        const real_t* xj = xv2.row(j).data();
        real_t* dxj = dx.row(j).data();
        const real_t we = wv2.data[e];
        real_t acc = 0;
        for (int c = 0; c < dy.cols; ++c) {
          acc += dyi[c] * xj[c];
          dxj[c] += we * dyi[c];
        }
        dw.data[e] += acc;
      }
    }
  };
  return out;
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Matrix& z = value(logits);
  if (static_cast<int>(labels.size()) != z.rows)
    throw InvalidInput("Tape::softmax_cross_entropy: one label per row required");
  Matrix probs(z.rows, z.cols);
  real_t loss = 0;
  for (int i = 0; i < z.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= z.cols) throw InvalidInput("Tape::softmax_cross_entropy: label out of range");
    real_t mx = z(i, 0);
    for (int c = 1; c < z.cols; ++c) mx = std::max(mx, z(i, c));
    real_t sum = 0;
    for (int c = 0; c < z.cols; ++c) {
      probs(i, c) = std::exp(z(i, c) - mx);
      sum += probs(i, c);
    }
    for (int c = 0; c < z.cols; ++c) probs(i, c) /= sum;
    loss -= std::log(probs(i, y));
  }
  loss /= static_cast<real_t>(z.rows);
  Matrix value_out(1, 1);
  value_out(0, 0) = loss;
  const NodeId out = push(std::move(value_out));
  nodes_[out].backprop = [logits, out, p = std::move(probs), lab = std::move(labels)](Tape& t) {
    const real_t upstream = t.grad(out)(0, 0);
    Matrix& dz = t.nodes_[logits].grad;
    const real_t inv_n = real_t(1) / static_cast<real_t>(p.rows);
    for (int i = 0; i < p.rows; ++i)
      for (int c = 0; c < p.cols; ++c)
        dz(i, c) += upstream * inv_n * (p(i, c) - (c == lab[i] ? real_t(1) : real_t(0)));
  };
  return out;
}

void Tape::backward(NodeId loss, bool write_param_grads) {
  Matrix& seed = nodes_[loss].grad;
  if (seed.rows != 1 || seed.cols != 1) throw InvalidInput("Tape::backward: loss node must be 1 x 1");
  seed(0, 0) = 1;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id)
    if (nodes_[id].backprop) nodes_[id].backprop(*this);
  if (write_param_grads)
    for (auto& [p, id] : param_nodes_) accumulate(p->grad, nodes_[id].grad);
}

Matrix Tape::param_grad(const Parameter& p) const {
  const auto it = param_nodes_.find(const_cast<Parameter*>(&p));
  if (it == param_nodes_.end()) return Matrix(p.value.rows, p.value.cols);  // unused parameter
  return nodes_[it->second].grad;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

GradCheckResult grad_check(const std::function<real_t(bool)>& run, std::span<Parameter* const> params, real_t step) {
  for (Parameter* p : params) p->zero_grad();
  const real_t base_loss = run(true);
  if (!std::isfinite(base_loss)) throw std::runtime_error("grad_check: non-finite loss");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const real_t saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const real_t plus = run(false);
      p.value.data[i] = saved - step;
      const real_t minus = run(false);
      p.value.data[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw std::runtime_error("grad_check: non-finite loss");
      const real_t numeric = (plus - minus) / (2 * step);
      const real_t a = analytic[pi].data[i];
      const real_t rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), static_cast<real_t>(1e-4)});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p.name;
        result.worst_coord = static_cast<int>(i);
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizer

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.cosine_period < 1) throw InvalidInput("SgdOptimizer: cosine period must be >= 1");
  velocities_.reserve(params_.size());
  for (const Parameter* p : params_) velocities_.emplace_back(p->value.rows, p->value.cols);
}

real_t SgdOptimizer::learning_rate(int epoch) const {
  if (epoch < 0) throw InvalidInput("SgdOptimizer: negative epoch");
  int t = epoch;
  if (t > config_.cosine_period) t %= config_.cosine_period;  // restart, keeping lr(period) = min_lr
  const real_t phase = static_cast<real_t>(t) / static_cast<real_t>(config_.cosine_period);
  constexpr real_t pi = static_cast<real_t>(3.14159265358979323846);
  return config_.min_lr + (config_.base_lr - config_.min_lr) / 2 * (1 + std::cos(pi * phase));
}

void SgdOptimizer::step(int epoch) {
  const real_t lr = learning_rate(epoch);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Matrix& v = velocities_[i];
    for (std::size_t c = 0; c < p.value.data.size(); ++c) {
      const real_t g = p.grad.data[c];
      if (!std::isfinite(g)) throw std::runtime_error("SgdOptimizer: non-finite gradient in " + p.name);
      v.data[c] = config_.momentum * v.data[c] + g;
      p.value.data[c] -= lr * v.data[c];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[4] = {'D', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  std::reverse(buf, buf + sizeof(T));
#endif
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw IoError("checkpoint: truncated file");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  std::reverse(buf, buf + sizeof(T));
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_le<std::uint32_t>(out, 2);
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows));
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols));
    for (real_t v : p->value.data) write_le<double>(out, static_cast<double>(v));
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic in " + path);
  if (read_le<std::uint32_t>(in) != kCheckpointVersion) throw IoError("checkpoint: unsupported version in " + path);
  const std::uint64_t count = read_le<std::uint64_t>(in);

  std::map<std::string, Matrix> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint: truncated name");
    const std::uint32_t rank = read_le<std::uint32_t>(in);
    if (rank != 2) throw IoError("checkpoint: unsupported rank for " + name);
    const auto rows = read_le<std::uint64_t>(in);
    const auto cols = read_le<std::uint64_t>(in);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& v : m.data) v = static_cast<real_t>(read_le<double>(in));
    if (!entries.emplace(std::move(name), std::move(m)).second) throw IoError("checkpoint: duplicate entry");
  }

  if (entries.size() != params.size())
    throw IoError("checkpoint: expected " + std::to_string(params.size()) + " entries, found " +
                  std::to_string(entries.size()));
  for (Parameter* p : params) {
    const auto it = entries.find(p->name);
    if (it == entries.end()) throw IoError("checkpoint: missing parameter " + p->name);
    if (!it->second.same_shape(p->value)) throw IoError("checkpoint: shape mismatch for " + p->name);
    p->value = std::move(it->second);
    p->zero_grad();
  }
}

}  // namespace diffconv
