#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>

#include "diffconv/core.hpp"

namespace diffconv {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
  void zero_grad() { grad.fill(0); }
};

/// Reverse-mode differentiation over a linear record of operations. A tape is
/// built by one forward pass, confined to a single thread, and discarded after
/// backward(); parameters live outside and collect gradients additively.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(Matrix value);
  /// One node per distinct Parameter; repeated calls return the same node.
  NodeId param(Parameter& p);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  const Matrix& grad(NodeId id) const { return nodes_[id].grad; }

  NodeId matmul(NodeId a, NodeId b);
  /// x*W plus an optional 1-row bias broadcast over rows (bias < 0 to omit).
  NodeId linear(NodeId x, NodeId w, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, real_t factor);
  NodeId gelu(NodeId a);
  NodeId exp_elem(NodeId a);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId concat_cols(NodeId a, NodeId b, NodeId c);
  NodeId take_rows(NodeId a, std::vector<int> indices);
  /// Column-wise max over all rows -> 1 x C; ties route gradient to the first
  /// maximal row.
  NodeId row_max_pool(NodeId a);
  NodeId row_avg_pool(NodeId a);
  /// Inverted dropout: scales kept entries by 1/(1-rate) in train mode and is
  /// the identity in eval mode.
  NodeId dropout(NodeId a, real_t rate, std::mt19937_64& rng, bool train);

  // Sparse-graph operations; weights are E x 1 columns aligned with the
  // graph's edge order. The tape keeps its own copy of each graph.
  NodeId edge_dot(NodeId q, NodeId k, const SparseDirectedGraph& g);
  NodeId edge_sq_dist(NodeId a, NodeId b, const SparseDirectedGraph& g);
  NodeId masked_softmax(NodeId scores, const SparseDirectedGraph& g);
  NodeId balanced_renorm(NodeId attn, const SparseDirectedGraph& g);
  NodeId row_normalize(NodeId w, const SparseDirectedGraph& g);
  /// Row i of the result = sum over edges e of w_e * x_source(e).
  NodeId spmm(NodeId w, NodeId x, const SparseDirectedGraph& g);

  /// Mean cross-entropy of row-wise softmax against integer labels; 1x1.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);

  /// Seeds the scalar node with gradient 1 and sweeps the record in reverse;
  /// parameter gradients are added into their Parameter::grad.
  // Seeds the 1x1 loss with 1 and sweeps the tape in reverse. When
  // write_param_grads is set, gradients are added into Parameter::grad;
  // otherwise they stay tape-local and are read via param_grad (which lets
  // concurrent tapes over shared parameters reduce gradients deterministically
  // afterwards).
  void backward(NodeId loss, bool write_param_grads = true);
  Matrix param_grad(const Parameter& p) const;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&)> backprop;
    Parameter* parameter = nullptr;
  };

  NodeId push(Matrix value, std::function<void(Tape&)> backprop = {}, Parameter* p = nullptr);
  int store_graph(const SparseDirectedGraph& g);
  const SparseDirectedGraph& graph(int gid) const { return graphs_[gid]; }

  std::vector<Node> nodes_;
  std::vector<SparseDirectedGraph> graphs_;
  std::map<Parameter*, NodeId> param_nodes_;
};

/// Worst coordinate found when comparing tape gradients against central
/// finite differences.
struct GradCheckResult {
  real_t max_rel_error = 0;
  std::string worst_param;
  int worst_coord = -1;
  real_t analytic = 0;
  real_t numeric = 0;
};

/// `run(true)` must recompute the loss and accumulate parameter gradients;
/// `run(false)` must only return the loss. Parameters are restored afterward.
GradCheckResult grad_check(const std::function<real_t(bool with_grad)>& run, std::span<Parameter* const> params,
                           real_t step = static_cast<real_t>(1e-5));

struct OptimizerConfig {
  real_t base_lr = static_cast<real_t>(0.1);
  real_t min_lr = static_cast<real_t>(0.001);
  real_t momentum = static_cast<real_t>(0.9);
  int cosine_period = 300;
};

/// SGD with classical momentum and cosine-annealed learning rate that restarts
/// each period.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter*> params, OptimizerConfig config);

  real_t learning_rate(int epoch) const;
  void step(int epoch);
  void zero_grad();

  Matrix& velocity(int i) { return velocities_[i]; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> velocities_;
  OptimizerConfig config_;
};

/// Versioned binary container of named float64 arrays.
void save_checkpoint(const std::string& path, std::span<Parameter* const> params);
/// Restores by name; every parameter must be present with a matching shape,
/// and the file must not contain unknown entries.
void load_checkpoint(const std::string& path, std::span<Parameter* const> params);

}  // namespace diffconv
