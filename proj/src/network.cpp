#include "diffconv/network.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "diffconv/attention.hpp"
#include "diffconv/data.hpp"
#include "diffconv/grouping.hpp"

namespace diffconv {

const char* to_string(GroupingMode m) {
  switch (m) {
    case GroupingMode::Dilated: return "dilated";
    case GroupingMode::Ball: return "ball";
    case GroupingMode::Knn: return "knn";
  }
  return "?";
}

const char* to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::Masked: return "masked";
    case AttentionMode::Uniform: return "uniform";
    case AttentionMode::Spatial: return "spatial";
    case AttentionMode::Feature: return "feature";
    case AttentionMode::InverseDensity: return "inverse_density";
  }
  return "?";
}

GroupingMode grouping_from_string(const std::string& s) {
  if (s == "dilated") return GroupingMode::Dilated;
  if (s == "ball") return GroupingMode::Ball;
  if (s == "knn") return GroupingMode::Knn;
  throw InvalidInput("unknown grouping mode '" + s + "' (dilated|ball|knn)");
}

AttentionMode attention_from_string(const std::string& s) {
  if (s == "masked") return AttentionMode::Masked;
  if (s == "uniform") return AttentionMode::Uniform;
  if (s == "spatial") return AttentionMode::Spatial;
  if (s == "feature") return AttentionMode::Feature;
  if (s == "inverse_density") return AttentionMode::InverseDensity;
  throw InvalidInput("unknown attention mode '" + s + "' (masked|uniform|spatial|feature|inverse_density)");
}

void NetworkConfig::set_input_points(int n) {
  if (n < 1) throw InvalidInput("NetworkConfig: input_points must be positive");
  input_points = n;
  for (int s = 0; s < 4; ++s) stage_point_counts[s] = std::max(1, n >> s);
}

void NetworkConfig::validate() const {
  if (input_points < 1) throw InvalidInput("NetworkConfig: input_points must be positive");
  if (num_classes < 2) throw InvalidInput("NetworkConfig: need at least two classes");
  if (head_hidden < 1) throw InvalidInput("NetworkConfig: head_hidden must be positive");
  if (!(base_sq_radius > 0)) throw InvalidInput("NetworkConfig: base_sq_radius must be positive");
  if (!(bandwidth > 0)) throw InvalidInput("NetworkConfig: bandwidth must be positive");
  if (!(bias_bandwidth > 0)) throw InvalidInput("NetworkConfig: bias_bandwidth must be positive");
  if (dropout < 0 || dropout >= 1) throw InvalidInput("NetworkConfig: dropout must be in [0, 1)");
  if (knn_k < 1) throw InvalidInput("NetworkConfig: knn_k must be positive");
  int prev = input_points;
  for (int s = 0; s < 4; ++s) {
    if (stage_widths[s] < 1) throw InvalidInput("NetworkConfig: stage widths must be positive");
    if (stage_point_counts[s] < 1 || stage_point_counts[s] > prev)
      throw InvalidInput("NetworkConfig: stage point counts must be non-increasing and within the input size");
    prev = stage_point_counts[s];
  }
}

std::vector<int> random_subsample_indices(int n, int m, std::mt19937_64& rng) {
  if (m < 1 || m > n) throw InvalidInput("random_subsample_indices: need 1 <= m <= n");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(m));
  return pool;
}

namespace {

Matrix uniform_init(int rows, int cols, int fan_in, std::uint64_t seed) {
  const real_t bound = 1 / std::sqrt(static_cast<real_t>(fan_in));
  std::mt19937_64 rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.data) v = bound * (2 * static_cast<real_t>((rng() >> 11) * 0x1.0p-53) - 1);
  return m;
}

int argmax_row(const Matrix& m) {
  int best = 0;
  for (int c = 1; c < m.cols; ++c)
    if (m(0, c) > m(0, best)) best = c;
  return best;
}

}  // namespace

Model::Model(const NetworkConfig& config) : config_(config) {
  config_.validate();
  std::uint64_t stream = 0;
  auto make = [&](const std::string& name, int rows, int cols, int fan_in) {
    return Parameter(name, uniform_init(rows, cols, fan_in, derive_seed(config_.seed, stream++)));
  };
  const int w0 = config_.stage_widths[0];
  embed_w_ = make("embed.weight", 3, w0, 3);
  embed_b_ = make("embed.bias", 1, w0, 3);
  stages_.resize(4);
  int in_w = w0;
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = "stage" + std::to_string(s) + ".";
    const int out_w = config_.stage_widths[s];
    const int dk = attention_dim(in_w);
    StageParams& sp = stages_[s];
    sp.theta_w = make(prefix + "theta.weight", 2 * in_w, out_w, 2 * in_w);
    sp.theta_b = make(prefix + "theta.bias", 1, out_w, 2 * in_w);
    sp.pi_w = make(prefix + "pi.weight", 9, out_w, 9);
    sp.pi_b = make(prefix + "pi.bias", 1, out_w, 9);
    sp.attn_q = make(prefix + "attn.query", in_w + 3, dk, in_w + 3);
    sp.attn_k = make(prefix + "attn.key", in_w + 3, dk, in_w + 3);
    in_w = out_w;
  }
  head1_w_ = make("head.fc1.weight", 2 * in_w, config_.head_hidden, 2 * in_w);
  head1_b_ = make("head.fc1.bias", 1, config_.head_hidden, 2 * in_w);
  head2_w_ = make("head.fc2.weight", config_.head_hidden, config_.num_classes, config_.head_hidden);
  head2_b_ = make("head.fc2.bias", 1, config_.num_classes, config_.head_hidden);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&embed_w_, &embed_b_};
  for (StageParams& sp : stages_) {
    out.push_back(&sp.theta_w);
    out.push_back(&sp.theta_b);
    out.push_back(&sp.pi_w);
    out.push_back(&sp.pi_b);
    out.push_back(&sp.attn_q);
    out.push_back(&sp.attn_k);
  }
  out.push_back(&head1_w_);
  out.push_back(&head1_b_);
  out.push_back(&head2_w_);
  out.push_back(&head2_b_);
  return out;
}

Tape::NodeId Model::forward(Tape& tape, const PointCloud& cloud, bool train, std::mt19937_64& rng,
                            const SampleSpec* fixed, SampleSpec* record) {
  if (cloud.size() < 1) throw InvalidInput("Model::forward: empty cloud");

  PointCloud p_src = cloud;
  Tape::NodeId x_src = tape.gelu(tape.linear(tape.leaf(cloud.coords), tape.param(embed_w_), tape.param(embed_b_)));

  for (int s = 0; s < 4; ++s) {
    StageParams& sp = stages_[s];
    const int n_src = p_src.size();
    const real_t sq_radius = config_.stage_sq_radius(s);

    // The dilation field is only evaluated where a variant consumes it.
    DilationField field;
    const bool needs_density =
        config_.grouping == GroupingMode::Dilated || config_.attention == AttentionMode::InverseDensity;
    if (needs_density) field = dilation_field(p_src, config_.bandwidth, sq_radius);

    std::vector<int> indices;
    if (fixed) {
      indices = fixed->stage_indices[s];
      if (indices.empty() || static_cast<int>(indices.size()) > n_src)
        throw InvalidInput("Model::forward: fixed sample spec has a bad index count at stage " + std::to_string(s));
      for (int idx : indices)
        if (idx < 0 || idx >= n_src) throw InvalidInput("Model::forward: fixed sample index out of range");
    } else {
      indices = random_subsample_indices(n_src, std::min(config_.stage_point_counts[s], n_src), rng);
    }
    if (record) record->stage_indices[s] = indices;
    const int n_keys = static_cast<int>(indices.size());

    PointCloud p_keys(take_rows(p_src.coords, indices));
    Tape::NodeId x_keys = tape.take_rows(x_src, indices);

    SparseDirectedGraph g;
    switch (config_.grouping) {
      case GroupingMode::Dilated: {
        std::vector<real_t> key_radii(static_cast<std::size_t>(n_keys));
        for (int i = 0; i < n_keys; ++i) key_radii[i] = field.radii[indices[i]];
        g = ball_query(p_keys, p_src, key_radii);
        break;
      }
      case GroupingMode::Ball:
        g = ball_query(p_keys, p_src, std::sqrt(sq_radius));
        break;
      case GroupingMode::Knn:
        g = knn_query(p_keys, p_src, std::min(config_.knn_k, n_src));
        break;
    }

    Tape::NodeId weights = -1;
    switch (config_.attention) {
      case AttentionMode::Masked: {
        const Tape::NodeId q =
            tape.linear(tape.concat_cols(x_keys, tape.leaf(p_keys.coords)), tape.param(sp.attn_q), -1);
        const Tape::NodeId k =
            tape.linear(tape.concat_cols(x_src, tape.leaf(p_src.coords)), tape.param(sp.attn_k), -1);
        const Tape::NodeId scores = tape.edge_dot(q, k, g);
        if (config_.balanced_renorm) {
          weights = tape.balanced_renorm(tape.masked_softmax(scores, g), g);
        } else {
          const real_t inv_sqrt_dk = 1 / std::sqrt(static_cast<real_t>(tape.value(q).cols));
          weights = tape.masked_softmax(tape.scale(scores, inv_sqrt_dk), g);
        }
        break;
      }
      case AttentionMode::Uniform: {
        const SparseDirectedGraph uw = with_uniform_row_weights(g);
        Matrix w(g.num_edges(), 1);
        for (int e = 0; e < g.num_edges(); ++e) w(e, 0) = uw.weights[e];
        weights = tape.leaf(std::move(w));
        break;
      }
      case AttentionMode::Spatial: {
        // Gaussian kernel of spatial distance, width tied to the stage radius.
        const std::vector<real_t> sq = edge_sq_dist_weights(g, p_keys.coords, p_src.coords);
        Matrix w(g.num_edges(), 1);
        const real_t inv = -1 / (2 * sq_radius);
        for (int e = 0; e < g.num_edges(); ++e) w(e, 0) = std::exp(sq[e] * inv);
        weights = tape.row_normalize(tape.leaf(std::move(w)), g);
        break;
      }
      case AttentionMode::Feature: {
        const Tape::NodeId sq = tape.edge_sq_dist(x_keys, x_src, g);
        const real_t inv = -1 / (2 * config_.bias_bandwidth * config_.bias_bandwidth);
        weights = tape.row_normalize(tape.exp_elem(tape.scale(sq, inv)), g);
        break;
      }
      case AttentionMode::InverseDensity: {
        // Gaussian kernel of the neighbor's normalized density: sparse
        // regions weigh in stronger than crowded ones.
        Matrix w(g.num_edges(), 1);
        const real_t inv = -1 / (2 * config_.bias_bandwidth * config_.bias_bandwidth);
        for (int i = 0; i < g.num_rows(); ++i)
          for (int o = g.row_offsets[i]; o < g.row_offsets[i + 1]; ++o) {
            const real_t d = field.normalized_density[g.col_indices[o]];
            w(o, 0) = std::exp(d * d * inv);
          }
        weights = tape.row_normalize(tape.leaf(std::move(w)), g);
        break;
      }
    }

    const Tape::NodeId mixed = tape.spmm(weights, x_src, g);
    const Tape::NodeId smoothed = config_.laplacian_smoothing ? tape.sub(x_keys, mixed) : mixed;
    Tape::NodeId out = tape.linear(tape.concat_cols(smoothed, x_keys), tape.param(sp.theta_w), tape.param(sp.theta_b));
    if (config_.positional_encoding) {
      const Tape::NodeId pk = tape.leaf(p_keys.coords);
      const Tape::NodeId centroid = tape.spmm(weights, tape.leaf(p_src.coords), g);
      const Tape::NodeId pos = tape.linear(tape.concat_cols(pk, centroid, tape.sub(pk, centroid)),
                                           tape.param(sp.pi_w), tape.param(sp.pi_b));
      out = tape.add(out, pos);
    }
    x_src = tape.gelu(out);
    p_src = std::move(p_keys);
  }

  const Tape::NodeId pooled = tape.concat_cols(tape.row_max_pool(x_src), tape.row_avg_pool(x_src));
  Tape::NodeId h = tape.gelu(tape.linear(pooled, tape.param(head1_w_), tape.param(head1_b_)));
  h = tape.dropout(h, config_.dropout, rng, train);
  return tape.linear(h, tape.param(head2_w_), tape.param(head2_b_));
}

Matrix Model::logits(const PointCloud& cloud, std::mt19937_64& rng, const SampleSpec* fixed) {
  Tape tape;
  return tape.value(forward(tape, cloud, false, rng, fixed));
}

// ---------------------------------------------------------------------------
// Training and evaluation

TrainResult train_loop(Model& model, const LabeledClouds& train_data, const LabeledClouds& val_data,
                       const TrainConfig& cfg) {
  const int n = train_data.size();
  if (n == 0) throw InvalidInput("train_loop: empty training set");
  if (static_cast<int>(train_data.labels.size()) != n) throw InvalidInput("train_loop: label count mismatch");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidInput("train_loop: epochs and batch_size must be positive");
  for (int label : train_data.labels)
    if (label < 0 || label >= model.config().num_classes) throw InvalidInput("train_loop: label out of range");

  std::vector<Parameter*> params = model.parameters();
  SgdOptimizer opt(params, cfg.optimizer);
  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.epochs));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, 0xE50000u + static_cast<std::uint64_t>(epoch));
    std::mt19937_64 order_rng(epoch_seed);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<int>(order_rng() % (i + 1u))]);

    double epoch_loss = 0;
    int correct = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      std::vector<std::vector<Matrix>> item_grads(static_cast<std::size_t>(count));
      std::vector<real_t> losses(static_cast<std::size_t>(count));
      std::vector<int> preds(static_cast<std::size_t>(count));
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));

#pragma omp parallel for schedule(dynamic)
      for (int b = 0; b < count; ++b) {
        try {
          const int item = order[start + b];
          std::mt19937_64 rng(derive_seed(epoch_seed, 2u * static_cast<std::uint64_t>(item)));
          PointCloud cloud =
              cfg.augment
                  ? augment(train_data.clouds[item], derive_seed(epoch_seed, 2u * static_cast<std::uint64_t>(item) + 1),
                            cfg.augment_magnitude)
                  : train_data.clouds[item];
          Tape tape;
          const Tape::NodeId logits = model.forward(tape, cloud, true, rng);
          const Tape::NodeId loss = tape.softmax_cross_entropy(logits, {train_data.labels[item]});
          tape.backward(loss, false);
          losses[b] = tape.value(loss)(0, 0);
          preds[b] = argmax_row(tape.value(logits));
          item_grads[b].reserve(params.size());
          for (const Parameter* p : params) item_grads[b].push_back(tape.param_grad(*p));
        } catch (...) {
          errors[b] = std::current_exception();
        }
      }
      for (const auto& err : errors)
        if (err) std::rethrow_exception(err);

      // Serial reduction in item order keeps training thread-count independent.
      opt.zero_grad();
      const real_t inv_count = 1 / static_cast<real_t>(count);
      for (int b = 0; b < count; ++b) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          Matrix& g = params[k]->grad;
          const Matrix& ig = item_grads[b][k];
          for (std::size_t t = 0; t < g.data.size(); ++t) g.data[t] += ig.data[t] * inv_count;
        }
        epoch_loss += losses[b];
        correct += preds[b] == train_data.labels[order[start + b]];
      }
      opt.step(epoch);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = static_cast<real_t>(epoch_loss / n);
    m.lr = opt.learning_rate(epoch);
    m.train_oa = static_cast<real_t>(correct) / static_cast<real_t>(n);
    if (val_data.size() > 0) {
      EvalResult ev = evaluate(model, val_data);
      m.val_oa = ev.oa;
      for (auto& w : ev.warnings) result.warnings.push_back("epoch " + std::to_string(epoch) + ": " + w);
    } else {
      m.val_oa = std::numeric_limits<real_t>::quiet_NaN();
    }
    result.history.push_back(m);
  }
  return result;
}

EvalResult evaluate(Model& model, const LabeledClouds& data) {
  const int n = data.size();
  if (n == 0) throw InvalidInput("evaluate: empty dataset");
  if (static_cast<int>(data.labels.size()) != n) throw InvalidInput("evaluate: label count mismatch");
  const int num_classes = model.config().num_classes;
  for (int label : data.labels)
    if (label < 0 || label >= num_classes) throw InvalidInput("evaluate: label out of range");

  EvalResult result;
  result.predictions.resize(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  const std::uint64_t eval_seed = derive_seed(model.config().seed, 0xEBA1u);

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      std::mt19937_64 rng(derive_seed(eval_seed, static_cast<std::uint64_t>(i)));
      result.predictions[i] = argmax_row(model.logits(data.clouds[i], rng));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  std::vector<int> total(static_cast<std::size_t>(num_classes)), hit(static_cast<std::size_t>(num_classes));
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const bool ok = result.predictions[i] == data.labels[i];
    correct += ok;
    ++total[data.labels[i]];
    hit[data.labels[i]] += ok;
  }
  result.oa = static_cast<real_t>(correct) / static_cast<real_t>(n);
  result.per_class_accuracy.assign(static_cast<std::size_t>(num_classes), std::numeric_limits<real_t>::quiet_NaN());
  real_t ma_sum = 0;
  int ma_classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (total[c] == 0) {
      result.warnings.push_back("class " + std::to_string(c) + " has no samples; skipped in the mean accuracy");
      continue;
    }
    result.per_class_accuracy[c] = static_cast<real_t>(hit[c]) / static_cast<real_t>(total[c]);
    ma_sum += result.per_class_accuracy[c];
    ++ma_classes;
  }
  result.ma = ma_classes > 0 ? ma_sum / static_cast<real_t>(ma_classes) : real_t(0);
  return result;
}

}  // namespace diffconv
