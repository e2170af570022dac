#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "diffconv/core.hpp"
#include "diffconv/nn.hpp"

namespace diffconv {

enum class GroupingMode { Dilated, Ball, Knn };
enum class AttentionMode { Masked, Uniform, Spatial, Feature, InverseDensity };

const char* to_string(GroupingMode m);
const char* to_string(AttentionMode m);
GroupingMode grouping_from_string(const std::string& s);
AttentionMode attention_from_string(const std::string& s);

/// Hierarchical classifier: input embedding, four graph-convolution stages
/// with random key subsampling and per-stage radius doubling, global max+avg
/// pooling, two-layer head with dropout. The switches select ablation
/// variants of the grouping, adjacency, and smoothing steps.
struct NetworkConfig {
  int input_points = 256;
  std::array<int, 4> stage_widths{32, 64, 128, 256};
  std::array<int, 4> stage_point_counts{256, 128, 64, 32};
  real_t base_sq_radius = real_t(0.0125);  // doubled at every stage
  real_t bandwidth = real_t(0.1);
  int num_classes = 3;
  int head_hidden = 128;
  real_t dropout = real_t(0.5);

  bool laplacian_smoothing = true;  // off: stage feature is the plain neighborhood mix
  GroupingMode grouping = GroupingMode::Dilated;
  AttentionMode attention = AttentionMode::Masked;
  bool positional_encoding = true;
  bool balanced_renorm = true;  // off: softmax with 1/sqrt(d_k) score scaling
  int knn_k = 20;
  real_t bias_bandwidth = 1;  // Gaussian width for the feature/density adjacencies

  std::uint64_t seed = 1;

  real_t stage_sq_radius(int s) const { return base_sq_radius * static_cast<real_t>(1 << s); }
  // Sets input_points = n and the stage counts to n, n/2, n/4, n/8 (min 1).
  void set_input_points(int n);
  void validate() const;
};

/// m distinct indices in [0, n), uniform without replacement; deterministic
/// under the rng state.
std::vector<int> random_subsample_indices(int n, int m, std::mt19937_64& rng);

/// The key indices chosen per stage during one forward pass. Stage 0 indexes
/// the input cloud; stage s > 0 indexes the previous stage's key list.
struct SampleSpec {
  std::array<std::vector<int>, 4> stage_indices;
};

class Model {
 public:
  explicit Model(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();

  /// Builds the forward graph on the tape and returns the logits node
  /// (1 x num_classes). rng drives subsampling and dropout. When fixed is
  /// given, its indices replace random subsampling; when record is given,
  /// the chosen indices are stored into it.
  Tape::NodeId forward(Tape& tape, const PointCloud& cloud, bool train, std::mt19937_64& rng,
                       const SampleSpec* fixed = nullptr, SampleSpec* record = nullptr);

  /// Convenience eval-mode pass without gradient bookkeeping kept around.
  Matrix logits(const PointCloud& cloud, std::mt19937_64& rng, const SampleSpec* fixed = nullptr);

 private:
  struct StageParams {
    Parameter theta_w, theta_b;  // combines smoothed and key features
    Parameter pi_w, pi_b;        // positional encoding map
    Parameter attn_q, attn_k;    // masked-attention projections (no bias)
  };

  NetworkConfig config_;
  Parameter embed_w_, embed_b_;
  std::vector<StageParams> stages_;
  Parameter head1_w_, head1_b_, head2_w_, head2_b_;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  OptimizerConfig optimizer;
  bool augment = true;
  real_t augment_magnitude = real_t(0.2);
  std::uint64_t seed = 1;
};

struct EpochMetrics {
  int epoch = 0;
  real_t loss = 0;
  real_t lr = 0;
  real_t train_oa = 0;
  real_t val_oa = 0;  // NaN when no validation data was supplied
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::vector<std::string> warnings;
};

struct EvalResult {
  real_t oa = 0;
  real_t ma = 0;
  std::vector<real_t> per_class_accuracy;  // NaN for classes absent from the data
  std::vector<int> predictions;
  std::vector<std::string> warnings;
};

/// Minibatch SGD over the dataset. Item gradients are computed on parallel
/// per-item tapes and reduced serially in item order, so results do not
/// depend on the number of threads.
TrainResult train_loop(Model& model, const LabeledClouds& train_data, const LabeledClouds& val_data,
                       const TrainConfig& cfg);

/// Eval-mode accuracy; parallel over clouds with per-cloud derived seeds.
/// OA is the overall fraction correct, MA the mean of per-class accuracies
/// (empty classes are skipped with a warning).
EvalResult evaluate(Model& model, const LabeledClouds& data);

}  // namespace diffconv
