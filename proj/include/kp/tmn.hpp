#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kp/nn/checkpoint.hpp"
#include "kp/nn/layers.hpp"
#include "kp/nn/optim.hpp"

namespace kp {

enum class TmnVariant {
  Full,    // temporal convs + self-attention
  Linear,  // batch norm + linear map + temporal mean (no temporal modeling)
};

struct TmnConfig {
  std::size_t input_dim = 0;     // m, proposals per frame
  std::size_t hidden_dim = 512;  // d
  std::size_t blocks = 2;
  std::size_t kernel = 3;
  std::size_t heads = 4;
  double dropout = 0.05;
  std::size_t classes = 0;   // base-class head width
  std::size_t seq_len = 16;  // learned positional table length
  double bn_momentum = 0.1;
  TmnVariant variant = TmnVariant::Full;

  void validate() const;
  nlohmann::json to_json() const;
  static TmnConfig from_json(const nlohmann::json& j);
};

struct BaseSchedule {
  double lr = 1e-3;
  std::vector<std::size_t> milestones{20, 30, 40};
  double decay = 0.1;
  std::size_t epochs = 50;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  std::size_t batch = 32;

  double lr_at(std::size_t epoch) const;
};

struct EpisodeSchedule {
  double lr = 1e-2;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t epochs = 10;
  double weight_decay = 0.0;
  std::size_t batch = 16;
};

// Layer stack, for variant Full:
//   BN(m) -> Dropout(p) -> [DepthwiseConv(K) -> Linear -> BN -> ReLU] x blocks
//   -> + positional table -> x + MHSA(x) -> temporal mean -> Linear(d -> classes)
// The first block's Linear maps m -> d, later ones d -> d.
class TmnModel {
 public:
  TmnModel(const TmnConfig& config, std::uint64_t seed);
  // Copies own their parameters (no shared tape nodes).
  TmnModel(const TmnModel& other);
  TmnModel& operator=(const TmnModel& other);
  TmnModel(TmnModel&&) = default;
  TmnModel& operator=(TmnModel&&) = default;

  const TmnConfig& config() const { return config_; }

  // Pooled [B, d] features for input [B, T, m]. Train mode updates running statistics.
  nn::Var features(const nn::Var& input, nn::Mode mode, std::uint64_t dropout_seed);
  // Eval-mode features; does not modify the model.
  nn::Var features(const nn::Var& input) const;
  // Base-class logits [B, classes].
  nn::Var logits(const nn::Var& input, nn::Mode mode, std::uint64_t dropout_seed);

  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter*> backbone_parameters();
  std::vector<nn::Parameter*> head_parameters();
  std::vector<const nn::Parameter*> parameters() const;

  std::vector<nn::BatchNormStats>& batch_norm_stats() { return stats_; }
  const std::vector<nn::BatchNormStats>& batch_norm_stats() const { return stats_; }

  // Parameters, running statistics and (optionally) SGD velocity. `manifest`
  // receives the architecture under "tmn".
  nn::Checkpoint to_checkpoint(nlohmann::json manifest,
                               const nn::SgdMomentum* optimizer = nullptr) const;
  static TmnModel from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  nn::Var forward_features(const nn::Var& input, nn::Mode mode, std::uint64_t dropout_seed,
                           std::vector<nn::BatchNormStats>& stats) const;
  nn::Parameter& add(const std::string& name, nn::Tensor value, bool head = false);
  nn::Parameter& param(const std::string& name);
  const nn::Parameter& param(const std::string& name) const;

  TmnConfig config_;
  std::vector<nn::Parameter> params_;
  std::vector<bool> is_head_;
  std::vector<nn::BatchNormStats> stats_;
};

// Stacks [T, m] sequences into [B, T, m].
nn::Tensor stack_sequences(std::span<const nn::Tensor> sequences, std::span<const std::size_t> indices);

struct BaseTrainResult {
  double initial_loss = 0.0;  // eval-mode mean loss before the first step
  double final_loss = 0.0;    // eval-mode mean loss after the last step
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;  // mean train-mode minibatch loss per epoch
  nn::SgdMomentum optimizer{0.0, 0.0, 0.0};
};

// SGD-momentum training of the whole network on base-class sequences [T, m].
BaseTrainResult train_base(TmnModel& model, std::span<const nn::Tensor> sequences,
                           std::span<const std::size_t> labels, const BaseSchedule& schedule,
                           std::uint64_t seed);

struct EpisodeHead {
  nn::Tensor weight;  // [d, ways]
  nn::Tensor bias;    // [ways]
  std::size_t ways() const { return bias.size(); }
};

// Zero bias, weights uniform in +-1/sqrt(d).
EpisodeHead init_episode_head(std::size_t hidden_dim, std::size_t ways, std::uint64_t seed);

// Trains a fresh head on frozen eval-mode backbone features with Adam.
EpisodeHead finetune_episode(const TmnModel& model, std::span<const nn::Tensor> support,
                             std::span<const std::size_t> labels, std::size_t ways,
                             const EpisodeSchedule& schedule, std::uint64_t seed);

// [B, ways] logits for input [B, T, m].
nn::Tensor episode_logits(const TmnModel& model, const EpisodeHead& head, const nn::Tensor& input);

// Mean softmax over several samplings of one video, each [T, m].
std::vector<double> predict_proba(const TmnModel& model, const EpisodeHead& head,
                                  std::span<const nn::Tensor> samplings);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Mean over frames of |d logit[cls] / d input[t, j]| for one sequence [T, m].
std::vector<double> proposal_importance(const TmnModel& model, const EpisodeHead& head,
                                        const nn::Tensor& sequence, std::size_t cls);

// Multiply-adds x2 for one forward pass over n frames.
double forward_flops(const TmnConfig& config, std::size_t frames);

}  // namespace kp
