#include "kp/tmn.hpp"

#include <algorithm>
#include <cmath>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;
using nn::Var;

void TmnConfig::validate() const {
  if (input_dim < 1) throw InvalidInput("tmn: input_dim must be >= 1");
  if (classes < 1) throw InvalidInput("tmn: classes must be >= 1");
  if (hidden_dim < 1) throw InvalidInput("tmn: hidden_dim must be >= 1");
  if (variant == TmnVariant::Full) {
    if (heads == 0 || hidden_dim % heads != 0) {
      throw InvalidInput("tmn: hidden_dim must be divisible by heads");
    }
    if (kernel % 2 == 0) throw InvalidInput("tmn: kernel size must be odd");
    if (blocks < 1) throw InvalidInput("tmn: at least one conv block is required");
    if (seq_len < 1) throw InvalidInput("tmn: seq_len must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("tmn: dropout must lie in [0, 1)");
}

json TmnConfig::to_json() const {
  return json{{"input_dim", input_dim},   {"hidden_dim", hidden_dim}, {"blocks", blocks},
              {"kernel", kernel},         {"heads", heads},           {"dropout", dropout},
              {"classes", classes},       {"seq_len", seq_len},       {"bn_momentum", bn_momentum},
              {"variant", variant == TmnVariant::Full ? "full" : "linear"}};
}

TmnConfig TmnConfig::from_json(const json& j) {
  TmnConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.blocks = j.at("blocks").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.classes = j.at("classes").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  const auto v = j.at("variant").get<std::string>();
  if (v == "full") {
    c.variant = TmnVariant::Full;
  } else if (v == "linear") {
    c.variant = TmnVariant::Linear;
  } else {
    throw InvalidInput("tmn: unknown variant '" + v + "'");
  }
  c.validate();
  return c;
}

double BaseSchedule::lr_at(std::size_t epoch) const {
  double lr_now = lr;
  for (auto m : milestones) {
    if (epoch >= m) lr_now *= decay;
  }
  return lr_now;
}

namespace {

Tensor uniform_tensor(nn::Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

std::string block_name(std::size_t i, const char* leaf) { return "block" + std::to_string(i) + "." + leaf; }

}  // namespace

nn::Parameter& TmnModel::add(const std::string& name, Tensor value, bool head) {
  params_.push_back({name, Var(std::move(value), true), true});
  is_head_.push_back(head);
  return params_.back();
}

nn::Parameter& TmnModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw InvalidInput("tmn: no parameter '" + name + "'");
}

const nn::Parameter& TmnModel::param(const std::string& name) const {
  return const_cast<TmnModel*>(this)->param(name);
}

TmnModel::TmnModel(const TmnConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t m = config_.input_dim, d = config_.hidden_dim;
  params_.reserve(32);
  add("bn0.gamma", Tensor({m}, 1.0));
  add("bn0.beta", Tensor({m}, 0.0));
  stats_.emplace_back(m);
  if (config_.variant == TmnVariant::Linear) {
    add("proj.weight", uniform_tensor({m, d}, 1.0 / std::sqrt(double(m)), rng));
    add("proj.bias", Tensor({d}, 0.0));
  } else {
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      const std::size_t in = b == 0 ? m : d;
      add(block_name(b, "conv.kernel"),
          uniform_tensor({config_.kernel, in}, 1.0 / std::sqrt(double(config_.kernel)), rng));
      add(block_name(b, "conv.bias"), Tensor({in}, 0.0));
      add(block_name(b, "linear.weight"), uniform_tensor({in, d}, 1.0 / std::sqrt(double(in)), rng));
      add(block_name(b, "linear.bias"), Tensor({d}, 0.0));
      add(block_name(b, "bn.gamma"), Tensor({d}, 1.0));
      add(block_name(b, "bn.beta"), Tensor({d}, 0.0));
      stats_.emplace_back(d);
    }
    add("pos_embedding", uniform_tensor({config_.seq_len, d}, 0.1, rng));
    const double bound = 1.0 / std::sqrt(double(d));
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      add(w, uniform_tensor({d, d}, bound, rng));
    }
  }
  add("head.weight", uniform_tensor({d, config_.classes}, 1.0 / std::sqrt(double(d)), rng), true);
  add("head.bias", Tensor({config_.classes}, 0.0), true);
}

TmnModel::TmnModel(const TmnModel& other)
    : config_(other.config_), is_head_(other.is_head_), stats_(other.stats_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    params_.push_back({p.name, Var(p.var.value(), p.var.requires_grad()), p.trainable});
  }
}

TmnModel& TmnModel::operator=(const TmnModel& other) {
  if (this != &other) *this = TmnModel(other);
  return *this;
}

Var TmnModel::forward_features(const Var& input, Mode mode, std::uint64_t dropout_seed,
                               std::vector<nn::BatchNormStats>& stats) const {
  const auto& shape = input.shape();
  if (shape.size() != 3 || shape[2] != config_.input_dim) {
    throw ShapeError("tmn: expected input [B, T, " + std::to_string(config_.input_dim) + "], got " +
                     nn::shape_string(shape));
  }
  const double mom = config_.bn_momentum;
  Var x = nn::batch_norm(input, param("bn0.gamma").var, param("bn0.beta").var, stats[0], mode, mom);
  x = nn::dropout(x, config_.dropout, dropout_seed, mode);
  if (config_.variant == TmnVariant::Linear) {
    x = nn::linear(x, param("proj.weight").var, param("proj.bias").var);
    return nn::mean_over_time(x);
  }
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    x = nn::depthwise_temporal_conv(x, param(block_name(b, "conv.kernel")).var,
                                    param(block_name(b, "conv.bias")).var);
    x = nn::linear(x, param(block_name(b, "linear.weight")).var, param(block_name(b, "linear.bias")).var);
    x = nn::batch_norm(x, param(block_name(b, "bn.gamma")).var, param(block_name(b, "bn.beta")).var,
                       stats[b + 1], mode, mom);
    x = nn::relu(x);
  }
  x = nn::add_time_embedding(x, param("pos_embedding").var);
  x = nn::multi_head_self_attention(x, param("attn.wq").var, param("attn.wk").var,
                                    param("attn.wv").var, param("attn.wo").var, config_.heads);
  return nn::mean_over_time(x);
}

Var TmnModel::features(const Var& input, Mode mode, std::uint64_t dropout_seed) {
  return forward_features(input, mode, dropout_seed, stats_);
}

Var TmnModel::features(const Var& input) const {
  auto stats = stats_;
  return forward_features(input, Mode::Eval, 0, stats);
}

Var TmnModel::logits(const Var& input, Mode mode, std::uint64_t dropout_seed) {
  Var f = features(input, mode, dropout_seed);
  return nn::linear(f, param("head.weight").var, param("head.bias").var);
}

std::vector<nn::Parameter*> TmnModel::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const nn::Parameter*> TmnModel::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<nn::Parameter*> TmnModel::backbone_parameters() {
  std::vector<nn::Parameter*> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!is_head_[i]) out.push_back(&params_[i]);
  }
  return out;
}

std::vector<nn::Parameter*> TmnModel::head_parameters() {
  std::vector<nn::Parameter*> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (is_head_[i]) out.push_back(&params_[i]);
  }
  return out;
}

nn::Checkpoint TmnModel::to_checkpoint(json manifest, const nn::SgdMomentum* optimizer) const {
  manifest["tmn"] = config_.to_json();
  nn::Checkpoint ckpt;
  ckpt.manifest = manifest.dump();
  for (const auto& p : params_) ckpt.entries.push_back({p.name, p.var.value()});
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const std::string prefix = i == 0 ? "bn0" : block_name(i - 1, "bn");
    ckpt.entries.push_back({prefix + ".running_mean", stats_[i].mean});
    ckpt.entries.push_back({prefix + ".running_var", stats_[i].var});
  }
  if (optimizer && !optimizer->velocity().empty()) {
    const auto& vel = optimizer->velocity();
    for (std::size_t i = 0; i < vel.size() && i < params_.size(); ++i) {
      ckpt.entries.push_back({"optim.velocity." + params_[i].name,
                              Tensor(params_[i].var.shape(), vel[i])});
    }
  }
  return ckpt;
}

TmnModel TmnModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  json manifest;
  try {
    manifest = json::parse(ckpt.manifest);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  TmnModel model(TmnConfig::from_json(manifest.at("tmn")), 0);
  for (auto& p : model.params_) {
    const Tensor& t = ckpt.at(p.name);
    if (t.shape() != p.var.shape()) throw ShapeError("checkpoint shape mismatch for " + p.name);
    p.var.mutable_value() = t;
  }
  for (std::size_t i = 0; i < model.stats_.size(); ++i) {
    const std::string prefix = i == 0 ? "bn0" : block_name(i - 1, "bn");
    model.stats_[i].mean = ckpt.at(prefix + ".running_mean");
    model.stats_[i].var = ckpt.at(prefix + ".running_var");
  }
  return model;
}

Tensor stack_sequences(std::span<const Tensor> sequences, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInput("stack_sequences: empty batch");
  const Tensor& first = sequences[indices[0]];
  if (first.rank() != 2) throw ShapeError("sequences must be [T, m]");
  const std::size_t steps = first.dim(0), width = first.dim(1);
  Tensor out({indices.size(), steps, width}, 0.0);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& s = sequences[indices[b]];
    if (s.shape() != first.shape()) {
      throw ShapeError("sequence " + std::to_string(indices[b]) + " has shape " +
                       nn::shape_string(s.shape()) + ", expected " + nn::shape_string(first.shape()));
    }
    std::copy(s.data().begin(), s.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * steps * width));
  }
  return out;
}

namespace {

void check_sequences(const TmnConfig& cfg, std::span<const Tensor> sequences,
                     std::span<const std::size_t> labels, std::size_t classes) {
  if (sequences.empty()) throw InvalidInput("no training sequences");
  if (sequences.size() != labels.size()) throw InvalidInput("one label per sequence required");
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (s.rank() != 2 || s.dim(1) != cfg.input_dim || s.dim(0) != sequences[0].dim(0)) {
      throw InvalidInput("sequence " + std::to_string(i) + " has shape " + nn::shape_string(s.shape()) +
                         "; all sequences must be [T, " + std::to_string(cfg.input_dim) + "]");
    }
    if (labels[i] >= classes) {
      throw InvalidInput("label " + std::to_string(labels[i]) + " outside " + std::to_string(classes) +
                         " classes");
    }
  }
}

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalStats evaluate_base(const TmnModel& model, std::span<const Tensor> sequences,
                        std::span<const std::size_t> labels, std::size_t batch) {
  nn::NoGradGuard no_grad;
  const auto& params = model.parameters();
  const nn::Parameter* hw = nullptr;
  const nn::Parameter* hb = nullptr;
  for (const auto* p : params) {
    if (p->name == "head.weight") hw = p;
    if (p->name == "head.bias") hb = p;
  }
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < sequences.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(sequences.size(), start + batch); ++i) idx.push_back(i);
    Var f = model.features(Var(stack_sequences(sequences, idx)));
    Tensor logits = nn::linear(f, hw->var, hb->var).value();
    std::vector<std::size_t> y;
    for (auto i : idx) y.push_back(labels[i]);
    loss += nn::softmax_cross_entropy(logits, y).loss * static_cast<double>(idx.size());
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      correct += argmax(std::span<const double>(&logits[b * classes], classes)) == y[b];
    }
  }
  const double n = static_cast<double>(sequences.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

BaseTrainResult train_base(TmnModel& model, std::span<const Tensor> sequences,
                           std::span<const std::size_t> labels, const BaseSchedule& schedule,
                           std::uint64_t seed) {
  const auto& cfg = model.config();
  check_sequences(cfg, sequences, labels, cfg.classes);
  if (schedule.batch == 0) throw InvalidInput("batch size must be positive");
  if (!std::is_sorted(schedule.milestones.begin(), schedule.milestones.end())) {
    throw InvalidInput("learning-rate milestones must be ascending");
  }

  BaseTrainResult result;
  result.optimizer = nn::SgdMomentum(schedule.lr, schedule.momentum, schedule.weight_decay);
  result.initial_loss = evaluate_base(model, sequences, labels, 64).loss;

  auto params = model.parameters();
  std::vector<std::size_t> order(sequences.size());
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    result.optimizer.set_lr(schedule.lr_at(epoch));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(order.size(), start + schedule.batch)));
      const Tensor batch = stack_sequences(sequences, idx);
      if (batch.dim(0) * batch.dim(1) < 2) continue;
      std::vector<std::size_t> y;
      for (auto i : idx) y.push_back(labels[i]);
      for (auto* p : params) p->var.zero_grad();
      Var loss = nn::cross_entropy_loss(model.logits(Var(batch), Mode::Train, mix_seed(seed ^ 0xd50u, step++)), y);
      nn::backward(loss);
      result.optimizer.step(nn::trainable_slots(params));
      epoch_loss += loss.value()[0] * static_cast<double>(idx.size());
      seen += idx.size();
    }
    result.epoch_losses.push_back(seen ? epoch_loss / static_cast<double>(seen) : 0.0);
  }
  for (auto* p : params) p->var.zero_grad();

  auto final_stats = evaluate_base(model, sequences, labels, 64);
  result.final_loss = final_stats.loss;
  result.train_accuracy = final_stats.accuracy;
  return result;
}

EpisodeHead init_episode_head(std::size_t hidden_dim, std::size_t ways, std::uint64_t seed) {
  Rng rng(seed);
  EpisodeHead head;
  head.weight = uniform_tensor({hidden_dim, ways}, 1.0 / std::sqrt(double(hidden_dim)), rng);
  head.bias = Tensor({ways}, 0.0);
  return head;
}

EpisodeHead finetune_episode(const TmnModel& model, std::span<const Tensor> support,
                             std::span<const std::size_t> labels, std::size_t ways,
                             const EpisodeSchedule& schedule, std::uint64_t seed) {
  if (ways < 2) throw InvalidInput("episode needs at least two classes");
  check_sequences(model.config(), support, labels, ways);
  std::vector<bool> present(ways, false);
  for (auto l : labels) present[l] = true;
  for (std::size_t c = 0; c < ways; ++c) {
    if (!present[c]) throw InvalidInput("support set has no example of class " + std::to_string(c));
  }
  if (schedule.batch == 0) throw InvalidInput("batch size must be positive");

  const std::size_t d = model.config().hidden_dim;
  Tensor feats;
  {
    nn::NoGradGuard no_grad;
    std::vector<std::size_t> all(support.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    feats = model.features(Var(stack_sequences(support, all))).value();
  }

  EpisodeHead head = init_episode_head(d, ways, seed);
  nn::Parameter w{"head.weight", Var(head.weight, true)};
  nn::Parameter b{"head.bias", Var(head.bias, true)};
  std::vector<nn::Parameter*> params{&w, &b};
  nn::Adam adam(schedule.lr, schedule.beta1, schedule.beta2, 1e-8, schedule.weight_decay);

  std::vector<std::size_t> order(support.size());
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(seed, epoch + 1));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += schedule.batch) {
      const std::size_t end = std::min(order.size(), start + schedule.batch);
      Tensor x({end - start, d}, 0.0);
      std::vector<std::size_t> y;
      for (std::size_t r = start; r < end; ++r) {
        std::copy_n(&feats[order[r] * d], d, &x[(r - start) * d]);
        y.push_back(labels[order[r]]);
      }
      w.var.zero_grad();
      b.var.zero_grad();
      Var loss = nn::cross_entropy_loss(nn::linear(Var(std::move(x)), w.var, b.var), y);
      nn::backward(loss);
      adam.step(nn::trainable_slots(params));
    }
  }
  head.weight = w.var.value();
  head.bias = b.var.value();
  return head;
}

Tensor episode_logits(const TmnModel& model, const EpisodeHead& head, const Tensor& input) {
  nn::NoGradGuard no_grad;
  Var f = model.features(Var(input));
  return nn::linear(f, Var(head.weight), Var(head.bias)).value();
}

std::vector<double> predict_proba(const TmnModel& model, const EpisodeHead& head,
                                  std::span<const Tensor> samplings) {
  if (samplings.empty()) throw InvalidInput("predict: no samplings");
  std::vector<std::size_t> all(samplings.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const Tensor probs = nn::softmax_rows(episode_logits(model, head, stack_sequences(samplings, all)));
  const std::size_t ways = head.ways();
  std::vector<double> mean(ways, 0.0);
  for (std::size_t s = 0; s < samplings.size(); ++s) {
    for (std::size_t c = 0; c < ways; ++c) mean[c] += probs[s * ways + c];
  }
  for (double& v : mean) v /= static_cast<double>(samplings.size());
  return mean;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> proposal_importance(const TmnModel& model, const EpisodeHead& head,
                                        const Tensor& sequence, std::size_t cls) {
  if (sequence.rank() != 2) throw ShapeError("importance: sequence must be [T, m]");
  if (cls >= head.ways()) throw InvalidInput("importance: class out of range");
  const std::size_t steps = sequence.dim(0), width = sequence.dim(1);
  TmnModel frozen(model);  // private copy so parameter gradients stay untouched
  Var x(sequence.reshaped({1, steps, width}), true);
  Var logits = nn::linear(frozen.features(x), Var(head.weight), Var(head.bias));
  Tensor pick({1, head.ways()}, 0.0);
  pick[cls] = 1.0;
  nn::backward(nn::weighted_sum(logits, pick));
  const Tensor g = x.grad();
  std::vector<double> out(width, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < width; ++j) out[j] += std::abs(g[t * width + j]);
  }
  for (double& v : out) v /= static_cast<double>(steps);
  return out;
}

double forward_flops(const TmnConfig& c, std::size_t n) {
  const double m = double(c.input_dim), d = double(c.hidden_dim), t = double(n);
  double macs = 0.0;
  if (c.variant == TmnVariant::Linear) {
    macs = t * m * d + d * double(c.classes);
  } else {
    for (std::size_t b = 0; b < c.blocks; ++b) {
      const double in = b == 0 ? m : d;
      macs += t * in * double(c.kernel) + t * in * d;
    }
    macs += 4.0 * t * d * d + 2.0 * t * t * d;
    macs += d * double(c.classes);
  }
  return 2.0 * macs;
}

}  // namespace kp
