#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "kp/nn/autograd.hpp"

namespace kp::nn {

enum class Mode { Train, Eval };

// y = x W + b over the last axis. x: [..., Din], W: [Din, Dout], b: [Dout] or undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);

// Elementwise sum of equal shapes.
Var add(const Var& a, const Var& b);

// x: [B, T, D] plus table row min(t, P-1) of table: [P, D].
Var add_time_embedding(const Var& x, const Var& table);

struct BatchNormStats {
  Tensor mean;  // [C], starts at 0
  Tensor var;   // [C], starts at 1
  explicit BatchNormStats(std::size_t channels = 1)
      : mean({channels}, 0.0), var({channels}, 1.0) {}
};

inline constexpr double kBatchNormEps = 1e-5;

// Normalizes each channel of x: [..., C] over all leading axes. Train mode uses
// batch statistics and folds them into `running` with the given momentum
// (running variance uses the unbiased estimate); eval mode uses `running`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& running, Mode mode,
               double momentum = 0.1);

// Per-channel 1-D cross-correlation over T with zero padding (K-1)/2.
// x: [B, T, C], kernel: [K, C] with K odd, bias: [C].
// y[b,t,c] = bias[c] + sum_j kernel[j,c] * x[b, t + j - (K-1)/2, c].
Var depthwise_temporal_conv(const Var& x, const Var& kernel, const Var& bias);

// y = x + concat_h(softmax(Q_h K_h^T / sqrt(D/h)) V_h) Wo with Q = x Wq, K = x Wk,
// V = x Wv. x: [B, T, D]; all projections [D, D]. When `attention` is non-null it
// receives the weights as [B, h, T, T].
Var multi_head_self_attention(const Var& x, const Var& wq, const Var& wk, const Var& wv,
                              const Var& wo, std::size_t heads, Tensor* attention = nullptr);

// Inverted dropout: zeroes with probability p and scales survivors by 1/(1-p).
// The mask is a pure function of (seed, element index).
Var dropout(const Var& x, double p, std::uint64_t seed, Mode mode);

// [B, T, D] -> [B, D].
Var mean_over_time(const Var& x);

// sum(x * weights); weights must match x's shape.
Var weighted_sum(const Var& x, const Tensor& weights);

// Row-wise softmax over the last axis.
Tensor softmax_rows(const Tensor& logits);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits = (softmax - onehot) / B
};

// Mean over the batch of -log softmax(logits)[label]. logits: [B, C].
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

Var cross_entropy_loss(const Var& logits, std::span<const std::size_t> labels);

}  // namespace kp::nn
