#include "kp/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp::nn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(wv.rank() == 2, "linear: weight must be [Din, Dout], got " + shape_string(wv.shape()));
  const std::size_t din = wv.dim(0), dout = wv.dim(1);
  require(last_dim(xv) == din, "linear: input " + shape_string(xv.shape()) +
                                   " does not match weight " + shape_string(wv.shape()));
  if (b.defined()) {
    require(b.value().rank() == 1 && b.value().dim(0) == dout, "linear: bias must be [Dout]");
  }
  const std::size_t rows = xv.size() / din;
  Shape out_shape = xv.shape();
  out_shape.back() = dout;
  Tensor y(out_shape, 0.0);
  auto xd = xv.data();
  auto wd = wv.data();
  auto yd = y.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = yd.data() + r * dout;
    if (b.defined()) std::copy_n(b.value().data().data(), dout, yr);
    for (std::size_t i = 0; i < din; ++i) {
      const double xi = xd[r * din + i];
      const double* wi = wd.data() + i * dout;
      for (std::size_t o = 0; o < dout; ++o) yr[o] += xi * wi[o];
    }
  }
  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(y), inputs, [x, w, b, rows, din, dout](const Tensor& g) {
    auto gd = g.data();
    if (Tensor* gx = x.grad_buffer()) {
      auto wd = w.value().data();
      auto gxd = gx->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = gd.data() + r * dout;
        for (std::size_t i = 0; i < din; ++i) {
          const double* wi = wd.data() + i * dout;
          double acc = 0.0;
          for (std::size_t o = 0; o < dout; ++o) acc += gr[o] * wi[o];
          gxd[r * din + i] += acc;
        }
      }
    }
    if (Tensor* gw = w.grad_buffer()) {
      auto xd = x.value().data();
      auto gwd = gw->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = gd.data() + r * dout;
        for (std::size_t i = 0; i < din; ++i) {
          const double xi = xd[r * din + i];
          double* gwi = gwd.data() + i * dout;
          for (std::size_t o = 0; o < dout; ++o) gwi[o] += xi * gr[o];
        }
      }
    }
    if (b.defined()) {
      if (Tensor* gb = b.grad_buffer()) {
        auto gbd = gb->data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t o = 0; o < dout; ++o) gbd[o] += gd[r * dout + o];
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(y), {x}, [x](const Tensor& g) {
    Tensor* gx = x.grad_buffer();
    auto xd = x.value().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > 0.0) (*gx)[i] += g[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_result(std::move(y), {a, b}, [a, b](const Tensor& g) {
    for (const Var* v : {&a, &b}) {
      if (Tensor* gv = v->grad_buffer()) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
      }
    }
  });
}

Var add_time_embedding(const Var& x, const Var& table) {
  const Tensor& xv = x.value();
  require(xv.rank() == 3, "add_time_embedding: input must be [B, T, D]");
  require(table.value().rank() == 2 && table.value().dim(1) == xv.dim(2),
          "add_time_embedding: table must be [P, D]");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), width = xv.dim(2);
  const std::size_t positions = table.value().dim(0);
  Tensor y = xv;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t p = std::min(t, positions - 1);
      for (std::size_t d = 0; d < width; ++d) {
        y[(b * steps + t) * width + d] += table.value()[p * width + d];
      }
    }
  }
  return make_result(std::move(y), {x, table},
                     [x, table, batch, steps, width, positions](const Tensor& g) {
                       if (Tensor* gx = x.grad_buffer()) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                       }
                       if (Tensor* gt = table.grad_buffer()) {
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t t = 0; t < steps; ++t) {
                             const std::size_t p = std::min(t, positions - 1);
                             for (std::size_t d = 0; d < width; ++d) {
                               (*gt)[p * width + d] += g[(b * steps + t) * width + d];
                             }
                           }
                         }
                       }
                     });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& running, Mode mode,
               double momentum) {
  const Tensor& xv = x.value();
  const std::size_t channels = last_dim(xv);
  require(gamma.value().size() == channels && beta.value().size() == channels &&
              running.mean.size() == channels && running.var.size() == channels,
          "batch_norm: parameter size does not match channel count " + std::to_string(channels));
  const std::size_t rows = xv.size() / channels;
  if (mode == Mode::Train && rows < 2) {
    throw ShapeError("batch_norm: training mode needs at least two values per channel");
  }

  std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
  if (mode == Mode::Train) {
    std::vector<double> var(channels, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) mean[c] += xv[r * channels + c];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = xv[r * channels + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double biased = var[c] / static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(biased + kBatchNormEps);
      const double unbiased = var[c] / static_cast<double>(rows - 1);
      running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
      running.var[c] = (1.0 - momentum) * running.var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running.mean[c];
      inv_std[c] = 1.0 / std::sqrt(running.var[c] + kBatchNormEps);
    }
  }

  Tensor xhat(xv.shape(), 0.0);
  Tensor y(xv.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      xhat[i] = (xv[i] - mean[c]) * inv_std[c];
      y[i] = gamma.value()[c] * xhat[i] + beta.value()[c];
    }
  }

  const bool train = mode == Mode::Train;
  return make_result(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, channels,
       train](const Tensor& g) {
        if (Tensor* gg = gamma.grad_buffer()) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % channels] += g[i] * xhat[i];
        }
        if (Tensor* gb = beta.grad_buffer()) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % channels] += g[i];
        }
        Tensor* gx = x.grad_buffer();
        if (!gx) return;
        if (!train) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t c = i % channels;
            (*gx)[i] += g[i] * gamma.value()[c] * inv_std[c];
          }
          return;
        }
        std::vector<double> sum_d(channels, 0.0), sum_dx(channels, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = i % channels;
          const double d = g[i] * gamma.value()[c];
          sum_d[c] += d;
          sum_dx[c] += d * xhat[i];
        }
        const double n = static_cast<double>(rows);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = i % channels;
          const double d = g[i] * gamma.value()[c];
          (*gx)[i] += inv_std[c] / n * (n * d - sum_d[c] - xhat[i] * sum_dx[c]);
        }
      });
}

Var depthwise_temporal_conv(const Var& x, const Var& kernel, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  require(xv.rank() == 3, "depthwise_temporal_conv: input must be [B, T, C]");
  require(kv.rank() == 2 && kv.dim(1) == xv.dim(2),
          "depthwise_temporal_conv: kernel must be [K, C]");
  require(bias.value().size() == xv.dim(2), "depthwise_temporal_conv: bias must be [C]");
  const std::size_t taps = kv.dim(0);
  if (taps % 2 == 0) throw ShapeError("depthwise_temporal_conv: kernel size must be odd");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), channels = xv.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(taps / 2);

  Tensor y(xv.shape(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* yr = &y[(b * steps + t) * channels];
      for (std::size_t c = 0; c < channels; ++c) yr[c] = bias.value()[c];
      for (std::size_t j = 0; j < taps; ++j) {
        const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(steps)) continue;
        const double* xr = &xv[(b * steps + static_cast<std::size_t>(s)) * channels];
        const double* kr = &kv[j * channels];
        for (std::size_t c = 0; c < channels; ++c) yr[c] += kr[c] * xr[c];
      }
    }
  }
  return make_result(
      std::move(y), {x, kernel, bias},
      [x, kernel, bias, batch, steps, channels, taps, half](const Tensor& g) {
        Tensor* gx = x.grad_buffer();
        Tensor* gk = kernel.grad_buffer();
        if (Tensor* gb = bias.grad_buffer()) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % channels] += g[i];
        }
        if (!gx && !gk) return;
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < steps; ++t) {
            const double* gr = &g[(b * steps + t) * channels];
            for (std::size_t j = 0; j < taps; ++j) {
              const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
              if (s < 0 || s >= static_cast<std::ptrdiff_t>(steps)) continue;
              const std::size_t src = (b * steps + static_cast<std::size_t>(s)) * channels;
              for (std::size_t c = 0; c < channels; ++c) {
                if (gx) (*gx)[src + c] += kv[j * channels + c] * gr[c];
                if (gk) (*gk)[j * channels + c] += xv[src + c] * gr[c];
              }
            }
          }
        }
      });
}

namespace {

// out[r, o] = sum_i a[r, i] * w[i, o] for row-major [rows, n] x [n, n].
void matmul_square(const Tensor& a, const Tensor& w, Tensor& out, std::size_t rows, std::size_t n) {
  out.fill(0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = &out[r * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double ai = a[r * n + i];
      const double* wi = &w[i * n];
      for (std::size_t k = 0; k < n; ++k) o[k] += ai * wi[k];
    }
  }
}

// Accumulates grad_a += g w^T and grad_w += a^T g for out = a w.
void matmul_square_backward(const Tensor& a, const Tensor& w, const Tensor& g, Tensor* grad_a,
                            Tensor* grad_w, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* gr = &g[r * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double* wi = &w[i * n];
      if (grad_a) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += gr[k] * wi[k];
        (*grad_a)[r * n + i] += acc;
      }
      if (grad_w) {
        const double ai = a[r * n + i];
        double* gwi = &(*grad_w)[i * n];
        for (std::size_t k = 0; k < n; ++k) gwi[k] += ai * gr[k];
      }
    }
  }
}

}  // namespace

Var multi_head_self_attention(const Var& x, const Var& wq, const Var& wk, const Var& wv,
                              const Var& wo, std::size_t heads, Tensor* attention) {
  const Tensor& xv = x.value();
  require(xv.rank() == 3, "multi_head_self_attention: input must be [B, T, D]");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), width = xv.dim(2);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("multi_head_self_attention: width " + std::to_string(width) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  for (const Var* w : {&wq, &wk, &wv, &wo}) {
    require(w->shape() == Shape{width, width}, "multi_head_self_attention: projection must be [D, D]");
  }
  const std::size_t head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t rows = batch * steps;

  Tensor q(xv.shape()), k(xv.shape()), v(xv.shape()), ctx(xv.shape(), 0.0), proj(xv.shape());
  matmul_square(xv, wq.value(), q, rows, width);
  matmul_square(xv, wk.value(), k, rows, width);
  matmul_square(xv, wv.value(), v, rows, width);

  Tensor attn({batch, heads, steps, steps}, 0.0);
  std::vector<double> scores(steps);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      for (std::size_t t = 0; t < steps; ++t) {
        const double* qt = &q[(b * steps + t) * width + off];
        double max_score = -INFINITY;
        for (std::size_t s = 0; s < steps; ++s) {
          const double* ks = &k[(b * steps + s) * width + off];
          double dot = 0.0;
          for (std::size_t d = 0; d < head_dim; ++d) dot += qt[d] * ks[d];
          scores[s] = dot * scale;
          max_score = std::max(max_score, scores[s]);
        }
        double total = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          total += scores[s];
        }
        double* arow = &attn[((b * heads + h) * steps + t) * steps];
        double* ct = &ctx[(b * steps + t) * width + off];
        for (std::size_t s = 0; s < steps; ++s) {
          arow[s] = scores[s] / total;
          const double* vs = &v[(b * steps + s) * width + off];
          for (std::size_t d = 0; d < head_dim; ++d) ct[d] += arow[s] * vs[d];
        }
      }
    }
  }
  matmul_square(ctx, wo.value(), proj, rows, width);
  Tensor y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += proj[i];
  if (attention) *attention = attn;

  return make_result(
      std::move(y), {x, wq, wk, wv, wo},
      [x, wq, wk, wv, wo, q = std::move(q), k = std::move(k), v = std::move(v),
       ctx = std::move(ctx), attn = std::move(attn), batch, steps, width, heads, head_dim, scale,
       rows](const Tensor& g) {
        const Shape shape{batch, steps, width};
        Tensor g_ctx(shape, 0.0);
        matmul_square_backward(ctx, wo.value(), g, &g_ctx, wo.grad_buffer(), rows, width);

        Tensor gq(shape, 0.0), gk(shape, 0.0), gv(shape, 0.0);
        std::vector<double> g_attn(steps);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t t = 0; t < steps; ++t) {
              const double* arow = &attn[((b * heads + h) * steps + t) * steps];
              const double* gct = &g_ctx[(b * steps + t) * width + off];
              double weighted = 0.0;
              for (std::size_t s = 0; s < steps; ++s) {
                const double* vs = &v[(b * steps + s) * width + off];
                double* gvs = &gv[(b * steps + s) * width + off];
                double dot = 0.0;
                for (std::size_t d = 0; d < head_dim; ++d) {
                  dot += gct[d] * vs[d];
                  gvs[d] += arow[s] * gct[d];
                }
                g_attn[s] = dot;
                weighted += arow[s] * dot;
              }
              const double* qt = &q[(b * steps + t) * width + off];
              double* gqt = &gq[(b * steps + t) * width + off];
              for (std::size_t s = 0; s < steps; ++s) {
                const double g_score = arow[s] * (g_attn[s] - weighted) * scale;
                const double* ks = &k[(b * steps + s) * width + off];
                double* gks = &gk[(b * steps + s) * width + off];
                for (std::size_t d = 0; d < head_dim; ++d) {
                  gqt[d] += g_score * ks[d];
                  gks[d] += g_score * qt[d];
                }
              }
            }
          }
        }
        Tensor* gx = x.grad_buffer();
        if (gx) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
        const Tensor& xv = x.value();
        matmul_square_backward(xv, wq.value(), gq, gx, wq.grad_buffer(), rows, width);
        matmul_square_backward(xv, wk.value(), gk, gx, wk.grad_buffer(), rows, width);
        matmul_square_backward(xv, wv.value(), gv, gx, wv.grad_buffer(), rows, width);
      });
}

Var dropout(const Var& x, double p, std::uint64_t seed, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidInput("dropout: probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape(), 0.0);
  for (double& m : mask.data()) m = rng.uniform01() < p ? 0.0 : keep_scale;
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return make_result(std::move(y), {x}, [x, mask = std::move(mask)](const Tensor& g) {
    Tensor* gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

Var mean_over_time(const Var& x) {
  const Tensor& xv = x.value();
  require(xv.rank() == 3, "mean_over_time: input must be [B, T, D]");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), width = xv.dim(2);
  Tensor y({batch, width}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t d = 0; d < width; ++d) y[b * width + d] += xv[(b * steps + t) * width + d];
    }
  }
  const double inv = 1.0 / static_cast<double>(steps);
  for (double& v : y.data()) v *= inv;
  return make_result(std::move(y), {x}, [x, batch, steps, width, inv](const Tensor& g) {
    Tensor* gx = x.grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t d = 0; d < width; ++d) {
          (*gx)[(b * steps + t) * width + d] += g[b * width + d] * inv;
        }
      }
    }
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.size() == x.size(), "weighted_sum: weight size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
  return make_result(Tensor::scalar(total), {x}, [x, weights](const Tensor& g) {
    Tensor* gx = x.grad_buffer();
    for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += g[0] * weights[i];
  });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t cols = last_dim(logits);
  const std::size_t rows = logits.size() / cols;
  Tensor out(logits.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = &logits[r * cols];
    double* o = &out[r * cols];
    const double mx = *std::max_element(l, l + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(l[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return out;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be [B, C]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  require(labels.size() == batch, "softmax_cross_entropy: one label per row required");
  CrossEntropy out;
  out.grad = Tensor(logits.shape(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) throw InvalidInput("softmax_cross_entropy: label out of range");
    const double* l = &logits[b * classes];
    const double mx = *std::max_element(l, l + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(l[c] - mx);
    const double log_z = mx + std::log(total);
    out.loss += (log_z - l[labels[b]]) * inv_batch;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(l[c] - log_z);
      out.grad[b * classes + c] = (p - (c == labels[b] ? 1.0 : 0.0)) * inv_batch;
    }
  }
  return out;
}

Var cross_entropy_loss(const Var& logits, std::span<const std::size_t> labels) {
  CrossEntropy ce = softmax_cross_entropy(logits.value(), labels);
  return make_result(Tensor::scalar(ce.loss), {logits},
                     [logits, grad = std::move(ce.grad)](const Tensor& g) {
                       Tensor* gl = logits.grad_buffer();
                       for (std::size_t i = 0; i < grad.size(); ++i) (*gl)[i] += g[0] * grad[i];
                     });
}

}  // namespace kp::nn
