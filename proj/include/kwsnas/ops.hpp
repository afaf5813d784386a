// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The kwsnas Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forward and backward kernels for the fixed layer menu. Every backward
// function accumulates (+=) into the gradient buffers it is handed, so callers
// decide when buffers are zeroed.

#pragma once

#include <cmath>
#include <limits>

#include "kwsnas/tensor.hpp"

namespace kwsnas {

namespace detail {

// Output columns [lo, hi) whose input column ow*stride + tap - pad lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in,
                                                       std::size_t stride, std::size_t tap,
                                                       std::size_t pad) {
  std::size_t lo = 0;
  if (pad > tap) lo = (pad - tap + stride - 1) / stride;
  // largest o with o*stride + tap - pad <= in - 1
  if (in + pad < tap + 1) return {0, 0};
  std::size_t hi = (in - 1 + pad - tap) / stride + 1;
  hi = std::min(hi, out);
  if (lo >= hi) return {0, 0};
  return {lo, hi};
}

inline void check_conv_shapes(const Tensor& input, const Tensor& weights, const LayerSpec& spec) {
  spec.validate();
  require_rank(input, 4, "conv input");
  require_dim(input.dim(1), spec.in_channels, "input channels");
  if (spec.kind == LayerKind::DepthwiseConv2d) {
    require_rank(weights, 4, "depthwise weights");
    require_dim(weights.dim(0), input.dim(1), "depthwise weight channels");
    require_dim(weights.dim(1), 1, "depthwise weight group width");
  } else {
    require_rank(weights, 4, "conv weights");
    require_dim(weights.dim(0), spec.out_channels, "weight out_channels");
    require_dim(weights.dim(1), spec.in_channels, "weight in_channels");
  }
  require_dim(weights.dim(2), spec.kh, "kernel height");
  require_dim(weights.dim(3), spec.kw, "kernel width");
  if (input.dim(2) + spec.pad.top + spec.pad.bottom < spec.kh ||
      input.dim(3) + spec.pad.left + spec.pad.right < spec.kw) {
    throw ShapeError("input spatial size " + shape_str(input.shape()) + " smaller than kernel");
  }
}

}  // namespace detail

inline Shape conv_output_shape(const Shape& in, const LayerSpec& spec) {
  return {in.at(0), spec.out_channels, spec.out_h(in.at(2)), spec.out_w(in.at(3))};
}

/// Dense 2-d convolution without bias. weights: (out_channels, in_channels, kh, kw).
inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const LayerSpec& spec) {
  detail::check_conv_shapes(input, weights, spec);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = spec.out_channels, OH = spec.out_h(H), OW = spec.out_w(W);
  Tensor out({N, K, OH, OW});
  const double* x = input.data().data();
  const double* w = weights.data().data();
  double* y = out.data().data();

  const bool pointwise = spec.kh == 1 && spec.kw == 1 && spec.sh == 1 && spec.sw == 1;
  if (pointwise) {
    const std::size_t P = H * W;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        double* yr = y + (n * K + k) * P;
        for (std::size_t c = 0; c < C; ++c) {
          const double wv = w[k * C + c];
          const double* xr = x + (n * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) yr[p] += wv * xr[p];
        }
      }
    }
    return out;
  }

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      double* yplane = y + (n * K + k) * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xplane = x + (n * C + c) * H * W;
        const double* wk = w + (k * C + c) * spec.kh * spec.kw;
        for (std::size_t ky = 0; ky < spec.kh; ++ky) {
          auto [oh0, oh1] = detail::valid_range(OH, H, spec.sh, ky, spec.pad.top);
          for (std::size_t kx = 0; kx < spec.kw; ++kx) {
            auto [ow0, ow1] = detail::valid_range(OW, W, spec.sw, kx, spec.pad.left);
            const double wv = wk[ky * spec.kw + kx];
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const double* xr = xplane + (oh * spec.sh + ky - spec.pad.top) * W;
              double* yr = yplane + oh * OW;
              for (std::size_t ow = ow0; ow < ow1; ++ow) {
                yr[ow] += wv * xr[ow * spec.sw + kx - spec.pad.left];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates d(loss)/d(input) into grad_input (if non-null) and
/// d(loss)/d(weights) into grad_weights (if non-null).
inline void conv2d_backward(const Tensor& input, const Tensor& weights, const LayerSpec& spec,
                            const Tensor& grad_out, std::span<double> grad_input,
                            std::span<double> grad_weights) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = spec.out_channels, OH = spec.out_h(H), OW = spec.out_w(W);
  require_dim(grad_out.numel(), N * K * OH * OW, "grad_out size");
  const double* x = input.data().data();
  const double* w = weights.data().data();
  const double* gy = grad_out.data().data();
  double* gx = grad_input.empty() ? nullptr : grad_input.data();
  double* gw = grad_weights.empty() ? nullptr : grad_weights.data();

  const bool pointwise = spec.kh == 1 && spec.kw == 1 && spec.sh == 1 && spec.sw == 1;
  if (pointwise) {
    const std::size_t P = H * W;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        const double* gyr = gy + (n * K + k) * P;
        for (std::size_t c = 0; c < C; ++c) {
          const double* xr = x + (n * C + c) * P;
          if (gw) {
            double acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += gyr[p] * xr[p];
            gw[k * C + c] += acc;
          }
          if (gx) {
            const double wv = w[k * C + c];
            double* gxr = gx + (n * C + c) * P;
            for (std::size_t p = 0; p < P; ++p) gxr[p] += wv * gyr[p];
          }
        }
      }
    }
    return;
  }

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* gplane = gy + (n * K + k) * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xplane = x + (n * C + c) * H * W;
        double* gxplane = gx ? gx + (n * C + c) * H * W : nullptr;
        const std::size_t wbase = (k * C + c) * spec.kh * spec.kw;
        for (std::size_t ky = 0; ky < spec.kh; ++ky) {
          auto [oh0, oh1] = detail::valid_range(OH, H, spec.sh, ky, spec.pad.top);
          for (std::size_t kx = 0; kx < spec.kw; ++kx) {
            auto [ow0, ow1] = detail::valid_range(OW, W, spec.sw, kx, spec.pad.left);
            const double wv = w[wbase + ky * spec.kw + kx];
            double acc = 0.0;
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const std::size_t row = (oh * spec.sh + ky - spec.pad.top) * W;
              const double* gr = gplane + oh * OW;
              for (std::size_t ow = ow0; ow < ow1; ++ow) {
                const std::size_t col = row + ow * spec.sw + kx - spec.pad.left;
                acc += gr[ow] * xplane[col];
                if (gxplane) gxplane[col] += wv * gr[ow];
              }
            }
            if (gw) gw[wbase + ky * spec.kw + kx] += acc;
          }
        }
      }
    }
  }
}

/// One k×k filter per channel. weights: (channels, 1, kh, kw).
inline Tensor depthwise_conv2d_forward(const Tensor& input, const Tensor& weights,
                                       const LayerSpec& spec) {
  detail::check_conv_shapes(input, weights, spec);
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = spec.out_h(H), OW = spec.out_w(W);
  Tensor out({N, C, OH, OW});
  const double* x = input.data().data();
  const double* w = weights.data().data();
  double* y = out.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xplane = x + (n * C + c) * H * W;
      double* yplane = y + (n * C + c) * OH * OW;
      const double* wk = w + c * spec.kh * spec.kw;
      for (std::size_t ky = 0; ky < spec.kh; ++ky) {
        auto [oh0, oh1] = detail::valid_range(OH, H, spec.sh, ky, spec.pad.top);
        for (std::size_t kx = 0; kx < spec.kw; ++kx) {
          auto [ow0, ow1] = detail::valid_range(OW, W, spec.sw, kx, spec.pad.left);
          const double wv = wk[ky * spec.kw + kx];
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            const double* xr = xplane + (oh * spec.sh + ky - spec.pad.top) * W;
            double* yr = yplane + oh * OW;
            for (std::size_t ow = ow0; ow < ow1; ++ow) {
              yr[ow] += wv * xr[ow * spec.sw + kx - spec.pad.left];
            }
          }
        }
      }
    }
  }
  return out;
}

inline void depthwise_conv2d_backward(const Tensor& input, const Tensor& weights,
                                      const LayerSpec& spec, const Tensor& grad_out,
                                      std::span<double> grad_input,
                                      std::span<double> grad_weights) {
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = spec.out_h(H), OW = spec.out_w(W);
  require_dim(grad_out.numel(), N * C * OH * OW, "grad_out size");
  const double* x = input.data().data();
  const double* w = weights.data().data();
  const double* gy = grad_out.data().data();
  double* gx = grad_input.empty() ? nullptr : grad_input.data();
  double* gw = grad_weights.empty() ? nullptr : grad_weights.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xplane = x + (n * C + c) * H * W;
      double* gxplane = gx ? gx + (n * C + c) * H * W : nullptr;
      const double* gplane = gy + (n * C + c) * OH * OW;
      const std::size_t wbase = c * spec.kh * spec.kw;
      for (std::size_t ky = 0; ky < spec.kh; ++ky) {
        auto [oh0, oh1] = detail::valid_range(OH, H, spec.sh, ky, spec.pad.top);
        for (std::size_t kx = 0; kx < spec.kw; ++kx) {
          auto [ow0, ow1] = detail::valid_range(OW, W, spec.sw, kx, spec.pad.left);
          const double wv = w[wbase + ky * spec.kw + kx];
          double acc = 0.0;
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            const std::size_t row = (oh * spec.sh + ky - spec.pad.top) * W;
            const double* gr = gplane + oh * OW;
            for (std::size_t ow = ow0; ow < ow1; ++ow) {
              const std::size_t col = row + ow * spec.sw + kx - spec.pad.left;
              acc += gr[ow] * xplane[col];
              if (gxplane) gxplane[col] += wv * gr[ow];
            }
          }
          if (gw) gw[wbase + ky * spec.kw + kx] += acc;
        }
      }
    }
  }
}

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

enum class NormMode { Train, Infer };

/// Per-forward values the batch-norm backward pass needs.
struct BatchNormCache {
  Tensor normalized;
  std::vector<double> inv_std;
  NormMode mode = NormMode::Train;
};

inline Tensor batchnorm_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                                BatchNormState& state, NormMode mode, BatchNormCache* cache,
                                bool update_running = true) {
  require_rank(input, 4, "batchnorm input");
  const std::size_t N = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  require_dim(gamma.numel(), C, "batchnorm gamma length");
  require_dim(beta.numel(), C, "batchnorm beta length");
  require_dim(state.running_mean.size(), C, "batchnorm running moments");
  if (mode == NormMode::Train && N < 2) {
    throw std::invalid_argument("batchnorm in train mode requires batch >= 2");
  }
  Tensor out(input.shape());
  Tensor xhat(input.shape());
  std::vector<double> inv_std(C);
  const double* x = input.data().data();
  const double M = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == NormMode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* xr = x + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) s += xr[p];
      }
      mean = s / M;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* xr = x + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) ss += (xr[p] - mean) * (xr[p] - mean);
      }
      var = ss / M;
      if (update_running) {
        const double unbiased = M > 1 ? ss / (M - 1) : var;
        state.running_mean[c] = state.momentum * state.running_mean[c] + (1 - state.momentum) * mean;
        state.running_var[c] = state.momentum * state.running_var[c] + (1 - state.momentum) * unbiased;
      }
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.epsilon);
    inv_std[c] = is;
    const double g = gamma[c], b = beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        const double h = (x[base + p] - mean) * is;
        xhat[base + p] = h;
        out[base + p] = g * h + b;
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

inline void batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                               const Tensor& grad_out, std::span<double> grad_input,
                               std::span<double> grad_gamma, std::span<double> grad_beta) {
  const Tensor& xhat = cache.normalized;
  const std::size_t N = xhat.dim(0), C = xhat.dim(1), P = xhat.dim(2) * xhat.dim(3);
  const double M = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        sum_dy += grad_out[base + p];
        sum_dy_xhat += grad_out[base + p] * xhat[base + p];
      }
    }
    if (!grad_gamma.empty()) grad_gamma[c] += sum_dy_xhat;
    if (!grad_beta.empty()) grad_beta[c] += sum_dy;
    if (grad_input.empty()) continue;
    const double scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        if (cache.mode == NormMode::Train) {
          grad_input[base + p] +=
              scale * (grad_out[base + p] - sum_dy / M - xhat[base + p] * sum_dy_xhat / M);
        } else {
          grad_input[base + p] += scale * grad_out[base + p];
        }
      }
    }
  }
}

inline Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

/// Uses the forward output as the mask source (output > 0 iff input > 0).
inline void relu_backward(const Tensor& output, const Tensor& grad_out,
                          std::span<double> grad_input) {
  for (std::size_t i = 0; i < output.numel(); ++i) {
    if (output[i] > 0.0) grad_input[i] += grad_out[i];
  }
}

inline Tensor global_avg_pool_forward(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t N = input.dim(0), C = input.dim(1), P = input.dim(2) * input.dim(3);
  Tensor out({N, C});
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += input[i * P + p];
    out[i] = s / static_cast<double>(P);
  }
  return out;
}

inline void global_avg_pool_backward(const Shape& in_shape, const Tensor& grad_out,
                                     std::span<double> grad_input) {
  const std::size_t NC = in_shape[0] * in_shape[1], P = in_shape[2] * in_shape[3];
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t i = 0; i < NC; ++i) {
    for (std::size_t p = 0; p < P; ++p) grad_input[i * P + p] += grad_out[i] * inv;
  }
}

/// input (batch, in), weights (out, in), bias (out) -> (batch, out).
inline Tensor fully_connected_forward(const Tensor& input, const Tensor& weights,
                                      const Tensor& bias) {
  require_rank(input, 2, "fully_connected input");
  require_rank(weights, 2, "fully_connected weights");
  const std::size_t N = input.dim(0), I = input.dim(1), O = weights.dim(0);
  require_dim(weights.dim(1), I, "fully_connected in_features");
  require_dim(bias.numel(), O, "fully_connected bias length");
  Tensor out({N, O});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double acc = bias[o];
      for (std::size_t i = 0; i < I; ++i) acc += weights[o * I + i] * input[n * I + i];
      out[n * O + o] = acc;
    }
  }
  return out;
}

inline void fully_connected_backward(const Tensor& input, const Tensor& weights,
                                     const Tensor& grad_out, std::span<double> grad_input,
                                     std::span<double> grad_weights,
                                     std::span<double> grad_bias) {
  const std::size_t N = input.dim(0), I = input.dim(1), O = weights.dim(0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      const double g = grad_out[n * O + o];
      if (!grad_bias.empty()) grad_bias[o] += g;
      for (std::size_t i = 0; i < I; ++i) {
        if (!grad_weights.empty()) grad_weights[o * I + i] += g * input[n * I + i];
        if (!grad_input.empty()) grad_input[n * I + i] += g * weights[o * I + i];
      }
    }
  }
}

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  require_dim(labels.size(), N, "label count");
  LossResult r{0.0, Tensor({N, K})};
  const double invN = 1.0 / static_cast<double>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= K) {
      throw std::out_of_range("label " + std::to_string(label) + " outside [0, " +
                              std::to_string(K) + ")");
    }
    const double* row = logits.data().data() + n * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    r.loss += (lse - row[label]) * invN;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(row[k] - lse);
      r.grad_logits[n * K + k] = (p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * invN;
    }
  }
  return r;
}

/// value <- value - lr * grad for every learnable parameter.
template <typename ParamRange>
void sgd_step(ParamRange&& params, double learning_rate) {
  if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  for (Parameter* p : params) {
    if (!p->learnable || !p->value.has_grad()) continue;
    auto v = p->value.data();
    auto g = p->value.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
  }
}

}  // namespace kwsnas
