// Copyright 2026 The FedScrub Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Numerical kernels for small CNNs: convolution, ReLU, average pooling, a
// dense head, softmax cross-entropy and plain SGD. Every forward pass has an
// explicit backward companion; there is no autodiff graph.
//
// All kernels run in 32-bit floats with a fixed summation order, so repeated
// calls on identical inputs give bit-identical results.

#ifndef FEDSCRUB_NN_H_
#define FEDSCRUB_NN_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedscrub/errors.h"
#include "fedscrub/tensor.h"

namespace fedscrub {

// Non-owning view over convolution parameters. `weights` is Cout x Cin x K x K.
struct ConvView {
  std::span<const float> weights;
  std::span<const float> bias;
  size_t cout = 0;
  size_t cin = 0;
  size_t k = 0;
  size_t stride = 1;
  size_t padding = 0;
};

// Owning convolution kernel.
struct ConvKernel {
  size_t cout = 1;
  size_t cin = 1;
  size_t k = 1;
  size_t stride = 1;
  size_t padding = 0;
  std::vector<float> weights;  // cout * cin * k * k
  std::vector<float> bias;     // cout

  ConvKernel() = default;
  ConvKernel(size_t cout, size_t cin, size_t k, size_t stride = 1,
             size_t padding = 0)
      : cout(cout), cin(cin), k(k), stride(stride), padding(padding),
        weights(cout * cin * k * k, 0.0f), bias(cout, 0.0f) {
    if (cout == 0 || cin == 0 || k == 0 || stride == 0) {
      throw ConfigError("conv kernel extents and stride must be >= 1");
    }
  }

  float& w(size_t o, size_t i, size_t kh, size_t kw) {
    return weights[((o * cin + i) * k + kh) * k + kw];
  }

  ConvView view() const {
    return ConvView{weights, bias, cout, cin, k, stride, padding};
  }
};

// Non-owning view over a dense layer: weights are out x in, row-major.
struct DenseView {
  std::span<const float> weights;
  std::span<const float> bias;
  size_t out = 0;
  size_t in = 0;
};

struct SgdConfig {
  float learning_rate = 0.1f;
  float weight_decay = 0.0f;
};

namespace internal {

// Output positions o in [lo, hi) with 0 <= o * stride + offset < in_extent.
inline std::pair<long, long> ValidRange(long out_extent, long in_extent,
                                        long stride, long offset) {
  long lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  long last = in_extent - 1 - offset;
  long hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

inline size_t ConvOutExtent(size_t in, size_t k, size_t stride,
                            size_t padding) {
  if (in + 2 * padding < k) return 0;
  return (in + 2 * padding - k) / stride + 1;
}

}  // namespace internal

// Output extents of a convolution, or a DimensionError if they collapse.
inline Shape Conv2dOutputShape(const Shape& in, size_t cout, size_t k,
                               size_t stride, size_t padding) {
  const size_t oh = internal::ConvOutExtent(in.h, k, stride, padding);
  const size_t ow = internal::ConvOutExtent(in.w, k, stride, padding);
  if (oh == 0 || ow == 0) {
    throw DimensionError("conv output is empty for input " + in.ToString() +
                         " with kernel " + std::to_string(k));
  }
  return Shape{in.n, cout, oh, ow};
}

namespace internal {

// Unfolds one sample into a (cin * k * k) x (oh * ow) column matrix; padded
// positions hold zero.
inline void Im2Col(const float* x, size_t cin, long H, long W, long K, long s,
                   long p, long OH, long OW, float* col) {
  for (size_t ci = 0; ci < cin; ++ci) {
    const float* xplane = x + ci * H * W;
    for (long kh = 0; kh < K; ++kh) {
      const auto [oh0, oh1] = ValidRange(OH, H, s, kh - p);
      for (long kw = 0; kw < K; ++kw) {
        const auto [ow0, ow1] = ValidRange(OW, W, s, kw - p);
        float* crow = col + ((ci * K + kh) * K + kw) * OH * OW;
        std::fill(crow, crow + OH * OW, 0.0f);
        for (long oh = oh0; oh < oh1; ++oh) {
          const float* xrow = xplane + (oh * s + kh - p) * W + (kw - p);
          float* c = crow + oh * OW;
          for (long ow = ow0; ow < ow1; ++ow) c[ow] = xrow[ow * s];
        }
      }
    }
  }
}

// Inverse scatter-add of Im2Col.
inline void Col2ImAdd(const float* col, size_t cin, long H, long W, long K,
                      long s, long p, long OH, long OW, float* dx) {
  for (size_t ci = 0; ci < cin; ++ci) {
    float* dplane = dx + ci * H * W;
    for (long kh = 0; kh < K; ++kh) {
      const auto [oh0, oh1] = ValidRange(OH, H, s, kh - p);
      for (long kw = 0; kw < K; ++kw) {
        const auto [ow0, ow1] = ValidRange(OW, W, s, kw - p);
        const float* crow = col + ((ci * K + kh) * K + kw) * OH * OW;
        for (long oh = oh0; oh < oh1; ++oh) {
          float* drow = dplane + (oh * s + kh - p) * W + (kw - p);
          const float* c = crow + oh * OW;
          for (long ow = ow0; ow < ow1; ++ow) drow[ow * s] += c[ow];
        }
      }
    }
  }
}

}  // namespace internal

// Cross-correlation (no kernel flip) with symmetric zero padding.
//
// Each output element accumulates its terms in (ci, kh, kw) order starting
// from zero and adds the bias last, which is the order of the textbook
// six-deep loop; padded taps contribute an exact +0.
inline Tensor Conv2dForward(const Tensor& input, const ConvView& k) {
  if (input.c() != k.cin) {
    throw DimensionError("conv input " + input.shape().ToString() +
                         " does not match kernel " + std::to_string(k.cout) +
                         "x" + std::to_string(k.cin) + "x" +
                         std::to_string(k.k) + "x" + std::to_string(k.k));
  }
  const Shape os = Conv2dOutputShape(input.shape(), k.cout, k.k, k.stride,
                                     k.padding);
  Tensor out(os);
  const long H = static_cast<long>(input.h()), W = static_cast<long>(input.w());
  const long OH = static_cast<long>(os.h), OW = static_cast<long>(os.w);
  const long s = static_cast<long>(k.stride), p = static_cast<long>(k.padding);
  const long K = static_cast<long>(k.k);
  const size_t rows = k.cin * k.k * k.k;
  const size_t P = static_cast<size_t>(OH * OW);
  std::vector<float> col(rows * P);
  for (size_t n = 0; n < os.n; ++n) {
    internal::Im2Col(input.data().data() + n * k.cin * H * W, k.cin, H, W, K, s,
                     p, OH, OW, col.data());
    for (size_t co = 0; co < k.cout; ++co) {
      float* y = out.data().data() + (n * k.cout + co) * P;
      const float* wrow = k.weights.data() + co * rows;
      for (size_t r = 0; r < rows; ++r) {
        const float wv = wrow[r];
        const float* c = col.data() + r * P;
        for (size_t i = 0; i < P; ++i) y[i] += wv * c[i];
      }
      const float b = k.bias[co];
      for (size_t i = 0; i < P; ++i) y[i] += b;
    }
  }
  return out;
}

// Accumulating convolution backward. Adds into weight_grad / bias_grad and,
// when input_grad is non-null, into *input_grad (which must be input-shaped).
inline void Conv2dBackwardAccumulate(const Tensor& input, const ConvView& k,
                                     const Tensor& upstream,
                                     std::span<float> weight_grad,
                                     std::span<float> bias_grad,
                                     Tensor* input_grad) {
  const Shape os = Conv2dOutputShape(input.shape(), k.cout, k.k, k.stride,
                                     k.padding);
  if (input.c() != k.cin || upstream.shape() != os) {
    throw DimensionError("conv backward: upstream " +
                         upstream.shape().ToString() + " vs expected " +
                         os.ToString());
  }
  if (weight_grad.size() != k.weights.size() ||
      bias_grad.size() != k.bias.size()) {
    throw DimensionError("conv backward: gradient buffers mis-sized");
  }
  if (input_grad != nullptr && input_grad->shape() != input.shape()) {
    throw DimensionError("conv backward: input gradient " +
                         input_grad->shape().ToString() + " vs input " +
                         input.shape().ToString());
  }
  const long H = static_cast<long>(input.h()), W = static_cast<long>(input.w());
  const long OH = static_cast<long>(os.h), OW = static_cast<long>(os.w);
  const long s = static_cast<long>(k.stride), p = static_cast<long>(k.padding);
  const long K = static_cast<long>(k.k);
  const size_t rows = k.cin * k.k * k.k;
  const size_t P = static_cast<size_t>(OH * OW);
  std::vector<float> col(rows * P);
  std::vector<float> col_t(rows * P);
  std::vector<float> acc(rows);
  std::vector<float> dcol(input_grad != nullptr ? rows * P : 0);
  for (size_t n = 0; n < os.n; ++n) {
    internal::Im2Col(input.data().data() + n * k.cin * H * W, k.cin, H, W, K, s,
                     p, OH, OW, col.data());
    for (size_t r = 0; r < rows; ++r) {
      for (size_t i = 0; i < P; ++i) col_t[i * rows + r] = col[r * P + i];
    }
    if (input_grad != nullptr) std::fill(dcol.begin(), dcol.end(), 0.0f);
    for (size_t co = 0; co < k.cout; ++co) {
      const float* g = upstream.data().data() + (n * k.cout + co) * P;
      float bsum = 0.0f;
      for (size_t i = 0; i < P; ++i) bsum += g[i];
      bias_grad[co] += bsum;
      std::fill(acc.begin(), acc.end(), 0.0f);
      for (size_t i = 0; i < P; ++i) {
        const float gi = g[i];
        const float* c = col_t.data() + i * rows;
        for (size_t r = 0; r < rows; ++r) acc[r] += c[r] * gi;
      }
      float* dw = weight_grad.data() + co * rows;
      for (size_t r = 0; r < rows; ++r) dw[r] += acc[r];
      if (input_grad != nullptr) {
        const float* wrow = k.weights.data() + co * rows;
        for (size_t r = 0; r < rows; ++r) {
          const float wv = wrow[r];
          float* dc = dcol.data() + r * P;
          for (size_t i = 0; i < P; ++i) dc[i] += wv * g[i];
        }
      }
    }
    if (input_grad != nullptr) {
      internal::Col2ImAdd(dcol.data(), k.cin, H, W, K, s, p, OH, OW,
                          input_grad->data().data() + n * k.cin * H * W);
    }
  }
}

struct ConvGrads {
  Tensor input_grad;
  std::vector<float> weight_grad;
  std::vector<float> bias_grad;
};

inline ConvGrads Conv2dBackward(const Tensor& input, const ConvView& k,
                                const Tensor& upstream) {
  ConvGrads g{Tensor(input.shape()), std::vector<float>(k.weights.size()),
              std::vector<float>(k.bias.size())};
  Conv2dBackwardAccumulate(input, k, upstream, g.weight_grad, g.bias_grad,
                           &g.input_grad);
  return g;
}

inline Tensor ReluForward(const Tensor& x) {
  Tensor y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return y;
}

// Gradient passes only where the forward input was strictly positive.
inline Tensor ReluBackward(const Tensor& x, const Tensor& upstream) {
  if (x.shape() != upstream.shape()) {
    throw DimensionError("relu backward: " + x.shape().ToString() + " vs " +
                         upstream.shape().ToString());
  }
  Tensor dx(x.shape());
  auto in = x.data();
  auto g = upstream.data();
  auto out = dx.data();
  for (size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? g[i] : 0.0f;
  return dx;
}

// Non-overlapping window x window average pooling.
inline Tensor AvgPool2dForward(const Tensor& x, size_t window) {
  if (window == 0 || x.h() % window != 0 || x.w() % window != 0) {
    throw DimensionError("avg_pool2d window " + std::to_string(window) +
                         " does not divide " + x.shape().ToString());
  }
  const size_t oh = x.h() / window, ow = x.w() / window;
  Tensor y(Shape{x.n(), x.c(), oh, ow});
  const float scale = 1.0f / static_cast<float>(window * window);
  for (size_t n = 0; n < x.n(); ++n) {
    for (size_t c = 0; c < x.c(); ++c) {
      for (size_t i = 0; i < oh; ++i) {
        for (size_t j = 0; j < ow; ++j) {
          float sum = 0.0f;
          for (size_t a = 0; a < window; ++a) {
            for (size_t b = 0; b < window; ++b) {
              sum += x.at(n, c, i * window + a, j * window + b);
            }
          }
          y.at(n, c, i, j) = sum * scale;
        }
      }
    }
  }
  return y;
}

inline Tensor AvgPool2dBackward(const Shape& input_shape, size_t window,
                                const Tensor& upstream) {
  if (window == 0 || input_shape.h % window != 0 ||
      input_shape.w % window != 0 ||
      upstream.shape() != Shape{input_shape.n, input_shape.c,
                                input_shape.h / window,
                                input_shape.w / window}) {
    throw DimensionError("avg_pool2d backward: upstream " +
                         upstream.shape().ToString() + " for input " +
                         input_shape.ToString());
  }
  Tensor dx(input_shape);
  const float scale = 1.0f / static_cast<float>(window * window);
  for (size_t n = 0; n < input_shape.n; ++n) {
    for (size_t c = 0; c < input_shape.c; ++c) {
      for (size_t h = 0; h < input_shape.h; ++h) {
        for (size_t w = 0; w < input_shape.w; ++w) {
          dx.at(n, c, h, w) = upstream.at(n, c, h / window, w / window) * scale;
        }
      }
    }
  }
  return dx;
}

// Collapses each H x W map to its arithmetic mean; output is N x C x 1 x 1.
inline Tensor GlobalAvgPoolForward(const Tensor& x) {
  if (x.h() == 0 || x.w() == 0) {
    throw DimensionError("global pool on empty map " + x.shape().ToString());
  }
  Tensor y(Shape{x.n(), x.c(), 1, 1});
  const size_t hw = x.h() * x.w();
  const auto in = x.data();
  for (size_t nc = 0; nc < x.n() * x.c(); ++nc) {
    float sum = 0.0f;
    for (size_t i = 0; i < hw; ++i) sum += in[nc * hw + i];
    y.data()[nc] = sum / static_cast<float>(hw);
  }
  return y;
}

inline Tensor GlobalAvgPoolBackward(const Shape& input_shape,
                                    const Tensor& upstream) {
  if (upstream.shape() != Shape{input_shape.n, input_shape.c, 1, 1}) {
    throw DimensionError("global pool backward: upstream " +
                         upstream.shape().ToString() + " for input " +
                         input_shape.ToString());
  }
  Tensor dx(input_shape);
  const size_t hw = input_shape.h * input_shape.w;
  const float scale = 1.0f / static_cast<float>(hw);
  for (size_t nc = 0; nc < input_shape.n * input_shape.c; ++nc) {
    const float g = upstream.data()[nc] * scale;
    for (size_t i = 0; i < hw; ++i) dx.data()[nc * hw + i] = g;
  }
  return dx;
}

// Fully connected layer over the flattened C*H*W features of each sample.
// Output is N x out x 1 x 1.
inline Tensor DenseForward(const Tensor& x, const DenseView& d) {
  if (x.shape().per_sample() != d.in) {
    throw DimensionError("dense input " + x.shape().ToString() +
                         " does not flatten to " + std::to_string(d.in));
  }
  Tensor y(Shape{x.n(), d.out, 1, 1});
  for (size_t n = 0; n < x.n(); ++n) {
    const auto xs = x.Sample(n);
    for (size_t o = 0; o < d.out; ++o) {
      const float* wrow = d.weights.data() + o * d.in;
      float sum = 0.0f;
      for (size_t i = 0; i < d.in; ++i) sum += wrow[i] * xs[i];
      y.at(n, o, 0, 0) = sum + d.bias[o];
    }
  }
  return y;
}

inline void DenseBackwardAccumulate(const Tensor& x, const DenseView& d,
                                    const Tensor& upstream,
                                    std::span<float> weight_grad,
                                    std::span<float> bias_grad,
                                    Tensor* input_grad) {
  if (x.shape().per_sample() != d.in ||
      upstream.shape() != Shape{x.n(), d.out, 1, 1} ||
      weight_grad.size() != d.out * d.in || bias_grad.size() != d.out) {
    throw DimensionError("dense backward: upstream " +
                         upstream.shape().ToString() + " for input " +
                         x.shape().ToString());
  }
  for (size_t n = 0; n < x.n(); ++n) {
    const auto xs = x.Sample(n);
    float* dxs = input_grad != nullptr ? input_grad->Sample(n).data() : nullptr;
    for (size_t o = 0; o < d.out; ++o) {
      const float g = upstream.at(n, o, 0, 0);
      bias_grad[o] += g;
      float* dw = weight_grad.data() + o * d.in;
      const float* wrow = d.weights.data() + o * d.in;
      for (size_t i = 0; i < d.in; ++i) dw[i] += g * xs[i];
      if (dxs != nullptr) {
        for (size_t i = 0; i < d.in; ++i) dxs[i] += g * wrow[i];
      }
    }
  }
}

struct LossAndGrad {
  float loss = 0.0f;
  std::vector<float> grad;
};

// loss = -log softmax(logits)[label]; grad = softmax(logits) - onehot(label).
inline LossAndGrad SoftmaxCrossEntropy(std::span<const float> logits,
                                       size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  const float mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (float v : logits) z += std::exp(static_cast<double>(v - mx));
  const double log_z = std::log(z) + mx;
  LossAndGrad out;
  out.loss = static_cast<float>(log_z - logits[label]);
  out.grad.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = static_cast<float>(std::exp(logits[i] - log_z)) -
                  (i == label ? 1.0f : 0.0f);
  }
  return out;
}

// p <- p - lr * (g + wd * p)
inline void SgdStep(std::span<float> params, std::span<const float> grads,
                    const SgdConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd: " + std::to_string(params.size()) +
                         " params vs " + std::to_string(grads.size()) +
                         " grads");
  }
  if (!(cfg.learning_rate > 0.0f)) {
    throw ConfigError("sgd learning rate must be positive");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    params[i] -= cfg.learning_rate * (grads[i] + cfg.weight_decay * params[i]);
  }
}

}  // namespace fedscrub

#endif  // FEDSCRUB_NN_H_
