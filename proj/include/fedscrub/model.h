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

// Plain VGG-style CNNs whose conv output channels can be pruned by masking.
//
// A pruned channel c of conv layer l has its filter, its bias, and every
// weight that reads channel c in the next parametric layer held at exactly
// zero. Gradients at those coordinates are gated to zero before any update,
// so pruned weights never come back.

#ifndef FEDSCRUB_MODEL_H_
#define FEDSCRUB_MODEL_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedscrub/errors.h"
#include "fedscrub/nn.h"
#include "fedscrub/rng.h"
#include "fedscrub/tensor.h"

namespace fedscrub {

struct ConvLayer {
  size_t cout = 1;
  size_t k = 3;
  size_t stride = 1;
  size_t padding = 1;
  bool operator==(const ConvLayer&) const = default;
};
struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};
struct AvgPoolLayer {
  size_t window = 2;
  bool operator==(const AvgPoolLayer&) const = default;
};
struct GlobalPoolLayer {
  bool operator==(const GlobalPoolLayer&) const = default;
};
// Flattens its input, so it may follow a conv block directly.
struct DenseLayer {
  size_t out = 1;
  bool operator==(const DenseLayer&) const = default;
};

using LayerDesc =
    std::variant<ConvLayer, ReluLayer, AvgPoolLayer, GlobalPoolLayer, DenseLayer>;

struct ModelSpec {
  std::string name = "custom";
  size_t in_channels = 1;
  size_t in_height = 16;
  size_t in_width = 16;
  size_t num_classes = 10;
  std::vector<LayerDesc> layers;

  bool operator==(const ModelSpec&) const = default;
};

// Per-conv-layer keep flags; true means the channel is kept.
using ChannelMask = std::vector<std::vector<bool>>;

// Channels to prune, indexed by conv ordinal (0 = first conv layer).
struct PrunePlan {
  double ratio = 0.0;
  std::vector<std::vector<size_t>> channels;

  bool empty() const {
    return std::all_of(channels.begin(), channels.end(),
                       [](const auto& c) { return c.empty(); });
  }
  size_t total() const {
    size_t t = 0;
    for (const auto& c : channels) t += c.size();
    return t;
  }
};

// Shape and parameter placement of one layer after spec resolution.
struct LayerInfo {
  LayerDesc desc;
  Shape in;   // n = 1
  Shape out;  // n = 1
  size_t weight_offset = 0;
  size_t weight_count = 0;
  size_t bias_offset = 0;
  size_t bias_count = 0;
  std::optional<size_t> conv_ordinal;
};

// Activations recorded by a forward pass: act[0] is the input and act[i + 1]
// is the output of layer i.
struct ForwardTrace {
  std::vector<Tensor> act;
};

class PrunableModel {
 public:
  PrunableModel() = default;

  // Resolves shapes and allocates zeroed parameters. Throws ConfigError if
  // the layers do not compose.
  explicit PrunableModel(ModelSpec spec) : spec_(std::move(spec)) {
    Resolve();
    params_.assign(param_count_, 0.0f);
    mask_.clear();
    for (size_t li : conv_layers_) {
      mask_.emplace_back(std::get<ConvLayer>(layers_[li].desc).cout, true);
    }
    RebuildMaskedIndices();
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  size_t num_params() const { return params_.size(); }
  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }
  size_t num_classes() const { return spec_.num_classes; }

  size_t num_conv_layers() const { return conv_layers_.size(); }
  // Index into layers() of the conv layer with the given ordinal.
  size_t conv_layer_index(size_t ordinal) const {
    return conv_layers_.at(ordinal);
  }
  size_t conv_channels(size_t ordinal) const {
    return std::get<ConvLayer>(layers_[conv_layers_.at(ordinal)].desc).cout;
  }

  const ChannelMask& mask() const { return mask_; }
  // Parameter indices held at zero by the current mask, ascending.
  const std::vector<size_t>& masked_indices() const { return masked_indices_; }
  size_t pruned_channel_count() const {
    size_t n = 0;
    for (const auto& m : mask_) n += std::count(m.begin(), m.end(), false);
    return n;
  }

  ConvView conv_view(size_t layer_index) const {
    const LayerInfo& L = layers_.at(layer_index);
    const auto& c = std::get<ConvLayer>(L.desc);
    return ConvView{Slice(L.weight_offset, L.weight_count),
                    Slice(L.bias_offset, L.bias_count),
                    c.cout,
                    L.in.c,
                    c.k,
                    c.stride,
                    c.padding};
  }
  DenseView dense_view(size_t layer_index) const {
    const LayerInfo& L = layers_.at(layer_index);
    const auto& d = std::get<DenseLayer>(L.desc);
    return DenseView{Slice(L.weight_offset, L.weight_count),
                     Slice(L.bias_offset, L.bias_count), d.out,
                     L.in.per_sample()};
  }

  // He-style scaled uniform init: U(-a, a) with a = sqrt(6 / fan_in), so the
  // weight variance is 2 / fan_in. Biases start at zero.
  void Initialize(uint64_t seed) {
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), 0.0f);
    for (const LayerInfo& L : layers_) {
      if (L.weight_count == 0) continue;
      const double fan_in = static_cast<double>(FanIn(L));
      const double a = std::sqrt(6.0 / fan_in);
      for (size_t i = 0; i < L.weight_count; ++i) {
        params_[L.weight_offset + i] = static_cast<float>(rng.Uniform(-a, a));
      }
    }
    ZeroMasked();
  }

  // Installs a mask and zeroes every parameter it covers. Throws
  // PruneRefusedError if a conv layer would lose all channels.
  void SetMask(ChannelMask mask) {
    if (mask.size() != mask_.size()) {
      throw DimensionError("mask has " + std::to_string(mask.size()) +
                           " layers, model has " +
                           std::to_string(mask_.size()));
    }
    for (size_t l = 0; l < mask.size(); ++l) {
      if (mask[l].size() != mask_[l].size()) {
        throw DimensionError("mask layer " + std::to_string(l) +
                             " has wrong channel count");
      }
      if (std::none_of(mask[l].begin(), mask[l].end(),
                       [](bool b) { return b; })) {
        throw PruneRefusedError("mask would remove every channel of conv layer " +
                                std::to_string(l));
      }
    }
    mask_ = std::move(mask);
    RebuildMaskedIndices();
    ZeroMasked();
  }

  void ZeroMasked() {
    for (size_t i : masked_indices_) params_[i] = 0.0f;
  }
  void GateGradient(std::span<float> grad) const {
    for (size_t i : masked_indices_) grad[i] = 0.0f;
  }

  Tensor Forward(const Tensor& x, ForwardTrace* trace = nullptr) const {
    CheckInput(x);
    if (trace != nullptr) {
      trace->act.clear();
      trace->act.reserve(layers_.size() + 1);
      trace->act.push_back(x);
    }
    Tensor cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      cur = ForwardLayer(i, cur);
      if (trace != nullptr) trace->act.push_back(cur);
    }
    return cur;
  }

  // Backpropagates dlogits through a recorded trace and adds the parameter
  // gradient into `grad`. The mask gate is NOT applied here.
  void Backward(const ForwardTrace& trace, const Tensor& dlogits,
                std::span<float> grad) const {
    if (grad.size() != params_.size()) {
      throw DimensionError("gradient buffer has " +
                           std::to_string(grad.size()) + " entries, model has " +
                           std::to_string(params_.size()));
    }
    if (trace.act.size() != layers_.size() + 1 ||
        dlogits.shape() != trace.act.back().shape()) {
      throw DimensionError("backward: trace does not match model");
    }
    Tensor g = dlogits;
    for (size_t ii = layers_.size(); ii-- > 0;) {
      const LayerInfo& L = layers_[ii];
      const Tensor& in = trace.act[ii];
      const bool need_input_grad = ii > 0;
      g = std::visit(
          [&](const auto& d) -> Tensor {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
              Tensor dx = need_input_grad ? Tensor(in.shape()) : Tensor();
              Conv2dBackwardAccumulate(
                  in, conv_view(ii), g,
                  grad.subspan(L.weight_offset, L.weight_count),
                  grad.subspan(L.bias_offset, L.bias_count),
                  need_input_grad ? &dx : nullptr);
              return dx;
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
              return ReluBackward(in, g);
            } else if constexpr (std::is_same_v<T, AvgPoolLayer>) {
              return AvgPool2dBackward(in.shape(), d.window, g);
            } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
              return GlobalAvgPoolBackward(in.shape(), g);
            } else {
              Tensor dx = need_input_grad ? Tensor(in.shape()) : Tensor();
              DenseBackwardAccumulate(
                  in, dense_view(ii), g,
                  grad.subspan(L.weight_offset, L.weight_count),
                  grad.subspan(L.bias_offset, L.bias_count),
                  need_input_grad ? &dx : nullptr);
              return dx;
            }
          },
          L.desc);
    }
  }

  // Adds the summed (not averaged) cross-entropy gradient of a batch into
  // `grad` and returns the summed loss. The mask gate is applied.
  double AccumulateGradient(const Tensor& x, std::span<const int> labels,
                            std::span<float> grad) const {
    if (labels.size() != x.n()) {
      throw DimensionError("batch has " + std::to_string(x.n()) +
                           " images but " + std::to_string(labels.size()) +
                           " labels");
    }
    ForwardTrace trace;
    const Tensor logits = Forward(x, &trace);
    Tensor dlogits(logits.shape());
    double loss = 0.0;
    for (size_t n = 0; n < x.n(); ++n) {
      const auto lg = SoftmaxCrossEntropy(logits.Sample(n),
                                          static_cast<size_t>(labels[n]));
      loss += lg.loss;
      std::copy(lg.grad.begin(), lg.grad.end(), dlogits.Sample(n).begin());
    }
    Backward(trace, dlogits, grad);
    GateGradient(grad);
    return loss;
  }

  bool operator==(const PrunableModel& o) const {
    return spec_ == o.spec_ && mask_ == o.mask_ && params_ == o.params_;
  }

 private:
  std::span<const float> Slice(size_t off, size_t n) const {
    return std::span<const float>(params_).subspan(off, n);
  }

  static size_t FanIn(const LayerInfo& L) {
    if (const auto* c = std::get_if<ConvLayer>(&L.desc)) {
      return L.in.c * c->k * c->k;
    }
    return L.in.per_sample();
  }

  void CheckInput(const Tensor& x) const {
    if (x.c() != spec_.in_channels || x.h() != spec_.in_height ||
        x.w() != spec_.in_width) {
      throw DimensionError("model expects Nx" +
                           std::to_string(spec_.in_channels) + "x" +
                           std::to_string(spec_.in_height) + "x" +
                           std::to_string(spec_.in_width) + " input, got " +
                           x.shape().ToString());
    }
  }

  Tensor ForwardLayer(size_t i, const Tensor& in) const {
    return std::visit(
        [&](const auto& d) -> Tensor {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            return Conv2dForward(in, conv_view(i));
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            return ReluForward(in);
          } else if constexpr (std::is_same_v<T, AvgPoolLayer>) {
            return AvgPool2dForward(in, d.window);
          } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
            return GlobalAvgPoolForward(in);
          } else {
            return DenseForward(in, dense_view(i));
          }
        },
        layers_[i].desc);
  }

  void Resolve() {
    if (spec_.num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (spec_.in_channels == 0 || spec_.in_height == 0 || spec_.in_width == 0) {
      throw ConfigError("input shape must be non-empty");
    }
    if (spec_.layers.empty()) throw ConfigError("model has no layers");
    layers_.clear();
    conv_layers_.clear();
    Shape cur{1, spec_.in_channels, spec_.in_height, spec_.in_width};
    size_t offset = 0;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      LayerInfo L;
      L.desc = spec_.layers[i];
      L.in = cur;
      std::visit(
          [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
              if (d.cout == 0 || d.k == 0 || d.stride == 0) {
                throw ConfigError("layer " + std::to_string(i) +
                                  ": conv extents must be >= 1");
              }
              try {
                L.out = Conv2dOutputShape(cur, d.cout, d.k, d.stride, d.padding);
              } catch (const DimensionError& e) {
                throw ConfigError("layer " + std::to_string(i) + ": " + e.what());
              }
              L.weight_count = d.cout * cur.c * d.k * d.k;
              L.bias_count = d.cout;
              L.conv_ordinal = conv_layers_.size();
              conv_layers_.push_back(i);
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
              L.out = cur;
            } else if constexpr (std::is_same_v<T, AvgPoolLayer>) {
              if (d.window == 0 || cur.h % d.window != 0 ||
                  cur.w % d.window != 0) {
                throw ConfigError("layer " + std::to_string(i) +
                                  ": pool window does not divide " +
                                  cur.ToString());
              }
              L.out = Shape{1, cur.c, cur.h / d.window, cur.w / d.window};
            } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
              L.out = Shape{1, cur.c, 1, 1};
            } else {
              if (d.out == 0) {
                throw ConfigError("layer " + std::to_string(i) +
                                  ": dense out must be >= 1");
              }
              L.out = Shape{1, d.out, 1, 1};
              L.weight_count = d.out * cur.per_sample();
              L.bias_count = d.out;
            }
          },
          L.desc);
      L.weight_offset = offset;
      L.bias_offset = offset + L.weight_count;
      offset += L.weight_count + L.bias_count;
      cur = L.out;
      layers_.push_back(L);
    }
    if (conv_layers_.empty()) throw ConfigError("model needs a conv layer");
    const auto* last = std::get_if<DenseLayer>(&spec_.layers.back());
    if (last == nullptr) throw ConfigError("final layer must be dense");
    if (last->out != spec_.num_classes) {
      throw ConfigError("final dense outputs " + std::to_string(last->out) +
                        " but num_classes is " +
                        std::to_string(spec_.num_classes));
    }
    param_count_ = offset;
  }

  void RebuildMaskedIndices() {
    masked_indices_.clear();
    for (size_t ord = 0; ord < conv_layers_.size(); ++ord) {
      const size_t li = conv_layers_[ord];
      const LayerInfo& L = layers_[li];
      const auto& c = std::get<ConvLayer>(L.desc);
      const size_t filter = L.in.c * c.k * c.k;
      // Next parametric layer consumes this layer's channels.
      size_t consumer = li + 1;
      while (consumer < layers_.size() && layers_[consumer].weight_count == 0) {
        ++consumer;
      }
      for (size_t ch = 0; ch < c.cout; ++ch) {
        if (mask_[ord][ch]) continue;
        for (size_t j = 0; j < filter; ++j) {
          masked_indices_.push_back(L.weight_offset + ch * filter + j);
        }
        masked_indices_.push_back(L.bias_offset + ch);
        if (consumer >= layers_.size()) continue;
        const LayerInfo& C = layers_[consumer];
        if (const auto* cc = std::get_if<ConvLayer>(&C.desc)) {
          const size_t kk = cc->k * cc->k;
          for (size_t o = 0; o < cc->cout; ++o) {
            const size_t base = C.weight_offset + (o * C.in.c + ch) * kk;
            for (size_t j = 0; j < kk; ++j) masked_indices_.push_back(base + j);
          }
        } else {
          const auto& d = std::get<DenseLayer>(C.desc);
          const size_t in = C.in.per_sample();
          const size_t hw = C.in.h * C.in.w;
          for (size_t o = 0; o < d.out; ++o) {
            const size_t base = C.weight_offset + o * in + ch * hw;
            for (size_t j = 0; j < hw; ++j) masked_indices_.push_back(base + j);
          }
        }
      }
    }
    std::sort(masked_indices_.begin(), masked_indices_.end());
    masked_indices_.erase(
        std::unique(masked_indices_.begin(), masked_indices_.end()),
        masked_indices_.end());
  }

  ModelSpec spec_;
  std::vector<LayerInfo> layers_;
  std::vector<size_t> conv_layers_;
  size_t param_count_ = 0;
  std::vector<float> params_;
  ChannelMask mask_;
  std::vector<size_t> masked_indices_;
};

inline PrunableModel BuildModel(const ModelSpec& spec, uint64_t seed) {
  PrunableModel m(spec);
  m.Initialize(seed);
  return m;
}

// Returns a copy of `model` with the channels in `plan` masked out on top of
// any existing mask.
inline PrunableModel ApplyMask(const PrunableModel& model,
                               const PrunePlan& plan) {
  if (plan.channels.size() > model.num_conv_layers()) {
    throw IndexError("prune plan names " + std::to_string(plan.channels.size()) +
                     " conv layers, model has " +
                     std::to_string(model.num_conv_layers()));
  }
  ChannelMask mask = model.mask();
  for (size_t l = 0; l < plan.channels.size(); ++l) {
    for (size_t ch : plan.channels[l]) {
      if (ch >= mask[l].size()) {
        throw IndexError("channel " + std::to_string(ch) +
                         " out of range for conv layer " + std::to_string(l));
      }
      mask[l][ch] = false;
    }
  }
  PrunableModel out = model;
  out.SetMask(std::move(mask));
  return out;
}

// Spec helpers for the built-in architectures.
namespace zoo {

// Three conv blocks (conv-relu, with 2x2 average pooling after the first two)
// followed by global average pooling and a dense head.
inline ModelSpec SmallCnn(size_t in_channels, size_t size, size_t num_classes,
                          size_t c1 = 8, size_t c2 = 16, size_t c3 = 16) {
  ModelSpec s;
  s.name = "small_cnn";
  s.in_channels = in_channels;
  s.in_height = size;
  s.in_width = size;
  s.num_classes = num_classes;
  s.layers = {ConvLayer{c1, 3, 1, 1}, ReluLayer{},      AvgPoolLayer{2},
              ConvLayer{c2, 3, 1, 1}, ReluLayer{},      AvgPoolLayer{2},
              ConvLayer{c3, 3, 1, 1}, ReluLayer{},      GlobalPoolLayer{},
              DenseLayer{num_classes}};
  return s;
}

// Two conv blocks with 2x2 pooling after each, then a dense head.
inline ModelSpec TinyCnn(size_t in_channels, size_t size, size_t num_classes,
                         size_t c1 = 8, size_t c2 = 16) {
  ModelSpec s;
  s.name = "tiny_cnn";
  s.in_channels = in_channels;
  s.in_height = size;
  s.in_width = size;
  s.num_classes = num_classes;
  s.layers = {ConvLayer{c1, 3, 1, 1}, ReluLayer{}, AvgPoolLayer{2},
              ConvLayer{c2, 3, 1, 1}, ReluLayer{}, AvgPoolLayer{2},
              DenseLayer{num_classes}};
  return s;
}

}  // namespace zoo

}  // namespace fedscrub

#endif  // FEDSCRUB_MODEL_H_
