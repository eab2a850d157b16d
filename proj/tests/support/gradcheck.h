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

// Randomized gradient checks: every backward kernel against central
// differences of the double-precision reference. Shared by the unit tests and
// the acceptance runner.

#ifndef FEDSCRUB_TESTS_SUPPORT_GRADCHECK_H_
#define FEDSCRUB_TESTS_SUPPORT_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/model.h"
#include "fedscrub/nn.h"
#include "fedscrub/rng.h"
#include "support/reference_nn.h"

namespace fedscrub::testing {

inline constexpr double kGradRelTol = 1e-3;
// Float kernels carry ~1e-7 relative rounding; differences below this floor
// are rounding noise on near-zero gradients, not derivative errors.
inline constexpr double kGradAbsFloor = 1e-5;
inline constexpr double kGradRelScale = 1e-3;

struct GradCheckOutcome {
  std::string kind;
  size_t compared = 0;
  size_t mismatches = 0;
  // Relative error over entries with |gradient| >= kGradRelScale, where float
  // rounding is far below the tolerance.
  double max_rel_error = 0.0;
  size_t floor_only = 0;  // entries whose gradients are both below the scale
  std::string first_failure;
};

class GradChecker {
 public:
  explicit GradChecker(std::string kind) { out_.kind = std::move(kind); }

  void Compare(const std::string& what, size_t i, double analytic, double numeric) {
    ++out_.compared;
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale >= kGradRelScale) {
      out_.max_rel_error = std::max(out_.max_rel_error, diff / scale);
    } else {
      ++out_.floor_only;
    }
    if (!GradientsAgree(analytic, numeric, kGradRelTol, kGradAbsFloor)) {
      if (out_.mismatches++ == 0) {
        out_.first_failure = what + "[" + std::to_string(i) + "] analytic " +
                             std::to_string(analytic) + " numeric " +
                             std::to_string(numeric);
      }
    }
  }

  // Checks every coordinate of `x` against d f / d x_i.
  void CompareAll(const std::string& what, std::span<const float> analytic,
                  const std::vector<double>& x,
                  const std::function<double(const std::vector<double>&)>& f,
                  double h) {
    for (size_t i = 0; i < x.size(); ++i) {
      Compare(what, i, analytic[i], CentralDifference(f, x, i, h));
    }
  }

  GradCheckOutcome Take() { return std::move(out_); }

 private:
  GradCheckOutcome out_;
};

namespace internal {

inline Tensor Uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (float& v : t.data()) v = static_cast<float>(rng.Uniform(lo, hi));
  return t;
}

// Values at least `gap` away from zero so a ReLU kink never sits inside the
// difference stencil.
inline Tensor AwayFromZero(Shape s, Rng& rng, double gap) {
  Tensor t(s);
  for (float& v : t.data()) {
    const double m = rng.Uniform(gap, 1.0);
    v = static_cast<float>(rng.Below(2) ? m : -m);
  }
  return t;
}

inline std::vector<double> ToDouble(std::span<const float> v) {
  return {v.begin(), v.end()};
}

inline double Dot(const DTensor& y, const std::vector<double>& r) {
  return std::inner_product(y.v.begin(), y.v.end(), r.begin(), 0.0);
}

inline DTensor WithValues(const Tensor& like, const std::vector<double>& v) {
  DTensor d(like);
  d.v = v;
  return d;
}

inline GradCheckOutcome ConvCase(Rng& rng) {
  const size_t k = 1 + rng.Below(3), s = 1 + rng.Below(2), p = rng.Below(2);
  const Tensor x = Uniform(Shape{1 + rng.Below(2), 1 + rng.Below(3),
                                 k + 1 + rng.Below(4), k + 1 + rng.Below(4)},
                           rng);
  ConvKernel kern(1 + rng.Below(3), x.c(), k, s, p);
  for (float& v : kern.weights) v = static_cast<float>(rng.Uniform(-1, 1));
  for (float& v : kern.bias) v = static_cast<float>(rng.Uniform(-1, 1));
  const Tensor r = Uniform(Conv2dOutputShape(x.shape(), kern.cout, k, s, p), rng);
  const ConvGrads g = Conv2dBackward(x, kern.view(), r);
  const auto rd = ToDouble(r.data()), xv = ToDouble(x.data()),
             wv = ToDouble(kern.weights), bv = ToDouble(kern.bias);
  auto loss = [&](const std::vector<double>& xs, const std::vector<double>& ws,
                  const std::vector<double>& bs) {
    return Dot(RefConv(WithValues(x, xs), ws, bs, kern.cout, k, s, p), rd);
  };
  GradChecker c("conv2d");
  c.CompareAll("dW", g.weight_grad, wv,
               [&](const auto& v) { return loss(xv, v, bv); }, 1e-3);
  c.CompareAll("db", g.bias_grad, bv,
               [&](const auto& v) { return loss(xv, wv, v); }, 1e-3);
  c.CompareAll("dx", g.input_grad.data(), xv,
               [&](const auto& v) { return loss(v, wv, bv); }, 1e-3);
  return c.Take();
}

inline GradCheckOutcome ReluCase(Rng& rng) {
  const Shape s{1 + rng.Below(3), 1 + rng.Below(4), 1 + rng.Below(6), 1 + rng.Below(6)};
  const Tensor x = AwayFromZero(s, rng, 0.01);
  const Tensor r = Uniform(s, rng);
  const Tensor g = ReluBackward(x, r);
  const auto rd = ToDouble(r.data());
  GradChecker c("relu");
  c.CompareAll("dx", g.data(), ToDouble(x.data()),
               [&](const auto& v) { return Dot(RefRelu(WithValues(x, v)), rd); },
               1e-3);
  return c.Take();
}

inline GradCheckOutcome AvgPoolCase(Rng& rng) {
  const size_t win = 1 + rng.Below(3);
  const Shape s{1 + rng.Below(2), 1 + rng.Below(3), win * (1 + rng.Below(3)),
                win * (1 + rng.Below(3))};
  const Tensor x = Uniform(s, rng);
  const Tensor r = Uniform(Shape{s.n, s.c, s.h / win, s.w / win}, rng);
  const Tensor g = AvgPool2dBackward(s, win, r);
  const auto rd = ToDouble(r.data());
  GradChecker c("avg_pool");
  c.CompareAll("dx", g.data(), ToDouble(x.data()),
               [&](const auto& v) { return Dot(RefAvgPool(WithValues(x, v), win), rd); },
               1e-3);
  return c.Take();
}

inline GradCheckOutcome GlobalPoolCase(Rng& rng) {
  const Shape s{1 + rng.Below(2), 1 + rng.Below(4), 1 + rng.Below(5), 1 + rng.Below(5)};
  const Tensor x = Uniform(s, rng);
  const Tensor r = Uniform(Shape{s.n, s.c, 1, 1}, rng);
  const Tensor g = GlobalAvgPoolBackward(s, r);
  const auto rd = ToDouble(r.data());
  GradChecker c("global_pool");
  c.CompareAll("dx", g.data(), ToDouble(x.data()),
               [&](const auto& v) { return Dot(RefGlobalPool(WithValues(x, v)), rd); },
               1e-3);
  return c.Take();
}

inline GradCheckOutcome DenseCase(Rng& rng) {
  const Shape s{1 + rng.Below(3), 1 + rng.Below(3), 1 + rng.Below(3), 1 + rng.Below(3)};
  const size_t in = s.per_sample(), out = 1 + rng.Below(5);
  const Tensor x = Uniform(s, rng);
  std::vector<float> w(out * in), b(out);
  for (float& v : w) v = static_cast<float>(rng.Uniform(-1, 1));
  for (float& v : b) v = static_cast<float>(rng.Uniform(-1, 1));
  const Tensor r = Uniform(Shape{s.n, out, 1, 1}, rng);
  std::vector<float> gw(w.size(), 0.0f), gb(out, 0.0f);
  Tensor gx(s);
  DenseBackwardAccumulate(x, DenseView{w, b, out, in}, r, gw, gb, &gx);
  const auto rd = ToDouble(r.data()), xv = ToDouble(x.data()), wv = ToDouble(w),
             bv = ToDouble(b);
  auto loss = [&](const std::vector<double>& xs, const std::vector<double>& ws,
                  const std::vector<double>& bs) {
    return Dot(RefDense(WithValues(x, xs), ws, bs, out), rd);
  };
  GradChecker c("dense");
  c.CompareAll("dW", gw, wv, [&](const auto& v) { return loss(xv, v, bv); }, 1e-3);
  c.CompareAll("db", gb, bv, [&](const auto& v) { return loss(xv, wv, v); }, 1e-3);
  c.CompareAll("dx", gx.data(), xv, [&](const auto& v) { return loss(v, wv, bv); }, 1e-3);
  return c.Take();
}

inline GradCheckOutcome LossCase(Rng& rng) {
  const size_t k = 2 + rng.Below(9);
  std::vector<float> logits(k);
  for (float& v : logits) v = static_cast<float>(rng.Uniform(-4, 4));
  const size_t label = rng.Below(k);
  const LossAndGrad lg = SoftmaxCrossEntropy(logits, label);
  GradChecker c("softmax_cross_entropy");
  c.CompareAll("dlogits", lg.grad, ToDouble(logits),
               [&](const auto& v) { return RefCrossEntropy(v, label); }, 1e-3);
  return c.Take();
}

inline ModelSpec RandomSmallSpec(Rng& rng) {
  ModelSpec s;
  s.name = "gradcheck";
  s.in_channels = 1 + rng.Below(2);
  s.in_height = s.in_width = 8;
  s.num_classes = 2 + rng.Below(3);
  switch (rng.Below(3)) {
    case 0:
      return zoo::SmallCnn(s.in_channels, 8, s.num_classes, 2 + rng.Below(3),
                           2 + rng.Below(3), 2 + rng.Below(3));
    case 1:
      return zoo::TinyCnn(s.in_channels, 8, s.num_classes, 2 + rng.Below(3),
                          2 + rng.Below(3));
    default:
      s.layers = {ConvLayer{2 + rng.Below(3), 3, 1, 1}, ReluLayer{},
                  AvgPoolLayer{2}, ConvLayer{2 + rng.Below(3), 3, 2, 1},
                  ReluLayer{}, DenseLayer{s.num_classes}};
      return s;
  }
}

// Whole-model backward: summed cross-entropy gradient w.r.t. every parameter.
inline GradCheckOutcome ModelCase(Rng& rng, uint64_t seed) {
  const ModelSpec spec = RandomSmallSpec(rng);
  PrunableModel m = BuildModel(spec, seed);
  // Nonzero biases keep pre-activations off the ReLU kink.
  for (const LayerInfo& L : m.layers()) {
    for (size_t i = 0; i < L.bias_count; ++i) {
      m.params()[L.bias_offset + i] = static_cast<float>(rng.Uniform(-0.2, 0.2));
    }
  }
  const Tensor x = Uniform(Shape{2, spec.in_channels, spec.in_height, spec.in_width},
                           rng, 0.0, 1.0);
  const std::vector<int> labels{static_cast<int>(rng.Below(spec.num_classes)),
                                static_cast<int>(rng.Below(spec.num_classes))};
  std::vector<float> g(m.num_params(), 0.0f);
  m.AccumulateGradient(x, labels, g);
  GradChecker c("model:" + spec.name);
  c.CompareAll("dparam", g, ToDouble(m.params()),
               [&](const auto& v) { return RefModelLoss(m, v, x, labels); }, 1e-6);
  return c.Take();
}

}  // namespace internal

inline constexpr size_t kGradCheckKinds = 7;

// Case `index` cycles through conv, relu, avg-pool, global-pool, dense,
// softmax-cross-entropy and whole-model backward passes.
inline GradCheckOutcome RunGradCheckCase(size_t index, uint64_t seed) {
  Rng rng(MixSeed({seed, index, 0x6AD}));
  switch (index % kGradCheckKinds) {
    case 0: return internal::ConvCase(rng);
    case 1: return internal::ReluCase(rng);
    case 2: return internal::AvgPoolCase(rng);
    case 3: return internal::GlobalPoolCase(rng);
    case 4: return internal::DenseCase(rng);
    case 5: return internal::LossCase(rng);
    default: return internal::ModelCase(rng, MixSeed({seed, index}));
  }
}

}  // namespace fedscrub::testing

#endif  // FEDSCRUB_TESTS_SUPPORT_GRADCHECK_H_
