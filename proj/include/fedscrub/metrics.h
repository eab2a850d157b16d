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

// Evaluation metrics: U-set / R-set accuracy, rounds-to-target speedup, a
// loss-threshold membership-inference attack and the KL divergence between
// per-class accuracy distributions.

#ifndef FEDSCRUB_METRICS_H_
#define FEDSCRUB_METRICS_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/data.h"
#include "fedscrub/errors.h"
#include "fedscrub/fed.h"
#include "fedscrub/model.h"
#include "fedscrub/nn.h"
#include "fedscrub/rng.h"

namespace fedscrub {

inline constexpr size_t kEvalChunk = 128;

// Arg-max class per sample (lowest index wins ties).
inline std::vector<int> Predict(const PrunableModel& model,
                                const LabeledDataset& ds) {
  std::vector<int> pred(ds.size());
  std::vector<size_t> idx;
  for (size_t at = 0; at < ds.size(); at += kEvalChunk) {
    const size_t end = std::min(ds.size(), at + kEvalChunk);
    idx.resize(end - at);
    std::iota(idx.begin(), idx.end(), at);
    const Batch b = GatherBatch(ds, idx);
    const Tensor logits = model.Forward(b.images);
    for (size_t n = 0; n < idx.size(); ++n) {
      const auto row = logits.Sample(n);
      pred[at + n] = static_cast<int>(
          std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  return pred;
}

struct AccuracySplit {
  std::optional<double> u_acc;  // percent; nullopt when the U-set is empty
  std::optional<double> r_acc;  // percent; nullopt when the R-set is empty
  double overall = 0.0;
  size_t u_count = 0;
  size_t r_count = 0;
};

inline AccuracySplit AccuracyFromPredictions(std::span<const int> pred,
                                             std::span<const int> labels,
                                             const std::set<int>& targets) {
  size_t u_ok = 0, r_ok = 0;
  AccuracySplit out;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool hit = pred[i] == labels[i];
    if (targets.contains(labels[i])) {
      ++out.u_count;
      u_ok += hit;
    } else {
      ++out.r_count;
      r_ok += hit;
    }
  }
  if (out.u_count > 0) out.u_acc = 100.0 * u_ok / out.u_count;
  if (out.r_count > 0) out.r_acc = 100.0 * r_ok / out.r_count;
  if (!labels.empty()) out.overall = 100.0 * (u_ok + r_ok) / labels.size();
  return out;
}

// Accuracy over target-class samples (U-set) and all others (R-set).
inline AccuracySplit EvalAccuracySplit(const PrunableModel& model,
                                       const LabeledDataset& test,
                                       const std::set<int>& targets) {
  const auto pred = Predict(model, test);
  return AccuracyFromPredictions(pred, test.labels, targets);
}

// Per-class accuracy in percent; NaN for classes absent from `test`.
inline std::vector<double> PerClassAccuracy(const PrunableModel& model,
                                            const LabeledDataset& test) {
  const auto pred = Predict(model, test);
  std::vector<size_t> ok(test.num_classes, 0), total(test.num_classes, 0);
  for (size_t i = 0; i < test.size(); ++i) {
    const auto y = static_cast<size_t>(test.labels[i]);
    ++total[y];
    ok[y] += pred[i] == test.labels[i];
  }
  std::vector<double> acc(test.num_classes,
                          std::numeric_limits<double>::quiet_NaN());
  for (size_t c = 0; c < acc.size(); ++c) {
    if (total[c] > 0) acc[c] = 100.0 * ok[c] / total[c];
  }
  return acc;
}

inline Evaluator MakeSplitEvaluator(const LabeledDataset& test,
                                    std::set<int> targets) {
  return [&test, targets = std::move(targets)](const PrunableModel& m) {
    const AccuracySplit a = EvalAccuracySplit(m, test, targets);
    return RoundMetrics{a.overall, a.u_acc, a.r_acc};
  };
}

// The accuracy a stop rule tracks: R-set when defined, else overall.
inline double TrackedAccuracy(const RoundMetrics& m) {
  return m.r_acc.value_or(m.accuracy);
}

inline StopRule ReachAccuracy(double target) {
  return [target](const RoundMetrics& m) {
    return TrackedAccuracy(m) >= target;
  };
}

// First round whose tracked accuracy reaches `target`.
inline std::optional<size_t> RoundsToTarget(
    std::span<const RoundResult> history, double target) {
  for (const auto& r : history) {
    if (TrackedAccuracy(r.metrics) >= target) return r.round;
  }
  return std::nullopt;
}

struct SpeedupResult {
  std::optional<double> ratio;
  std::optional<size_t> finetune_rounds;
  std::optional<size_t> retrain_rounds;
  bool finetune_converged = false;
  bool retrain_converged = false;
};

// retrain rounds-to-target / fine-tune rounds-to-target. A fine-tune that is
// already at target (0 rounds) counts as one round. The ratio is undefined
// when either arm never reached the target.
inline SpeedupResult MeasureSpeedup(std::optional<size_t> finetune_rounds,
                                    std::optional<size_t> retrain_rounds) {
  SpeedupResult s;
  s.finetune_rounds = finetune_rounds;
  s.retrain_rounds = retrain_rounds;
  s.finetune_converged = finetune_rounds.has_value();
  s.retrain_converged = retrain_rounds.has_value();
  if (s.finetune_converged && s.retrain_converged) {
    s.ratio = static_cast<double>(std::max<size_t>(*retrain_rounds, 1)) /
              static_cast<double>(std::max<size_t>(*finetune_rounds, 1));
  }
  return s;
}

inline SpeedupResult MeasureSpeedup(std::span<const RoundResult> finetune,
                                    std::span<const RoundResult> retrain,
                                    double target) {
  return MeasureSpeedup(RoundsToTarget(finetune, target),
                        RoundsToTarget(retrain, target));
}

// Cross-entropy loss of every sample.
inline std::vector<double> PerSampleLosses(const PrunableModel& model,
                                           const LabeledDataset& ds) {
  std::vector<double> losses(ds.size());
  std::vector<size_t> idx;
  for (size_t at = 0; at < ds.size(); at += kEvalChunk) {
    const size_t end = std::min(ds.size(), at + kEvalChunk);
    idx.resize(end - at);
    std::iota(idx.begin(), idx.end(), at);
    const Batch b = GatherBatch(ds, idx);
    const Tensor logits = model.Forward(b.images);
    for (size_t n = 0; n < idx.size(); ++n) {
      losses[at + n] = SoftmaxCrossEntropy(logits.Sample(n),
                                           static_cast<size_t>(b.labels[n]))
                           .loss;
    }
  }
  return losses;
}

struct MiaOptions {
  // Random calibration / evaluation halvings averaged together.
  size_t repeats = 25;
  uint64_t seed = 0;
};

namespace internal {

// Balanced accuracy of "member iff loss < tau".
inline double BalancedAccuracy(std::span<const double> members,
                               std::span<const double> nonmembers, double tau) {
  size_t tp = 0, tn = 0;
  for (double l : members) tp += l < tau;
  for (double l : nonmembers) tn += l >= tau;
  return 0.5 * (static_cast<double>(tp) / members.size() +
                static_cast<double>(tn) / nonmembers.size());
}

// Threshold maximizing balanced accuracy on a calibration split. Candidates
// are midpoints between consecutive distinct losses plus both infinities.
inline double CalibrateThreshold(std::span<const double> members,
                                 std::span<const double> nonmembers) {
  std::vector<double> all(members.begin(), members.end());
  all.insert(all.end(), nonmembers.begin(), nonmembers.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> cands{-std::numeric_limits<double>::infinity()};
  for (size_t i = 0; i + 1 < all.size(); ++i) {
    cands.push_back(0.5 * (all[i] + all[i + 1]));
  }
  cands.push_back(std::numeric_limits<double>::infinity());
  double best_tau = cands.front();
  double best = -1.0;
  for (double t : cands) {
    const double ba = BalancedAccuracy(members, nonmembers, t);
    if (ba > best) {
      best = ba;
      best_tau = t;
    }
  }
  return best_tau;
}

}  // namespace internal

// Loss-threshold membership inference ("threshold-MIA"). Each repeat splits
// both pools in half, calibrates the threshold on one half and scores the
// balanced accuracy on the other. Returns the mean success rate in percent.
inline double ThresholdAttack(std::span<const double> member_losses,
                              std::span<const double> nonmember_losses,
                              const MiaOptions& opt = {}) {
  if (member_losses.size() < 2 || nonmember_losses.size() < 2) {
    throw ConfigError("membership inference needs >= 2 samples per pool");
  }
  if (opt.repeats == 0) throw ConfigError("MIA repeats must be >= 1");
  Rng rng(MixSeed({opt.seed, 0x3A1A}));
  std::vector<double> mem(member_losses.begin(), member_losses.end());
  std::vector<double> non(nonmember_losses.begin(), nonmember_losses.end());
  double total = 0.0;
  for (size_t r = 0; r < opt.repeats; ++r) {
    rng.Shuffle(mem.begin(), mem.end());
    rng.Shuffle(non.begin(), non.end());
    const size_t hm = mem.size() / 2, hn = non.size() / 2;
    const std::span<const double> mc(mem.data(), hm), me(mem.data() + hm,
                                                         mem.size() - hm);
    const std::span<const double> nc(non.data(), hn), ne(non.data() + hn,
                                                         non.size() - hn);
    const double tau = internal::CalibrateThreshold(mc, nc);
    total += internal::BalancedAccuracy(me, ne, tau);
  }
  return 100.0 * total / static_cast<double>(opt.repeats);
}

// Members: training samples of the target class. Non-members: held-out
// samples of the same class.
inline double MiaAttack(const PrunableModel& model, const LabeledDataset& members,
                        const LabeledDataset& nonmembers,
                        const MiaOptions& opt = {}) {
  if (members.empty() || nonmembers.empty()) {
    throw ConfigError("membership inference pools must be non-empty");
  }
  const auto lm = PerSampleLosses(model, members);
  const auto ln = PerSampleLosses(model, nonmembers);
  return ThresholdAttack(lm, ln, opt);
}

// KL(p || q) after smoothing both non-negative vectors by eps and
// normalizing them to sum to one.
inline double KlDivergence(std::span<const double> p_raw,
                           std::span<const double> q_raw, double eps = 1e-9) {
  if (p_raw.size() != q_raw.size() || p_raw.empty()) {
    throw DimensionError("KL inputs must be non-empty and equally long");
  }
  auto normalize = [eps](std::span<const double> v) {
    double s = 0.0;
    bool any = false;
    for (double x : v) {
      if (x < 0.0 || std::isnan(x)) {
        throw ConfigError("KL inputs must be non-negative numbers");
      }
      any = any || x > 0.0;
      s += x + eps;
    }
    if (!any) throw ConfigError("KL input accuracy vector is all zero");
    std::vector<double> out;
    for (double x : v) out.push_back((x + eps) / s);
    return out;
  };
  const auto p = normalize(p_raw);
  const auto q = normalize(q_raw);
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(0.0, kl);
}

// KL(reference || candidate) between per-class accuracy distributions over
// the non-target classes.
inline double KlAccuracyDist(const PrunableModel& reference,
                             const PrunableModel& candidate,
                             const LabeledDataset& test,
                             const std::set<int>& targets) {
  const auto a = PerClassAccuracy(reference, test);
  const auto b = PerClassAccuracy(candidate, test);
  std::vector<double> p, q;
  for (size_t c = 0; c < a.size(); ++c) {
    if (targets.contains(static_cast<int>(c)) || std::isnan(a[c])) continue;
    p.push_back(a[c]);
    q.push_back(b[c]);
  }
  return KlDivergence(p, q);
}

}  // namespace fedscrub

#endif  // FEDSCRUB_METRICS_H_
