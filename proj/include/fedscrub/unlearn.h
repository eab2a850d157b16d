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

// Class unlearning over a federation: collect representations, prune the
// target's channels, fine-tune on the remaining classes. Also the two
// reference arms, retraining from scratch and Fisher-noise unlearning.

#ifndef FEDSCRUB_UNLEARN_H_
#define FEDSCRUB_UNLEARN_H_

#include <chrono>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/data.h"
#include "fedscrub/errors.h"
#include "fedscrub/fed.h"
#include "fedscrub/metrics.h"
#include "fedscrub/model.h"
#include "fedscrub/repr.h"
#include "fedscrub/rng.h"
#include "fedscrub/scrub.h"

namespace fedscrub {

struct UnlearnRequest {
  std::vector<int> targets;  // removed in this order
  double ratio = 0.1;        // R
  size_t finetune_budget = 200;
  // Stop fine-tuning once R-set accuracy (percent) reaches this; without it
  // the whole budget is spent.
  std::optional<double> target_accuracy;
  // Clients asked for representations; 0 means every client.
  size_t repr_clients = 0;
  SelectionMode mode = SelectionMode::kPerLayer;
  LogBase log_base = LogBase::kNatural;
  bool weighted_repr_average = false;
  // Re-collect representations from clients between targets.
  bool reextract = false;

  std::set<int> target_set() const { return {targets.begin(), targets.end()}; }

  void Validate(size_t num_classes) const {
    if (targets.empty()) throw ConfigError("unlearn request has no target");
    const auto ts = target_set();
    if (ts.size() != targets.size()) throw ConfigError("repeated target class");
    for (int t : targets) {
      if (t < 0 || static_cast<size_t>(t) >= num_classes) {
        throw IndexError("target class " + std::to_string(t) + " out of range");
      }
    }
    if (ts.size() >= num_classes) {
      throw ConfigError("cannot unlearn every class");
    }
    if (!(ratio > 0.0 && ratio < 1.0)) {
      throw ConfigError("prune ratio must lie in (0, 1)");
    }
  }
};

struct StageSnapshot {
  std::string stage;  // raw, after-pruned-<k>, fine-tuned, retrained, fisher...
  AccuracySplit accuracy;
  size_t rounds = 0;
  bool converged = true;
  double wall_seconds = 0.0;
  PrunableModel model;
};

struct TrainResult {
  PrunableModel model;
  std::vector<RoundResult> history;
  size_t rounds = 0;  // rounds run (== rounds-to-target when converged)
  bool converged = false;
};

// Federated training of `model` that first checks whether the stop rule
// already holds (0 rounds). Without a stop rule it runs the whole budget and
// reports converged = true.
inline TrainResult TrainToTarget(PrunableModel model, const LabeledDataset& ds,
                                 const ClientShards& shards, FlConfig cfg,
                                 size_t budget, const Evaluator& evaluate,
                                 const StopRule& stop) {
  TrainResult out;
  if (stop && evaluate && stop(evaluate(model))) {
    out.model = std::move(model);
    out.converged = true;
    return out;
  }
  cfg.max_rounds = budget;
  out.history = TrainLoop(model, ds, shards, cfg, evaluate, stop);
  out.rounds = out.history.size();
  out.converged = !stop || (!out.history.empty() && evaluate &&
                            stop(out.history.back().metrics));
  out.model = std::move(model);
  return out;
}

// Standard federated training on the target-free shards with the mask gate
// active (pruned weights stay zero).
inline TrainResult FineTune(const PrunableModel& pruned, const LabeledDataset& ds,
                            const ClientShards& shards_without_targets,
                            const FlConfig& cfg, size_t budget,
                            const Evaluator& evaluate, const StopRule& stop) {
  return TrainToTarget(pruned, ds, shards_without_targets, cfg, budget,
                       evaluate, stop);
}

// Fresh initialization trained on the target-free shards.
inline TrainResult FullRetrainBaseline(const ModelSpec& spec, uint64_t init_seed,
                                       const LabeledDataset& ds,
                                       const ClientShards& shards_without_targets,
                                       const FlConfig& cfg, size_t budget,
                                       const Evaluator& evaluate,
                                       const StopRule& stop) {
  return TrainToTarget(BuildModel(spec, init_seed), ds, shards_without_targets,
                       cfg, budget, evaluate, stop);
}

// Target accuracy derived from a converged retrain run: mean tracked accuracy
// of the last `window` rounds minus `margin` percentage points.
inline double TargetFromReference(std::span<const RoundResult> history,
                                  size_t window = 10, double margin = 0.5) {
  if (history.empty()) throw ConfigError("reference history is empty");
  const size_t w = std::min(window, history.size());
  double s = 0.0;
  for (size_t i = history.size() - w; i < history.size(); ++i) {
    s += TrackedAccuracy(history[i].metrics);
  }
  return s / static_cast<double>(w) - margin;
}

struct FisherOptions {
  double sigma = 1e-2;
  double epsilon = 1e-8;  // damping added to every Fisher diagonal entry
  uint64_t seed = 0;
};

// w' = w - grad / F + sigma * F^(-1/4) * b, elementwise with F = fisher + eps
// and b ~ N(0, 1).
inline void FisherUpdate(std::span<float> w, std::span<const double> grad_mean,
                         std::span<const double> fisher_diag, double sigma,
                         double epsilon, Rng& rng) {
  if (w.size() != grad_mean.size() || w.size() != fisher_diag.size()) {
    throw DimensionError("Fisher update operands differ in length");
  }
  for (size_t i = 0; i < w.size(); ++i) {
    const double f = fisher_diag[i] + epsilon;
    const double noise = sigma != 0.0 ? sigma * std::pow(f, -0.25) * rng.Normal()
                                      : 0.0;
    w[i] = static_cast<float>(static_cast<double>(w[i]) - grad_mean[i] / f + noise);
  }
}

struct FisherStats {
  std::vector<double> grad_mean;
  std::vector<double> fisher_diag;  // mean squared per-sample gradient
  size_t samples = 0;
};

// Mean gradient and diagonal empirical Fisher over the listed samples.
inline FisherStats ComputeFisherStats(const PrunableModel& model,
                                      const LabeledDataset& ds,
                                      std::span<const size_t> indices) {
  if (indices.empty()) throw ConfigError("Fisher statistics need samples");
  FisherStats st;
  st.grad_mean.assign(model.num_params(), 0.0);
  st.fisher_diag.assign(model.num_params(), 0.0);
  std::vector<float> g(model.num_params());
  for (size_t i : indices) {
    std::fill(g.begin(), g.end(), 0.0f);
    const size_t one[1] = {i};
    const Batch b = GatherBatch(ds, one);
    model.AccumulateGradient(b.images, b.labels, g);
    for (size_t j = 0; j < g.size(); ++j) {
      st.grad_mean[j] += g[j];
      st.fisher_diag[j] += static_cast<double>(g[j]) * g[j];
    }
  }
  const double n = static_cast<double>(indices.size());
  for (size_t j = 0; j < g.size(); ++j) {
    st.grad_mean[j] /= n;
    st.fisher_diag[j] /= n;
  }
  st.samples = indices.size();
  return st;
}

// Newton correction plus Fisher-shaped noise computed only from the
// participants' target-free data. Pruned coordinates stay zero.
inline PrunableModel FisherUnlearnBaseline(
    const PrunableModel& model, const LabeledDataset& ds,
    std::span<const std::vector<size_t>> participant_shards,
    const FisherOptions& opt) {
  std::vector<size_t> idx;
  for (const auto& s : participant_shards) idx.insert(idx.end(), s.begin(), s.end());
  const FisherStats st = ComputeFisherStats(model, ds, idx);
  PrunableModel out = model;
  Rng rng(MixSeed({opt.seed, 0xF15E}));
  FisherUpdate(out.params(), st.grad_mean, st.fisher_diag, opt.sigma,
               opt.epsilon, rng);
  out.ZeroMasked();
  return out;
}

struct UnlearnResult {
  std::vector<StageSnapshot> stages;
  std::vector<PrunePlan> plans;
  std::vector<TfIdfScores> scores;
  std::vector<LocalRepresentation> local_reprs;
  TrainResult finetune;
  PrunableModel model;  // final unlearned model
};

// Clients that answer the representation request.
inline std::vector<size_t> ReprParticipants(const UnlearnRequest& req,
                                            const FlConfig& cfg) {
  if (req.repr_clients == 0 || req.repr_clients >= cfg.total_clients) {
    std::vector<size_t> all(cfg.total_clients);
    std::iota(all.begin(), all.end(), size_t{0});
    return all;
  }
  return SelectClients(cfg.total_clients, req.repr_clients, 0,
                       MixSeed({cfg.seed, 0x4E9}));
}

inline GlobalRepresentation CollectGlobalRepr(
    const PrunableModel& model, const LabeledDataset& ds,
    const ClientShards& shards, std::span<const size_t> participants,
    bool weighted, std::vector<LocalRepresentation>* locals = nullptr) {
  std::vector<LocalRepresentation> reprs;
  for (size_t k : participants) {
    if (shards.at(k).empty()) continue;
    reprs.push_back(ExtractLocalRepr(model, ds, shards[k]));
  }
  GlobalRepresentation g = AggregateReprs(reprs, weighted);
  if (locals != nullptr) *locals = std::move(reprs);
  return g;
}

// Full unlearning pass: representation collection, per-target pruning and
// fine-tuning on data without the targets. Emits a snapshot per stage.
inline UnlearnResult FederatedUnlearn(const PrunableModel& global,
                                      const LabeledDataset& train,
                                      const ClientShards& shards,
                                      const LabeledDataset& test,
                                      const UnlearnRequest& req,
                                      const FlConfig& cfg) {
  req.Validate(global.num_classes());
  cfg.Validate();
  using Clock = std::chrono::steady_clock;
  const auto targets = req.target_set();
  UnlearnResult out;
  auto snap = [&](std::string name, const PrunableModel& m, size_t rounds,
                  bool converged, Clock::time_point since) {
    StageSnapshot s;
    s.stage = std::move(name);
    s.accuracy = EvalAccuracySplit(m, test, targets);
    s.rounds = rounds;
    s.converged = converged;
    s.wall_seconds = std::chrono::duration<double>(Clock::now() - since).count();
    s.model = m;
    out.stages.push_back(std::move(s));
  };
  snap("raw", global, 0, true, Clock::now());

  const auto t0 = Clock::now();
  const auto participants = ReprParticipants(req, cfg);
  const GlobalRepresentation g = CollectGlobalRepr(
      global, train, shards, participants, req.weighted_repr_average,
      &out.local_reprs);
  MultiClassPruneOptions opt;
  opt.log_base = req.log_base;
  opt.mode = req.mode;
  if (req.reextract) {
    opt.reextract = [&](const PrunableModel& m) {
      return CollectGlobalRepr(m, train, shards, participants,
                               req.weighted_repr_average);
    };
  }
  MultiClassPruneResult pr = MultiClassPrune(global, g, req.targets, req.ratio, opt);
  for (size_t i = 0; i < pr.stages.size(); ++i) {
    snap("after-pruned-" + std::to_string(i + 1), pr.stages[i], 0, true, t0);
  }
  out.plans = std::move(pr.plans);
  out.scores = std::move(pr.scores);

  const auto t1 = Clock::now();
  const ClientShards remaining = ExcludeClassesFromShards(train, shards, targets);
  StopRule stop = nullptr;
  if (req.target_accuracy) stop = ReachAccuracy(*req.target_accuracy);
  out.finetune = FineTune(pr.model, train, remaining, cfg, req.finetune_budget,
                          MakeSplitEvaluator(test, targets), stop);
  snap("fine-tuned", out.finetune.model, out.finetune.rounds,
       out.finetune.converged, t1);
  out.model = out.finetune.model;
  return out;
}

}  // namespace fedscrub

#endif  // FEDSCRUB_UNLEARN_H_
