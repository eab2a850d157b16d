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

// In-process federated training: client sampling, FedSGD / FedAvg local
// updates and unweighted averaging of client deltas.

#ifndef FEDSCRUB_FED_H_
#define FEDSCRUB_FED_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/data.h"
#include "fedscrub/errors.h"
#include "fedscrub/model.h"
#include "fedscrub/nn.h"
#include "fedscrub/rng.h"

namespace fedscrub {

enum class FlMethod { kFedSgd, kFedAvg };

inline const char* FlMethodName(FlMethod m) {
  return m == FlMethod::kFedSgd ? "fedsgd" : "fedavg";
}

struct FlConfig {
  size_t total_clients = 100;      // m
  size_t participants = 25;        // n
  FlMethod method = FlMethod::kFedSgd;
  size_t local_epochs = 5;         // FedAvg only
  float learning_rate = 0.1f;
  float weight_decay = 0.0f;
  size_t batch_size = 32;          // FedAvg mini-batch; FedSGD chunking only
  size_t max_rounds = 100;
  uint64_t seed = 0;
  // Weight client deltas by shard size instead of a plain mean.
  bool weighted_aggregation = false;
  // Client updates run on this many threads. Results do not depend on it:
  // aggregation always sums in ascending client id order.
  size_t threads = 1;
  // Keep a copy of the global parameters after every round.
  bool keep_snapshots = false;

  void Validate() const {
    if (total_clients == 0 || participants == 0 ||
        participants > total_clients) {
      throw ConfigError("need 1 <= participants (" +
                        std::to_string(participants) + ") <= clients (" +
                        std::to_string(total_clients) + ")");
    }
    if (method == FlMethod::kFedAvg && local_epochs == 0) {
      throw ConfigError("FedAvg needs local_epochs >= 1");
    }
    if (!(learning_rate > 0.0f)) throw ConfigError("learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  }
};

// Metrics of the global model after a round. Accuracies are percentages.
struct RoundMetrics {
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> u_acc;
  std::optional<double> r_acc;
};

struct RoundResult {
  size_t round = 0;  // 1-based
  size_t participants = 0;
  RoundMetrics metrics;
  std::vector<float> snapshot;  // empty unless FlConfig::keep_snapshots
};

using Evaluator = std::function<RoundMetrics(const PrunableModel&)>;
using StopRule = std::function<bool(const RoundMetrics&)>;

// n distinct client ids drawn uniformly without replacement, ascending.
// Deterministic in (seed, round).
inline std::vector<size_t> SelectClients(size_t m, size_t n, size_t round,
                                         uint64_t seed) {
  if (n > m) {
    throw ConfigError("cannot select " + std::to_string(n) + " of " +
                      std::to_string(m) + " clients");
  }
  std::vector<size_t> ids(m);
  std::iota(ids.begin(), ids.end(), size_t{0});
  Rng rng(MixSeed({seed, round, 0x5E1EC7}));
  for (size_t i = 0; i < n; ++i) {
    std::swap(ids[i], ids[i + rng.Below(m - i)]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Mean cross-entropy gradient over the listed samples, mask-gated. Samples
// are processed in chunks of `chunk`; the per-sample accumulation order does
// not depend on the chunk size.
inline std::vector<float> MeanGradient(const PrunableModel& model,
                                       const LabeledDataset& ds,
                                       std::span<const size_t> indices,
                                       size_t chunk = 64,
                                       double* mean_loss = nullptr) {
  if (indices.empty()) throw ConfigError("gradient over an empty sample set");
  std::vector<float> grad(model.num_params(), 0.0f);
  double loss = 0.0;
  for (size_t at = 0; at < indices.size(); at += chunk) {
    const auto part = indices.subspan(at, std::min(chunk, indices.size() - at));
    const Batch b = GatherBatch(ds, part);
    loss += model.AccumulateGradient(b.images, b.labels, grad);
  }
  const float inv = 1.0f / static_cast<float>(indices.size());
  for (float& g : grad) g *= inv;
  if (mean_loss != nullptr) *mean_loss = loss / static_cast<double>(indices.size());
  return grad;
}

// Client-side update. Returns the parameter delta to add to the global model,
// or nullopt when the shard is empty (the client is skipped).
//  FedSGD: delta = -lr * (mean gradient over the shard + wd * w).
//  FedAvg: delta = w_local - w after E epochs of shuffled mini-batch SGD.
inline std::optional<std::vector<float>> LocalUpdate(
    const PrunableModel& global, const LabeledDataset& ds,
    std::span<const size_t> shard, const FlConfig& cfg, size_t round,
    size_t client_id) {
  if (shard.empty()) return std::nullopt;
  const auto w = global.params();
  std::vector<float> delta(w.size());
  if (cfg.method == FlMethod::kFedSgd) {
    const auto g = MeanGradient(global, ds, shard, cfg.batch_size);
    for (size_t i = 0; i < w.size(); ++i) {
      delta[i] = -(cfg.learning_rate * (g[i] + cfg.weight_decay * w[i]));
    }
    global.GateGradient(delta);
    return delta;
  }
  PrunableModel local = global;
  const SgdConfig sgd{cfg.learning_rate, cfg.weight_decay};
  for (size_t e = 0; e < cfg.local_epochs; ++e) {
    const auto batches = BatchIndices(
        shard.size(), cfg.batch_size, MixSeed({cfg.seed, round, client_id, e}),
        /*shuffle=*/true);
    for (const auto& b : batches) {
      std::vector<size_t> idx;
      idx.reserve(b.size());
      for (size_t j : b) idx.push_back(shard[j]);
      const auto g = MeanGradient(local, ds, idx, cfg.batch_size);
      SgdStep(local.params(), g, sgd);
      local.ZeroMasked();
    }
  }
  const auto lw = local.params();
  for (size_t i = 0; i < w.size(); ++i) delta[i] = lw[i] - w[i];
  return delta;
}

// Mean of the contributions (weighted when `weights` is non-empty), summed in
// the given order with 64-bit accumulation.
inline std::vector<float> Aggregate(const std::vector<std::vector<float>>& parts,
                                    std::span<const double> weights = {}) {
  if (parts.empty()) throw ConfigError("aggregate needs >= 1 contribution");
  if (!weights.empty() && weights.size() != parts.size()) {
    throw DimensionError("aggregate: weight count does not match contributions");
  }
  const size_t d = parts.front().size();
  std::vector<double> acc(d, 0.0);
  double total = 0.0;
  for (size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].size() != d) {
      throw DimensionError("aggregate: contribution " + std::to_string(k) +
                           " has " + std::to_string(parts[k].size()) +
                           " entries, expected " + std::to_string(d));
    }
    const double wk = weights.empty() ? 1.0 : weights[k];
    total += wk;
    for (size_t i = 0; i < d; ++i) acc[i] += wk * static_cast<double>(parts[k][i]);
  }
  if (!(total > 0.0)) throw ConfigError("aggregate weights sum to zero");
  std::vector<float> out(d);
  for (size_t i = 0; i < d; ++i) out[i] = static_cast<float>(acc[i] / total);
  return out;
}

inline void ApplyDelta(PrunableModel& model, std::span<const float> delta) {
  auto p = model.params();
  if (p.size() != delta.size()) {
    throw DimensionError("delta has " + std::to_string(delta.size()) +
                         " entries, model has " + std::to_string(p.size()));
  }
  for (size_t i = 0; i < p.size(); ++i) p[i] += delta[i];
  model.ZeroMasked();
}

// Runs one round: select, local updates, aggregate. Returns the number of
// clients that contributed.
inline size_t RunRound(PrunableModel& model, const LabeledDataset& ds,
                       const ClientShards& shards, const FlConfig& cfg,
                       size_t round) {
  const auto selected =
      SelectClients(cfg.total_clients, cfg.participants, round, cfg.seed);
  std::vector<std::optional<std::vector<float>>> results(selected.size());
  auto work = [&](size_t j) {
    const size_t k = selected[j];
    results[j] = LocalUpdate(model, ds, shards.at(k), cfg, round, k);
  };
  if (cfg.threads <= 1) {
    for (size_t j = 0; j < selected.size(); ++j) work(j);
  } else {
    for (size_t at = 0; at < selected.size(); at += cfg.threads) {
      std::vector<std::future<void>> fs;
      for (size_t j = at; j < std::min(selected.size(), at + cfg.threads); ++j) {
        fs.push_back(std::async(std::launch::async, work, j));
      }
      for (auto& f : fs) f.get();
    }
  }
  std::vector<std::vector<float>> deltas;
  std::vector<double> weights;
  for (size_t j = 0; j < selected.size(); ++j) {
    if (!results[j]) continue;
    deltas.push_back(std::move(*results[j]));
    weights.push_back(static_cast<double>(shards[selected[j]].size()));
  }
  if (deltas.empty()) return 0;
  const auto mean = cfg.weighted_aggregation ? Aggregate(deltas, weights)
                                             : Aggregate(deltas);
  ApplyDelta(model, mean);
  return deltas.size();
}

// Trains until max_rounds or until `stop` accepts a round's metrics. Round
// numbering continues from `first_round`.
inline std::vector<RoundResult> TrainLoop(PrunableModel& model,
                                          const LabeledDataset& ds,
                                          const ClientShards& shards,
                                          const FlConfig& cfg,
                                          const Evaluator& evaluate = nullptr,
                                          const StopRule& stop = nullptr,
                                          size_t first_round = 1) {
  cfg.Validate();
  if (shards.size() != cfg.total_clients) {
    throw ConfigError("have " + std::to_string(shards.size()) +
                      " shards for " + std::to_string(cfg.total_clients) +
                      " clients");
  }
  std::vector<RoundResult> history;
  for (size_t r = 0; r < cfg.max_rounds; ++r) {
    RoundResult res;
    res.round = first_round + r;
    res.participants = RunRound(model, ds, shards, cfg, res.round);
    if (evaluate) res.metrics = evaluate(model);
    if (cfg.keep_snapshots) {
      res.snapshot.assign(model.params().begin(), model.params().end());
    }
    history.push_back(std::move(res));
    if (stop && evaluate && stop(history.back().metrics)) break;
  }
  return history;
}

}  // namespace fedscrub

#endif  // FEDSCRUB_FED_H_
