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

// Experiment configuration and the arms built on it: pretraining, full
// retraining, TF-IDF unlearning and the Fisher baseline. Seeds for every
// random stream derive from ExperimentConfig::seed.

#ifndef FEDSCRUB_EXPERIMENT_H_
#define FEDSCRUB_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedscrub/data.h"
#include "fedscrub/errors.h"
#include "fedscrub/fed.h"
#include "fedscrub/metrics.h"
#include "fedscrub/model.h"
#include "fedscrub/unlearn.h"

namespace fedscrub {

enum class DatasetKind { kBlobs, kCifar10, kIdx };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kBlobs;
  // Synthetic blobs.
  size_t num_classes = 10;
  size_t channels = 3;
  size_t image_size = 16;
  size_t train_per_class = 120;
  size_t test_per_class = 100;
  double pixel_noise = 0.05;
  double amplitude_jitter = 0.1;
  uint64_t task_seed = 7;
  // CIFAR-10: directory with the binary batches. IDX: four file paths.
  std::filesystem::path cifar_dir;
  std::filesystem::path idx_train_images, idx_train_labels;
  std::filesystem::path idx_test_images, idx_test_labels;
  size_t train_limit = 0;  // keep only the first N training samples; 0 = all
  // Per-channel standardization with training-set statistics, applied to
  // both splits.
  bool standardize = true;
};

struct ModelConfig {
  std::string name = "small_cnn";        // small_cnn | tiny_cnn
  std::vector<size_t> widths{8, 16, 16};  // conv widths, one per conv block
};

struct RetrainConfig {
  size_t budget = 1200;
  size_t window = 10;   // rounds averaged for the reference accuracy
  double margin = 0.5;  // percentage points below the reference
};

struct FisherConfig {
  double sigma = 1e-2;
  double epsilon = 1e-8;
};

struct EvalConfig {
  bool mia = true;
  size_t mia_repeats = 25;
  bool kl = true;
};

struct ExperimentConfig {
  DatasetConfig data;
  ModelConfig model;
  size_t clients = 20;
  double bias = 0.1;  // q
  FlConfig fl = DefaultFl();
  size_t pretrain_rounds = 1200;
  UnlearnRequest unlearn = DefaultRequest();
  RetrainConfig retrain;
  FisherConfig fisher;
  EvalConfig eval;
  uint64_t seed = 1;

  static FlConfig DefaultFl() {
    FlConfig f;
    f.total_clients = 20;
    f.participants = 5;
    f.method = FlMethod::kFedSgd;
    f.learning_rate = 0.1f;
    return f;
  }
  static UnlearnRequest DefaultRequest() {
    UnlearnRequest r;
    r.targets = {9};
    r.ratio = 0.1;
    r.finetune_budget = 1200;
    return r;
  }

  std::set<int> targets() const { return unlearn.target_set(); }

  // Federated settings with the client count and seed filled in.
  FlConfig Fl() const {
    FlConfig f = fl;
    f.total_clients = clients;
    f.seed = seed;
    return f;
  }

  void Validate() const {
    Fl().Validate();
    if (data.kind == DatasetKind::kBlobs &&
        (data.train_per_class == 0 || data.test_per_class == 0)) {
      throw ConfigError("blob task needs >= 1 sample per class");
    }
    if (model.name != "small_cnn" && model.name != "tiny_cnn") {
      throw ConfigError("unknown model '" + model.name + "'");
    }
    const size_t want = model.name == "small_cnn" ? 3 : 2;
    if (model.widths.size() != want) {
      throw ConfigError(model.name + " needs " + std::to_string(want) +
                        " conv widths");
    }
    if (!(bias > 0.0 && bias <= 1.0)) throw ConfigError("bias must lie in (0, 1]");
    if (retrain.window == 0) throw ConfigError("retrain window must be >= 1");
  }
};

struct Task {
  LabeledDataset train;
  LabeledDataset test;
  ClientShards shards;
};

inline Task LoadTask(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.data;
  Task t;
  switch (d.kind) {
    case DatasetKind::kBlobs: {
      BlobTask::Options o;
      o.pixel_noise = d.pixel_noise;
      o.amplitude_jitter = d.amplitude_jitter;
      const BlobTask task(d.num_classes,
                          Shape{1, d.channels, d.image_size, d.image_size},
                          d.task_seed, o);
      t.train = task.Generate(d.train_per_class, 100 + cfg.seed);
      t.test = task.Generate(d.test_per_class, 200 + cfg.seed);
      break;
    }
    case DatasetKind::kCifar10:
      t.train = LoadCifar10Binary(d.cifar_dir, Split::kTrain);
      t.test = LoadCifar10Binary(d.cifar_dir, Split::kTest);
      break;
    case DatasetKind::kIdx:
      t.train = LoadIdx(d.idx_train_images, d.idx_train_labels);
      t.test = LoadIdx(d.idx_test_images, d.idx_test_labels);
      t.test.num_classes = t.train.num_classes =
          std::max(t.train.num_classes, t.test.num_classes);
      break;
  }
  if (d.train_limit > 0 && d.train_limit < t.train.size()) {
    std::vector<size_t> keep(d.train_limit);
    std::iota(keep.begin(), keep.end(), size_t{0});
    t.train = t.train.Subset(keep);
  }
  if (d.standardize) {
    const ChannelStats st = ComputeChannelStats(t.train);
    Standardize(t.train, st);
    Standardize(t.test, st);
  }
  t.shards = PartitionNonIid(
      t.train.labels,
      PartitionConfig{cfg.clients, cfg.bias, t.train.num_classes, cfg.seed});
  return t;
}

inline ModelSpec BuildSpec(const ExperimentConfig& cfg, const LabeledDataset& ds) {
  const Shape s = ds.images.shape();
  if (s.h != s.w) throw ConfigError("models expect square images");
  const auto& w = cfg.model.widths;
  if (cfg.model.name == "tiny_cnn") {
    return zoo::TinyCnn(s.c, s.h, ds.num_classes, w.at(0), w.at(1));
  }
  return zoo::SmallCnn(s.c, s.h, ds.num_classes, w.at(0), w.at(1), w.at(2));
}

inline uint64_t InitSeed(const ExperimentConfig& cfg) { return cfg.seed; }
inline uint64_t RetrainInitSeed(const ExperimentConfig& cfg) { return cfg.seed + 1000; }

inline TrainResult Pretrain(const ExperimentConfig& cfg, const Task& task,
                            std::optional<size_t> rounds = std::nullopt) {
  return TrainToTarget(BuildModel(BuildSpec(cfg, task.train), InitSeed(cfg)),
                       task.train, task.shards, cfg.Fl(),
                       rounds.value_or(cfg.pretrain_rounds),
                       MakeSplitEvaluator(task.test, cfg.targets()), nullptr);
}

struct RetrainArm {
  TrainResult run;
  double target_accuracy = 0.0;          // stop-rule target for every arm
  std::optional<size_t> rounds_to_target;
};

// Full retraining without the targets for the whole budget; the converged
// tail defines the target accuracy.
inline RetrainArm Retrain(const ExperimentConfig& cfg, const Task& task,
                          std::optional<size_t> budget = std::nullopt) {
  const auto targets = cfg.targets();
  RetrainArm arm;
  arm.run = FullRetrainBaseline(
      BuildSpec(cfg, task.train), RetrainInitSeed(cfg), task.train,
      ExcludeClassesFromShards(task.train, task.shards, targets), cfg.Fl(),
      budget.value_or(cfg.retrain.budget), MakeSplitEvaluator(task.test, targets),
      nullptr);
  arm.target_accuracy =
      TargetFromReference(arm.run.history, cfg.retrain.window, cfg.retrain.margin);
  arm.rounds_to_target = RoundsToTarget(arm.run.history, arm.target_accuracy);
  return arm;
}

inline UnlearnResult Unlearn(const ExperimentConfig& cfg, const Task& task,
                             const PrunableModel& pretrained,
                             std::optional<double> target_accuracy) {
  UnlearnRequest req = cfg.unlearn;
  req.target_accuracy = target_accuracy;
  return FederatedUnlearn(pretrained, task.train, task.shards, task.test, req,
                          cfg.Fl());
}

// Clients that run the Fisher baseline: one round's participants.
inline std::vector<size_t> FisherParticipants(const ExperimentConfig& cfg) {
  const FlConfig f = cfg.Fl();
  return SelectClients(f.total_clients, f.participants, 0,
                       MixSeed({cfg.seed, 0xF15E}));
}

struct FisherArm {
  PrunableModel updated;  // right after the Newton step and noise
  TrainResult finetune;
};

inline FisherArm RunFisher(const ExperimentConfig& cfg, const Task& task,
                           const PrunableModel& pretrained,
                           std::optional<double> target_accuracy) {
  const auto targets = cfg.targets();
  const ClientShards rest = ExcludeClassesFromShards(task.train, task.shards, targets);
  std::vector<std::vector<size_t>> local;
  for (size_t k : FisherParticipants(cfg)) {
    if (!rest[k].empty()) local.push_back(rest[k]);
  }
  if (local.empty()) throw ConfigError("Fisher participants hold no target-free data");
  FisherArm arm;
  arm.updated = FisherUnlearnBaseline(
      pretrained, task.train, local,
      FisherOptions{cfg.fisher.sigma, cfg.fisher.epsilon, cfg.seed});
  StopRule stop = nullptr;
  if (target_accuracy) stop = ReachAccuracy(*target_accuracy);
  arm.finetune = FineTune(arm.updated, task.train, rest, cfg.Fl(),
                          cfg.unlearn.finetune_budget,
                          MakeSplitEvaluator(task.test, targets), stop);
  return arm;
}

// Membership pools for the target classes: training samples (members) and
// held-out test samples (non-members).
inline std::pair<LabeledDataset, LabeledDataset> MiaPools(
    const Task& task, const std::set<int>& targets) {
  auto pick = [&](const LabeledDataset& ds) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < ds.size(); ++i) {
      if (targets.contains(ds.labels[i])) idx.push_back(i);
    }
    return ds.Subset(idx);
  };
  return {pick(task.train), pick(task.test)};
}

}  // namespace fedscrub

#endif  // FEDSCRUB_EXPERIMENT_H_
