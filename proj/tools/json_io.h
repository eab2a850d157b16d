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

// JSON encoding of experiment configs, accuracy splits and stage reports for
// the command-line tool. Reports hold no wall-clock values so they are a
// pure function of (config, seed); timings go to the manifest.

#ifndef FEDSCRUB_TOOLS_JSON_IO_H_
#define FEDSCRUB_TOOLS_JSON_IO_H_

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedscrub/errors.h"
#include "fedscrub/experiment.h"

namespace fedscrub::cli {

using nlohmann::ordered_json;

namespace internal {

// Reads `key` from `obj` into `out` when present.
template <typename T>
void Get(const ordered_json& obj, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

// Rejects keys outside `allowed` so typos do not pass silently.
inline void OnlyKeys(const ordered_json& obj, const std::string& where,
                     std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config key '" + where + "." + k + "'");
  }
}

inline const ordered_json& Section(const ordered_json& root, const char* key) {
  static const ordered_json kEmpty = ordered_json::object();
  const auto it = root.find(key);
  return it == root.end() ? kEmpty : *it;
}

}  // namespace internal

inline ExperimentConfig ConfigFromJson(const ordered_json& j) {
  using internal::Get;
  using internal::OnlyKeys;
  using internal::Section;
  ExperimentConfig c;
  OnlyKeys(j, "config", {"seed", "dataset", "model", "federation", "pretrain",
                         "unlearn", "retrain", "fisher", "evaluation"});
  Get(j, "seed", c.seed);

  const auto& d = Section(j, "dataset");
  OnlyKeys(d, "dataset", {"kind", "num_classes", "channels", "image_size",
                          "train_per_class", "test_per_class", "pixel_noise",
                          "amplitude_jitter", "task_seed", "cifar_dir",
                          "idx_train_images", "idx_train_labels",
                          "idx_test_images", "idx_test_labels", "train_limit",
                          "standardize"});
  std::string kind = "blobs";
  Get(d, "kind", kind);
  if (kind == "blobs") {
    c.data.kind = DatasetKind::kBlobs;
  } else if (kind == "cifar10") {
    c.data.kind = DatasetKind::kCifar10;
  } else if (kind == "idx") {
    c.data.kind = DatasetKind::kIdx;
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "'");
  }
  Get(d, "num_classes", c.data.num_classes);
  Get(d, "channels", c.data.channels);
  Get(d, "image_size", c.data.image_size);
  Get(d, "train_per_class", c.data.train_per_class);
  Get(d, "test_per_class", c.data.test_per_class);
  Get(d, "pixel_noise", c.data.pixel_noise);
  Get(d, "amplitude_jitter", c.data.amplitude_jitter);
  Get(d, "task_seed", c.data.task_seed);
  std::string path;
  auto get_path = [&](const char* key, std::filesystem::path& out) {
    path.clear();
    Get(d, key, path);
    if (!path.empty()) out = path;
  };
  get_path("cifar_dir", c.data.cifar_dir);
  get_path("idx_train_images", c.data.idx_train_images);
  get_path("idx_train_labels", c.data.idx_train_labels);
  get_path("idx_test_images", c.data.idx_test_images);
  get_path("idx_test_labels", c.data.idx_test_labels);
  Get(d, "train_limit", c.data.train_limit);
  Get(d, "standardize", c.data.standardize);

  const auto& m = Section(j, "model");
  OnlyKeys(m, "model", {"name", "widths"});
  Get(m, "name", c.model.name);
  Get(m, "widths", c.model.widths);

  const auto& f = Section(j, "federation");
  OnlyKeys(f, "federation", {"clients", "participants", "bias", "method",
                             "local_epochs", "learning_rate", "weight_decay",
                             "batch_size", "threads", "weighted_aggregation"});
  Get(f, "clients", c.clients);
  Get(f, "participants", c.fl.participants);
  Get(f, "bias", c.bias);
  std::string method = FlMethodName(c.fl.method);
  Get(f, "method", method);
  if (method == "fedsgd") {
    c.fl.method = FlMethod::kFedSgd;
  } else if (method == "fedavg") {
    c.fl.method = FlMethod::kFedAvg;
  } else {
    throw ConfigError("unknown federation method '" + method + "'");
  }
  Get(f, "local_epochs", c.fl.local_epochs);
  Get(f, "learning_rate", c.fl.learning_rate);
  Get(f, "weight_decay", c.fl.weight_decay);
  Get(f, "batch_size", c.fl.batch_size);
  Get(f, "threads", c.fl.threads);
  Get(f, "weighted_aggregation", c.fl.weighted_aggregation);

  const auto& p = Section(j, "pretrain");
  OnlyKeys(p, "pretrain", {"rounds"});
  Get(p, "rounds", c.pretrain_rounds);

  const auto& u = Section(j, "unlearn");
  OnlyKeys(u, "unlearn", {"targets", "ratio", "finetune_budget", "repr_clients",
                          "selection", "log_base", "weighted_repr_average",
                          "reextract"});
  Get(u, "targets", c.unlearn.targets);
  Get(u, "ratio", c.unlearn.ratio);
  Get(u, "finetune_budget", c.unlearn.finetune_budget);
  Get(u, "repr_clients", c.unlearn.repr_clients);
  std::string sel = "per_layer", base = "natural";
  Get(u, "selection", sel);
  Get(u, "log_base", base);
  if (sel == "per_layer") {
    c.unlearn.mode = SelectionMode::kPerLayer;
  } else if (sel == "global") {
    c.unlearn.mode = SelectionMode::kGlobal;
  } else {
    throw ConfigError("unknown selection mode '" + sel + "'");
  }
  if (base == "natural") {
    c.unlearn.log_base = LogBase::kNatural;
  } else if (base == "binary") {
    c.unlearn.log_base = LogBase::kBinary;
  } else {
    throw ConfigError("unknown log base '" + base + "'");
  }
  Get(u, "weighted_repr_average", c.unlearn.weighted_repr_average);
  Get(u, "reextract", c.unlearn.reextract);

  const auto& r = Section(j, "retrain");
  OnlyKeys(r, "retrain", {"budget", "window", "margin"});
  Get(r, "budget", c.retrain.budget);
  Get(r, "window", c.retrain.window);
  Get(r, "margin", c.retrain.margin);

  const auto& fi = Section(j, "fisher");
  OnlyKeys(fi, "fisher", {"sigma", "epsilon"});
  Get(fi, "sigma", c.fisher.sigma);
  Get(fi, "epsilon", c.fisher.epsilon);

  const auto& e = Section(j, "evaluation");
  OnlyKeys(e, "evaluation", {"mia", "mia_repeats", "kl"});
  Get(e, "mia", c.eval.mia);
  Get(e, "mia_repeats", c.eval.mia_repeats);
  Get(e, "kl", c.eval.kl);
  return c;
}

// Shortest decimal that round-trips the float, read back as a double, so
// 0.1f prints as 0.1.
inline double FloatForJson(float f) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, f);
  return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

inline ordered_json ConfigToJson(const ExperimentConfig& c) {
  const char* kinds[] = {"blobs", "cifar10", "idx"};
  ordered_json d = {{"kind", kinds[static_cast<int>(c.data.kind)]}};
  if (c.data.kind == DatasetKind::kBlobs) {
    d["num_classes"] = c.data.num_classes;
    d["channels"] = c.data.channels;
    d["image_size"] = c.data.image_size;
    d["train_per_class"] = c.data.train_per_class;
    d["test_per_class"] = c.data.test_per_class;
    d["pixel_noise"] = c.data.pixel_noise;
    d["amplitude_jitter"] = c.data.amplitude_jitter;
    d["task_seed"] = c.data.task_seed;
  } else if (c.data.kind == DatasetKind::kCifar10) {
    d["cifar_dir"] = c.data.cifar_dir.string();
  } else {
    d["idx_train_images"] = c.data.idx_train_images.string();
    d["idx_train_labels"] = c.data.idx_train_labels.string();
    d["idx_test_images"] = c.data.idx_test_images.string();
    d["idx_test_labels"] = c.data.idx_test_labels.string();
  }
  d["train_limit"] = c.data.train_limit;
  d["standardize"] = c.data.standardize;
  return {
      {"seed", c.seed},
      {"dataset", d},
      {"model", {{"name", c.model.name}, {"widths", c.model.widths}}},
      {"federation",
       {{"clients", c.clients},
        {"participants", c.fl.participants},
        {"bias", c.bias},
        {"method", FlMethodName(c.fl.method)},
        {"local_epochs", c.fl.local_epochs},
        {"learning_rate", FloatForJson(c.fl.learning_rate)},
        {"weight_decay", FloatForJson(c.fl.weight_decay)},
        {"batch_size", c.fl.batch_size},
        {"threads", c.fl.threads},
        {"weighted_aggregation", c.fl.weighted_aggregation}}},
      {"pretrain", {{"rounds", c.pretrain_rounds}}},
      {"unlearn",
       {{"targets", c.unlearn.targets},
        {"ratio", c.unlearn.ratio},
        {"finetune_budget", c.unlearn.finetune_budget},
        {"repr_clients", c.unlearn.repr_clients},
        {"selection", c.unlearn.mode == SelectionMode::kPerLayer ? "per_layer" : "global"},
        {"log_base", c.unlearn.log_base == LogBase::kNatural ? "natural" : "binary"},
        {"weighted_repr_average", c.unlearn.weighted_repr_average},
        {"reextract", c.unlearn.reextract}}},
      {"retrain",
       {{"budget", c.retrain.budget},
        {"window", c.retrain.window},
        {"margin", c.retrain.margin}}},
      {"fisher", {{"sigma", c.fisher.sigma}, {"epsilon", c.fisher.epsilon}}},
      {"evaluation",
       {{"mia", c.eval.mia}, {"mia_repeats", c.eval.mia_repeats}, {"kl", c.eval.kl}}},
  };
}

inline ordered_json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void WriteTextFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline void WriteJsonFile(const std::filesystem::path& path, const ordered_json& j) {
  WriteTextFile(path, j.dump(2) + "\n");
}

inline ordered_json OptionalNumber(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

inline ordered_json SplitJson(const AccuracySplit& a) {
  return {{"u_set_accuracy", OptionalNumber(a.u_acc)},
          {"r_set_accuracy", OptionalNumber(a.r_acc)},
          {"overall_accuracy", a.overall},
          {"u_count", a.u_count},
          {"r_count", a.r_count}};
}

// Per-round CSV: round,u_acc,r_acc (empty field when a split is empty).
inline std::string RoundsCsv(const std::vector<RoundResult>& history) {
  std::string s = "round,u_acc,r_acc\n";
  char buf[64];
  auto field = [&](const std::optional<double>& v) {
    if (!v) return std::string();
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    s += std::to_string(r.round) + "," + field(r.metrics.u_acc) + "," +
         field(r.metrics.r_acc) + "\n";
  }
  return s;
}

}  // namespace fedscrub::cli

#endif  // FEDSCRUB_TOOLS_JSON_IO_H_
