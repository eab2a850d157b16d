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

// fedscrub: command-line driver for federated class unlearning experiments.
//
//   fedscrub pretrain --config cfg.json --out run/
//   fedscrub retrain  --config cfg.json --out run/
//   fedscrub unlearn  --config cfg.json --out run/   (reads run/pretrained.ckpt)
//   fedscrub fisher   --config cfg.json --out run/
//   fedscrub compare  --config cfg.json --out run/
//   fedscrub all      --config cfg.json --out run/
//   fedscrub evaluate --config cfg.json --checkpoint run/unlearned.ckpt
//
// Every JSON report is a pure function of the config and seed. Wall-clock
// timings are kept apart in run/manifest.json.

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "fedscrub/checkpoint.h"
#include "fedscrub/experiment.h"
#include "fedscrub/metrics.h"
#include "fedscrub/scrub.h"
#include "json_io.h"

namespace fedscrub::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int> target_class;
  std::optional<double> ratio;
  std::optional<size_t> rounds;
  std::optional<double> target_accuracy;
  std::string checkpoint;
  std::string out = "run";
  bool deterministic = false;
  bool quiet = false;
};

class Session {
 public:
  explicit Session(const Options& o) : opt_(o), out_(o.out) {
    cfg_ = ConfigFromJson(ReadJsonFile(o.config));
    if (o.seed) cfg_.seed = *o.seed;
    if (o.target_class) cfg_.unlearn.targets = {*o.target_class};
    if (o.ratio) cfg_.unlearn.ratio = *o.ratio;
    if (o.deterministic) cfg_.fl.threads = 1;
    cfg_.Validate();
    fs::create_directories(out_);
  }

  const Task& task() {
    if (!task_) task_ = LoadTask(cfg_);
    return *task_;
  }

  void Pretrain() {
    auto t0 = Clock::now();
    Log("pretraining for " + std::to_string(opt_.rounds.value_or(cfg_.pretrain_rounds)) + " rounds");
    const TrainResult r = fedscrub::Pretrain(cfg_, task(), opt_.rounds);
    SaveCheckpoint(r.model, out_ / "pretrained.ckpt");
    WriteTextFile(out_ / "pretrain.csv", RoundsCsv(r.history));
    const auto acc = EvalAccuracySplit(r.model, task().test, cfg_.targets());
    WriteJsonFile(out_ / "pretrain.json",
                  {{"command", "pretrain"},
                   {"config", ConfigToJson(cfg_)},
                   {"rounds", r.rounds},
                   {"accuracy", SplitJson(acc)}});
    Stamp("pretrain", t0);
    pretrained_ = r.model;
  }

  void Retrain() {
    auto t0 = Clock::now();
    Log("full retraining without the targets");
    const RetrainArm arm = fedscrub::Retrain(cfg_, task(), opt_.rounds);
    SaveCheckpoint(arm.run.model, out_ / "retrained.ckpt");
    WriteTextFile(out_ / "retrain.csv", RoundsCsv(arm.run.history));
    const auto acc = EvalAccuracySplit(arm.run.model, task().test, cfg_.targets());
    WriteJsonFile(out_ / "retrain.json",
                  {{"command", "retrain"},
                   {"config", ConfigToJson(cfg_)},
                   {"budget", arm.run.rounds},
                   {"target_accuracy", arm.target_accuracy},
                   {"rounds_to_target", arm.rounds_to_target
                                            ? ordered_json(*arm.rounds_to_target)
                                            : ordered_json(nullptr)},
                   {"accuracy", SplitJson(acc)}});
    Stamp("retrain", t0);
  }

  void Unlearn() {
    auto t0 = Clock::now();
    const PrunableModel& pre = Pretrained();
    const auto target = TargetAccuracy();
    Log("pruning and fine-tuning");
    const UnlearnResult r = fedscrub::Unlearn(cfg_, task(), pre, target);
    SaveCheckpoint(r.model, out_ / "unlearned.ckpt");
    WriteTextFile(out_ / "finetune.csv", RoundsCsv(r.finetune.history));
    std::ostringstream scores;
    for (const auto& s : r.scores) WriteScoresCsv(scores, s);
    WriteTextFile(out_ / "scores.csv", scores.str());

    ordered_json stages = ordered_json::array();
    for (const auto& s : r.stages) {
      stages.push_back({{"stage", s.stage},
                        {"rounds", s.rounds},
                        {"converged", s.converged},
                        {"accuracy", SplitJson(s.accuracy)}});
    }
    ordered_json plans = ordered_json::array();
    for (const auto& p : r.plans) {
      plans.push_back({{"ratio", p.ratio}, {"channels", p.channels}});
    }
    size_t payload = 0;
    for (const auto& l : r.local_reprs) payload += l.payload_bytes();
    WriteJsonFile(out_ / "unlearn.json",
                  {{"command", "unlearn"},
                   {"config", ConfigToJson(cfg_)},
                   {"target_accuracy", OptionalNumber(target)},
                   {"representation_clients", r.local_reprs.size()},
                   {"representation_bytes", payload},
                   {"plans", plans},
                   {"stages", stages}});
    Stamp("unlearn", t0);
  }

  void Fisher() {
    auto t0 = Clock::now();
    const PrunableModel& pre = Pretrained();
    const auto target = TargetAccuracy();
    Log("Fisher baseline");
    const FisherArm arm = RunFisher(cfg_, task(), pre, target);
    SaveCheckpoint(arm.finetune.model, out_ / "fisher.ckpt");
    WriteTextFile(out_ / "fisher.csv", RoundsCsv(arm.finetune.history));
    const auto& ts = cfg_.targets();
    WriteJsonFile(
        out_ / "fisher.json",
        {{"command", "fisher"},
         {"config", ConfigToJson(cfg_)},
         {"participants", FisherParticipants(cfg_)},
         {"target_accuracy", OptionalNumber(target)},
         {"after_update", SplitJson(EvalAccuracySplit(arm.updated, task().test, ts))},
         {"fine_tuned", SplitJson(EvalAccuracySplit(arm.finetune.model, task().test, ts))},
         {"rounds", arm.finetune.rounds},
         {"converged", arm.finetune.converged}});
    Stamp("fisher", t0);
  }

  // Speedup, membership inference and KL between the unlearned model and the
  // retrained reference. Needs retrain and unlearn outputs in the run dir.
  void Compare() {
    auto t0 = Clock::now();
    const auto retrain = ReadJsonFile(out_ / "retrain.json");
    const auto unlearn = ReadJsonFile(out_ / "unlearn.json");
    const PrunableModel retrained = LoadCheckpoint(out_ / "retrained.ckpt");
    const PrunableModel unlearned = LoadCheckpoint(out_ / "unlearned.ckpt");
    const auto& ts = cfg_.targets();

    std::optional<size_t> rt;
    if (!retrain.at("rounds_to_target").is_null()) {
      rt = retrain.at("rounds_to_target").get<size_t>();
    }
    const auto& last = unlearn.at("stages").back();
    std::optional<size_t> ft;
    if (last.at("converged").get<bool>()) ft = last.at("rounds").get<size_t>();
    const SpeedupResult sp = MeasureSpeedup(ft, rt);

    ordered_json report = {
        {"command", "compare"},
        {"config", ConfigToJson(cfg_)},
        {"speedup",
         {{"retrain_rounds", rt ? ordered_json(*rt) : ordered_json(nullptr)},
          {"finetune_rounds", ft ? ordered_json(*ft) : ordered_json(nullptr)},
          {"ratio", OptionalNumber(sp.ratio)}}}};
    if (cfg_.eval.mia) {
      const auto [members, nonmembers] = MiaPools(task(), ts);
      const MiaOptions mo{cfg_.eval.mia_repeats, cfg_.seed};
      const double ours = MiaAttack(unlearned, members, nonmembers, mo);
      const double ref = MiaAttack(retrained, members, nonmembers, mo);
      ordered_json mia = {{"attack", "threshold-MIA"},
                          {"unlearned", ours},
                          {"retrained", ref},
                          {"gap", std::abs(ours - ref)}};
      if (fs::exists(out_ / "pretrained.ckpt")) {
        mia["pretrained"] =
            MiaAttack(LoadCheckpoint(out_ / "pretrained.ckpt"), members, nonmembers, mo);
      }
      report["mia"] = mia;
    }
    if (cfg_.eval.kl) {
      report["kl_accuracy_distribution"] =
          KlAccuracyDist(retrained, unlearned, task().test, ts);
    }
    WriteJsonFile(out_ / "compare.json", report);
    Stamp("compare", t0);
  }

  void Evaluate() {
    if (opt_.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
    const PrunableModel m = LoadCheckpoint(opt_.checkpoint);
    const auto& test = task().test;
    const auto per_class = PerClassAccuracy(m, test);
    const ordered_json j = {{"command", "evaluate"},
                            {"checkpoint", fs::path(opt_.checkpoint).filename().string()},
                            {"accuracy", SplitJson(EvalAccuracySplit(m, test, cfg_.targets()))},
                            {"per_class_accuracy", per_class}};
    std::cout << j.dump(2) << "\n";
  }

 private:
  using Clock = std::chrono::steady_clock;

  const PrunableModel& Pretrained() {
    if (!pretrained_) {
      const fs::path p = opt_.checkpoint.empty() ? out_ / "pretrained.ckpt"
                                                 : fs::path(opt_.checkpoint);
      if (!fs::exists(p)) {
        throw ConfigError("no pretrained model at '" + p.string() +
                          "'; run 'fedscrub pretrain' first");
      }
      pretrained_ = LoadCheckpoint(p);
    }
    return *pretrained_;
  }

  // --target-accuracy wins, then the retrain report; otherwise the whole
  // fine-tune budget is used.
  std::optional<double> TargetAccuracy() const {
    if (opt_.target_accuracy) return opt_.target_accuracy;
    const fs::path p = out_ / "retrain.json";
    if (fs::exists(p)) return ReadJsonFile(p).at("target_accuracy").get<double>();
    return std::nullopt;
  }

  void Log(const std::string& msg) const {
    if (!opt_.quiet) std::cerr << "[fedscrub] " << msg << std::endl;
  }

  void Stamp(const std::string& step, Clock::time_point t0) {
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const fs::path p = out_ / "manifest.json";
    ordered_json m = fs::exists(p) ? ReadJsonFile(p) : ordered_json::object();
    m["seed"] = cfg_.seed;
    m["wall_seconds"][step] = secs;
    WriteJsonFile(p, m);
    Log(step + " done in " + std::to_string(secs) + " s");
  }

  Options opt_;
  fs::path out_;
  ExperimentConfig cfg_;
  std::optional<Task> task_;
  std::optional<PrunableModel> pretrained_;
};

}  // namespace
}  // namespace fedscrub::cli

int main(int argc, char** argv) {
  using fedscrub::cli::Options;
  using fedscrub::cli::Session;
  CLI::App app{"Federated class unlearning by TF-IDF channel pruning"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("-o,--out", o.out, "run directory")->capture_default_str();
    sub->add_flag("--deterministic", o.deterministic, "single-threaded execution");
    sub->add_flag("-q,--quiet", o.quiet, "no progress output");
    sub->add_option("--target-class", o.target_class, "forget this single class");
    sub->add_option("--ratio", o.ratio, "pruning ratio R in (0, 1)");
  };

  struct Command {
    const char* name;
    const char* help;
    void (Session::*run)();
  };
  const Command commands[] = {
      {"pretrain", "federated training on all classes", &Session::Pretrain},
      {"retrain", "retrain from scratch without the targets", &Session::Retrain},
      {"unlearn", "TF-IDF channel pruning plus fine-tuning", &Session::Unlearn},
      {"fisher", "Fisher-information unlearning baseline", &Session::Fisher},
      {"compare", "speedup, membership inference and KL report", &Session::Compare},
      {"evaluate", "accuracy of a checkpoint on the test split", &Session::Evaluate},
  };
  std::vector<std::pair<CLI::App*, void (Session::*)()>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "pretrain" || std::string(c.name) == "retrain") {
      sub->add_option("--rounds", o.rounds, "override the round budget");
    }
    if (std::string(c.name) == "unlearn" || std::string(c.name) == "fisher") {
      sub->add_option("--target-accuracy", o.target_accuracy,
                      "stop fine-tuning at this R-set accuracy (percent)");
    }
    if (std::string(c.name) != "pretrain" && std::string(c.name) != "retrain" &&
        std::string(c.name) != "compare") {
      sub->add_option("--checkpoint", o.checkpoint, "model checkpoint to load");
    }
    subs.emplace_back(sub, c.run);
  }
  CLI::App* all = app.add_subcommand("all", "pretrain, retrain, unlearn, fisher, compare");
  add_common(all);

  CLI11_PARSE(app, argc, argv);
  try {
    Session s(o);
    if (all->parsed()) {
      s.Pretrain();
      s.Retrain();
      s.Unlearn();
      s.Fisher();
      s.Compare();
      return 0;
    }
    for (auto& [sub, run] : subs) {
      if (sub->parsed()) (s.*run)();
    }
  } catch (const std::exception& e) {
    std::cerr << "fedscrub: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
