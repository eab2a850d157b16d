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

// Server-side channel scoring and pruning.
//
// Channels play the role of words and classes the role of documents. For a
// target class u and conv layer l with global representation A (classes x
// channels):
//
//   TF_j     = A[u, j] / sum_j A[u, j]
//   IDF_j    = log((1 + |U|) / (1 + #{classes i : A[i, j] >= mean_j A[i, :]}))
//   score_j  = TF_j * IDF_j
//
// and the highest-scoring ceil(R * C_l) channels of every layer are pruned.

#ifndef FEDSCRUB_SCRUB_H_
#define FEDSCRUB_SCRUB_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/errors.h"
#include "fedscrub/model.h"
#include "fedscrub/repr.h"

namespace fedscrub {

struct GlobalRepresentation {
  size_t num_classes = 0;
  std::vector<Matrix<double>> layers;
};

// Per-class mean over the participants that observed the class. With
// `weighted`, participants are weighted by their per-class sample counts.
// Throws if shapes disagree or some class was observed by nobody.
inline GlobalRepresentation AggregateReprs(
    std::span<const LocalRepresentation> reprs, bool weighted = false) {
  if (reprs.empty()) throw ConfigError("aggregate needs >= 1 representation");
  const auto& first = reprs.front();
  for (const auto& r : reprs) {
    bool ok = r.num_classes == first.num_classes &&
              r.layers.size() == first.layers.size() &&
              r.counts.size() == first.num_classes;
    for (size_t l = 0; ok && l < r.layers.size(); ++l) {
      ok = r.layers[l].rows == first.layers[l].rows &&
           r.layers[l].cols == first.layers[l].cols;
    }
    if (!ok) throw DimensionError("representations have mismatched shapes");
  }
  GlobalRepresentation g;
  g.num_classes = first.num_classes;
  for (size_t l = 0; l < first.layers.size(); ++l) {
    g.layers.emplace_back(first.num_classes, first.layers[l].cols, 0.0);
  }
  for (size_t y = 0; y < g.num_classes; ++y) {
    double total = 0.0;
    for (const auto& r : reprs) {
      if (!r.present(y)) continue;
      const double w = weighted ? static_cast<double>(r.counts[y]) : 1.0;
      total += w;
      for (size_t l = 0; l < g.layers.size(); ++l) {
        for (size_t c = 0; c < g.layers[l].cols; ++c) {
          g.layers[l].at(y, c) += w * r.layers[l].at(y, c);
        }
      }
    }
    if (total == 0.0) {
      throw ConfigError("class " + std::to_string(y) +
                        " was observed by no participant");
    }
    for (auto& m : g.layers) {
      for (size_t c = 0; c < m.cols; ++c) m.at(y, c) /= total;
    }
  }
  return g;
}

// Zeroes the columns of channels the mask has removed.
inline GlobalRepresentation MaskColumns(GlobalRepresentation g,
                                        const ChannelMask& mask) {
  for (size_t l = 0; l < g.layers.size() && l < mask.size(); ++l) {
    for (size_t c = 0; c < g.layers[l].cols; ++c) {
      if (mask[l][c]) continue;
      for (size_t y = 0; y < g.num_classes; ++y) g.layers[l].at(y, c) = 0.0;
    }
  }
  return g;
}

enum class LogBase { kNatural, kBinary };

inline double Log(double x, LogBase base) {
  return base == LogBase::kNatural ? std::log(x) : std::log2(x);
}

// Term frequency of every channel for `target`. A zero row yields all zeros
// and sets *zero_row (or prints a warning when zero_row is null).
inline std::vector<double> ComputeTf(const Matrix<double>& a, size_t target,
                                     bool* zero_row = nullptr) {
  if (target >= a.rows) {
    throw IndexError("target class " + std::to_string(target) +
                     " outside [0, " + std::to_string(a.rows) + ")");
  }
  const auto row = a.row(target);
  const double sum = std::accumulate(row.begin(), row.end(), 0.0);
  std::vector<double> tf(a.cols, 0.0);
  if (zero_row != nullptr) *zero_row = !(sum > 0.0);
  if (!(sum > 0.0)) {
    if (zero_row == nullptr) {
      std::cerr << "warning: class " << target
                << " has an all-zero activation row; TF is zero\n";
    }
    return tf;
  }
  for (size_t j = 0; j < a.cols; ++j) tf[j] = row[j] / sum;
  return tf;
}

// Number of classes whose activation on each channel is at least the class's
// own mean activation over channels.
inline std::vector<size_t> AboveMeanCounts(const Matrix<double>& a) {
  std::vector<size_t> df(a.cols, 0);
  for (size_t i = 0; i < a.rows; ++i) {
    const auto row = a.row(i);
    const double mean =
        std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(a.cols);
    for (size_t j = 0; j < a.cols; ++j) df[j] += row[j] >= mean;
  }
  return df;
}

inline std::vector<double> ComputeIdf(const Matrix<double>& a,
                                      LogBase base = LogBase::kNatural) {
  if (a.rows == 0) throw ConfigError("IDF needs >= 1 class");
  const auto df = AboveMeanCounts(a);
  std::vector<double> idf(a.cols);
  const double n = static_cast<double>(a.rows);
  for (size_t j = 0; j < a.cols; ++j) {
    idf[j] = Log((1.0 + n) / (1.0 + static_cast<double>(df[j])), base);
  }
  return idf;
}

inline std::vector<double> ComputeTfIdf(std::span<const double> tf,
                                        std::span<const double> idf) {
  if (tf.size() != idf.size()) {
    throw DimensionError("TF has " + std::to_string(tf.size()) +
                         " entries, IDF has " + std::to_string(idf.size()));
  }
  std::vector<double> out(tf.size());
  for (size_t j = 0; j < tf.size(); ++j) out[j] = tf[j] * idf[j];
  return out;
}

struct LayerScores {
  std::vector<double> tf;
  std::vector<double> idf;
  std::vector<double> tfidf;
};

struct TfIdfScores {
  size_t target = 0;
  std::vector<LayerScores> layers;
  bool zero_row = false;  // some layer had an all-zero target row
};

inline TfIdfScores ScoreTarget(const GlobalRepresentation& g, size_t target,
                               LogBase base = LogBase::kNatural) {
  TfIdfScores s;
  s.target = target;
  for (const auto& a : g.layers) {
    LayerScores ls;
    bool zero = false;
    ls.tf = ComputeTf(a, target, &zero);
    s.zero_row = s.zero_row || zero;
    ls.idf = ComputeIdf(a, base);
    ls.tfidf = ComputeTfIdf(ls.tf, ls.idf);
    s.layers.push_back(std::move(ls));
  }
  return s;
}

enum class SelectionMode {
  kPerLayer,  // top ceil(R * C_l) of each layer
  kGlobal,    // top ceil(R * sum_l C_l) across all layers
};

// Number of channels R asks for out of `channels`.
inline size_t PruneCount(double ratio, size_t channels) {
  return static_cast<size_t>(
      std::ceil(ratio * static_cast<double>(channels) - 1e-9));
}

// Picks channels to prune from the scores. Channels already removed by
// `existing` are never chosen again, and every layer keeps at least one
// channel. Ties go to the lower channel index.
inline PrunePlan SelectPruneChannels(const TfIdfScores& scores, double ratio,
                                     const ChannelMask* existing = nullptr,
                                     SelectionMode mode = SelectionMode::kPerLayer) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("prune ratio must lie in (0, 1)");
  }
  const size_t L = scores.layers.size();
  PrunePlan plan;
  plan.ratio = ratio;
  plan.channels.resize(L);
  auto alive = [&](size_t l, size_t c) {
    return existing == nullptr || l >= existing->size() || (*existing)[l][c];
  };
  std::vector<size_t> kept(L);
  for (size_t l = 0; l < L; ++l) {
    const size_t C = scores.layers[l].tfidf.size();
    for (size_t c = 0; c < C; ++c) kept[l] += alive(l, c);
  }
  if (mode == SelectionMode::kPerLayer) {
    for (size_t l = 0; l < L; ++l) {
      const auto& sc = scores.layers[l].tfidf;
      std::vector<size_t> cand;
      for (size_t c = 0; c < sc.size(); ++c) {
        if (alive(l, c)) cand.push_back(c);
      }
      std::stable_sort(cand.begin(), cand.end(),
                       [&](size_t a, size_t b) { return sc[a] > sc[b]; });
      const size_t cap = kept[l] > 0 ? kept[l] - 1 : 0;
      const size_t k = std::min(PruneCount(ratio, sc.size()), cap);
      plan.channels[l].assign(cand.begin(), cand.begin() + static_cast<long>(k));
      std::sort(plan.channels[l].begin(), plan.channels[l].end());
    }
    return plan;
  }
  struct Cand {
    double score;
    size_t layer, channel;
  };
  std::vector<Cand> cand;
  size_t total = 0;
  for (size_t l = 0; l < L; ++l) {
    const auto& sc = scores.layers[l].tfidf;
    total += sc.size();
    for (size_t c = 0; c < sc.size(); ++c) {
      if (alive(l, c)) cand.push_back({sc[c], l, c});
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) {
    return a.score > b.score;
  });
  size_t want = PruneCount(ratio, total);
  for (const Cand& c : cand) {
    if (want == 0) break;
    if (plan.channels[c.layer].size() + 1 >= kept[c.layer]) continue;
    plan.channels[c.layer].push_back(c.channel);
    --want;
  }
  for (auto& ch : plan.channels) std::sort(ch.begin(), ch.end());
  return plan;
}

struct MultiClassPruneOptions {
  LogBase log_base = LogBase::kNatural;
  SelectionMode mode = SelectionMode::kPerLayer;
  // When set, called with the current (masked) model before each target after
  // the first to collect a fresh global representation. Otherwise the
  // columns of already-pruned channels are zeroed in the original one.
  std::function<GlobalRepresentation(const PrunableModel&)> reextract;
};

struct MultiClassPruneResult {
  PrunableModel model;
  std::vector<PrunePlan> plans;
  std::vector<TfIdfScores> scores;
  std::vector<PrunableModel> stages;  // model after each target's pruning
};

// Removes one target class at a time: score on the current representation,
// select, mask, repeat.
inline MultiClassPruneResult MultiClassPrune(
    const PrunableModel& model, const GlobalRepresentation& global,
    std::span<const int> targets, double ratio,
    const MultiClassPruneOptions& opt = {}) {
  std::set<int> seen;
  for (int t : targets) {
    if (t < 0 || static_cast<size_t>(t) >= global.num_classes) {
      throw IndexError("target class " + std::to_string(t) + " out of range");
    }
    if (!seen.insert(t).second) {
      throw ConfigError("target class " + std::to_string(t) + " repeated");
    }
  }
  if (global.layers.size() != model.num_conv_layers()) {
    throw DimensionError("representation layers do not match model conv layers");
  }
  MultiClassPruneResult out;
  out.model = model;
  for (size_t i = 0; i < targets.size(); ++i) {
    GlobalRepresentation cur = (i > 0 && opt.reextract)
                                   ? opt.reextract(out.model)
                                   : MaskColumns(global, out.model.mask());
    if (i > 0 && opt.reextract) cur = MaskColumns(std::move(cur), out.model.mask());
    TfIdfScores sc = ScoreTarget(cur, static_cast<size_t>(targets[i]),
                                 opt.log_base);
    PrunePlan plan = SelectPruneChannels(sc, ratio, &out.model.mask(), opt.mode);
    out.model = ApplyMask(out.model, plan);
    out.plans.push_back(std::move(plan));
    out.scores.push_back(std::move(sc));
    out.stages.push_back(out.model);
  }
  return out;
}

// Classic text TF-IDF for one term of one document:
//   TF  = freq(t, e) / |e|
//   IDF = log((|E| + 1) / (#{documents containing t} + 1))
// `contains(doc_index, term)` decides document membership; by default a
// document contains a term when its frequency is positive.
template <typename Term>
using Corpus = std::vector<std::map<Term, double>>;

template <typename Term>
double TextTfIdf(
    const Corpus<Term>& corpus, const Term& term, size_t doc,
    const std::function<bool(size_t, const Term&)>& contains = nullptr,
    LogBase base = LogBase::kNatural) {
  if (corpus.empty()) throw ConfigError("TF-IDF needs a non-empty corpus");
  if (doc >= corpus.size()) throw IndexError("document index out of range");
  auto freq = [&](size_t d, const Term& t) {
    const auto it = corpus[d].find(t);
    return it == corpus[d].end() ? 0.0 : it->second;
  };
  double length = 0.0;
  for (const auto& [t, f] : corpus[doc]) length += f;
  const double tf = length > 0.0 ? freq(doc, term) / length : 0.0;
  size_t df = 0;
  for (size_t d = 0; d < corpus.size(); ++d) {
    df += contains ? contains(d, term) : freq(d, term) > 0.0;
  }
  const double idf = Log((static_cast<double>(corpus.size()) + 1.0) /
                             (static_cast<double>(df) + 1.0),
                         base);
  return tf * idf;
}

// CSV dump: layer,channel,tf,idf,tfidf
inline void WriteScoresCsv(std::ostream& os, const TfIdfScores& s) {
  os << "layer,channel,tf,idf,tfidf\n";
  os.precision(9);
  for (size_t l = 0; l < s.layers.size(); ++l) {
    const auto& ls = s.layers[l];
    for (size_t c = 0; c < ls.tfidf.size(); ++c) {
      os << l << ',' << c << ',' << ls.tf[c] << ',' << ls.idf[c] << ','
         << ls.tfidf[c] << '\n';
    }
  }
}

}  // namespace fedscrub

#endif  // FEDSCRUB_SCRUB_H_
