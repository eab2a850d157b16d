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

// Property checks for the channel TF-IDF pipeline, shared by the unit tests
// and the acceptance runner. Each check returns a list of violations.

#ifndef FEDSCRUB_TESTS_SUPPORT_SCRUB_PROPS_H_
#define FEDSCRUB_TESTS_SUPPORT_SCRUB_PROPS_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "fedscrub/rng.h"
#include "fedscrub/scrub.h"

namespace fedscrub::testing {

// Random non-negative representation. Entries are exactly zero with
// probability `zero_p`; each class row is all zero with probability `zero_row_p`.
inline GlobalRepresentation RandomGlobalRepr(Rng& rng, size_t classes,
                                             const std::vector<size_t>& channels,
                                             double zero_p = 0.2,
                                             double zero_row_p = 0.05) {
  GlobalRepresentation g;
  g.num_classes = classes;
  for (size_t cols : channels) {
    Matrix<double> m(classes, cols, 0.0);
    for (size_t i = 0; i < classes; ++i) {
      if (rng.Uniform() < zero_row_p) continue;
      for (size_t j = 0; j < cols; ++j) {
        if (rng.Uniform() >= zero_p) m.at(i, j) = rng.Uniform(0.0, 5.0);
      }
    }
    g.layers.push_back(std::move(m));
  }
  return g;
}

inline GlobalRepresentation RandomGlobalRepr(Rng& rng) {
  const size_t classes = 1 + rng.Below(12);
  std::vector<size_t> channels(1 + rng.Below(4));
  for (size_t& c : channels) c = 2 + rng.Below(40);
  return RandomGlobalRepr(rng, classes, channels);
}

// TF sums to one on nonzero rows and is non-negative; IDF lies in
// [0, ln(1 + |U|)]; the prune plan is unchanged when ln becomes log2.
inline std::vector<std::string> CheckTfIdfAlgebra(const GlobalRepresentation& g,
                                                  size_t target) {
  std::vector<std::string> bad;
  const double idf_max = std::log(1.0 + static_cast<double>(g.num_classes));
  const TfIdfScores nat = ScoreTarget(g, target, LogBase::kNatural);
  const TfIdfScores bin = ScoreTarget(g, target, LogBase::kBinary);
  for (size_t l = 0; l < g.layers.size(); ++l) {
    const auto& s = nat.layers[l];
    const auto row = g.layers[l].row(target);
    const bool nonzero = std::any_of(row.begin(), row.end(),
                                     [](double v) { return v > 0.0; });
    const double sum = std::accumulate(s.tf.begin(), s.tf.end(), 0.0);
    if (nonzero && std::abs(sum - 1.0) > 1e-6) {
      bad.push_back("layer " + std::to_string(l) + " TF sums to " + std::to_string(sum));
    }
    if (!nonzero && sum != 0.0) {
      bad.push_back("layer " + std::to_string(l) + " zero row has nonzero TF");
    }
    for (double tf : s.tf) {
      if (tf < 0.0) bad.push_back("layer " + std::to_string(l) + " negative TF");
    }
    for (double idf : s.idf) {
      if (idf < 0.0 || idf > idf_max + 1e-12) {
        bad.push_back("layer " + std::to_string(l) + " IDF " + std::to_string(idf) +
                      " outside [0, " + std::to_string(idf_max) + "]");
      }
    }
  }
  for (double r : {0.05, 0.1, 0.2, 0.3, 0.5, 0.9}) {
    for (auto mode : {SelectionMode::kPerLayer, SelectionMode::kGlobal}) {
      if (SelectPruneChannels(nat, r, nullptr, mode).channels !=
          SelectPruneChannels(bin, r, nullptr, mode).channels) {
        bad.push_back("plan changes under log2 at R=" + std::to_string(r));
      }
    }
  }
  return bad;
}

// Largest deviation between the channel pipeline and the text TF-IDF oracle
// fed a corpus with one document per class and one term per channel, with
// document membership given by the row-mean rule. TF and IDF are compared
// separately (TF via an all-absent membership, where IDF is ln(|U| + 1)) and
// as the product.
inline double OracleMaxDeviation(const GlobalRepresentation& g, size_t target) {
  double worst = 0.0;
  const TfIdfScores sc = ScoreTarget(g, target);
  const double n = static_cast<double>(g.num_classes);
  for (size_t l = 0; l < g.layers.size(); ++l) {
    const auto& a = g.layers[l];
    Corpus<size_t> corpus(a.rows);
    for (size_t i = 0; i < a.rows; ++i)
      for (size_t j = 0; j < a.cols; ++j) corpus[i][j] = a.at(i, j);
    std::vector<double> row_mean(a.rows, 0.0);
    for (size_t i = 0; i < a.rows; ++i) {
      for (size_t j = 0; j < a.cols; ++j) row_mean[i] += a.at(i, j);
      row_mean[i] /= static_cast<double>(a.cols);
    }
    const std::function<bool(size_t, const size_t&)> above =
        [&](size_t d, const size_t& t) { return a.at(d, t) >= row_mean[d]; };
    const std::function<bool(size_t, const size_t&)> never =
        [](size_t, const size_t&) { return false; };
    for (size_t j = 0; j < a.cols; ++j) {
      const double score = TextTfIdf(corpus, j, target, above);
      const double tf = TextTfIdf(corpus, j, target, never) / std::log(n + 1.0);
      worst = std::max(worst, std::abs(score - sc.layers[l].tfidf[j]));
      worst = std::max(worst, std::abs(tf - sc.layers[l].tf[j]));
      if (tf > 0.0) {
        worst = std::max(worst, std::abs(score / tf - sc.layers[l].idf[j]));
      }
    }
  }
  return worst;
}

}  // namespace fedscrub::testing

#endif  // FEDSCRUB_TESTS_SUPPORT_SCRUB_PROPS_H_
