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

// Labeled image datasets: CIFAR-10 binary and IDX readers, a seeded
// synthetic blob generator, the label-biased client partitioner, class
// exclusion and batching.

#ifndef FEDSCRUB_DATA_H_
#define FEDSCRUB_DATA_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fedscrub/errors.h"
#include "fedscrub/rng.h"
#include "fedscrub/tensor.h"

namespace fedscrub {

struct LabeledDataset {
  Tensor images;  // N x C x H x W; loaders give [0, 1]
  std::vector<int> labels;
  size_t num_classes = 0;

  size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  void Validate() const {
    if (images.n() != labels.size()) {
      throw DimensionError("dataset has " + std::to_string(images.n()) +
                           " images and " + std::to_string(labels.size()) +
                           " labels");
    }
    for (int y : labels) {
      if (y < 0 || static_cast<size_t>(y) >= num_classes) {
        throw IndexError("label " + std::to_string(y) + " outside [0, " +
                         std::to_string(num_classes) + ")");
      }
    }
  }

  // Copies the listed samples, in order.
  LabeledDataset Subset(std::span<const size_t> indices) const {
    const Shape s = images.shape();
    LabeledDataset out;
    out.num_classes = num_classes;
    out.images = Tensor(Shape{indices.size(), s.c, s.h, s.w});
    out.labels.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
      const auto src = images.Sample(indices[i]);
      std::copy(src.begin(), src.end(), out.images.Sample(i).begin());
      out.labels.push_back(labels.at(indices[i]));
    }
    return out;
  }

  std::vector<size_t> ClassCounts() const {
    std::vector<size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<size_t>(y)];
    return counts;
  }
};

namespace internal {

inline std::vector<unsigned char> ReadFileBytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline uint32_t ReadBigEndian32(const std::vector<unsigned char>& b,
                                size_t off) {
  return (uint32_t{b[off]} << 24) | (uint32_t{b[off + 1]} << 16) |
         (uint32_t{b[off + 2]} << 8) | uint32_t{b[off + 3]};
}

}  // namespace internal

inline constexpr size_t kCifarRecordBytes = 3073;

// Reads one CIFAR-10 binary batch: records of 1 label byte followed by a
// 3 x 32 x 32 channel-major image.
inline LabeledDataset LoadCifar10File(const std::filesystem::path& path) {
  const auto bytes = internal::ReadFileBytes(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a positive multiple of 3073");
  }
  const size_t n = bytes.size() / kCifarRecordBytes;
  LabeledDataset ds;
  ds.num_classes = 10;
  ds.images = Tensor(Shape{n, 3, 32, 32});
  ds.labels.resize(n);
  auto px = ds.images.data();
  for (size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(path.string() + ": label byte " +
                        std::to_string(rec[0]) + " at record " +
                        std::to_string(i));
    }
    ds.labels[i] = rec[0];
    for (size_t j = 0; j < 3072; ++j) {
      px[i * 3072 + j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
  }
  return ds;
}

enum class Split { kTrain, kTest };

// Concatenates data_batch_{1..5}.bin (train) or reads test_batch.bin.
inline LabeledDataset LoadCifar10Binary(const std::filesystem::path& dir,
                                        Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::kTest) {
    files.push_back(dir / "test_batch.bin");
  } else {
    for (int i = 1; i <= 5; ++i) {
      files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    }
  }
  std::vector<LabeledDataset> parts;
  size_t total = 0;
  for (const auto& f : files) {
    parts.push_back(LoadCifar10File(f));
    total += parts.back().size();
  }
  LabeledDataset ds;
  ds.num_classes = 10;
  ds.images = Tensor(Shape{total, 3, 32, 32});
  size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(),
              ds.images.data().begin() + static_cast<long>(at * 3072));
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return ds;
}

// Reads an IDX image file (magic 0x00000803, N x H x W unsigned bytes) and
// its IDX label file (magic 0x00000801). num_classes is max label + 1.
inline LabeledDataset LoadIdx(const std::filesystem::path& images_path,
                              const std::filesystem::path& labels_path) {
  const auto img = internal::ReadFileBytes(images_path);
  const auto lab = internal::ReadFileBytes(labels_path);
  if (img.size() < 16 || internal::ReadBigEndian32(img, 0) != 0x00000803) {
    throw FormatError(images_path.string() + ": bad IDX image header");
  }
  if (lab.size() < 8 || internal::ReadBigEndian32(lab, 0) != 0x00000801) {
    throw FormatError(labels_path.string() + ": bad IDX label header");
  }
  const size_t n = internal::ReadBigEndian32(img, 4);
  const size_t h = internal::ReadBigEndian32(img, 8);
  const size_t w = internal::ReadBigEndian32(img, 12);
  if (img.size() != 16 + n * h * w) {
    throw FormatError(images_path.string() + ": payload length mismatch");
  }
  if (internal::ReadBigEndian32(lab, 4) != n || lab.size() != 8 + n) {
    throw FormatError(labels_path.string() + ": label count mismatch");
  }
  LabeledDataset ds;
  ds.images = Tensor(Shape{n, 1, h, w});
  ds.labels.resize(n);
  int max_label = -1;
  for (size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<size_t>(max_label + 1);
  auto px = ds.images.data();
  for (size_t i = 0; i < n * h * w; ++i) {
    px[i] = static_cast<float>(img[16 + i]) / 255.0f;
  }
  return ds;
}

// Class-conditioned Gaussian-blob images. Each class owns a fixed prototype:
// a colour (per-channel intensity in [min_intensity, 1]), a blob width, a blob count
// and an elongated orientation. Widths are evenly spaced over the classes and
// colours are spread by farthest-point selection. A sample
// places the class's blobs at uniformly random positions, jitters their
// amplitude, adds pixel noise and clips to [0, 1].
class BlobTask {
 public:
  struct Options {
    size_t max_blobs = 3;
    double pixel_noise = 0.1;  // std-dev
    double amplitude_jitter = 0.1;
    double min_sigma = 0.8;
    double max_sigma = 2.4;
    double min_intensity = 0.2;
    size_t palette_candidates = 512;
  };

  BlobTask(size_t num_classes, Shape image, uint64_t seed)
      : BlobTask(num_classes, image, seed, Options{}) {}

  BlobTask(size_t num_classes, Shape image, uint64_t seed, Options options)
      : num_classes_(num_classes), image_(image), options_(options) {
    if (num_classes == 0 || image.c == 0 || image.h < 4 || image.w < 4 ||
        options.max_blobs == 0) {
      throw ConfigError("blob task needs >= 1 class, >= 1 blob and images >= 4x4");
    }
    image_.n = 1;
    Rng rng(MixSeed({seed, 0xB10B}));
    std::vector<size_t> order(num_classes);
    for (size_t i = 0; i < num_classes; ++i) order[i] = i;
    rng.Shuffle(order.begin(), order.end());
    prototypes_.resize(num_classes);
    for (size_t i = 0; i < num_classes; ++i) {
      Prototype& p = prototypes_[i];
      const double t = num_classes == 1
                           ? 0.5
                           : static_cast<double>(order[i]) / (num_classes - 1);
      p.sigma = options_.min_sigma + t * (options_.max_sigma - options_.min_sigma);
      p.count = 1 + (order[i] * 7 + 3) % options_.max_blobs;
      p.elongation = rng.Uniform(1.0, 2.0);
      p.theta = rng.Uniform(0.0, 3.14159265358979323846);
    }
    AssignPalette(rng);
  }

  size_t num_classes() const { return num_classes_; }

  // n_per_class samples of every class, interleaved by class.
  LabeledDataset Generate(size_t n_per_class, uint64_t sample_seed) const {
    const size_t n = n_per_class * num_classes_;
    LabeledDataset ds;
    ds.num_classes = num_classes_;
    ds.images = Tensor(Shape{n, image_.c, image_.h, image_.w});
    ds.labels.resize(n);
    Rng rng(MixSeed({sample_seed, 0x5A3B1E}));
    for (size_t i = 0; i < n; ++i) {
      const size_t cls = i % num_classes_;
      ds.labels[i] = static_cast<int>(cls);
      Render(prototypes_[cls], rng, ds.images.Sample(i));
    }
    return ds;
  }

 private:
  struct Prototype {
    size_t count = 1;
    double sigma = 1, elongation = 1, theta = 0;
    std::vector<double> colour;
  };

  // Greedy farthest-point selection from a random candidate pool: the first
  // colour is the brightest candidate, each next one maximizes its distance
  // to the colours already taken.
  void AssignPalette(Rng& rng) {
    const size_t c = image_.c;
    const size_t pool = std::max(options_.palette_candidates, num_classes_);
    std::vector<std::vector<double>> cand(pool, std::vector<double>(c));
    for (auto& col : cand) {
      for (auto& v : col) v = rng.Uniform(options_.min_intensity, 1.0);
    }
    auto dist2 = [c](const std::vector<double>& x, const std::vector<double>& y) {
      double d = 0.0;
      for (size_t k = 0; k < c; ++k) d += (x[k] - y[k]) * (x[k] - y[k]);
      return d;
    };
    std::vector<double> nearest(pool, std::numeric_limits<double>::infinity());
    size_t pick = 0;
    double best = -1.0;
    for (size_t i = 0; i < pool; ++i) {
      double norm = 0.0;
      for (double v : cand[i]) norm += v * v;
      if (norm > best) {
        best = norm;
        pick = i;
      }
    }
    for (size_t cls = 0; cls < num_classes_; ++cls) {
      prototypes_[cls].colour = cand[pick];
      for (size_t i = 0; i < pool; ++i) {
        nearest[i] = std::min(nearest[i], dist2(cand[i], cand[pick]));
      }
      pick = static_cast<size_t>(
          std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
    }
  }

  void Render(const Prototype& p, Rng& rng, std::span<float> out) const {
    std::vector<double> px(out.size(), 0.0);
    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    const double sa = p.sigma * p.elongation;
    const double ia = 1.0 / (2.0 * sa * sa);
    const double ib = 1.0 / (2.0 * p.sigma * p.sigma);
    for (size_t b = 0; b < p.count; ++b) {
      const double cy = rng.Uniform(0.0, static_cast<double>(image_.h - 1));
      const double cx = rng.Uniform(0.0, static_cast<double>(image_.w - 1));
      const double scale = 1.0 + options_.amplitude_jitter * rng.Normal();
      for (size_t y = 0; y < image_.h; ++y) {
        for (size_t x = 0; x < image_.w; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          const double u = ct * dx + st * dy;
          const double v = -st * dx + ct * dy;
          const double e = scale * std::exp(-(u * u * ia + v * v * ib));
          for (size_t c = 0; c < image_.c; ++c) {
            px[(c * image_.h + y) * image_.w + x] += p.colour[c] * e;
          }
        }
      }
    }
    for (size_t i = 0; i < out.size(); ++i) {
      const double v = px[i] + options_.pixel_noise * rng.Normal();
      out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  size_t num_classes_;
  Shape image_;
  Options options_;
  std::vector<Prototype> prototypes_;
};

// One seeded call: prototypes and samples both derive from `seed`.
inline LabeledDataset SynthBlobs(size_t num_classes, size_t n_per_class,
                                 Shape image, uint64_t seed) {
  return BlobTask(num_classes, image, seed).Generate(n_per_class, seed);
}

// Per-channel mean and population standard deviation over every pixel of a
// dataset, accumulated in double in storage order.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats ComputeChannelStats(const LabeledDataset& ds) {
  const Shape s = ds.images.shape();
  if (ds.empty()) throw DimensionError("channel statistics of an empty dataset");
  const size_t plane = s.h * s.w;
  std::vector<double> s1(s.c, 0.0), s2(s.c, 0.0);
  const auto px = ds.images.data();
  for (size_t i = 0; i < s.n; ++i) {
    for (size_t c = 0; c < s.c; ++c) {
      const float* p = px.data() + (i * s.c + c) * plane;
      for (size_t j = 0; j < plane; ++j) {
        s1[c] += p[j];
        s2[c] += static_cast<double>(p[j]) * p[j];
      }
    }
  }
  ChannelStats st;
  const double count = static_cast<double>(s.n * plane);
  for (size_t c = 0; c < s.c; ++c) {
    const double mu = s1[c] / count;
    st.mean.push_back(mu);
    st.stddev.push_back(std::sqrt(std::max(0.0, s2[c] / count - mu * mu)));
  }
  return st;
}

// x <- (x - mean_c) / stddev_c. Constant channels (stddev 0) are only centred.
inline void Standardize(LabeledDataset& ds, const ChannelStats& st) {
  const Shape s = ds.images.shape();
  if (st.mean.size() != s.c || st.stddev.size() != s.c) {
    throw DimensionError("channel statistics for " + std::to_string(st.mean.size()) +
                         " channels applied to " + std::to_string(s.c));
  }
  const size_t plane = s.h * s.w;
  auto px = ds.images.data();
  for (size_t i = 0; i < s.n; ++i) {
    for (size_t c = 0; c < s.c; ++c) {
      const double sd = st.stddev[c] > 0.0 ? st.stddev[c] : 1.0;
      float* p = px.data() + (i * s.c + c) * plane;
      for (size_t j = 0; j < plane; ++j) {
        p[j] = static_cast<float>((p[j] - st.mean[c]) / sd);
      }
    }
  }
}

struct PartitionConfig {
  size_t num_clients = 100;
  double bias_probability = 0.1;  // q
  size_t num_classes = 10;        // M
  uint64_t seed = 0;
};

// shards[k] lists the dataset indices owned by client k.
using ClientShards = std::vector<std::vector<size_t>>;

// Client k belongs to group k mod M (the fixed split of clients into M
// groups). Group g of an m < M setup reuses client g mod m.
inline std::vector<std::vector<size_t>> ClientGroups(size_t num_clients,
                                                     size_t num_groups) {
  std::vector<std::vector<size_t>> groups(num_groups);
  if (num_clients >= num_groups) {
    for (size_t k = 0; k < num_clients; ++k) groups[k % num_groups].push_back(k);
  } else {
    for (size_t g = 0; g < num_groups; ++g) groups[g].push_back(g % num_clients);
  }
  return groups;
}

// Assigns each sample to its own label's group with probability q and to a
// uniformly chosen other group otherwise; within a group samples are dealt
// round-robin to the group's clients. Also returns the group of every sample
// through `group_of` when non-null.
inline ClientShards PartitionNonIid(std::span<const int> labels,
                                    const PartitionConfig& cfg,
                                    std::vector<size_t>* group_of = nullptr) {
  const size_t M = cfg.num_classes;
  if (cfg.num_clients == 0 || M == 0) {
    throw ConfigError("partition needs >= 1 client and >= 1 class");
  }
  if (!(cfg.bias_probability > 0.0 && cfg.bias_probability <= 1.0)) {
    throw ConfigError("bias probability must lie in (0, 1]");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= M) {
      throw IndexError("label " + std::to_string(y) +
                       " does not fit partition with " + std::to_string(M) +
                       " classes");
    }
  }
  const auto groups = ClientGroups(cfg.num_clients, M);
  std::vector<size_t> next(M, 0);
  ClientShards shards(cfg.num_clients);
  if (group_of != nullptr) group_of->assign(labels.size(), 0);
  Rng rng(MixSeed({cfg.seed, 0xDA7A}));
  for (size_t i = 0; i < labels.size(); ++i) {
    const size_t own = static_cast<size_t>(labels[i]);
    size_t g = own;
    if (M > 1 && rng.Uniform() >= cfg.bias_probability) {
      const size_t other = rng.Below(M - 1);
      g = other < own ? other : other + 1;
    }
    const auto& members = groups[g];
    shards[members[next[g]++ % members.size()]].push_back(i);
    if (group_of != nullptr) (*group_of)[i] = g;
  }
  return shards;
}

// Drops every sample whose label is in `targets`; order and labels of the
// rest are unchanged.
inline LabeledDataset ExcludeClasses(const LabeledDataset& ds,
                                     const std::set<int>& targets) {
  std::vector<size_t> keep;
  for (size_t i = 0; i < ds.size(); ++i) {
    if (!targets.contains(ds.labels[i])) keep.push_back(i);
  }
  if (keep.empty() && !ds.empty()) {
    std::cerr << "warning: class exclusion removed every sample\n";
  }
  return ds.Subset(keep);
}

// Index-level exclusion for shards over a shared dataset.
inline ClientShards ExcludeClassesFromShards(const LabeledDataset& ds,
                                             const ClientShards& shards,
                                             const std::set<int>& targets) {
  ClientShards out(shards.size());
  for (size_t k = 0; k < shards.size(); ++k) {
    for (size_t i : shards[k]) {
      if (!targets.contains(ds.labels.at(i))) out[k].push_back(i);
    }
  }
  return out;
}

// Splits [0, n) (or a permutation of it) into consecutive batches; the last
// batch may be partial.
inline std::vector<std::vector<size_t>> BatchIndices(size_t n, size_t batch_size,
                                                     uint64_t seed,
                                                     bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  if (shuffle) {
    Rng rng(MixSeed({seed, 0xBA7C}));
    rng.Shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += batch_size) {
    const size_t end = std::min(n, at + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(at),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

inline Batch GatherBatch(const LabeledDataset& ds,
                         std::span<const size_t> indices) {
  LabeledDataset sub = ds.Subset(indices);
  return Batch{std::move(sub.images), std::move(sub.labels)};
}

}  // namespace fedscrub

#endif  // FEDSCRUB_DATA_H_
