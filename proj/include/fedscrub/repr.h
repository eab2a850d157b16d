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

// Client-side class x channel representation of a conv model.
//
// For conv layer l with output O_l, every image contributes
// GlobalAvgPool(ReLU(O_l)), one non-negative value per channel; rows of the
// representation are the per-class means of those values.
//
// Wire format (little-endian):
//   "FSRP", u32 version, u32 layer count,
//   per layer: u32 num_classes, u32 channels, num_classes * channels f32
//     (row-major, class-major),
//   u32 num_classes, then one u32 sample count per class.

#ifndef FEDSCRUB_REPR_H_
#define FEDSCRUB_REPR_H_

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedscrub/binary_io.h"
#include "fedscrub/data.h"
#include "fedscrub/errors.h"
#include "fedscrub/model.h"
#include "fedscrub/nn.h"

namespace fedscrub {

inline constexpr uint32_t kReprVersion = 1;
inline constexpr std::string_view kReprMagic = "FSRP";

// Dense row-major rows x cols matrix.
template <typename T>
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<T> v;

  Matrix() = default;
  Matrix(size_t r, size_t c, T fill = T{}) : rows(r), cols(c), v(r * c, fill) {}

  T& at(size_t r, size_t c) { return v[r * cols + c]; }
  T at(size_t r, size_t c) const { return v[r * cols + c]; }
  std::span<const T> row(size_t r) const {
    return std::span<const T>(v).subspan(r * cols, cols);
  }
  bool operator==(const Matrix&) const = default;
};

struct LocalRepresentation {
  size_t num_classes = 0;
  std::vector<Matrix<float>> layers;  // per conv ordinal: num_classes x Cout
  std::vector<uint32_t> counts;       // samples seen per class

  bool present(size_t cls) const { return counts.at(cls) > 0; }
  bool operator==(const LocalRepresentation&) const = default;

  // Bytes of the serialized form.
  size_t payload_bytes() const {
    size_t n = 4 + 4 + 4;
    for (const auto& m : layers) n += 8 + 4 * m.rows * m.cols;
    return n + 4 + 4 * counts.size();
  }
};

// Builds the representation from the listed samples (all samples when
// `indices` is empty). Absent classes keep a zero row with count 0.
inline LocalRepresentation ExtractLocalRepr(const PrunableModel& model,
                                            const LabeledDataset& ds,
                                            std::span<const size_t> indices = {},
                                            size_t chunk = 64) {
  std::vector<size_t> all;
  if (indices.empty()) {
    all.resize(ds.size());
    std::iota(all.begin(), all.end(), size_t{0});
    indices = all;
  }
  if (indices.empty()) throw ConfigError("representation of an empty dataset");
  const size_t U = model.num_classes();
  const size_t L = model.num_conv_layers();
  std::vector<std::vector<double>> sums(L);
  for (size_t l = 0; l < L; ++l) sums[l].assign(U * model.conv_channels(l), 0.0);
  std::vector<uint32_t> counts(U, 0);
  ForwardTrace trace;
  for (size_t at = 0; at < indices.size(); at += chunk) {
    const auto part = indices.subspan(at, std::min(chunk, indices.size() - at));
    const Batch b = GatherBatch(ds, part);
    for (int y : b.labels) {
      if (y < 0 || static_cast<size_t>(y) >= U) {
        throw IndexError("label " + std::to_string(y) + " outside model classes");
      }
      ++counts[static_cast<size_t>(y)];
    }
    model.Forward(b.images, &trace);
    for (size_t l = 0; l < L; ++l) {
      const Tensor& out = trace.act[model.conv_layer_index(l) + 1];
      const Tensor pooled = GlobalAvgPoolForward(ReluForward(out));
      const size_t C = pooled.c();
      for (size_t n = 0; n < pooled.n(); ++n) {
        const auto y = static_cast<size_t>(b.labels[n]);
        for (size_t c = 0; c < C; ++c) sums[l][y * C + c] += pooled.at(n, c, 0, 0);
      }
    }
  }
  LocalRepresentation rep;
  rep.num_classes = U;
  rep.counts = counts;
  for (size_t l = 0; l < L; ++l) {
    const size_t C = model.conv_channels(l);
    Matrix<float> m(U, C, 0.0f);
    for (size_t y = 0; y < U; ++y) {
      if (counts[y] == 0) continue;
      for (size_t c = 0; c < C; ++c) {
        m.at(y, c) = static_cast<float>(sums[l][y * C + c] / counts[y]);
      }
    }
    rep.layers.push_back(std::move(m));
  }
  return rep;
}

inline std::string SerializeRepr(const LocalRepresentation& rep) {
  ByteWriter w;
  w.Bytes(kReprMagic);
  w.U32(kReprVersion);
  w.U32(static_cast<uint32_t>(rep.layers.size()));
  for (const auto& m : rep.layers) {
    w.U32(static_cast<uint32_t>(m.rows));
    w.U32(static_cast<uint32_t>(m.cols));
    w.F32s(m.v);
  }
  w.U32(static_cast<uint32_t>(rep.counts.size()));
  for (uint32_t c : rep.counts) w.U32(c);
  return w.Take();
}

inline LocalRepresentation DeserializeRepr(std::string_view bytes) {
  ByteReader r(bytes, "representation");
  if (r.Bytes(4) != kReprMagic) throw FormatError("representation: bad magic");
  const uint32_t version = r.U32();
  if (version != kReprVersion) {
    throw FormatError("representation: unsupported version " +
                      std::to_string(version));
  }
  LocalRepresentation rep;
  const uint32_t layers = r.U32();
  for (uint32_t l = 0; l < layers; ++l) {
    const uint32_t rows = r.U32();
    const uint32_t cols = r.U32();
    if (static_cast<uint64_t>(rows) * cols * 4 > r.remaining()) {
      throw FormatError("representation: layer " + std::to_string(l) +
                        " header exceeds payload");
    }
    if (l == 0) {
      rep.num_classes = rows;
    } else if (rows != rep.num_classes) {
      throw FormatError("representation: inconsistent class count");
    }
    Matrix<float> m(rows, cols);
    r.F32s(m.v);
    rep.layers.push_back(std::move(m));
  }
  const uint32_t nc = r.U32();
  if (layers > 0 && nc != rep.num_classes) {
    throw FormatError("representation: count vector length mismatch");
  }
  rep.num_classes = nc;
  rep.counts.resize(nc);
  for (auto& c : rep.counts) c = r.U32();
  r.ExpectEnd();
  return rep;
}

}  // namespace fedscrub

#endif  // FEDSCRUB_REPR_H_
