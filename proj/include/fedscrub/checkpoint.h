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

// Checkpoint file layout (all integers little-endian):
//
//   "FSCK"                      magic
//   u32 version                 kCheckpointVersion
//   u32 name length, bytes      model spec name
//   u32 C, u32 H, u32 W         input shape
//   u32 num_classes
//   u32 layer count, then per layer:
//     u32 descriptor length, u8 kind, kind-specific u32 fields
//       conv: cout k stride padding | avgpool: window | dense: out
//   per conv layer: u32 channels, ceil(channels / 8) mask bytes (LSB first,
//     bit set = kept)
//   u64 weight count, then that many f32 weights in declaration order

#ifndef FEDSCRUB_CHECKPOINT_H_
#define FEDSCRUB_CHECKPOINT_H_

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <variant>

#include "fedscrub/binary_io.h"
#include "fedscrub/errors.h"
#include "fedscrub/model.h"

namespace fedscrub {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "FSCK";

namespace internal {

enum class LayerKind : uint8_t {
  kConv = 1,
  kRelu = 2,
  kAvgPool = 3,
  kGlobalPool = 4,
  kDense = 5,
};

inline std::string EncodeLayer(const LayerDesc& desc) {
  ByteWriter w;
  std::visit(
      [&](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, ConvLayer>) {
          w.U8(static_cast<uint8_t>(LayerKind::kConv));
          w.U32(static_cast<uint32_t>(d.cout));
          w.U32(static_cast<uint32_t>(d.k));
          w.U32(static_cast<uint32_t>(d.stride));
          w.U32(static_cast<uint32_t>(d.padding));
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          w.U8(static_cast<uint8_t>(LayerKind::kRelu));
        } else if constexpr (std::is_same_v<T, AvgPoolLayer>) {
          w.U8(static_cast<uint8_t>(LayerKind::kAvgPool));
          w.U32(static_cast<uint32_t>(d.window));
        } else if constexpr (std::is_same_v<T, GlobalPoolLayer>) {
          w.U8(static_cast<uint8_t>(LayerKind::kGlobalPool));
        } else {
          w.U8(static_cast<uint8_t>(LayerKind::kDense));
          w.U32(static_cast<uint32_t>(d.out));
        }
      },
      desc);
  return w.Take();
}

inline LayerDesc DecodeLayer(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint layer descriptor");
  LayerDesc out;
  switch (static_cast<LayerKind>(r.U8())) {
    case LayerKind::kConv: {
      ConvLayer c;
      c.cout = r.U32();
      c.k = r.U32();
      c.stride = r.U32();
      c.padding = r.U32();
      out = c;
      break;
    }
    case LayerKind::kRelu:
      out = ReluLayer{};
      break;
    case LayerKind::kAvgPool:
      out = AvgPoolLayer{r.U32()};
      break;
    case LayerKind::kGlobalPool:
      out = GlobalPoolLayer{};
      break;
    case LayerKind::kDense:
      out = DenseLayer{r.U32()};
      break;
    default:
      throw FormatError("checkpoint: unknown layer kind");
  }
  r.ExpectEnd();
  return out;
}

}  // namespace internal

inline std::string EncodeModelSpec(const ModelSpec& spec) {
  ByteWriter w;
  w.U32(static_cast<uint32_t>(spec.name.size()));
  w.Bytes(spec.name);
  w.U32(static_cast<uint32_t>(spec.in_channels));
  w.U32(static_cast<uint32_t>(spec.in_height));
  w.U32(static_cast<uint32_t>(spec.in_width));
  w.U32(static_cast<uint32_t>(spec.num_classes));
  w.U32(static_cast<uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    const std::string enc = internal::EncodeLayer(l);
    w.U32(static_cast<uint32_t>(enc.size()));
    w.Bytes(enc);
  }
  return w.Take();
}

inline ModelSpec DecodeModelSpec(ByteReader& r) {
  ModelSpec spec;
  spec.name = std::string(r.Bytes(r.U32()));
  spec.in_channels = r.U32();
  spec.in_height = r.U32();
  spec.in_width = r.U32();
  spec.num_classes = r.U32();
  const uint32_t n = r.U32();
  for (uint32_t i = 0; i < n; ++i) {
    spec.layers.push_back(internal::DecodeLayer(r.Bytes(r.U32())));
  }
  return spec;
}

inline std::string SerializeCheckpoint(const PrunableModel& model) {
  ByteWriter w;
  w.Bytes(kCheckpointMagic);
  w.U32(kCheckpointVersion);
  w.Bytes(EncodeModelSpec(model.spec()));
  for (const auto& m : model.mask()) {
    w.U32(static_cast<uint32_t>(m.size()));
    for (size_t b = 0; b < m.size(); b += 8) {
      uint8_t byte = 0;
      for (size_t j = 0; j < 8 && b + j < m.size(); ++j) {
        if (m[b + j]) byte |= static_cast<uint8_t>(1u << j);
      }
      w.U8(byte);
    }
  }
  w.U64(model.num_params());
  w.F32s(model.params());
  return w.Take();
}

inline PrunableModel DeserializeCheckpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.Bytes(4) != kCheckpointMagic) {
    throw FormatError("checkpoint: bad magic");
  }
  const uint32_t version = r.U32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(version));
  }
  ModelSpec spec = DecodeModelSpec(r);
  PrunableModel model;
  try {
    model = PrunableModel(std::move(spec));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid model spec: ") + e.what());
  }
  ChannelMask mask(model.num_conv_layers());
  for (size_t l = 0; l < mask.size(); ++l) {
    const uint32_t ch = r.U32();
    if (ch != model.conv_channels(l)) {
      throw FormatError("checkpoint: mask width mismatch at conv layer " +
                        std::to_string(l));
    }
    mask[l].resize(ch);
    for (size_t b = 0; b < ch; b += 8) {
      const uint8_t byte = r.U8();
      for (size_t j = 0; j < 8 && b + j < ch; ++j) {
        mask[l][b + j] = (byte >> j) & 1u;
      }
    }
  }
  if (r.U64() != model.num_params()) {
    throw FormatError("checkpoint: weight count does not match spec");
  }
  r.F32s(model.params());
  r.ExpectEnd();
  // Weights are stored already masked; SetMask re-zeroes the same entries.
  try {
    model.SetMask(std::move(mask));
  } catch (const PruneRefusedError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return model;
}

inline void SaveCheckpoint(const PrunableModel& model,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = SerializeCheckpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

inline PrunableModel LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  return DeserializeCheckpoint(bytes);
}

}  // namespace fedscrub

#endif  // FEDSCRUB_CHECKPOINT_H_
