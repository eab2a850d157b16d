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

#ifndef FEDSCRUB_TENSOR_H_
#define FEDSCRUB_TENSOR_H_

#include <array>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedscrub/errors.h"

namespace fedscrub {

// Extents of a dense NCHW tensor.
struct Shape {
  size_t n = 0;
  size_t c = 0;
  size_t h = 0;
  size_t w = 0;

  size_t size() const { return n * c * h * w; }
  size_t per_sample() const { return c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string ToString() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

// Dense 4-D float tensor in row-major NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<float> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor data length " +
                           std::to_string(data_.size()) +
                           " does not match shape " + shape_.ToString());
    }
  }

  const Shape& shape() const { return shape_; }
  size_t n() const { return shape_.n; }
  size_t c() const { return shape_.c; }
  size_t h() const { return shape_.h; }
  size_t w() const { return shape_.w; }
  size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  size_t Offset(size_t n, size_t c, size_t h, size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(size_t n, size_t c, size_t h, size_t w) {
    return data_[Offset(n, c, h, w)];
  }
  float at(size_t n, size_t c, size_t h, size_t w) const {
    return data_[Offset(n, c, h, w)];
  }

  // View of sample i's C*H*W values.
  std::span<const float> Sample(size_t i) const {
    return std::span<const float>(data_).subspan(i * shape_.per_sample(),
                                                 shape_.per_sample());
  }
  std::span<float> Sample(size_t i) {
    return std::span<float>(data_).subspan(i * shape_.per_sample(),
                                           shape_.per_sample());
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace fedscrub

#endif  // FEDSCRUB_TENSOR_H_
