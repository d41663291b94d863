#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eapnet {

struct Shape4 {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense 4-D tensor, contiguous in batch -> channel -> row -> column order.
// The scalar type doubles as the precision mode: float for normal use,
// double for gradient checking.
template <typename T>
struct TensorT {
  Shape4 shape{};
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape4 s, T fill = T(0))
      : shape(s), data(static_cast<size_t>(s.numel()), fill) {}

  static TensorT zeros(Shape4 s) { return TensorT(s); }
  static TensorT full(Shape4 s, T v) { return TensorT(s, v); }
  static TensorT from(Shape4 s, std::vector<T> values);

  int64_t numel() const { return shape.numel(); }
  bool empty() const { return data.empty(); }

  T* row(int64_t n, int64_t c, int64_t y) {
    return data.data() + ((n * shape.c + c) * shape.h + y) * shape.w;
  }
  const T* row(int64_t n, int64_t c, int64_t y) const {
    return data.data() + ((n * shape.c + c) * shape.h + y) * shape.w;
  }
  T& at(int64_t n, int64_t c, int64_t y, int64_t x) { return row(n, c, y)[x]; }
  T at(int64_t n, int64_t c, int64_t y, int64_t x) const { return row(n, c, y)[x]; }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (int64_t i = 0; i < numel(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Geometry and channel bookkeeping for a 2-D convolution. groups ==
// in_channels == out_channels encodes a depthwise convolution; kernel == 1,
// groups == 1 a pointwise one.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int groups = 1;
  bool has_bias = true;

  int64_t out_extent(int64_t in) const {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }
  int64_t transpose_out_extent(int64_t in) const {
    return (in - 1) * stride - 2 * padding + dilation * (kernel - 1) + 1;
  }
  int64_t weight_count() const {
    return static_cast<int64_t>(out_channels) * (in_channels / groups) * kernel * kernel;
  }
  Shape4 weight_shape() const {
    return Shape4{out_channels, in_channels / groups, kernel, kernel};
  }
  // Throws std::invalid_argument on inconsistent fields. Forward convolution
  // additionally requires an odd kernel; transposed convolution does not.
  void validate(bool require_odd_kernel) const;

  bool operator==(const ConvSpec&) const = default;
};

ConvSpec depthwise_spec(int channels, int kernel, int stride, int dilation, int padding,
                        bool bias = false);
ConvSpec pointwise_spec(int in_channels, int out_channels, bool bias = true);

}  // namespace eapnet
