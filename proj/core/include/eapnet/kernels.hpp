#pragma once

#include <vector>

#include "eapnet/tensor.hpp"

namespace eapnet {

// All kernels are pure functions over immutable inputs: they allocate and
// return a fresh tensor and never mutate their arguments. Shape errors are
// rejected with std::invalid_argument carrying a shape report.

// Direct 2-D convolution with zero padding. weight is
// (out_channels, in_channels/groups, k, k); bias, when non-null, has
// out_channels entries stored as a 1xCx1x1 tensor.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvSpec& spec, const TensorT<T>& weight,
                  const TensorT<T>* bias = nullptr);

// Exact adjoint of conv2d for the same spec and weight layout: input has
// spec.out_channels channels and the result spec.in_channels. bias, when
// non-null, has spec.in_channels entries. Even kernels are permitted.
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const ConvSpec& spec,
                            const TensorT<T>& weight, const TensorT<T>* bias = nullptr);

// Bilinear interpolation with half-pixel centers: the source coordinate for
// destination index i is (i + 0.5) * in/out - 0.5, clamped to the valid range.
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& input, int64_t out_h, int64_t out_w);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);
template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope);
template <typename T>
TensorT<T> tanh(const TensorT<T>& x);
// log(1 + mu*x) / log(1 + mu); inputs are expected to be >= 0.
template <typename T>
TensorT<T> mu_tonemap(const TensorT<T>& x, T mu);
// The misprinted variant log(1 + mu*x) / (1 + mu), kept for fidelity
// experiments only.
template <typename T>
TensorT<T> mu_tonemap_linear_denominator(const TensorT<T>& x, T mu);
template <typename T>
TensorT<T> clamp_min0(const TensorT<T>& x);
template <typename T>
TensorT<T> clamp_max(const TensorT<T>& x, T cap);
template <typename T>
TensorT<T> abs(const TensorT<T>& x);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s);

// Channel concatenation; operands must agree in batch and spatial extents and
// appear in the output in argument order.
template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts);
template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int64_t first, int64_t count);

// Reflect padding excluding the edge sample (pad amount must be smaller than
// the corresponding extent).
template <typename T>
TensorT<T> pad_reflect(const TensorT<T>& x, int64_t top, int64_t bottom, int64_t left,
                       int64_t right);
template <typename T>
TensorT<T> crop(const TensorT<T>& x, int64_t top, int64_t left, int64_t out_h, int64_t out_w);

template <typename T>
T sum_all(const TensorT<T>& x);
template <typename T>
T mean_all(const TensorT<T>& x);
template <typename T>
T dot(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
bool all_finite(const TensorT<T>& x);

// Order statistic by exact selection: the value at index ceil(p/100 * n) - 1
// of the sorted data.
template <typename T>
T percentile(const TensorT<T>& x, double p);

}  // namespace eapnet
