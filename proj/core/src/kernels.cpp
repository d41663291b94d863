#include "eapnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "eapnet/parallel.hpp"

namespace eapnet {

namespace {

inline int64_t floor_div(int64_t a, int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}
inline int64_t ceil_div(int64_t a, int64_t b) {
  return a > 0 ? (a + b - 1) / b : -((-a) / b);
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

template <typename T>
void check_conv_args(const char* op, const TensorT<T>& input, const ConvSpec& spec,
                     const TensorT<T>& weight, const TensorT<T>* bias, bool transpose) {
  spec.validate(!transpose);
  const int64_t data_channels = transpose ? spec.out_channels : spec.in_channels;
  const int64_t result_channels = transpose ? spec.in_channels : spec.out_channels;
  if (input.shape.c != data_channels) {
    std::ostringstream os;
    os << "input " << input.shape.str() << " has " << input.shape.c
       << " channels, spec expects " << data_channels;
    shape_error(op, os.str());
  }
  if (weight.shape != spec.weight_shape()) {
    std::ostringstream os;
    os << "weight " << weight.shape.str() << " does not match spec shape "
       << spec.weight_shape().str();
    shape_error(op, os.str());
  }
  if (bias != nullptr) {
    const Shape4 want{1, result_channels, 1, 1};
    if (bias->shape != want) {
      std::ostringstream os;
      os << "bias " << bias->shape.str() << " does not match " << want.str();
      shape_error(op, os.str());
    }
  }
}

template <typename T, typename F>
TensorT<T> map_elem(const TensorT<T>& x, F&& f) {
  TensorT<T> out(x.shape);
  const int64_t n = x.numel();
  const T* in = x.data.data();
  T* o = out.data.data();
  if (n >= (1 << 15)) {
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) o[i] = f(in[i]);
    });
  } else {
    for (int64_t i = 0; i < n; ++i) o[i] = f(in[i]);
  }
  return out;
}

template <typename T, typename F>
TensorT<T> zip_elem(const char* op, const TensorT<T>& a, const TensorT<T>& b, F&& f) {
  if (!(a.shape == b.shape)) {
    shape_error(op, "operand shapes " + a.shape.str() + " and " + b.shape.str() + " differ");
  }
  TensorT<T> out(a.shape);
  const int64_t n = a.numel();
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* o = out.data.data();
  if (n >= (1 << 15)) {
    parallel_for(0, n, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) o[i] = f(pa[i], pb[i]);
    });
  } else {
    for (int64_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  }
  return out;
}

inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvSpec& spec, const TensorT<T>& weight,
                  const TensorT<T>* bias) {
  check_conv_args("conv2d", input, spec, weight, bias, false);
  const int64_t batch = input.shape.n;
  const int64_t in_h = input.shape.h;
  const int64_t in_w = input.shape.w;
  const int64_t out_h = spec.out_extent(in_h);
  const int64_t out_w = spec.out_extent(in_w);
  if (out_h < 1 || out_w < 1) {
    shape_error("conv2d", "output extents " + std::to_string(out_h) + "x" +
                              std::to_string(out_w) + " for input " + input.shape.str());
  }
  const int64_t cout = spec.out_channels;
  const int64_t cpg = spec.in_channels / spec.groups;
  const int64_t opg = spec.out_channels / spec.groups;
  const int64_t k = spec.kernel;
  const int64_t s = spec.stride;
  const int64_t d = spec.dilation;
  const int64_t p = spec.padding;

  TensorT<T> out(Shape4{batch, cout, out_h, out_w});
  parallel_for(0, batch * cout, [&](int64_t lo, int64_t hi) {
    for (int64_t idx = lo; idx < hi; ++idx) {
      const int64_t n = idx / cout;
      const int64_t o = idx % cout;
      const int64_t g = o / opg;
      if (bias != nullptr) {
        const T bv = bias->data[static_cast<size_t>(o)];
        T* plane = out.row(n, o, 0);
        std::fill(plane, plane + out_h * out_w, bv);
      }
      for (int64_t cl = 0; cl < cpg; ++cl) {
        const int64_t ci = g * cpg + cl;
        for (int64_t kh = 0; kh < k; ++kh) {
          const int64_t oy_lo = std::max<int64_t>(0, ceil_div(p - kh * d, s));
          const int64_t oy_hi = std::min(out_h - 1, floor_div(in_h - 1 - kh * d + p, s));
          for (int64_t kw = 0; kw < k; ++kw) {
            const T wv = weight.data[((o * cpg + cl) * k + kh) * k + kw];
            const int64_t ox_lo = std::max<int64_t>(0, ceil_div(p - kw * d, s));
            const int64_t ox_hi = std::min(out_w - 1, floor_div(in_w - 1 - kw * d + p, s));
            const int64_t xoff = kw * d - p;
            for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const int64_t iy = oy * s + kh * d - p;
              const T* xr = input.row(n, ci, iy);
              T* yr = out.row(n, o, oy);
              if (s == 1) {
                const T* xs = xr + xoff;
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) yr[ox] += wv * xs[ox];
              } else {
                for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) yr[ox] += wv * xr[ox * s + xoff];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& input, const ConvSpec& spec,
                            const TensorT<T>& weight, const TensorT<T>* bias) {
  check_conv_args("conv_transpose2d", input, spec, weight, bias, true);
  const int64_t batch = input.shape.n;
  const int64_t in_h = input.shape.h;
  const int64_t in_w = input.shape.w;
  const int64_t out_h = spec.transpose_out_extent(in_h);
  const int64_t out_w = spec.transpose_out_extent(in_w);
  if (out_h < 1 || out_w < 1) {
    shape_error("conv_transpose2d", "output extents " + std::to_string(out_h) + "x" +
                                        std::to_string(out_w) + " for input " +
                                        input.shape.str());
  }
  const int64_t cin = spec.in_channels;
  const int64_t cpg = spec.in_channels / spec.groups;
  const int64_t opg = spec.out_channels / spec.groups;
  const int64_t k = spec.kernel;
  const int64_t s = spec.stride;
  const int64_t d = spec.dilation;
  const int64_t p = spec.padding;

  TensorT<T> out(Shape4{batch, cin, out_h, out_w});
  parallel_for(0, batch * cin, [&](int64_t lo, int64_t hi) {
    for (int64_t idx = lo; idx < hi; ++idx) {
      const int64_t n = idx / cin;
      const int64_t i = idx % cin;
      const int64_t g = i / cpg;
      const int64_t il = i % cpg;
      if (bias != nullptr) {
        const T bv = bias->data[static_cast<size_t>(i)];
        T* plane = out.row(n, i, 0);
        std::fill(plane, plane + out_h * out_w, bv);
      }
      for (int64_t ol = 0; ol < opg; ++ol) {
        const int64_t o = g * opg + ol;
        for (int64_t kh = 0; kh < k; ++kh) {
          const int64_t fy_lo = std::max<int64_t>(0, ceil_div(p - kh * d, s));
          const int64_t fy_hi = std::min(in_h - 1, floor_div(out_h - 1 + p - kh * d, s));
          for (int64_t kw = 0; kw < k; ++kw) {
            const T wv = weight.data[((o * cpg + il) * k + kh) * k + kw];
            const int64_t fx_lo = std::max<int64_t>(0, ceil_div(p - kw * d, s));
            const int64_t fx_hi = std::min(in_w - 1, floor_div(out_w - 1 + p - kw * d, s));
            const int64_t yoff = kw * d - p;
            for (int64_t fy = fy_lo; fy <= fy_hi; ++fy) {
              const int64_t iy = fy * s + kh * d - p;
              const T* xr = input.row(n, o, fy);
              T* yr = out.row(n, i, iy);
              for (int64_t fx = fx_lo; fx <= fx_hi; ++fx) {
                yr[fx * s + yoff] += wv * xr[fx];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& input, int64_t out_h, int64_t out_w) {
  if (out_h < 1 || out_w < 1) {
    shape_error("bilinear_resize", "target extents " + std::to_string(out_h) + "x" +
                                       std::to_string(out_w) + " must be positive");
  }
  const int64_t in_h = input.shape.h;
  const int64_t in_w = input.shape.w;
  if (out_h == in_h && out_w == in_w) return input;

  TensorT<T> out(Shape4{input.shape.n, input.shape.c, out_h, out_w});
  const double scale_y = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double scale_x = static_cast<double>(in_w) / static_cast<double>(out_w);

  std::vector<int64_t> x0(out_w), x1(out_w);
  std::vector<T> fx(out_w);
  for (int64_t ox = 0; ox < out_w; ++ox) {
    double sx = (static_cast<double>(ox) + 0.5) * scale_x - 0.5;
    sx = std::min(std::max(sx, 0.0), static_cast<double>(in_w - 1));
    x0[ox] = static_cast<int64_t>(std::floor(sx));
    x1[ox] = std::min(x0[ox] + 1, in_w - 1);
    fx[ox] = static_cast<T>(sx - static_cast<double>(x0[ox]));
  }

  const int64_t slices = input.shape.n * input.shape.c;
  parallel_for(0, slices, [&](int64_t lo, int64_t hi) {
    for (int64_t sc = lo; sc < hi; ++sc) {
      const int64_t n = sc / input.shape.c;
      const int64_t c = sc % input.shape.c;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        double sy = (static_cast<double>(oy) + 0.5) * scale_y - 0.5;
        sy = std::min(std::max(sy, 0.0), static_cast<double>(in_h - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(sy));
        const int64_t y1 = std::min(y0 + 1, in_h - 1);
        const T fy = static_cast<T>(sy - static_cast<double>(y0));
        const T* a = input.row(n, c, y0);
        const T* b = input.row(n, c, y1);
        T* yr = out.row(n, c, oy);
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const T top = (T(1) - fx[ox]) * a[x0[ox]] + fx[ox] * a[x1[ox]];
          const T bot = (T(1) - fx[ox]) * b[x0[ox]] + fx[ox] * b[x1[ox]];
          yr[ox] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  return map_elem(x, [](T v) {
    if (v >= T(0)) {
      return T(1) / (T(1) + std::exp(-v));
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
  });
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T negative_slope) {
  return map_elem(x, [negative_slope](T v) { return v >= T(0) ? v : negative_slope * v; });
}

template <typename T>
TensorT<T> tanh(const TensorT<T>& x) {
  return map_elem(x, [](T v) { return std::tanh(v); });
}

template <typename T>
TensorT<T> mu_tonemap(const TensorT<T>& x, T mu) {
  const T denom = std::log1p(mu);
  return map_elem(x, [mu, denom](T v) { return std::log1p(mu * v) / denom; });
}

template <typename T>
TensorT<T> mu_tonemap_linear_denominator(const TensorT<T>& x, T mu) {
  const T denom = T(1) + mu;
  return map_elem(x, [mu, denom](T v) { return std::log1p(mu * v) / denom; });
}

template <typename T>
TensorT<T> clamp_min0(const TensorT<T>& x) {
  return map_elem(x, [](T v) { return v >= T(0) ? v : T(0); });
}

template <typename T>
TensorT<T> clamp_max(const TensorT<T>& x, T cap) {
  return map_elem(x, [cap](T v) { return v < cap ? v : cap; });
}

template <typename T>
TensorT<T> abs(const TensorT<T>& x) {
  return map_elem(x, [](T v) { return std::abs(v); });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return zip_elem("add", a, b, [](T x, T y) { return x + y; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return zip_elem("sub", a, b, [](T x, T y) { return x - y; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return zip_elem("mul", a, b, [](T x, T y) { return x * y; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  return map_elem(a, [s](T v) { return v + s; });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  return map_elem(a, [s](T v) { return v * s; });
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts) {
  if (parts.empty()) shape_error("concat_channels", "no operands");
  const Shape4 first = parts[0]->shape;
  int64_t channels = 0;
  for (const auto* p : parts) {
    if (p->shape.n != first.n || p->shape.h != first.h || p->shape.w != first.w) {
      shape_error("concat_channels", "operand " + p->shape.str() +
                                         " does not match batch/spatial extents of " +
                                         first.str());
    }
    channels += p->shape.c;
  }
  TensorT<T> out(Shape4{first.n, channels, first.h, first.w});
  const int64_t plane = first.h * first.w;
  for (int64_t n = 0; n < first.n; ++n) {
    int64_t c0 = 0;
    for (const auto* p : parts) {
      std::memcpy(out.row(n, c0, 0), p->row(n, 0, 0),
                  sizeof(T) * static_cast<size_t>(p->shape.c * plane));
      c0 += p->shape.c;
    }
  }
  return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  return concat_channels<T>({&a, &b});
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, int64_t first, int64_t count) {
  if (first < 0 || count < 1 || first + count > x.shape.c) {
    shape_error("slice_channels", "range [" + std::to_string(first) + ", " +
                                      std::to_string(first + count) + ") out of " +
                                      x.shape.str());
  }
  TensorT<T> out(Shape4{x.shape.n, count, x.shape.h, x.shape.w});
  const int64_t plane = x.shape.h * x.shape.w;
  for (int64_t n = 0; n < x.shape.n; ++n) {
    std::memcpy(out.row(n, 0, 0), x.row(n, first, 0),
                sizeof(T) * static_cast<size_t>(count * plane));
  }
  return out;
}

template <typename T>
TensorT<T> pad_reflect(const TensorT<T>& x, int64_t top, int64_t bottom, int64_t left,
                       int64_t right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0) {
    shape_error("pad_reflect", "negative pad amount");
  }
  if (std::max(top, bottom) >= x.shape.h || std::max(left, right) >= x.shape.w) {
    shape_error("pad_reflect", "pad amounts (" + std::to_string(top) + "," +
                                   std::to_string(bottom) + "," + std::to_string(left) + "," +
                                   std::to_string(right) + ") must be smaller than extents of " +
                                   x.shape.str());
  }
  const int64_t out_h = x.shape.h + top + bottom;
  const int64_t out_w = x.shape.w + left + right;
  TensorT<T> out(Shape4{x.shape.n, x.shape.c, out_h, out_w});
  const int64_t slices = x.shape.n * x.shape.c;
  parallel_for(0, slices, [&](int64_t lo, int64_t hi) {
    for (int64_t sc = lo; sc < hi; ++sc) {
      const int64_t n = sc / x.shape.c;
      const int64_t c = sc % x.shape.c;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const T* xr = x.row(n, c, reflect_index(oy - top, x.shape.h));
        T* yr = out.row(n, c, oy);
        for (int64_t ox = 0; ox < out_w; ++ox) {
          yr[ox] = xr[reflect_index(ox - left, x.shape.w)];
        }
      }
    }
  });
  return out;
}

template <typename T>
TensorT<T> crop(const TensorT<T>& x, int64_t top, int64_t left, int64_t out_h, int64_t out_w) {
  if (top < 0 || left < 0 || out_h < 1 || out_w < 1 || top + out_h > x.shape.h ||
      left + out_w > x.shape.w) {
    shape_error("crop", "window " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                            " at (" + std::to_string(top) + "," + std::to_string(left) +
                            ") outside " + x.shape.str());
  }
  TensorT<T> out(Shape4{x.shape.n, x.shape.c, out_h, out_w});
  for (int64_t n = 0; n < x.shape.n; ++n) {
    for (int64_t c = 0; c < x.shape.c; ++c) {
      for (int64_t oy = 0; oy < out_h; ++oy) {
        std::memcpy(out.row(n, c, oy), x.row(n, c, top + oy) + left,
                    sizeof(T) * static_cast<size_t>(out_w));
      }
    }
  }
  return out;
}

template <typename T>
T sum_all(const TensorT<T>& x) {
  double acc = 0.0;
  for (const T v : x.data) acc += static_cast<double>(v);
  return static_cast<T>(acc);
}

template <typename T>
T mean_all(const TensorT<T>& x) {
  if (x.numel() == 0) shape_error("mean_all", "empty tensor");
  double acc = 0.0;
  for (const T v : x.data) acc += static_cast<double>(v);
  return static_cast<T>(acc / static_cast<double>(x.numel()));
}

template <typename T>
T dot(const TensorT<T>& a, const TensorT<T>& b) {
  if (!(a.shape == b.shape)) {
    shape_error("dot", "operand shapes " + a.shape.str() + " and " + b.shape.str() + " differ");
  }
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    acc += static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]);
  }
  return static_cast<T>(acc);
}

template <typename T>
bool all_finite(const TensorT<T>& x) {
  for (const T v : x.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
T percentile(const TensorT<T>& x, double p) {
  if (x.numel() == 0) shape_error("percentile", "empty tensor");
  if (!(p > 0.0 && p <= 100.0)) {
    throw std::invalid_argument("percentile: p must be in (0, 100], got " + std::to_string(p));
  }
  const int64_t n = x.numel();
  int64_t idx =
      static_cast<int64_t>(std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9)) - 1;
  idx = std::min(std::max<int64_t>(idx, 0), n - 1);
  std::vector<T> copy(x.data);
  std::nth_element(copy.begin(), copy.begin() + idx, copy.end());
  return copy[static_cast<size_t>(idx)];
}

#define EAPNET_INSTANTIATE_KERNELS(T)                                                        \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const ConvSpec&, const TensorT<T>&,      \
                                const TensorT<T>*);                                         \
  template TensorT<T> conv_transpose2d<T>(const TensorT<T>&, const ConvSpec&,               \
                                          const TensorT<T>&, const TensorT<T>*);            \
  template TensorT<T> bilinear_resize<T>(const TensorT<T>&, int64_t, int64_t);              \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                                        \
  template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);                                  \
  template TensorT<T> tanh<T>(const TensorT<T>&);                                           \
  template TensorT<T> mu_tonemap<T>(const TensorT<T>&, T);                                  \
  template TensorT<T> mu_tonemap_linear_denominator<T>(const TensorT<T>&, T);               \
  template TensorT<T> clamp_min0<T>(const TensorT<T>&);                                     \
  template TensorT<T> clamp_max<T>(const TensorT<T>&, T);                                   \
  template TensorT<T> abs<T>(const TensorT<T>&);                                            \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                                  \
  template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                                  \
  template TensorT<T> concat_channels<T>(const std::vector<const TensorT<T>*>&);            \
  template TensorT<T> concat_channels<T>(const TensorT<T>&, const TensorT<T>&);             \
  template TensorT<T> slice_channels<T>(const TensorT<T>&, int64_t, int64_t);               \
  template TensorT<T> pad_reflect<T>(const TensorT<T>&, int64_t, int64_t, int64_t,          \
                                     int64_t);                                              \
  template TensorT<T> crop<T>(const TensorT<T>&, int64_t, int64_t, int64_t, int64_t);       \
  template T sum_all<T>(const TensorT<T>&);                                                 \
  template T mean_all<T>(const TensorT<T>&);                                                \
  template T dot<T>(const TensorT<T>&, const TensorT<T>&);                                  \
  template bool all_finite<T>(const TensorT<T>&);                                           \
  template T percentile<T>(const TensorT<T>&, double);

EAPNET_INSTANTIATE_KERNELS(float)
EAPNET_INSTANTIATE_KERNELS(double)

#undef EAPNET_INSTANTIATE_KERNELS

}  // namespace eapnet
