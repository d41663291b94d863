#include "eapnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "eapnet/parallel.hpp"

namespace eapnet::ad {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ConvTranspose2d: return "conv_transpose2d";
    case OpKind::BilinearResize: return "bilinear_resize";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::MuTonemap: return "mu_tonemap";
    case OpKind::MuTonemapLinearDenominator: return "mu_tonemap_linear_denominator";
    case OpKind::ClampMin0: return "clamp_min0";
    case OpKind::ClampMax: return "clamp_max";
    case OpKind::Abs: return "abs";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::SliceChannels: return "slice_channels";
    case OpKind::PadReflect: return "pad_reflect";
    case OpKind::Crop: return "crop";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "unknown";
}

namespace {

// d(conv2d)/d(weight): correlation of the forward input with the output
// gradient. Also serves conv_transpose2d with the input/output roles swapped.
template <typename T>
TensorT<T> conv_weight_grad(const TensorT<T>& x, const ConvSpec& spec, const TensorT<T>& gy) {
  const int64_t batch = x.shape.n;
  const int64_t in_h = x.shape.h;
  const int64_t in_w = x.shape.w;
  const int64_t out_h = gy.shape.h;
  const int64_t out_w = gy.shape.w;
  const int64_t cpg = spec.in_channels / spec.groups;
  const int64_t opg = spec.out_channels / spec.groups;
  const int64_t k = spec.kernel;
  const int64_t s = spec.stride;
  const int64_t d = spec.dilation;
  const int64_t p = spec.padding;

  auto floor_div = [](int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  auto ceil_div = [](int64_t a, int64_t b) { return a > 0 ? (a + b - 1) / b : -((-a) / b); };

  TensorT<T> dw(spec.weight_shape());
  parallel_for(0, spec.out_channels, [&](int64_t lo, int64_t hi) {
    for (int64_t o = lo; o < hi; ++o) {
      const int64_t g = o / opg;
      for (int64_t cl = 0; cl < cpg; ++cl) {
        const int64_t ci = g * cpg + cl;
        for (int64_t kh = 0; kh < k; ++kh) {
          const int64_t oy_lo = std::max<int64_t>(0, ceil_div(p - kh * d, s));
          const int64_t oy_hi = std::min(out_h - 1, floor_div(in_h - 1 - kh * d + p, s));
          for (int64_t kw = 0; kw < k; ++kw) {
            const int64_t ox_lo = std::max<int64_t>(0, ceil_div(p - kw * d, s));
            const int64_t ox_hi = std::min(out_w - 1, floor_div(in_w - 1 - kw * d + p, s));
            const int64_t xoff = kw * d - p;
            T acc = T(0);
            for (int64_t n = 0; n < batch; ++n) {
              for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                const int64_t iy = oy * s + kh * d - p;
                const T* xr = x.row(n, ci, iy);
                const T* gr = gy.row(n, o, oy);
                if (s == 1) {
                  const T* xs = xr + xoff;
                  for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += gr[ox] * xs[ox];
                } else {
                  for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += gr[ox] * xr[ox * s + xoff];
                }
              }
            }
            dw.data[((o * cpg + cl) * k + kh) * k + kw] = acc;
          }
        }
      }
    }
  });
  return dw;
}

// Per-channel reduction of an output gradient to a 1xCx1x1 bias gradient.
template <typename T>
TensorT<T> channel_sum(const TensorT<T>& gy) {
  TensorT<T> gb(Shape4{1, gy.shape.c, 1, 1});
  const int64_t plane = gy.shape.h * gy.shape.w;
  for (int64_t c = 0; c < gy.shape.c; ++c) {
    T acc = T(0);
    for (int64_t n = 0; n < gy.shape.n; ++n) {
      const T* r = gy.row(n, c, 0);
      for (int64_t i = 0; i < plane; ++i) acc += r[i];
    }
    gb.data[static_cast<size_t>(c)] = acc;
  }
  return gb;
}

template <typename T>
TensorT<T> bilinear_adjoint(const TensorT<T>& gy, int64_t in_h, int64_t in_w) {
  if (gy.shape.h == in_h && gy.shape.w == in_w) return gy;
  const int64_t out_h = gy.shape.h;
  const int64_t out_w = gy.shape.w;
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

  TensorT<T> gx(Shape4{gy.shape.n, gy.shape.c, in_h, in_w});
  const int64_t slices = gy.shape.n * gy.shape.c;
  parallel_for(0, slices, [&](int64_t lo, int64_t hi) {
    for (int64_t sc = lo; sc < hi; ++sc) {
      const int64_t n = sc / gy.shape.c;
      const int64_t c = sc % gy.shape.c;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        double sy = (static_cast<double>(oy) + 0.5) * scale_y - 0.5;
        sy = std::min(std::max(sy, 0.0), static_cast<double>(in_h - 1));
        const int64_t y0 = static_cast<int64_t>(std::floor(sy));
        const int64_t y1 = std::min(y0 + 1, in_h - 1);
        const T fy = static_cast<T>(sy - static_cast<double>(y0));
        T* a = gx.row(n, c, y0);
        T* b = gx.row(n, c, y1);
        const T* gr = gy.row(n, c, oy);
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const T v = gr[ox];
          a[x0[ox]] += (T(1) - fy) * (T(1) - fx[ox]) * v;
          a[x1[ox]] += (T(1) - fy) * fx[ox] * v;
          b[x0[ox]] += fy * (T(1) - fx[ox]) * v;
          b[x1[ox]] += fy * fx[ox] * v;
        }
      }
    }
  });
  return gx;
}

inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

template <typename T>
TensorT<T> pad_reflect_adjoint(const TensorT<T>& gy, int64_t top, int64_t bottom, int64_t left,
                               int64_t right) {
  const int64_t in_h = gy.shape.h - top - bottom;
  const int64_t in_w = gy.shape.w - left - right;
  TensorT<T> gx(Shape4{gy.shape.n, gy.shape.c, in_h, in_w});
  const int64_t slices = gy.shape.n * gy.shape.c;
  parallel_for(0, slices, [&](int64_t lo, int64_t hi) {
    for (int64_t sc = lo; sc < hi; ++sc) {
      const int64_t n = sc / gy.shape.c;
      const int64_t c = sc % gy.shape.c;
      for (int64_t oy = 0; oy < gy.shape.h; ++oy) {
        T* xr = gx.row(n, c, reflect_index(oy - top, in_h));
        const T* gr = gy.row(n, c, oy);
        for (int64_t ox = 0; ox < gy.shape.w; ++ox) {
          xr[reflect_index(ox - left, in_w)] += gr[ox];
        }
      }
    }
  });
  return gx;
}

template <typename T>
TensorT<T> embed_spatial(const TensorT<T>& gy, int64_t top, int64_t left, int64_t in_h,
                         int64_t in_w) {
  TensorT<T> gx(Shape4{gy.shape.n, gy.shape.c, in_h, in_w});
  for (int64_t n = 0; n < gy.shape.n; ++n) {
    for (int64_t c = 0; c < gy.shape.c; ++c) {
      for (int64_t oy = 0; oy < gy.shape.h; ++oy) {
        std::memcpy(gx.row(n, c, top + oy) + left, gy.row(n, c, oy),
                    sizeof(T) * static_cast<size_t>(gy.shape.w));
      }
    }
  }
  return gx;
}

template <typename T>
TensorT<T> embed_channels(const TensorT<T>& gy, int64_t first, int64_t in_channels) {
  TensorT<T> gx(Shape4{gy.shape.n, in_channels, gy.shape.h, gy.shape.w});
  const int64_t plane = gy.shape.h * gy.shape.w;
  for (int64_t n = 0; n < gy.shape.n; ++n) {
    std::memcpy(gx.row(n, first, 0), gy.row(n, 0, 0),
                sizeof(T) * static_cast<size_t>(gy.shape.c * plane));
  }
  return gx;
}

}  // namespace

template <typename T>
struct OpAccess {
  using Node = typename Tape<T>::Node;
  static int record(Tape<T>& tape, Node node) { return tape.record(std::move(node)); }
};

namespace {

template <typename T>
Var<T> make_const(TensorT<T> v) {
  return Var<T>{std::make_shared<const TensorT<T>>(std::move(v)), nullptr, -1};
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (v == nullptr || !v->tracked()) continue;
    if (tape == nullptr) {
      tape = v->tape;
    } else if (tape != v->tape) {
      throw std::invalid_argument("autodiff: operands recorded on different tapes");
    }
  }
  return tape;
}

template <typename T>
int node_of(const Var<T>* v) {
  return (v != nullptr && v->tracked()) ? v->node : -1;
}

}  // namespace

template <typename T>
Var<T> constant(TensorT<T> value) {
  return make_const(std::move(value));
}

template <typename T>
Var<T> Tape<T>::leaf(const TensorT<T>& value, std::string name) {
  for (int id : leaf_ids_) {
    if (nodes_[id].name == name) {
      throw std::invalid_argument("tape: duplicate leaf name \"" + name + "\"");
    }
  }
  Node n;
  n.kind = OpKind::Leaf;
  n.out = std::make_shared<const TensorT<T>>(value);
  n.name = std::move(name);
  const int id = record(std::move(n));
  return Var<T>{nodes_[id].out, this, id};
}

template <typename T>
int Tape<T>::record(Node node) {
  if (check_finite_ && !all_finite(*node.out)) {
    throw std::runtime_error(std::string("autodiff: non-finite value after op ") +
                             op_name(node.kind) +
                             (node.name.empty() ? "" : " (" + node.name + ")"));
  }
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  if (nodes_.back().kind == OpKind::Leaf) leaf_ids_.push_back(id);
  return id;
}

template <typename T>
void Tape<T>::accumulate(std::vector<std::unique_ptr<TensorT<T>>>& grads, int id,
                         TensorT<T> grad) {
  if (id < 0) return;
  auto& slot = grads[static_cast<size_t>(id)];
  if (!slot) {
    slot = std::make_unique<TensorT<T>>(std::move(grad));
    return;
  }
  TensorT<T>& acc = *slot;
  for (int64_t i = 0; i < acc.numel(); ++i) acc.data[i] += grad.data[i];
}

template <typename T>
GradMap<T> Tape<T>::backward(const Var<T>& loss) {
  if (!loss.tracked() || loss.tape != this) {
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  }
  if (loss.val().numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                loss.shape().str());
  }
  std::vector<std::unique_ptr<TensorT<T>>> grads(nodes_.size());
  grads[loss.node] = std::make_unique<TensorT<T>>(loss.shape(), T(1));

  for (int id = loss.node; id >= 0; --id) {
    if (!grads[id]) continue;
    const Node& nd = nodes_[id];
    if (nd.kind == OpKind::Leaf) continue;
    const TensorT<T>& gy = *grads[id];
    switch (nd.kind) {
      case OpKind::Conv2d: {
        if (nd.parents[0] >= 0) {
          accumulate(grads, nd.parents[0], eapnet::conv_transpose2d(gy, nd.spec, *nd.saved1));
        }
        if (nd.parents[1] >= 0) {
          accumulate(grads, nd.parents[1], conv_weight_grad(*nd.saved0, nd.spec, gy));
        }
        if (nd.parents.size() > 2 && nd.parents[2] >= 0) {
          accumulate(grads, nd.parents[2], channel_sum(gy));
        }
        break;
      }
      case OpKind::ConvTranspose2d: {
        if (nd.parents[0] >= 0) {
          accumulate(grads, nd.parents[0], eapnet::conv2d(gy, nd.spec, *nd.saved1));
        }
        if (nd.parents[1] >= 0) {
          accumulate(grads, nd.parents[1], conv_weight_grad(gy, nd.spec, *nd.saved0));
        }
        if (nd.parents.size() > 2 && nd.parents[2] >= 0) {
          accumulate(grads, nd.parents[2], channel_sum(gy));
        }
        break;
      }
      case OpKind::BilinearResize:
        accumulate(grads, nd.parents[0], bilinear_adjoint(gy, nd.geom[0], nd.geom[1]));
        break;
      case OpKind::Sigmoid: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& s = *nd.saved0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = gy.data[i] * s.data[i] * (T(1) - s.data[i]);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::LeakyRelu: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        const T slope = nd.scalar0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = x.data[i] >= T(0) ? gy.data[i] : slope * gy.data[i];
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::Tanh: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& t = *nd.saved0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = gy.data[i] * (T(1) - t.data[i] * t.data[i]);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::MuTonemap: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        const T mu = nd.scalar0;
        const T denom = std::log1p(mu);
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = gy.data[i] * mu / ((T(1) + mu * x.data[i]) * denom);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::MuTonemapLinearDenominator: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        const T mu = nd.scalar0;
        const T denom = T(1) + mu;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = gy.data[i] * mu / ((T(1) + mu * x.data[i]) * denom);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::ClampMin0: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = x.data[i] >= T(0) ? gy.data[i] : T(0);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::ClampMax: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        const T cap = nd.scalar0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = x.data[i] < cap ? gy.data[i] : T(0);
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::Abs: {
        TensorT<T> gx(gy.shape);
        const TensorT<T>& x = *nd.saved0;
        for (int64_t i = 0; i < gx.numel(); ++i) {
          gx.data[i] = x.data[i] >= T(0) ? gy.data[i] : -gy.data[i];
        }
        accumulate(grads, nd.parents[0], std::move(gx));
        break;
      }
      case OpKind::Add:
        if (nd.parents[0] >= 0) accumulate(grads, nd.parents[0], gy);
        if (nd.parents[1] >= 0) accumulate(grads, nd.parents[1], gy);
        break;
      case OpKind::Sub: {
        if (nd.parents[0] >= 0) accumulate(grads, nd.parents[0], gy);
        if (nd.parents[1] >= 0) {
          TensorT<T> neg(gy.shape);
          for (int64_t i = 0; i < neg.numel(); ++i) neg.data[i] = -gy.data[i];
          accumulate(grads, nd.parents[1], std::move(neg));
        }
        break;
      }
      case OpKind::Mul: {
        if (nd.parents[0] >= 0) accumulate(grads, nd.parents[0], eapnet::mul(gy, *nd.saved1));
        if (nd.parents[1] >= 0) accumulate(grads, nd.parents[1], eapnet::mul(gy, *nd.saved0));
        break;
      }
      case OpKind::AddScalar:
        accumulate(grads, nd.parents[0], gy);
        break;
      case OpKind::MulScalar:
        accumulate(grads, nd.parents[0], eapnet::mul_scalar(gy, nd.scalar0));
        break;
      case OpKind::ConcatChannels: {
        int64_t first = 0;
        for (size_t j = 0; j < nd.parents.size(); ++j) {
          if (nd.parents[j] >= 0) {
            accumulate(grads, nd.parents[j], eapnet::slice_channels(gy, first, nd.split[j]));
          }
          first += nd.split[j];
        }
        break;
      }
      case OpKind::SliceChannels:
        accumulate(grads, nd.parents[0], embed_channels(gy, nd.geom[0], nd.geom[2]));
        break;
      case OpKind::PadReflect:
        accumulate(grads, nd.parents[0],
                   pad_reflect_adjoint(gy, nd.geom[0], nd.geom[1], nd.geom[2], nd.geom[3]));
        break;
      case OpKind::Crop:
        accumulate(grads, nd.parents[0],
                   embed_spatial(gy, nd.geom[0], nd.geom[1], nd.geom[2], nd.geom[3]));
        break;
      case OpKind::Sum:
        accumulate(grads, nd.parents[0], TensorT<T>(nd.saved0->shape, gy.data[0]));
        break;
      case OpKind::Mean:
        accumulate(grads, nd.parents[0],
                   TensorT<T>(nd.saved0->shape,
                              gy.data[0] / static_cast<T>(nd.saved0->numel())));
        break;
      default:
        throw std::runtime_error(std::string("backward: no rule for op ") + op_name(nd.kind));
    }
    grads[id].reset();
  }

  GradMap<T> out;
  for (int id : leaf_ids_) {
    const Node& nd = nodes_[id];
    if (grads[id]) {
      out.emplace(nd.name, std::move(*grads[id]));
    } else {
      out.emplace(nd.name, TensorT<T>(nd.out->shape));
    }
  }
  return out;
}

namespace {

template <typename T>
Var<T> finish(Tape<T>* tape, typename Tape<T>::Node node) {
  auto out = node.out;
  if (tape == nullptr) return Var<T>{out, nullptr, -1};
  const int id = OpAccess<T>::record(*tape, std::move(node));
  return Var<T>{out, tape, id};
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>* bias) {
  Tape<T>* tape = common_tape<T>({&x, &weight, bias});
  typename Tape<T>::Node n;
  n.kind = OpKind::Conv2d;
  n.out = std::make_shared<const TensorT<T>>(
      eapnet::conv2d(x.val(), spec, weight.val(), bias ? &bias->val() : nullptr));
  n.parents = {node_of(&x), node_of(&weight), node_of(bias)};
  n.saved0 = x.value;
  n.saved1 = weight.value;
  n.spec = spec;
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight,
                        const Var<T>* bias) {
  Tape<T>* tape = common_tape<T>({&x, &weight, bias});
  typename Tape<T>::Node n;
  n.kind = OpKind::ConvTranspose2d;
  n.out = std::make_shared<const TensorT<T>>(
      eapnet::conv_transpose2d(x.val(), spec, weight.val(), bias ? &bias->val() : nullptr));
  n.parents = {node_of(&x), node_of(&weight), node_of(bias)};
  n.saved0 = x.value;
  n.saved1 = weight.value;
  n.spec = spec;
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w) {
  typename Tape<T>::Node n;
  n.kind = OpKind::BilinearResize;
  n.out = std::make_shared<const TensorT<T>>(eapnet::bilinear_resize(x.val(), out_h, out_w));
  n.parents = {node_of(&x)};
  n.geom = {x.shape().h, x.shape().w, out_h, out_w};
  return finish(x.tape, std::move(n));
}

namespace {

template <typename T>
Var<T> unary(const Var<T>& x, OpKind kind, TensorT<T> value, bool save_input, T scalar = T(0)) {
  typename Tape<T>::Node n;
  n.kind = kind;
  n.out = std::make_shared<const TensorT<T>>(std::move(value));
  n.parents = {node_of(&x)};
  n.saved0 = save_input ? x.value : n.out;
  n.scalar0 = scalar;
  return finish(x.tape, std::move(n));
}

}  // namespace

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, OpKind::Sigmoid, eapnet::sigmoid(x.val()), false);
}
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T negative_slope) {
  return unary(x, OpKind::LeakyRelu, eapnet::leaky_relu(x.val(), negative_slope), true,
               negative_slope);
}
template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, OpKind::Tanh, eapnet::tanh(x.val()), false);
}
template <typename T>
Var<T> mu_tonemap(const Var<T>& x, T mu) {
  return unary(x, OpKind::MuTonemap, eapnet::mu_tonemap(x.val(), mu), true, mu);
}
template <typename T>
Var<T> mu_tonemap_linear_denominator(const Var<T>& x, T mu) {
  return unary(x, OpKind::MuTonemapLinearDenominator,
               eapnet::mu_tonemap_linear_denominator(x.val(), mu), true, mu);
}
template <typename T>
Var<T> clamp_min0(const Var<T>& x) {
  return unary(x, OpKind::ClampMin0, eapnet::clamp_min0(x.val()), true);
}
template <typename T>
Var<T> clamp_max(const Var<T>& x, T cap) {
  return unary(x, OpKind::ClampMax, eapnet::clamp_max(x.val(), cap), true, cap);
}
template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(x, OpKind::Abs, eapnet::abs(x.val()), true);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  typename Tape<T>::Node n;
  n.kind = OpKind::Add;
  n.out = std::make_shared<const TensorT<T>>(eapnet::add(a.val(), b.val()));
  n.parents = {node_of(&a), node_of(&b)};
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  typename Tape<T>::Node n;
  n.kind = OpKind::Sub;
  n.out = std::make_shared<const TensorT<T>>(eapnet::sub(a.val(), b.val()));
  n.parents = {node_of(&a), node_of(&b)};
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  typename Tape<T>::Node n;
  n.kind = OpKind::Mul;
  n.out = std::make_shared<const TensorT<T>>(eapnet::mul(a.val(), b.val()));
  n.parents = {node_of(&a), node_of(&b)};
  n.saved0 = a.value;
  n.saved1 = b.value;
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, OpKind::AddScalar, eapnet::add_scalar(a.val(), s), false, s);
}
template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  return unary(a, OpKind::MulScalar, eapnet::mul_scalar(a.val(), s), false, s);
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  std::vector<const Var<T>*> ptrs;
  std::vector<const TensorT<T>*> values;
  ptrs.reserve(parts.size());
  values.reserve(parts.size());
  for (const auto& p : parts) {
    ptrs.push_back(&p);
    values.push_back(&p.val());
  }
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : ptrs) {
    if (v->tracked()) {
      if (tape != nullptr && tape != v->tape) {
        throw std::invalid_argument("autodiff: operands recorded on different tapes");
      }
      tape = v->tape;
    }
  }
  typename Tape<T>::Node n;
  n.kind = OpKind::ConcatChannels;
  n.out = std::make_shared<const TensorT<T>>(eapnet::concat_channels(values));
  for (const Var<T>* v : ptrs) {
    n.parents.push_back(node_of(v));
    n.split.push_back(v->shape().c);
  }
  return finish(tape, std::move(n));
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t first, int64_t count) {
  typename Tape<T>::Node n;
  n.kind = OpKind::SliceChannels;
  n.out = std::make_shared<const TensorT<T>>(eapnet::slice_channels(x.val(), first, count));
  n.parents = {node_of(&x)};
  n.geom = {first, count, x.shape().c, 0};
  return finish(x.tape, std::move(n));
}

template <typename T>
Var<T> pad_reflect(const Var<T>& x, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  typename Tape<T>::Node n;
  n.kind = OpKind::PadReflect;
  n.out = std::make_shared<const TensorT<T>>(
      eapnet::pad_reflect(x.val(), top, bottom, left, right));
  n.parents = {node_of(&x)};
  n.geom = {top, bottom, left, right};
  return finish(x.tape, std::move(n));
}

template <typename T>
Var<T> crop(const Var<T>& x, int64_t top, int64_t left, int64_t out_h, int64_t out_w) {
  typename Tape<T>::Node n;
  n.kind = OpKind::Crop;
  n.out = std::make_shared<const TensorT<T>>(eapnet::crop(x.val(), top, left, out_h, out_w));
  n.parents = {node_of(&x)};
  n.geom = {top, left, x.shape().h, x.shape().w};
  return finish(x.tape, std::move(n));
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  typename Tape<T>::Node n;
  n.kind = OpKind::Sum;
  n.out = std::make_shared<const TensorT<T>>(
      TensorT<T>(Shape4{1, 1, 1, 1}, sum_all(x.val())));
  n.parents = {node_of(&x)};
  n.saved0 = x.value;
  return finish(x.tape, std::move(n));
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  typename Tape<T>::Node n;
  n.kind = OpKind::Mean;
  n.out = std::make_shared<const TensorT<T>>(
      TensorT<T>(Shape4{1, 1, 1, 1}, mean_all(x.val())));
  n.parents = {node_of(&x)};
  n.saved0 = x.value;
  return finish(x.tape, std::move(n));
}

GradCheckReport grad_check(const RecordedFn<double>& f, const std::vector<Tensor64>& params,
                           double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  auto leaf_name = [](size_t i) { return "p" + std::to_string(i); };

  Tape<double> tape;
  tape.set_check_finite(true);
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) leaves.push_back(tape.leaf(params[i], leaf_name(i)));
  Var<double> loss = f(tape, leaves);
  if (loss.val().numel() != 1) {
    throw std::invalid_argument("grad_check: recorded function must return a scalar");
  }
  GradMap<double> analytic = tape.backward(loss);

  auto eval = [&](const std::vector<Tensor64>& at) {
    Tape<double> t;
    t.set_check_finite(true);
    std::vector<Var<double>> ls;
    ls.reserve(at.size());
    for (size_t i = 0; i < at.size(); ++i) ls.push_back(t.leaf(at[i], leaf_name(i)));
    return f(t, ls).val().data[0];
  };

  GradCheckReport report;
  std::vector<Tensor64> work = params;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor64& grad = analytic.at(leaf_name(pi));
    for (int64_t j = 0; j < params[pi].numel(); ++j) {
      const double theta = params[pi].data[j];
      const double step = eps * std::max(1.0, std::abs(theta));
      work[pi].data[j] = theta + step;
      const double fp = eval(work);
      work[pi].data[j] = theta - step;
      const double fm = eval(work);
      work[pi].data[j] = theta;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = grad.data[j];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = leaf_name(pi);
        report.worst_index = j;
      }
    }
  }
  return report;
}

#define EAPNET_INSTANTIATE_AD(T)                                                             \
  template class Tape<T>;                                                                    \
  template Var<T> constant<T>(TensorT<T>);                                                   \
  template Var<T> conv2d<T>(const Var<T>&, const ConvSpec&, const Var<T>&, const Var<T>*);   \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const ConvSpec&, const Var<T>&,         \
                                      const Var<T>*);                                        \
  template Var<T> bilinear_resize<T>(const Var<T>&, int64_t, int64_t);                       \
  template Var<T> sigmoid<T>(const Var<T>&);                                                 \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                           \
  template Var<T> tanh<T>(const Var<T>&);                                                    \
  template Var<T> mu_tonemap<T>(const Var<T>&, T);                                           \
  template Var<T> mu_tonemap_linear_denominator<T>(const Var<T>&, T);                        \
  template Var<T> clamp_min0<T>(const Var<T>&);                                              \
  template Var<T> clamp_max<T>(const Var<T>&, T);                                            \
  template Var<T> abs<T>(const Var<T>&);                                                     \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                           \
  template Var<T> mul_scalar<T>(const Var<T>&, T);                                           \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                            \
  template Var<T> slice_channels<T>(const Var<T>&, int64_t, int64_t);                        \
  template Var<T> pad_reflect<T>(const Var<T>&, int64_t, int64_t, int64_t, int64_t);         \
  template Var<T> crop<T>(const Var<T>&, int64_t, int64_t, int64_t, int64_t);                \
  template Var<T> sum<T>(const Var<T>&);                                                     \
  template Var<T> mean<T>(const Var<T>&);

EAPNET_INSTANTIATE_AD(float)
EAPNET_INSTANTIATE_AD(double)

#undef EAPNET_INSTANTIATE_AD

}  // namespace eapnet::ad
