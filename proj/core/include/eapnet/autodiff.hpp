#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eapnet/kernels.hpp"
#include "eapnet/tensor.hpp"

namespace eapnet::ad {

template <typename T>
class Tape;

// Handle to a tensor that may be tracked on a tape. Untracked handles
// (constants) flow through the same op functions, so the identical network
// code serves both training and inference.
template <typename T>
struct Var {
  std::shared_ptr<const TensorT<T>> value;
  Tape<T>* tape = nullptr;
  int node = -1;

  const TensorT<T>& val() const { return *value; }
  Shape4 shape() const { return value->shape; }
  bool tracked() const { return tape != nullptr && node >= 0; }
};

template <typename T>
Var<T> constant(TensorT<T> value);

// Parameter gradients keyed by leaf name. Ordered so iteration is
// deterministic.
template <typename T>
using GradMap = std::map<std::string, TensorT<T>>;

enum class OpKind {
  Leaf,
  Conv2d,
  ConvTranspose2d,
  BilinearResize,
  Sigmoid,
  LeakyRelu,
  Tanh,
  MuTonemap,
  MuTonemapLinearDenominator,
  ClampMin0,
  ClampMax,
  Abs,
  Add,
  Sub,
  Mul,
  AddScalar,
  MulScalar,
  ConcatChannels,
  SliceChannels,
  PadReflect,
  Crop,
  Sum,
  Mean,
};

const char* op_name(OpKind k);

template <typename T>
class Tape {
 public:
  // Registers a trainable parameter. Every leaf appears in the GradMap that
  // backward returns, with an exact-zero gradient when it is unreachable
  // from the loss.
  Var<T> leaf(const TensorT<T>& value, std::string name);

  // Reverse-mode sweep from a scalar loss. Gradients are the analytic
  // vector-Jacobian products of each recorded op, accumulated by summation
  // where a value fans out.
  GradMap<T> backward(const Var<T>& loss);

  // When enabled, every recorded op verifies its output is finite and
  // reports the offending op by name otherwise.
  void set_check_finite(bool on) { check_finite_ = on; }

  size_t size() const { return nodes_.size(); }

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<int> parents;  // node ids, -1 for untracked operands
    std::shared_ptr<const TensorT<T>> out;
    std::shared_ptr<const TensorT<T>> saved0;
    std::shared_ptr<const TensorT<T>> saved1;
    ConvSpec spec;
    T scalar0 = T(0);
    std::array<int64_t, 4> geom{0, 0, 0, 0};
    std::vector<int64_t> split;
    std::string name;
  };

 private:
  int record(Node node);
  void accumulate(std::vector<std::unique_ptr<TensorT<T>>>& grads, int id, TensorT<T> grad);

  std::vector<Node> nodes_;
  std::vector<int> leaf_ids_;
  bool check_finite_ = false;

  template <typename U>
  friend struct OpAccess;
};

// Tensor ops over tracked handles. Each mirrors the kernel of the same name;
// when no operand is tracked the kernel runs eagerly and a constant comes
// back.
template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight,
              const Var<T>* bias = nullptr);
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight,
                        const Var<T>* bias = nullptr);
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int64_t out_h, int64_t out_w);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T negative_slope);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> mu_tonemap(const Var<T>& x, T mu);
template <typename T>
Var<T> mu_tonemap_linear_denominator(const Var<T>& x, T mu);
template <typename T>
Var<T> clamp_min0(const Var<T>& x);
template <typename T>
Var<T> clamp_max(const Var<T>& x, T cap);
template <typename T>
Var<T> abs(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add_scalar(const Var<T>& a, T s);
template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t first, int64_t count);
template <typename T>
Var<T> pad_reflect(const Var<T>& x, int64_t top, int64_t bottom, int64_t left, int64_t right);
template <typename T>
Var<T> crop(const Var<T>& x, int64_t top, int64_t left, int64_t out_h, int64_t out_w);
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

// A scalar function recorded through tape ops, evaluated at the given leaves.
template <typename T>
using RecordedFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
};

// Central finite-difference verification of the analytic gradients, run in
// 64-bit mode. Per coordinate the step is eps * max(1, |theta|) and the
// reported error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
GradCheckReport grad_check(const RecordedFn<double>& f, const std::vector<Tensor64>& params,
                           double eps);

}  // namespace eapnet::ad
