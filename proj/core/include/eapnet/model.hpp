#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eapnet/autodiff.hpp"
#include "eapnet/graph_cost.hpp"
#include "eapnet/tensor.hpp"

namespace eapnet {

enum class Variant { Standard, Lightweight, TinyTest };
enum class BlockKind { Pdub, Drdb };
enum class AlignRes { Full, Half };
enum class UpsampleKind { Bilinear, TransposedConv };

const char* variant_name(Variant v);

// Architecture knobs. The standard and lightweight presets follow the
// published variants: 4 restoration blocks with transposed-convolution
// upsampling and half-resolution attention/alignment versus 3 blocks,
// bilinear upsampling and full-resolution alignment. tiny-test is a scaled
// down lightweight wiring for fast gradient checks and training smoke runs.
struct ModelConfig {
  Variant variant = Variant::Lightweight;
  BlockKind block_kind = BlockKind::Pdub;
  int encoder_channels = 32;
  int trunk_channels = 64;
  int num_blocks = 3;
  bool weight_sharing = false;
  AlignRes align_resolution = AlignRes::Full;
  UpsampleKind upsample = UpsampleKind::Bilinear;
  std::array<int, 3> pdub_dilations{1, 2, 4};
  std::array<int, 3> pdub_widths{64, 96, 160};
  int align_mid_channels = 24;
  int drdb_growth = 32;
  int drdb_layers = 6;
  uint64_t seed = 0;

  static ModelConfig preset(Variant v);
  void validate() const;
};

// Named parameter tensors; layer "foo" owns "foo.w" and, when biased,
// "foo.b". std::map keeps iteration deterministic.
struct ParamStore {
  std::map<std::string, Tensor> tensors;
  int64_t total_count() const;
};

// The declarative layer graph, the single structural source for parameter
// creation, cost counting and the forward pass.
std::vector<LayerSpec> model_layers(const ModelConfig& config);

// Module name prefixes ("enc.f1", "att.s.high", ...); frame is 1-based.
std::string enc_prefix(const ModelConfig& c, int frame);
std::string hired_prefix(const ModelConfig& c, int frame);
std::string att_prefix(const ModelConfig& c, int frame, bool high);
std::string align_prefix(const ModelConfig& c, int frame, bool high);

// Seeded fan-in uniform initialization; alignment predictors and residual
// fusion layers start at zero so the network is an identity-plus-reference
// mapping at step 0.
ParamStore init_params(const ModelConfig& config);

template <typename T>
using ParamVars = std::map<std::string, ad::Var<T>>;

template <typename T>
ParamVars<T> params_as_constants(const ParamStore& store);
template <typename T>
ParamVars<T> params_as_leaves(ad::Tape<T>& tape, const ParamStore& store);

template <typename T>
struct FramePyramid {
  ad::Var<T> high;  // encoder_channels at input resolution
  ad::Var<T> low;   // encoder_channels at half resolution
};

// frame is 1-based; frame 2 is the reference.
template <typename T>
FramePyramid<T> msenc_forward(const ad::Var<T>& input, const ModelConfig& config,
                              const ParamVars<T>& params, int frame);

// merged = sigmoid(conv(concat(f_i, f_ref))) * f_i, with the attention map
// predicted at half resolution and its logits upsampled in half mode.
template <typename T>
ad::Var<T> attention_forward(const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                             const ModelConfig& config, const ParamVars<T>& params,
                             const std::string& prefix);

// Per-pixel scale/bias modulation predicted from concat(f_i, f_ref);
// identity at initialization.
template <typename T>
ad::Var<T> align_forward(const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                         const ModelConfig& config, const ParamVars<T>& params,
                         const std::string& prefix);

template <typename T>
ad::Var<T> pdub_forward(const ad::Var<T>& x, const ModelConfig& config,
                        const ParamVars<T>& params, const std::string& prefix);

template <typename T>
ad::Var<T> drdb_forward(const ad::Var<T>& x, const ModelConfig& config,
                        const ParamVars<T>& params, const std::string& prefix);

// Full forward graph over three 6-channel inputs (original LDR concatenated
// with its exposure-aligned version). Spatial extents must be divisible by 4.
template <typename T>
ad::Var<T> model_forward(const std::array<ad::Var<T>, 3>& inputs, const ModelConfig& config,
                         const ParamVars<T>& params);

// Central finite-difference verification of every parameter gradient of the
// full model in 64-bit mode. Parameters are perturbed off their zero
// initializations so each backward path carries signal; the scalar probe is
// a fixed random projection of the output.
ad::GradCheckReport model_grad_check(const ModelConfig& config, int64_t h, int64_t w,
                                     double eps, uint64_t seed);

}  // namespace eapnet
