#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eapnet/tensor.hpp"

namespace eapnet {

struct ModelConfig;

enum class LayerKind { Conv, ConvTranspose, BilinearResize, Elementwise, Concat, PadReflect };

enum class WeightInit { FanIn, Zero, NearestNeighborUp };

// One declarative entry of a layer graph. in_div gives the layer's input
// resolution as a power-of-two divisor of the graph input, resolved by
// repeated stride-2 arithmetic (ceil halving). runs counts how many times a
// shared layer executes per forward pass; its parameters are stored once.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvSpec conv;
  int in_div = 1;
  int runs = 1;
  WeightInit init = WeightInit::FanIn;
};

struct LayerCost {
  std::string name;
  int64_t maccs = 0;
  int64_t params = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  int64_t total_maccs = 0;
  int64_t total_params = 0;

  double maccs_g() const { return static_cast<double>(total_maccs) / 1e9; }
  double params_k() const { return static_cast<double>(total_params) / 1e3; }
};

// One multiply-accumulate per weight application; bias additions, resizes,
// activations and concatenations count zero. Parameters include bias entries.
LayerCost count_layer(const LayerSpec& layer, int64_t in_h, int64_t in_w);

// Output spatial extents of a layer, matching what the kernels produce.
void layer_out_extents(const LayerSpec& layer, int64_t in_h, int64_t in_w, int64_t* out_h,
                       int64_t* out_w);

CostReport count_layers(const std::vector<LayerSpec>& layers, int64_t h, int64_t w);

// Cost of an instantiable model configuration at the given input resolution.
CostReport count_model(const ModelConfig& config, int64_t h, int64_t w);

// The AHDR baseline graph (shared 3->64 encoders, two-conv attention per
// frame, three 6-layer dilation-2 dense blocks of growth 32, global fusion,
// reconstruction), used as the complexity anchor.
std::vector<LayerSpec> ahdr_reference_layers();

std::string format_cost_table(const CostReport& report);

}  // namespace eapnet
