#include "eapnet/graph_cost.hpp"

#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "eapnet/model.hpp"

namespace eapnet {

void layer_out_extents(const LayerSpec& layer, int64_t in_h, int64_t in_w, int64_t* out_h,
                       int64_t* out_w) {
  switch (layer.kind) {
    case LayerKind::Conv:
      *out_h = layer.conv.out_extent(in_h);
      *out_w = layer.conv.out_extent(in_w);
      break;
    case LayerKind::ConvTranspose:
      *out_h = layer.conv.transpose_out_extent(in_h);
      *out_w = layer.conv.transpose_out_extent(in_w);
      break;
    default:
      *out_h = in_h;
      *out_w = in_w;
      break;
  }
}

LayerCost count_layer(const LayerSpec& layer, int64_t in_h, int64_t in_w) {
  LayerCost cost;
  cost.name = layer.name;
  switch (layer.kind) {
    case LayerKind::Conv: {
      layer.conv.validate(true);
      const int64_t out_h = layer.conv.out_extent(in_h);
      const int64_t out_w = layer.conv.out_extent(in_w);
      if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("count_layer: layer \"" + layer.name +
                                    "\" collapses to empty output at " + std::to_string(in_h) +
                                    "x" + std::to_string(in_w));
      }
      cost.maccs = layer.conv.weight_count() * out_h * out_w;
      cost.params = layer.conv.weight_count() +
                    (layer.conv.has_bias ? layer.conv.out_channels : 0);
      break;
    }
    case LayerKind::ConvTranspose: {
      layer.conv.validate(false);
      // Counted symmetrically over the equivalent forward convolution: every
      // input position applies the full kernel once.
      cost.maccs = layer.conv.weight_count() * in_h * in_w;
      cost.params = layer.conv.weight_count() +
                    (layer.conv.has_bias ? layer.conv.in_channels : 0);
      break;
    }
    case LayerKind::BilinearResize:
    case LayerKind::Elementwise:
    case LayerKind::Concat:
    case LayerKind::PadReflect:
      break;
  }
  return cost;
}

CostReport count_layers(const std::vector<LayerSpec>& layers, int64_t h, int64_t w) {
  if (h < 1 || w < 1) {
    throw std::invalid_argument("count_layers: input resolution must be positive");
  }
  // Resolution ladder: div -> extents, each level one ceil-halving (the
  // stride-2 k3 p1 arithmetic) below the previous.
  std::map<int, std::pair<int64_t, int64_t>> ladder;
  ladder[1] = {h, w};
  for (int div = 2; div <= 64; div *= 2) {
    auto [ph, pw] = ladder[div / 2];
    ladder[div] = {(ph - 1) / 2 + 1, (pw - 1) / 2 + 1};
  }

  CostReport report;
  for (const LayerSpec& layer : layers) {
    auto it = ladder.find(layer.in_div);
    if (it == ladder.end()) {
      throw std::invalid_argument("count_layers: layer \"" + layer.name +
                                  "\" has unsupported resolution divisor " +
                                  std::to_string(layer.in_div));
    }
    LayerCost cost = count_layer(layer, it->second.first, it->second.second);
    cost.maccs *= layer.runs;
    report.total_maccs += cost.maccs;
    report.total_params += cost.params;
    report.layers.push_back(std::move(cost));
  }
  return report;
}

CostReport count_model(const ModelConfig& config, int64_t h, int64_t w) {
  config.validate();
  return count_layers(model_layers(config), h, w);
}

std::vector<LayerSpec> ahdr_reference_layers() {
  std::vector<LayerSpec> layers;
  auto conv = [](std::string name, int cin, int cout, int k, int dilation, int runs) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::Conv;
    l.conv.in_channels = cin;
    l.conv.out_channels = cout;
    l.conv.kernel = k;
    l.conv.dilation = dilation;
    l.conv.padding = dilation * (k - 1) / 2;
    l.conv.has_bias = true;
    l.runs = runs;
    return l;
  };

  layers.push_back(conv("encoder", 3, 64, 3, 1, 3));
  layers.push_back(conv("attention.conv1", 128, 64, 3, 1, 3));
  layers.push_back(conv("attention.conv2", 64, 64, 3, 1, 3));
  layers.push_back(conv("merge", 192, 64, 3, 1, 1));
  for (int b = 0; b < 3; ++b) {
    const std::string prefix = "drdb" + std::to_string(b);
    for (int j = 0; j < 6; ++j) {
      layers.push_back(
          conv(prefix + ".dense" + std::to_string(j), 64 + 32 * j, 32, 3, 2, 1));
    }
    layers.push_back(conv(prefix + ".lff", 64 + 32 * 6, 64, 1, 1, 1));
  }
  layers.push_back(conv("gff.pointwise", 192, 64, 1, 1, 1));
  layers.push_back(conv("gff.conv", 64, 64, 3, 1, 1));
  layers.push_back(conv("recon.conv1", 64, 64, 3, 1, 1));
  layers.push_back(conv("recon.conv2", 64, 3, 3, 1, 1));
  return layers;
}

std::string format_cost_table(const CostReport& report) {
  size_t name_width = 5;
  for (const auto& l : report.layers) name_width = std::max(name_width, l.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_width) + 2) << "layer" << std::right
     << std::setw(16) << "MAccs" << std::setw(12) << "params" << "\n";
  for (const auto& l : report.layers) {
    os << std::left << std::setw(static_cast<int>(name_width) + 2) << l.name << std::right
       << std::setw(16) << l.maccs << std::setw(12) << l.params << "\n";
  }
  os << std::left << std::setw(static_cast<int>(name_width) + 2) << "total" << std::right
     << std::setw(16) << report.total_maccs << std::setw(12) << report.total_params << "\n";
  os << std::fixed << std::setprecision(2) << report.maccs_g() << " G MAccs, "
     << report.params_k() << " k params\n";
  return os.str();
}

}  // namespace eapnet
