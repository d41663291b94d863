#pragma once

#include <string>

#include "eapnet/model.hpp"
#include "eapnet/tensor.hpp"

namespace eapnet {

// One tensor per file: a single JSON header line
// {"shape":[n,c,h,w],"dtype":"f32","order":"nchw"} followed by the values as
// little-endian 32-bit floats in nchw order.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  ParamStore ema;
  bool has_ema = false;
};

// Directory layout: manifest.json (config, config hash, parameter shapes)
// plus params/<name>.tensor and, when present, ema/<name>.tensor.
void save_checkpoint(const std::string& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace eapnet
