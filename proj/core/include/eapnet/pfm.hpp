#pragma once

#include <string>

#include "eapnet/tensor.hpp"

namespace eapnet {

// Portable FloatMap. Color images ("PF") map to 1x3xHxW tensors, grayscale
// ("Pf") to 1x1xHxW. Files are written little-endian (scale -1.0) with rows
// bottom-to-top per the format convention.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& image);

}  // namespace eapnet
