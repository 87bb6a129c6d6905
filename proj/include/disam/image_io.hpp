#pragma once

#include <string>

#include "disam/tensor.hpp"

namespace disam {

// Binary PPM (P6, 8-bit) is the one raster format the artifact speaks.
// Pixels map linearly between byte value [0,255] and float [-1,1].

TensorF read_ppm(const std::string& path);          // -> (3, H, W) in [-1, 1]
void write_ppm(const TensorF& pixels, const std::string& path);

}  // namespace disam
