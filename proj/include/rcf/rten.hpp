// RTEN tensor file format: magic "RTEN", version byte 0x01, dtype byte
// (0x01 = 32-bit float little-endian), rank byte, rank x u64 little-endian
// dims, then the row-major payload. Round-trips bit-exactly.
#pragma once

#include <string>

#include "rcf/tensor.hpp"

namespace rcf {

void write_rten(const std::string& path, const Tensor<float>& t);
Tensor<float> read_rten(const std::string& path);

}  // namespace rcf
