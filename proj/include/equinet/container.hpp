#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "equinet/tensor.hpp"

namespace equinet {

// "WT1" tensor container: bytes 0-3 magic "WT1\0"; u8 dtype (0 = f32,
// 1 = f64); u8 ndim; ndim x u64 little-endian extents; then raw
// little-endian row-major data. Complex tensors carry a trailing extent-2
// axis, flagged in the JSON sidecar that accompanies datasets.
struct Wt1Header {
  int dtype = 0;
  std::vector<int64_t> dims;
};

void write_wt1(const std::string& path, const Tensor<float>& t);
void write_wt1(const std::string& path, const Tensor<double>& t);

Wt1Header peek_wt1(const std::string& path);

Tensor<float> read_wt1_f32(const std::string& path);
Tensor<double> read_wt1_f64(const std::string& path);

// Reads either dtype, widening f32 to f64.
Tensor<double> read_wt1_as_f64(const std::string& path);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

}  // namespace equinet
