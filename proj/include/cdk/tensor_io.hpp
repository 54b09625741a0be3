#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdk/tensor.hpp"

namespace cdk {

// Binary tensor file: 8-byte magic "CDKT0001", little-endian u32 header
// length, JSON header {"dtype":"f32","shape":[...],"order":"row_major"},
// then raw little-endian float32 data. Round-trips are bit-exact.
inline constexpr char kTensorMagic[8] = {'C', 'D', 'K', 'T', '0', '0', '0', '1'};

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

std::vector<uint8_t> tensor_bytes(const Tensor& t);
Tensor tensor_from_bytes(const uint8_t* data, size_t len);

}  // namespace cdk
