#pragma once

// OTNS tensor encoding (all integers and floats little-endian):
//
//   bytes 0..3   magic "OTNS"
//   u32          rank
//   u64 x rank   dimensions
//   f64 x numel  row-major payload
//
// A tensor table is a u32 entry count followed by, per entry, a u32 name
// length, the UTF-8 name bytes, and one OTNS record.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "handocc/tensor.hpp"

namespace handocc {

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

/// Encoded size in bytes of `t`.
std::size_t encoded_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_tensor_table(std::ostream& out, const std::vector<NamedTensor>& table);
std::vector<NamedTensor> read_tensor_table(std::istream& in);

}  // namespace handocc
