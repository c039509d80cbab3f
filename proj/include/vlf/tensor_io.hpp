#pragma once

#include <iosfwd>
#include <string>

#include "vlf/tensor.hpp"

namespace vlf {

// Flat binary tensor format used for checkpoints:
//   magic "VLFT" | u32 rank | u32 dims[rank] | f64 payload
// All integers and doubles little-endian regardless of host order.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace vlf
