#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vlf {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::string& path);

}  // namespace vlf
