#pragma once

#include <filesystem>
#include <string>

#include "far/tokenizer.hpp"

namespace far {

/// 8-bit binary PGM (1 channel) or PPM (3 channels); values are clamped and rounded.
std::string encode_pnm(const Image& img);
Image decode_pnm(const std::string& bytes);

void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

} // namespace far
