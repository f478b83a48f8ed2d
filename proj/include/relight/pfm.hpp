#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "relight/image.hpp"

namespace relight {

// Portable float map. "PF" is 3-channel, "Pf" single-channel; a negative
// scale means little-endian samples. Files store rows bottom-up; images in
// memory are top-down.
Image read_pfm(const std::filesystem::path& path);
Image parse_pfm(std::string_view bytes);
void write_pfm(const std::filesystem::path& path, const Image& image);
std::string encode_pfm(const Image& image);

}  // namespace relight
