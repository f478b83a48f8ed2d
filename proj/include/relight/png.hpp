#pragma once

#include <cstdint>
#include <filesystem>

#include "relight/image.hpp"

namespace relight {

// 8-bit code for a linear value: round(255 * clamp(v, 0, 1)^(1/2.2)).
std::uint8_t gamma_encode(float linear);

// Writes a gamma-encoded 8-bit PNG for viewing: gray for 1 channel, RGB for
// 3. Non-finite values are written as 0.
void export_png(const std::filesystem::path& path, const Image& image);

}  // namespace relight
