#pragma once

#include "relight/tensor.hpp"

namespace relight {

// Linear float image, H x W x C (C = 1 or 3), row 0 at the top.
using Image = Tensor<float>;

struct Rect {
  int x = 0, y = 0, width = 0, height = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

Image crop(const Image& image, const Rect& rect);

// Box-filter resampling: each target pixel averages the source area it
// covers, with fractional weights at the edges. Linear in the input.
Image resize_area(const Image& image, int height, int width);

// Elementwise product with a single-channel mask broadcast over channels.
Image apply_mask(const Image& image, const Image& mask);

float max_value(const Image& image);

}  // namespace relight
