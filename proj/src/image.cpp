#include "relight/image.hpp"

#include <algorithm>
#include <cmath>

#include "relight/error.hpp"

namespace relight {
namespace {

struct Tap {
  int index;
  double weight;
};

// Source taps covering each target cell of a 1-D box resampling.
std::vector<std::vector<Tap>> box_taps(int source, int target) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(target));
  const double ratio = static_cast<double>(source) / target;
  for (int i = 0; i < target; ++i) {
    const double lo = i * ratio, hi = (i + 1) * ratio;
    double total = 0.0;
    for (int s = static_cast<int>(std::floor(lo)); s < std::min(source, static_cast<int>(std::ceil(hi))); ++s) {
      const double w = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (w > 0) {
        taps[static_cast<std::size_t>(i)].push_back({s, w});
        total += w;
      }
    }
    for (auto& t : taps[static_cast<std::size_t>(i)]) t.weight /= total;
  }
  return taps;
}

}  // namespace

Image crop(const Image& image, const Rect& rect) {
  if (rect.x < 0 || rect.y < 0 || rect.width <= 0 || rect.height <= 0 || rect.x + rect.width > image.dim(1) ||
      rect.y + rect.height > image.dim(0)) {
    throw InvalidArgument("crop rectangle outside image");
  }
  const int c = image.dim(2);
  Image out({rect.height, rect.width, c});
  for (int y = 0; y < rect.height; ++y) {
    const float* src = &image.at(rect.y + y, rect.x, 0);
    std::copy_n(src, static_cast<std::size_t>(rect.width) * c, &out.at(y, 0, 0));
  }
  return out;
}

Image resize_area(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) throw InvalidArgument("resize_area: target extents must be positive");
  if (image.dim(0) == height && image.dim(1) == width) return image;
  const int sh = image.dim(0), sw = image.dim(1), c = image.dim(2);
  const auto row_taps = box_taps(sh, height);
  const auto col_taps = box_taps(sw, width);
  std::vector<double> rows(static_cast<std::size_t>(height) * sw * c, 0.0);
  for (int y = 0; y < height; ++y)
    for (const auto& t : row_taps[static_cast<std::size_t>(y)])
      for (int x = 0; x < sw; ++x)
        for (int k = 0; k < c; ++k)
          rows[(static_cast<std::size_t>(y) * sw + x) * c + k] += t.weight * image.at(t.index, x, k);
  Image out({height, width, c});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (const auto& t : col_taps[static_cast<std::size_t>(x)])
          acc += t.weight * rows[(static_cast<std::size_t>(y) * sw + t.index) * c + k];
        out.at(y, x, k) = static_cast<float>(acc);
      }
  return out;
}

Image apply_mask(const Image& image, const Image& mask) {
  if (mask.dim(0) != image.dim(0) || mask.dim(1) != image.dim(1) || mask.dim(2) != 1) {
    throw InvalidArgument("apply_mask: mask " + shape_string(mask.shape()) + " does not fit image " +
                          shape_string(image.shape()));
  }
  Image out = image;
  const int c = image.dim(2);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i / c];
  return out;
}

float max_value(const Image& image) {
  if (image.empty()) throw InvalidArgument("max_value of empty image");
  return *std::max_element(image.storage().begin(), image.storage().end());
}

}  // namespace relight
