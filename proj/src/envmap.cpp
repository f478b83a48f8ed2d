#include "relight/envmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "relight/autodiff.hpp"
#include "relight/error.hpp"

namespace relight {

using std::numbers::pi;

EnvMap::EnvMap(Image radiance) : radiance_(std::move(radiance)) {
  if (radiance_.rank() != 3 || radiance_.dim(2) != 3) {
    throw InvalidArgument("environment maps are H x W x 3, got " + shape_string(radiance_.shape()));
  }
  for (float v : radiance_.values()) {
    if (!std::isfinite(v)) throw NumericError("environment map contains non-finite radiance");
    if (v < 0.0f) throw InvalidArgument("environment map contains negative radiance");
  }
}

EnvMap EnvMap::constant(int height, int width, Rgb value) {
  Image img({height, width, 3});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(value[static_cast<std::size_t>(i % 3)]);
  return EnvMap(std::move(img));
}

SolidAngleMap::SolidAngleMap(int height, int width) : width_(width) {
  if (height < 1 || width < 1) throw InvalidArgument("solid_angle_map: dimensions must be at least 1");
  rows_.resize(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) {
    const double top = pi * r / height;
    const double bottom = pi * (r + 1) / height;
    rows_[static_cast<std::size_t>(r)] = (2.0 * pi / width) * (std::cos(top) - std::cos(bottom));
  }
}

double SolidAngleMap::total() const {
  double s = 0.0;
  for (double v : rows_) s += v * width_;
  return s;
}

SolidAngleMap solid_angle_map(int height, int width) { return SolidAngleMap(height, width); }

Vec3 lat_long_to_direction(double polar, double azimuth) {
  return {std::sin(polar) * std::cos(azimuth), std::sin(polar) * std::sin(azimuth), std::cos(polar)};
}

Vec3 pixel_to_direction(int row, int col, int height, int width) {
  if (row < 0 || row >= height || col < 0 || col >= width) {
    throw InvalidArgument("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                          std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  return lat_long_to_direction(pi * (row + 0.5) / height, 2.0 * pi * (col + 0.5) / width);
}

PixelIndex direction_to_pixel(Vec3 direction, int height, int width) {
  const Vec3 d = normalize(direction);
  const double polar = std::acos(std::clamp(d.z, -1.0, 1.0));
  double azimuth = std::atan2(d.y, d.x);
  if (azimuth < 0) azimuth += 2.0 * pi;
  const int row = std::clamp(static_cast<int>(std::floor(polar / pi * height)), 0, height - 1);
  const int col = static_cast<int>(std::floor(azimuth / (2.0 * pi) * width)) % width;
  return {row, col};
}

double degrees_to_column_shift(double degrees, int width) { return degrees * width / 360.0; }

EnvMap rotate_longitude(const EnvMap& env, double degrees) {
  return EnvMap(kernels::roll_columns(env.radiance(), degrees_to_column_shift(degrees, env.width())));
}

EnvMap resize_bilinear(const EnvMap& env, int height, int width) {
  if (height < 1 || width < 1) throw InvalidArgument("resize_bilinear: target extents must be at least 1");
  const int sh = env.height(), sw = env.width();
  if (sh == height && sw == width) return env;
  Image out({height, width, 3});
  for (int r = 0; r < height; ++r) {
    const double v = std::clamp((r + 0.5) * sh / height - 0.5, 0.0, static_cast<double>(sh - 1));
    const int r0 = static_cast<int>(std::floor(v));
    const int r1 = std::min(r0 + 1, sh - 1);
    const double fr = v - r0;
    for (int c = 0; c < width; ++c) {
      const double u = (c + 0.5) * sw / width - 0.5;
      const double uf = std::floor(u);
      const double fc = u - uf;
      const int c0 = ((static_cast<int>(uf) % sw) + sw) % sw;
      const int c1 = (c0 + 1) % sw;
      for (int k = 0; k < 3; ++k) {
        const double top = (1.0 - fc) * env.at(r0, c0, k) + fc * env.at(r0, c1, k);
        const double bottom = (1.0 - fc) * env.at(r1, c0, k) + fc * env.at(r1, c1, k);
        out.at(r, c, k) = static_cast<float>((1.0 - fr) * top + fr * bottom);
      }
    }
  }
  return EnvMap(std::move(out));
}

EnvMap resize_solid_angle(const EnvMap& env, int height, int width) {
  if (height < 1 || width < 1) throw InvalidArgument("resize_solid_angle: target extents must be at least 1");
  const int sh = env.height(), sw = env.width();
  if (sh == height && sw == width) return env;
  const SolidAngleMap omega(sh, sw);
  auto overlap = [](double lo, double hi, int s) {
    return std::max(0.0, std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s)));
  };
  Image out({height, width, 3});
  const double rs = static_cast<double>(sh) / height, cs = static_cast<double>(sw) / width;
  for (int r = 0; r < height; ++r) {
    const double rlo = r * rs, rhi = (r + 1) * rs;
    for (int c = 0; c < width; ++c) {
      const double clo = c * cs, chi = (c + 1) * cs;
      double acc[3] = {0, 0, 0}, weight = 0.0;
      for (int sr = static_cast<int>(std::floor(rlo)); sr < std::min(sh, static_cast<int>(std::ceil(rhi))); ++sr) {
        const double wr = overlap(rlo, rhi, sr) * omega.at(sr, 0);
        for (int sc = static_cast<int>(std::floor(clo)); sc < std::min(sw, static_cast<int>(std::ceil(chi))); ++sc) {
          const double w = wr * overlap(clo, chi, sc);
          if (w <= 0) continue;
          weight += w;
          for (int k = 0; k < 3; ++k) acc[k] += w * env.at(sr, sc, k);
        }
      }
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = static_cast<float>(acc[k] / weight);
    }
  }
  return EnvMap(std::move(out));
}

Rgb integrate(const EnvMap& env) {
  const SolidAngleMap omega(env.height(), env.width());
  Rgb total{0, 0, 0};
  for (int r = 0; r < env.height(); ++r)
    for (int c = 0; c < env.width(); ++c)
      for (int k = 0; k < 3; ++k) total[static_cast<std::size_t>(k)] += env.at(r, c, k) * omega.at(r, c);
  return total;
}

}  // namespace relight
