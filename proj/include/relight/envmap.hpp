#pragma once

#include <vector>

#include "relight/geometry.hpp"
#include "relight/image.hpp"

namespace relight {

// Latitude-longitude radiance map: H x W x 3 linear RGB, row 0 at the +z
// pole, columns spanning longitude [0, 360) degrees. Values are finite and
// nonnegative.
class EnvMap {
 public:
  explicit EnvMap(Image radiance);
  static EnvMap constant(int height, int width, Rgb value);

  int height() const { return radiance_.dim(0); }
  int width() const { return radiance_.dim(1); }
  const Image& radiance() const { return radiance_; }
  float at(int row, int col, int channel) const { return radiance_.at(row, col, channel); }

 private:
  Image radiance_;
};

// Per-pixel solid angles in steradians; constant along each row.
class SolidAngleMap {
 public:
  SolidAngleMap(int height, int width);

  int height() const { return static_cast<int>(rows_.size()); }
  int width() const { return width_; }
  double at(int row, int /*col*/) const { return rows_[static_cast<std::size_t>(row)]; }
  double total() const;

 private:
  std::vector<double> rows_;
  int width_;
};

SolidAngleMap solid_angle_map(int height, int width);

struct PixelIndex {
  int row = 0, col = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

// Direction through the center of pixel (row, col); z is up, longitude is
// measured from +x toward +y.
Vec3 pixel_to_direction(int row, int col, int height, int width);
Vec3 lat_long_to_direction(double polar, double azimuth);
PixelIndex direction_to_pixel(Vec3 direction, int height, int width);

// Rotates about the vertical axis; latitude is unchanged. Non-integer pixel
// shifts interpolate linearly with wraparound.
EnvMap rotate_longitude(const EnvMap& env, double degrees);
double degrees_to_column_shift(double degrees, int width);

// Bilinear sampling at target pixel centers, wrapping in longitude and
// clamping in latitude.
EnvMap resize_bilinear(const EnvMap& env, int height, int width);

// Solid-angle-weighted area average onto a coarser grid.
EnvMap resize_solid_angle(const EnvMap& env, int height, int width);

// Sum over pixels of radiance times solid angle, per channel.
Rgb integrate(const EnvMap& env);

}  // namespace relight
