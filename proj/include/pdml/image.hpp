#pragma once

#include <cstddef>
#include <vector>

namespace pdml {

// Single-channel float raster, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(w * h, fill) {}

  float& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Plane&, const Plane&) = default;
};

// Interleaved RGB raster with values in [0, 1].
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h) : width(w), height(h), data(3 * w * h, 0.0f) {}

  float& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * 3 + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * 3 + c]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// luma = 0.299 R + 0.587 G + 0.114 B
Plane to_gray(const RgbImage& image);

// Bilinear lookup with border replication; (x, y) in pixel coordinates.
float sample_bilinear(const Plane& plane, double x, double y);

// Pixel-centre aligned bilinear resampling.
Plane resize_bilinear(const Plane& plane, std::size_t width, std::size_t height);
RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height);

// Separable Gaussian with border replication; sigma <= 0 returns the input.
Plane gaussian_blur(const Plane& plane, double sigma);

}  // namespace pdml
