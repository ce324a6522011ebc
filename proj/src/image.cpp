#include "pdml/image.hpp"

#include <algorithm>
#include <cmath>

namespace pdml {

Plane to_gray(const RgbImage& image) {
  Plane out(image.width, image.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = 0.299f * image.data[3 * i] + 0.587f * image.data[3 * i + 1] +
                  0.114f * image.data[3 * i + 2];
  }
  return out;
}

float sample_bilinear(const Plane& plane, double x, double y) {
  const double max_x = static_cast<double>(plane.width - 1);
  const double max_y = static_cast<double>(plane.height - 1);
  x = std::clamp(x, 0.0, max_x);
  y = std::clamp(y, 0.0, max_y);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, plane.width - 1);
  const std::size_t y1 = std::min(y0 + 1, plane.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = (1 - fx) * plane.at(x0, y0) + fx * plane.at(x1, y0);
  const double bottom = (1 - fx) * plane.at(x0, y1) + fx * plane.at(x1, y1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

Plane resize_bilinear(const Plane& plane, std::size_t width, std::size_t height) {
  if (width == plane.width && height == plane.height) return plane;
  Plane out(width, height);
  const double sx = static_cast<double>(plane.width) / static_cast<double>(width);
  const double sy = static_cast<double>(plane.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < width; ++x) {
      out.at(x, y) = sample_bilinear(plane, (static_cast<double>(x) + 0.5) * sx - 0.5, src_y);
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height) {
  if (width == image.width && height == image.height) return image;
  RgbImage out(width, height);
  for (std::size_t c = 0; c < 3; ++c) {
    Plane channel(image.width, image.height);
    for (std::size_t i = 0; i < channel.size(); ++i) channel.data[i] = image.data[3 * i + c];
    const Plane resized = resize_bilinear(channel, width, height);
    for (std::size_t i = 0; i < resized.size(); ++i) out.data[3 * i + c] = resized.data[i];
  }
  return out;
}

Plane gaussian_blur(const Plane& plane, double sigma) {
  if (sigma <= 0.0) return plane;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[i + radius];
  }
  for (auto& k : kernel) k /= norm;

  const auto w = static_cast<long>(plane.width);
  const auto h = static_cast<long>(plane.height);
  Plane tmp(plane.width, plane.height), out(plane.width, plane.height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const long xx = std::clamp(x + i, 0L, w - 1);
        acc += kernel[i + radius] * plane.data[y * w + xx];
      }
      tmp.data[y * w + x] = static_cast<float>(acc);
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const long yy = std::clamp(y + i, 0L, h - 1);
        acc += kernel[i + radius] * tmp.data[yy * w + x];
      }
      out.data[y * w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace pdml
