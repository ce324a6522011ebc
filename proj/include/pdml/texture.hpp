#pragma once

#include <cstdint>
#include <vector>

#include "pdml/image.hpp"

namespace pdml {

// Smooth texture defined analytically as a sum of sinusoids whose periods
// divide `period`, so it can be sampled at any real offset and wraps exactly.
class PeriodicTexture {
 public:
  PeriodicTexture(std::uint64_t seed, double period = 64.0, int components = 14);

  // Intensity in [0.1, 0.9].
  double operator()(double x, double y) const;

  // Renders texture(x - dx, y - dy), i.e. the content displaced by (+dx, +dy).
  Plane render(std::size_t width, std::size_t height, double dx = 0.0, double dy = 0.0) const;

  double period() const { return period_; }

 private:
  struct Wave {
    double kx, ky, phase, amplitude;
  };
  double period_;
  std::vector<Wave> waves_;
  double norm_;
};

}  // namespace pdml
