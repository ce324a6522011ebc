#include "pdml/texture.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace pdml {

PeriodicTexture::PeriodicTexture(std::uint64_t seed, double period, int components) : period_(period) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> freq(-6, 6);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  norm_ = 0;
  while (static_cast<int>(waves_.size()) < components) {
    const int fx = freq(rng), fy = freq(rng);
    if (fx == 0 && fy == 0) continue;
    const double a = amp(rng);
    waves_.push_back({2.0 * std::numbers::pi * fx / period, 2.0 * std::numbers::pi * fy / period, phase(rng), a});
    norm_ += a;
  }
}

double PeriodicTexture::operator()(double x, double y) const {
  double acc = 0;
  for (const Wave& w : waves_) acc += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
  return 0.5 + 0.4 * acc / norm_;
}

Plane PeriodicTexture::render(std::size_t width, std::size_t height, double dx, double dy) const {
  Plane out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out.at(x, y) = static_cast<float>((*this)(static_cast<double>(x) - dx, static_cast<double>(y) - dy));
    }
  }
  return out;
}

}  // namespace pdml
