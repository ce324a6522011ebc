#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "pdml/image.hpp"
#include "pdml/tensor.hpp"

namespace pdml {

// Per-pixel displacement from frame a to frame b, in pixels per frame.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  Plane u;
  Plane v;

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), u(w, h), v(w, h) {}

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

struct TvL1Params {
  double lambda = 0.15;
  double theta = 0.3;
  double tau = 0.125;
  int pyramid_levels = 5;
  double scale_factor = 0.5;
  int warps_per_level = 5;
  int iterations_per_warp = 30;
  double stop_epsilon = 0.01;

  void validate() const;
};

// Coarsest pyramid level is never smaller than this on either side.
inline constexpr std::size_t kMinPyramidSide = 16;

struct FlowDiagnostics {
  // TV-L1 energy after each warp at the finest level.
  std::vector<double> finest_level_energies;
  int levels_used = 0;
};

// Coarse-to-fine duality-based TV-L1. Frames are grayscale in [0, 1].
FlowField estimate_flow(const Plane& frame_a, const Plane& frame_b, const TvL1Params& params,
                        FlowDiagnostics* diagnostics = nullptr);

// sum |grad u1| + |grad u2| + lambda |I1(x + u) - I0(x)| with intensities on
// the solver's internal 0..255 scale.
double tvl1_energy(const Plane& frame_a, const Plane& frame_b, const FlowField& flow, double lambda);

// Clamp to [-bound, bound] and map affinely onto [-1, 1].
float normalize_displacement(float value, float bound);

// [2, N, H, W]: channel 0 = u, channel 1 = v, one time step per field.
Tensor flow_to_input(std::span<const FlowField> flows, float bound = 20.0f);

// Middlebury .flo container. The magic distinguishes flow from derived fields.
inline constexpr float kFlowMagic = 202021.25f;
inline constexpr float kMotionBoundaryMagic = 202021.5f;

void write_flo(const std::filesystem::path& path, const FlowField& field, float magic = kFlowMagic);
FlowField read_flo(const std::filesystem::path& path, float expected_magic = kFlowMagic);

}  // namespace pdml
