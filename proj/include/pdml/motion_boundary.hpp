#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pdml/flow.hpp"

namespace pdml {

// Signed sum of the spatial derivatives of each flow component:
// b_u = du/dx + du/dy, b_v = dv/dx + dv/dy.
struct MotionBoundaryField {
  std::size_t width = 0;
  std::size_t height = 0;
  Plane b_u;
  Plane b_v;

  MotionBoundaryField() = default;
  MotionBoundaryField(std::size_t w, std::size_t h) : width(w), height(h), b_u(w, h), b_v(w, h) {}

  friend bool operator==(const MotionBoundaryField&, const MotionBoundaryField&) = default;
};

// Central differences inside, one-sided differences on the border. Needs 3x3.
std::pair<Plane, Plane> spatial_derivatives(const Plane& field);

MotionBoundaryField motion_boundary(const FlowField& flow);

// One field per flow field: N video frames -> N-1 fields -> 2(N-1) frames.
std::vector<MotionBoundaryField> mb_sequence(std::span<const FlowField> flows);

// [2, N, H, W] network input, clamped to [-bound, bound] and scaled to [-1, 1].
Tensor mb_to_input(std::span<const MotionBoundaryField> fields, float bound = 20.0f);

void write_mb(const std::filesystem::path& path, const MotionBoundaryField& field);
MotionBoundaryField read_mb(const std::filesystem::path& path);

}  // namespace pdml
