#include "pdml/motion_boundary.hpp"

#include <string>

#include "pdml/error.hpp"

namespace pdml {

std::pair<Plane, Plane> spatial_derivatives(const Plane& f) {
  if (f.width < 3 || f.height < 3) {
    throw InputError("spatial_derivatives: field is " + std::to_string(f.width) + "x" +
                     std::to_string(f.height) + ", needs at least 3x3");
  }
  const std::size_t w = f.width, h = f.height;
  Plane dx(w, h), dy(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (x == 0) dx.at(x, y) = f.at(1, y) - f.at(0, y);
      else if (x + 1 == w) dx.at(x, y) = f.at(x, y) - f.at(x - 1, y);
      else dx.at(x, y) = 0.5f * (f.at(x + 1, y) - f.at(x - 1, y));

      if (y == 0) dy.at(x, y) = f.at(x, 1) - f.at(x, 0);
      else if (y + 1 == h) dy.at(x, y) = f.at(x, y) - f.at(x, y - 1);
      else dy.at(x, y) = 0.5f * (f.at(x, y + 1) - f.at(x, y - 1));
    }
  }
  return {std::move(dx), std::move(dy)};
}

MotionBoundaryField motion_boundary(const FlowField& flow) {
  const auto [ux, uy] = spatial_derivatives(flow.u);
  const auto [vx, vy] = spatial_derivatives(flow.v);
  MotionBoundaryField mb(flow.width, flow.height);
  for (std::size_t i = 0; i < mb.b_u.size(); ++i) {
    mb.b_u.data[i] = ux.data[i] + uy.data[i];
    mb.b_v.data[i] = vx.data[i] + vy.data[i];
  }
  return mb;
}

std::vector<MotionBoundaryField> mb_sequence(std::span<const FlowField> flows) {
  if (flows.empty()) throw InputError("mb_sequence: no flow fields");
  std::vector<MotionBoundaryField> out;
  out.reserve(flows.size());
  for (const FlowField& f : flows) out.push_back(motion_boundary(f));
  return out;
}

Tensor mb_to_input(std::span<const MotionBoundaryField> fields, float bound) {
  // Same layout and mapping as flow input.
  std::vector<FlowField> as_flow;
  as_flow.reserve(fields.size());
  for (const auto& mb : fields) {
    FlowField f(mb.width, mb.height);
    f.u = mb.b_u;
    f.v = mb.b_v;
    as_flow.push_back(std::move(f));
  }
  return flow_to_input(as_flow, bound);
}

void write_mb(const std::filesystem::path& path, const MotionBoundaryField& field) {
  FlowField f(field.width, field.height);
  f.u = field.b_u;
  f.v = field.b_v;
  write_flo(path, f, kMotionBoundaryMagic);
}

MotionBoundaryField read_mb(const std::filesystem::path& path) {
  FlowField f = read_flo(path, kMotionBoundaryMagic);
  MotionBoundaryField mb(f.width, f.height);
  mb.b_u = std::move(f.u);
  mb.b_v = std::move(f.v);
  return mb;
}

}  // namespace pdml
