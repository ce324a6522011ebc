#include "pdml/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>

#include "pdml/error.hpp"

namespace pdml {

namespace {

constexpr double kIntensityScale = 255.0;
constexpr double kPresmoothSigma = 0.8;
constexpr double kGradIsZero = 1e-10;

struct Level {
  Plane a;
  Plane b;
};

// I0/I1 derivative by centred differences, border pixels replicate.
void centered_gradient(const Plane& f, Plane& dx, Plane& dy) {
  const std::size_t w = f.width, h = f.height;
  dx = Plane(w, h);
  dy = Plane(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y ? y - 1 : 0, yp = std::min(y + 1, h - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x ? x - 1 : 0, xp = std::min(x + 1, w - 1);
      dx.at(x, y) = 0.5f * (f.at(xp, y) - f.at(xm, y));
      dy.at(x, y) = 0.5f * (f.at(x, yp) - f.at(x, ym));
    }
  }
}

// Forward differences, zero on the last column/row (Neumann).
void forward_gradient(const Plane& f, Plane& fx, Plane& fy) {
  const std::size_t w = f.width, h = f.height;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      fx.at(x, y) = x + 1 < w ? f.at(x + 1, y) - f.at(x, y) : 0.0f;
      fy.at(x, y) = y + 1 < h ? f.at(x, y + 1) - f.at(x, y) : 0.0f;
    }
  }
}

// Negative adjoint of forward_gradient.
void divergence(const Plane& p1, const Plane& p2, Plane& div) {
  const std::size_t w = p1.width, h = p1.height;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float d1, d2;
      if (x == 0) d1 = p1.at(x, y);
      else if (x + 1 == w) d1 = -p1.at(x - 1, y);
      else d1 = p1.at(x, y) - p1.at(x - 1, y);
      if (y == 0) d2 = p2.at(x, y);
      else if (y + 1 == h) d2 = -p2.at(x, y - 1);
      else d2 = p2.at(x, y) - p2.at(x, y - 1);
      div.at(x, y) = d1 + d2;
    }
  }
}

Plane warp(const Plane& f, const Plane& u, const Plane& v) {
  Plane out(f.width, f.height);
  for (std::size_t y = 0; y < f.height; ++y) {
    for (std::size_t x = 0; x < f.width; ++x) {
      out.at(x, y) = sample_bilinear(f, static_cast<double>(x) + u.at(x, y),
                                     static_cast<double>(y) + v.at(x, y));
    }
  }
  return out;
}

std::size_t scaled_extent(std::size_t n, double factor) {
  return static_cast<std::size_t>(static_cast<double>(n) * factor + 0.5);
}

Plane zoom_out(const Plane& f, std::size_t w, std::size_t h, double factor) {
  const double sigma = 0.6 * std::sqrt(1.0 / (factor * factor) - 1.0);
  return resize_bilinear(gaussian_blur(f, sigma), w, h);
}

void check_frames(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) {
    throw InputError("estimate_flow: frame sizes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
  if (a.width < 2 || a.height < 2) throw InputError("estimate_flow: frames must be at least 2x2");
  for (const Plane* p : {&a, &b}) {
    for (float v : p->data) {
      if (!std::isfinite(v)) throw InputError("estimate_flow: non-finite pixel value");
    }
  }
}

double energy_scaled(const Plane& a, const Plane& b, const FlowField& flow, double lambda) {
  Plane ux(flow.width, flow.height), uy(flow.width, flow.height);
  Plane vx(flow.width, flow.height), vy(flow.width, flow.height);
  forward_gradient(flow.u, ux, uy);
  forward_gradient(flow.v, vx, vy);
  const Plane bw = warp(b, flow.u, flow.v);
  double tv = 0, data = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    tv += std::hypot(ux.data[i], uy.data[i]) + std::hypot(vx.data[i], vy.data[i]);
    data += std::abs(static_cast<double>(bw.data[i]) - a.data[i]);
  }
  return tv + lambda * data;
}

// One pyramid level of the primal-dual scheme; u1/u2 hold the initial flow.
void solve_level(const Plane& i0, const Plane& i1, Plane& u1, Plane& u2, const TvL1Params& prm,
                 std::vector<double>* energies) {
  const std::size_t w = i0.width, h = i0.height, n = w * h;
  const double l_t = prm.lambda * prm.theta;
  const double taut = prm.tau / prm.theta;

  Plane i1x, i1y;
  centered_gradient(i1, i1x, i1y);

  Plane p11(w, h), p12(w, h), p21(w, h), p22(w, h);
  Plane v1(w, h), v2(w, h), div1(w, h), div2(w, h);
  Plane u1x(w, h), u1y(w, h), u2x(w, h), u2y(w, h);
  std::vector<float> grad(n), rho_c(n);

  // A warp whose result raises the true energy is rolled back to the best flow
  // seen so far; dual variables are kept.
  FlowField best(w, h);
  best.u = u1;
  best.v = u2;
  double best_energy = energy_scaled(i0, i1, best, prm.lambda);

  for (int warp_i = 0; warp_i < prm.warps_per_level; ++warp_i) {
    const Plane i1w = warp(i1, u1, u2);
    const Plane i1wx = warp(i1x, u1, u2);
    const Plane i1wy = warp(i1y, u1, u2);
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = i1wx.data[i] * i1wx.data[i] + i1wy.data[i] * i1wy.data[i];
      rho_c[i] = i1w.data[i] - i1wx.data[i] * u1.data[i] - i1wy.data[i] * u2.data[i] - i0.data[i];
    }

    double error = std::numeric_limits<double>::infinity();
    for (int it = 0; it < prm.iterations_per_warp && error > prm.stop_epsilon * prm.stop_epsilon; ++it) {
      // pointwise thresholding of the linearised residual
      for (std::size_t i = 0; i < n; ++i) {
        const double rho = rho_c[i] + (i1wx.data[i] * u1.data[i] + i1wy.data[i] * u2.data[i]);
        double d1, d2;
        if (rho < -l_t * grad[i]) {
          d1 = l_t * i1wx.data[i];
          d2 = l_t * i1wy.data[i];
        } else if (rho > l_t * grad[i]) {
          d1 = -l_t * i1wx.data[i];
          d2 = -l_t * i1wy.data[i];
        } else if (grad[i] < kGradIsZero) {
          d1 = d2 = 0;
        } else {
          const double fi = -rho / grad[i];
          d1 = fi * i1wx.data[i];
          d2 = fi * i1wy.data[i];
        }
        v1.data[i] = static_cast<float>(u1.data[i] + d1);
        v2.data[i] = static_cast<float>(u2.data[i] + d2);
      }

      divergence(p11, p12, div1);
      divergence(p21, p22, div2);

      error = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const float prev1 = u1.data[i], prev2 = u2.data[i];
        u1.data[i] = static_cast<float>(v1.data[i] + prm.theta * div1.data[i]);
        u2.data[i] = static_cast<float>(v2.data[i] + prm.theta * div2.data[i]);
        error += (u1.data[i] - prev1) * (u1.data[i] - prev1) + (u2.data[i] - prev2) * (u2.data[i] - prev2);
      }
      error /= static_cast<double>(n);

      // dual ascent on the flow gradient, projected back onto the unit ball
      forward_gradient(u1, u1x, u1y);
      forward_gradient(u2, u2x, u2y);
      for (std::size_t i = 0; i < n; ++i) {
        const double ng1 = 1.0 + taut * std::hypot(u1x.data[i], u1y.data[i]);
        const double ng2 = 1.0 + taut * std::hypot(u2x.data[i], u2y.data[i]);
        p11.data[i] = static_cast<float>((p11.data[i] + taut * u1x.data[i]) / ng1);
        p12.data[i] = static_cast<float>((p12.data[i] + taut * u1y.data[i]) / ng1);
        p21.data[i] = static_cast<float>((p21.data[i] + taut * u2x.data[i]) / ng2);
        p22.data[i] = static_cast<float>((p22.data[i] + taut * u2y.data[i]) / ng2);
      }
    }

    FlowField current(w, h);
    current.u = u1;
    current.v = u2;
    const double e = energy_scaled(i0, i1, current, prm.lambda);
    if (e <= best_energy) {
      best_energy = e;
      best = std::move(current);
    } else {
      u1 = best.u;
      u2 = best.v;
    }
    if (energies) energies->push_back(best_energy);
  }
}

}  // namespace

void TvL1Params::validate() const {
  if (!(lambda > 0)) throw ConfigError("tvl1 lambda must be positive");
  if (!(theta > 0)) throw ConfigError("tvl1 theta must be positive");
  if (!(tau > 0 && tau <= 0.125)) throw ConfigError("tvl1 tau must lie in (0, 0.125]");
  if (!(scale_factor > 0 && scale_factor < 1)) throw ConfigError("tvl1 scale_factor must lie in (0, 1)");
  if (pyramid_levels < 1 || warps_per_level < 1 || iterations_per_warp < 1) {
    throw ConfigError("tvl1 pyramid_levels, warps_per_level and iterations_per_warp must be >= 1");
  }
  if (!(stop_epsilon > 0)) throw ConfigError("tvl1 stop_epsilon must be positive");
}

FlowField estimate_flow(const Plane& frame_a, const Plane& frame_b, const TvL1Params& params,
                        FlowDiagnostics* diagnostics) {
  params.validate();
  check_frames(frame_a, frame_b);

  auto prepare = [](const Plane& f) {
    Plane s = f;
    for (auto& v : s.data) v = static_cast<float>(v * kIntensityScale);
    return gaussian_blur(s, kPresmoothSigma);
  };
  std::vector<Level> pyramid;
  pyramid.push_back({prepare(frame_a), prepare(frame_b)});
  while (static_cast<int>(pyramid.size()) < params.pyramid_levels) {
    const Level& fine = pyramid.back();
    const std::size_t w = scaled_extent(fine.a.width, params.scale_factor);
    const std::size_t h = scaled_extent(fine.a.height, params.scale_factor);
    if (std::min(w, h) < kMinPyramidSide) break;
    pyramid.push_back({zoom_out(fine.a, w, h, params.scale_factor),
                       zoom_out(fine.b, w, h, params.scale_factor)});
  }

  const Level& coarsest = pyramid.back();
  Plane u1(coarsest.a.width, coarsest.a.height), u2(coarsest.a.width, coarsest.a.height);
  for (std::size_t s = pyramid.size(); s-- > 0;) {
    const Level& level = pyramid[s];
    std::vector<double>* energies = (s == 0 && diagnostics) ? &diagnostics->finest_level_energies : nullptr;
    solve_level(level.a, level.b, u1, u2, params, energies);
    if (s == 0) break;
    const Level& finer = pyramid[s - 1];
    const float rx = static_cast<float>(finer.a.width) / static_cast<float>(level.a.width);
    const float ry = static_cast<float>(finer.a.height) / static_cast<float>(level.a.height);
    u1 = resize_bilinear(u1, finer.a.width, finer.a.height);
    u2 = resize_bilinear(u2, finer.a.width, finer.a.height);
    for (auto& x : u1.data) x *= rx;
    for (auto& x : u2.data) x *= ry;
  }
  if (diagnostics) diagnostics->levels_used = static_cast<int>(pyramid.size());

  FlowField flow(frame_a.width, frame_a.height);
  flow.u = std::move(u1);
  flow.v = std::move(u2);
  return flow;
}

double tvl1_energy(const Plane& frame_a, const Plane& frame_b, const FlowField& flow, double lambda) {
  check_frames(frame_a, frame_b);
  Plane a = frame_a, b = frame_b;
  for (auto& v : a.data) v = static_cast<float>(v * kIntensityScale);
  for (auto& v : b.data) v = static_cast<float>(v * kIntensityScale);
  return energy_scaled(a, b, flow, lambda);
}

float normalize_displacement(float value, float bound) {
  return std::clamp(value, -bound, bound) / bound;
}

Tensor flow_to_input(std::span<const FlowField> flows, float bound) {
  if (flows.empty()) throw InputError("flow_to_input: empty flow sequence");
  if (!(bound > 0)) throw ConfigError("flow_to_input: bound must be positive");
  const std::size_t w = flows.front().width, h = flows.front().height, n = flows.size();
  Tensor out(Shape{2, n, h, w});
  for (std::size_t t = 0; t < n; ++t) {
    const FlowField& f = flows[t];
    if (f.width != w || f.height != h) {
      throw InputError("flow_to_input: field " + std::to_string(t) + " is " + std::to_string(f.width) +
                       "x" + std::to_string(f.height) + ", expected " + std::to_string(w) + "x" +
                       std::to_string(h));
    }
    for (std::size_t i = 0; i < w * h; ++i) {
      out[(0 * n + t) * w * h + i] = normalize_displacement(f.u.data[i], bound);
      out[(1 * n + t) * w * h + i] = normalize_displacement(f.v.data[i], bound);
    }
  }
  return out;
}

// ---- .flo ---------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void write_flo(const std::filesystem::path& path, const FlowField& field, float magic) {
  std::string bytes;
  bytes.reserve(12 + 8 * field.width * field.height);
  put_u32(bytes, std::bit_cast<std::uint32_t>(magic));
  put_u32(bytes, static_cast<std::uint32_t>(static_cast<std::int32_t>(field.width)));
  put_u32(bytes, static_cast<std::uint32_t>(static_cast<std::int32_t>(field.height)));
  for (std::size_t i = 0; i < field.width * field.height; ++i) {
    put_u32(bytes, std::bit_cast<std::uint32_t>(field.u.data[i]));
    put_u32(bytes, std::bit_cast<std::uint32_t>(field.v.data[i]));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

FlowField read_flo(const std::filesystem::path& path, float expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError(path.string() + ": truncated .flo header");
  const float magic = std::bit_cast<float>(get_u32(bytes, 0));
  if (magic != expected_magic) {
    throw IoError(path.string() + ": unexpected magic " + std::to_string(magic));
  }
  const auto w = static_cast<std::int32_t>(get_u32(bytes, 4));
  const auto h = static_cast<std::int32_t>(get_u32(bytes, 8));
  if (w <= 0 || h <= 0) throw IoError(path.string() + ": invalid dimensions");
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() != 12 + 8 * n) throw IoError(path.string() + ": payload size mismatch");
  FlowField field(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < n; ++i) {
    field.u.data[i] = std::bit_cast<float>(get_u32(bytes, 12 + 8 * i));
    field.v.data[i] = std::bit_cast<float>(get_u32(bytes, 16 + 8 * i));
  }
  return field;
}

}  // namespace pdml
