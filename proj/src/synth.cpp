#include "pdml/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "pdml/error.hpp"
#include "pdml/png_io.hpp"
#include "pdml/texture.hpp"

namespace pdml {

namespace {

double seconds(const SceneSpec& s, double t) { return t / s.fps; }

double movement_at(const SceneSpec& s, double t) {
  const double sec = seconds(s, t);
  return s.amplitude_px * std::exp(-s.decay_per_s * sec) *
         std::sin(2.0 * std::numbers::pi * s.frequency_hz * sec + s.phase);
}

// Figure centre (before wrapping) and shape at a possibly fractional time.
// The camera pan carries the figure along with the background.
struct Pose {
  double cx, cy, a, b;  // ellipse semi-axes
};

Pose pose_at(const SceneSpec& s, double t) {
  const double m = movement_at(s, t);
  const double px = s.center[0] + s.pan[0] * t, py = s.center[1] + s.pan[1] * t;
  if (s.task == Task::hand_movement) {
    const double r = std::max(1.0, s.size + m);
    return {px, py, r, r};
  }
  // Gait: an upright figure stepping back and forth with a small bob.
  const double bob = 0.25 * std::abs(m);
  return {px + m, py - bob, 0.45 * s.size, s.size};
}

// Offset from the figure centre on the wrapped (toroidal) frame, so a figure
// panned off one edge re-enters at the other.
std::array<double, 2> offset(const SceneSpec& s, const Pose& p, double x, double y) {
  return {std::remainder(x - p.cx, static_cast<double>(s.width)),
          std::remainder(y - p.cy, static_cast<double>(s.height))};
}

// Approximate signed distance to the ellipse boundary, negative inside.
double signed_distance(const Pose& p, const std::array<double, 2>& d) {
  const double dx = d[0] / p.a, dy = d[1] / p.b;
  return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(p.a, p.b);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[0]) << 32) | out[1];
}

double draw(std::mt19937_64& rng, const std::array<double, 2>& range) {
  if (range[0] == range[1]) return range[0];
  return std::uniform_real_distribution<double>(range[0], range[1])(rng);
}

int draw_updrs(std::size_t class_label, std::mt19937_64& rng) {
  switch (class_label) {
    case 0: return 0;
    case 1: return std::uniform_int_distribution<int>(1, 2)(rng);
    default: return std::uniform_int_distribution<int>(3, 4)(rng);
  }
}

}  // namespace

double movement(const SceneSpec& scene, std::size_t t) { return movement_at(scene, static_cast<double>(t)); }

double object_extent(const SceneSpec& scene, std::size_t t) {
  const double m = movement(scene, t);
  return scene.task == Task::hand_movement ? std::max(1.0, scene.size + m) : m;
}

RenderedFrame render_scene(const SceneSpec& s, std::size_t t) {
  const PeriodicTexture background(mix(s.texture_seed, 1), 64.0);
  const PeriodicTexture skin(mix(s.texture_seed, 2), 32.0, 10);
  const Pose p = pose_at(s, static_cast<double>(t));
  // The blob's texture rides on the camera pan only; the figure's also strides.
  const Pose anchor = s.task == Task::gait ? p : Pose{s.center[0] + s.pan[0] * static_cast<double>(t),
                                                      s.center[1] + s.pan[1] * static_cast<double>(t), 1, 1};
  const double bx = s.pan[0] * static_cast<double>(t), by = s.pan[1] * static_cast<double>(t);

  RenderedFrame f{RgbImage(s.width, s.height), Plane(s.width, s.height)};
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double g = background(fx - bx, fy - by);
      const auto d = offset(s, anchor, fx, fy);
      const double o = skin(d[0], d[1]);
      // Half-pixel antialiased edge.
      const double alpha = std::clamp(0.5 - signed_distance(p, offset(s, p, fx, fy)), 0.0, 1.0);
      const double bg[3] = {g, 0.9 * g + 0.05, 0.8 * g + 0.1};
      const double fg[3] = {0.55 + 0.45 * o, 0.35 + 0.4 * o, 0.25 + 0.3 * o};
      for (std::size_t c = 0; c < 3; ++c) {
        f.image.at(x, y, c) = static_cast<float>(alpha * fg[c] + (1.0 - alpha) * bg[c]);
      }
      f.mask.at(x, y) = alpha >= 0.5 ? 1.0f : 0.0f;
    }
  }
  return f;
}

FlowField true_flow(const SceneSpec& s, std::size_t t) {
  const RenderedFrame f = render_scene(s, t);
  const Pose a = pose_at(s, static_cast<double>(t)), b = pose_at(s, static_cast<double>(t + 1));
  // Blob texture follows the pan; the figure's texture follows the figure.
  const double ou = s.task == Task::gait ? b.cx - a.cx : s.pan[0];
  const double ov = s.task == Task::gait ? b.cy - a.cy : s.pan[1];
  FlowField flow(s.width, s.height);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      const bool inside = f.mask.at(x, y) > 0.5f;
      flow.u.at(x, y) = static_cast<float>(inside ? ou : s.pan[0]);
      flow.v.at(x, y) = static_cast<float>(inside ? ov : s.pan[1]);
    }
  }
  return flow;
}

std::vector<SynthClip> plan_synthetic(const SynthConfig& config) {
  config.validate();
  if (config.classes.size() > 3) throw ConfigError("synth: at most 3 severity classes map onto UPDRS groups");
  std::vector<SynthClip> clips;
  const double short_side = static_cast<double>(std::min(config.width, config.height));
  for (std::size_t s = 0; s < config.n_subjects; ++s) {
    char subject[16];
    std::snprintf(subject, sizeof subject, "S%02zu", s + 1);
    for (std::size_t c = 0; c < config.clips_per_subject; ++c) {
      SynthClip clip;
      clip.entry.subject_id = subject;
      clip.entry.clip_id = std::string(subject) + "_c" + std::to_string(c);
      clip.entry.task = config.task;
      clip.entry.frame_dir = clip.entry.clip_id;
      clip.entry.fps = config.fps;
      clip.class_label = (s + c) % config.classes.size();

      auto rng = clip_rng(config.seed, clip.entry.clip_id, 0);
      const SynthClassSpec& spec = config.classes[clip.class_label];
      clip.entry.updrs_raw = draw_updrs(clip.class_label, rng);
      clip.entry.frame_count = std::uniform_int_distribution<std::size_t>(config.frame_count_min,
                                                                          config.frame_count_max)(rng);
      SceneSpec& sc = clip.scene;
      sc.task = config.task;
      sc.width = config.width;
      sc.height = config.height;
      sc.fps = config.fps;
      sc.amplitude_px = draw(rng, spec.amplitude_px);
      sc.frequency_hz = draw(rng, spec.frequency_hz);
      sc.decay_per_s = draw(rng, spec.decay_per_s);
      sc.phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
      sc.pan = {draw(rng, config.pan_x), draw(rng, config.pan_y)};
      const double jitter = 0.08 * short_side;
      sc.center = {0.5 * static_cast<double>(config.width) + draw(rng, {-jitter, jitter}),
                   0.5 * static_cast<double>(config.height) + draw(rng, {-jitter, jitter})};
      sc.size = (config.task == Task::hand_movement ? 0.2 : 0.3) * short_side;
      sc.texture_seed = rng();
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  const auto clips = plan_synthetic(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir.lexically_normal();
  if (!manifest.root.has_filename()) manifest.root = manifest.root.parent_path();
  for (const auto& clip : clips) {
    const auto dir = out_dir / clip.entry.frame_dir;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    // Stale frames from an earlier, longer clip would break the frame count.
    for (const auto& f : std::filesystem::directory_iterator(dir)) std::filesystem::remove(f.path());
    for (std::size_t t = 0; t < clip.entry.frame_count; ++t) {
      const RenderedFrame f = render_scene(clip.scene, t);
      write_png(dir / frame_filename(t), f.image);
      write_png(dir / mask_filename(t), f.mask);
    }
    const SceneSpec& s = clip.scene;
    const nlohmann::json truth = {{"clip_id", clip.entry.clip_id},
                                  {"subject_id", clip.entry.subject_id},
                                  {"task", task_name(s.task)},
                                  {"class", clip.class_label},
                                  {"updrs_raw", clip.entry.updrs_raw},
                                  {"amplitude_px", s.amplitude_px},
                                  {"frequency_hz", s.frequency_hz},
                                  {"decay_per_s", s.decay_per_s},
                                  {"phase", s.phase},
                                  {"camera_pan", s.pan},
                                  {"center", s.center},
                                  {"size", s.size},
                                  {"frame_count", clip.entry.frame_count},
                                  {"fps", s.fps}};
    std::ofstream out(dir / "truth.json");
    out << truth.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "truth.json").string());
    manifest.entries.push_back(clip.entry);
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace pdml
