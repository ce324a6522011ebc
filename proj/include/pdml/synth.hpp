#pragma once

// Synthetic stand-in for clinical videos: a textured object performing a
// periodic movement over a textured background seen by a panning camera.
// The pan shifts the whole scene by a constant per-clip offset every frame;
// the object lives on a wrapped frame so it never leaves the view.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pdml/config.hpp"
#include "pdml/dataset.hpp"
#include "pdml/flow.hpp"
#include "pdml/image.hpp"

namespace pdml {

struct SceneSpec {
  Task task = Task::hand_movement;
  std::size_t width = 64;
  std::size_t height = 64;
  double fps = 30.0;
  double amplitude_px = 0.0;
  double frequency_hz = 0.0;
  double decay_per_s = 0.0;
  double phase = 0.0;
  std::array<double, 2> pan{0.0, 0.0};  // background displacement, px/frame
  std::array<double, 2> center{32.0, 32.0};  // object position at frame 0
  double size = 14.0;  // blob radius, or figure half-height
  std::uint64_t texture_seed = 0;
};

// Signed movement at frame t: amplitude * exp(-decay * s) * sin(2 pi f s + phase).
double movement(const SceneSpec& scene, std::size_t t);

// Radius of the hand blob, or horizontal stride offset of the gait figure.
double object_extent(const SceneSpec& scene, std::size_t t);

struct RenderedFrame {
  RgbImage image;
  Plane mask;  // 1 inside the object, 0 elsewhere
};

RenderedFrame render_scene(const SceneSpec& scene, std::size_t t);

// Exact displacement from frame t to t+1: the pan on background pixels; on
// object pixels the pan plus, for the gait figure, its own stride velocity.
FlowField true_flow(const SceneSpec& scene, std::size_t t);

struct SynthClip {
  ManifestEntry entry;
  SceneSpec scene;
  std::size_t class_label = 0;
};

// Deterministic clip plan (labels, scene parameters, frame counts) without
// touching the disk. Clip c of subject s gets class (s + c) mod n_classes.
std::vector<SynthClip> plan_synthetic(const SynthConfig& config);

// Renders every clip to <out_dir>/<clip_id>/ (frames, masks, truth.json) and
// writes <out_dir>/manifest.json. Throws IoError when out_dir is unwritable.
DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace pdml
