#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pdml/tensor.hpp"

namespace pdml {

enum class Modality { rgb, flow, motion_boundaries };

// "rgb", "flow", "mb"
std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);
std::size_t modality_channels(Modality m);

// A whole clip in one modality, laid out [C, T, H, W].
struct ClipVolume {
  Modality modality = Modality::rgb;
  Tensor frames;
  std::string clip_id;
  std::string subject_id;

  std::size_t length() const { return frames.dim(1); }
};

struct SamplerConfig {
  std::size_t k_segments = 4;
  std::size_t train_len = 32;
  std::size_t test_snippets = 64;
  std::size_t test_len = 16;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct Snippet {
  Modality modality = Modality::rgb;
  Tensor frames;  // [C, L, H, W]
  std::size_t source_segment = 0;
  std::size_t start = 0;
  std::string clip_id;
  std::string subject_id;
  std::string transform = "none";
};

// Independent RNG stream for one clip, derived from (seed, clip_id).
std::mt19937_64 clip_rng(std::uint64_t seed, std::string_view clip_id, std::uint64_t stream = 0);

// Start index per segment. The clip is cut into K contiguous segments, the
// last one taking the remainder. A window of train_len frames starts inside
// each segment; segments shorter than the window let it run into later
// frames, wrapping to the clip start only at the clip end.
std::vector<std::size_t> segment_starts(std::size_t clip_length, const SamplerConfig& config,
                                        std::mt19937_64& rng);

// test_snippets starts spread uniformly (rounded) over [0, N - test_len].
std::vector<std::size_t> dense_starts(std::size_t clip_length, const SamplerConfig& config);

// Frames start..start+len-1 along axis 1, indices taken modulo the clip length.
Tensor slice_window(const Tensor& frames, std::size_t start, std::size_t length);

std::vector<Snippet> segment_sample(const ClipVolume& clip, const SamplerConfig& config, std::mt19937_64& rng);
std::vector<Snippet> dense_snippets(const ClipVolume& clip, const SamplerConfig& config);

// ---- augmentation ----------------------------------------------------------

enum class CropPosition { top_left, top_right, bottom_left, bottom_right, center };

struct AugConfig {
  bool enabled = true;
  std::vector<double> scales{1.0, 0.875, 0.75, 0.66};
  double flip_probability = 0.5;

  void validate() const;
};

struct AugTransform {
  double scale_x = 1.0;
  double scale_y = 1.0;
  CropPosition crop = CropPosition::center;
  bool flip = false;

  std::string describe() const;
};

AugTransform draw_transform(const AugConfig& config, std::mt19937_64& rng);

// Same crop/resize/flip for every frame. Horizontal flips negate the
// horizontal displacement channel of Flow and MotionBoundaries snippets.
Snippet apply_transform(const Snippet& snippet, const AugTransform& transform);

Snippet flip_horizontal(const Snippet& snippet);

// Identity when disabled; otherwise draws one transform and applies it.
Snippet augment(const Snippet& snippet, std::mt19937_64& rng, const AugConfig& config);

}  // namespace pdml
