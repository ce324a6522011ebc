#pragma once

// Run configuration: one JSON document with sections for every stage. Every
// field is optional and defaults to the published setting; unknown keys are
// rejected so typos surface early.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdml/flow.hpp"
#include "pdml/model.hpp"
#include "pdml/training.hpp"

namespace pdml {

// Per-severity-class motion parameters; each is a [min, max] range sampled per clip.
struct SynthClassSpec {
  std::array<double, 2> amplitude_px{0.0, 0.0};
  std::array<double, 2> frequency_hz{0.0, 0.0};
  std::array<double, 2> decay_per_s{0.0, 0.0};
};

struct SynthConfig {
  std::size_t n_subjects = 25;
  std::size_t clips_per_subject = 4;
  Task task = Task::hand_movement;
  std::size_t width = 340;
  std::size_t height = 256;
  std::size_t frame_count_min = 123;
  std::size_t frame_count_max = 160;
  double fps = 30.0;
  std::vector<SynthClassSpec> classes = default_classes();
  // Constant per-clip camera pan, px/frame, drawn uniformly per axis.
  std::array<double, 2> pan_x{-2.0, 2.0};
  std::array<double, 2> pan_y{-1.0, 1.0};
  std::uint64_t seed = 0;

  // Normal: wide fast movement without decrement. Severe: small, slow,
  // fading movement.
  static std::vector<SynthClassSpec> default_classes();
  void validate() const;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path work_dir = "pdml_work";
  std::filesystem::path cache_dir;  // empty: $PDML_CACHE, else <work_dir>/cache
  Task task = Task::hand_movement;

  std::size_t frame_width = 340;
  std::size_t frame_height = 256;

  TvL1Params flow;
  float flow_bound = 20.0f;

  SamplerConfig sampler;
  AugConfig augment;
  EncoderConfig encoder;
  bool attention = true;
  FocalConfig focal;
  AdamConfig adam;
  std::size_t batch_size = 2;
  std::size_t epochs = 120;
  std::size_t eval_every = 10;

  std::size_t folds = 5;
  std::vector<Modality> modalities{Modality::rgb, Modality::flow, Modality::motion_boundaries};
  std::vector<Modality> fuse{Modality::rgb, Modality::flow, Modality::motion_boundaries};
  std::size_t jobs = 1;

  SynthConfig synth;

  TrainHyper hyper() const;
  std::filesystem::path resolved_cache_dir() const;
  void validate() const;
};

// Relative paths inside the document resolve against base_dir.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
// Canonical JSON (sorted keys, every field present). Paths are written as given.
std::string config_to_json(const PipelineConfig& config);
std::string synth_config_to_json(const SynthConfig& config);

std::vector<Modality> parse_modality_list(const std::string& comma_separated);
std::string modality_list(const std::vector<Modality>& modalities, char sep = ',');

}  // namespace pdml
