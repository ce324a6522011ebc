#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pdml/image.hpp"
#include "pdml/sampling.hpp"
#include "pdml/training.hpp"

namespace pdml {

struct ManifestEntry {
  std::string clip_id;
  std::string subject_id;
  Task task = Task::hand_movement;
  int updrs_raw = 0;
  std::filesystem::path frame_dir;  // relative to the manifest root
  std::size_t frame_count = 0;
  double fps = 30.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// frame_00000.png, mask_00000.png, ...
std::string frame_filename(std::size_t index);
std::string mask_filename(std::size_t index);

// JSON manifest. The root is stored relative to the manifest file's
// directory and resolved against it on read.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct ValidationIssue {
  std::string clip_id;
  std::string message;
};

// Every problem found, in manifest order: label range, empty subject,
// duplicate clip ids, missing directories, frame count vs disk.
std::vector<ValidationIssue> validate_manifest(const DatasetManifest& manifest);

// Reads and validates; throws InputError listing every issue. An empty root
// argument keeps the root recorded in the manifest.
DatasetManifest ingest(const std::filesystem::path& root, const std::filesystem::path& manifest_file);

LabeledClip label_of(const ManifestEntry& entry);

// All frames of a clip, resized to width x height when they differ.
std::vector<RgbImage> load_frames(const DatasetManifest& manifest, const ManifestEntry& entry, std::size_t width,
                                  std::size_t height);

// [3, T, H, W]
Tensor rgb_volume(const std::vector<RgbImage>& frames);

}  // namespace pdml
