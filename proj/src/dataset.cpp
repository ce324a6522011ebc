#include "pdml/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pdml/error.hpp"
#include "pdml/png_io.hpp"

namespace pdml {

using json = nlohmann::json;

namespace {

// Lexically normal, without a trailing separator.
std::filesystem::path clean(const std::filesystem::path& p) {
  auto n = p.lexically_normal();
  if (!n.has_filename() && n.has_parent_path() && n != n.root_path()) n = n.parent_path();
  return n;
}

std::string indexed(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.png", stem, i);
  return buf;
}

}  // namespace

std::string frame_filename(std::size_t index) { return indexed("frame", index); }
std::string mask_filename(std::size_t index) { return indexed("mask", index); }

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"clip_id", e.clip_id},
                       {"subject_id", e.subject_id},
                       {"task", task_name(e.task)},
                       {"updrs_raw", e.updrs_raw},
                       {"frame_dir", e.frame_dir.generic_string()},
                       {"frame_count", e.frame_count},
                       {"fps", e.fps}});
  }
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  const std::filesystem::path root =
      m.root.empty() ? std::filesystem::path(".") : std::filesystem::relative(m.root, base);
  const json doc = {{"schema", "pdml-manifest/1"}, {"root", root.generic_string()}, {"entries", entries}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("cannot write manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    const std::filesystem::path root = doc.value("root", std::string("."));
    m.root = clean(root.is_absolute() ? root : path.parent_path() / root);
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.clip_id = e.at("clip_id").get<std::string>();
      entry.subject_id = e.at("subject_id").get<std::string>();
      entry.task = parse_task(e.at("task").get<std::string>());
      entry.updrs_raw = e.at("updrs_raw").get<int>();
      entry.frame_dir = e.at("frame_dir").get<std::string>();
      entry.frame_count = e.at("frame_count").get<std::size_t>();
      entry.fps = e.value("fps", 30.0);
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw InputError("manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw InputError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<ValidationIssue> validate_manifest(const DatasetManifest& m) {
  std::vector<ValidationIssue> issues;
  std::map<std::string, int> seen;
  for (const auto& e : m.entries) {
    auto issue = [&](std::string msg) { issues.push_back({e.clip_id, std::move(msg)}); };
    if (e.clip_id.empty()) issue("empty clip_id");
    if (++seen[e.clip_id] == 2) issue("duplicate clip_id");
    if (e.subject_id.empty()) issue("empty subject_id");
    if (e.updrs_raw < 0 || e.updrs_raw > 4) issue("updrs_raw " + std::to_string(e.updrs_raw) + " outside 0..4");
    if (!(e.fps > 0)) issue("fps must be positive");
    const auto dir = m.root / e.frame_dir;
    if (!std::filesystem::is_directory(dir)) {
      issue("frame directory " + dir.string() + " does not exist");
      continue;
    }
    std::size_t on_disk = 0;
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
      const auto name = f.path().filename().string();
      if (name.rfind("frame_", 0) == 0 && f.path().extension() == ".png") ++on_disk;
    }
    if (on_disk != e.frame_count) {
      issue("frame_count " + std::to_string(e.frame_count) + " but " + std::to_string(on_disk) + " frames on disk");
    } else {
      for (std::size_t i = 0; i < e.frame_count; ++i) {
        if (!std::filesystem::exists(dir / frame_filename(i))) {
          issue("missing " + frame_filename(i));
          break;
        }
      }
    }
    if (e.frame_count < 2) issue("need at least 2 frames for optical flow");
  }
  return issues;
}

DatasetManifest ingest(const std::filesystem::path& root, const std::filesystem::path& manifest_file) {
  DatasetManifest m = read_manifest(manifest_file);
  if (!root.empty()) m.root = root;
  const auto issues = validate_manifest(m);
  if (!issues.empty()) {
    std::ostringstream os;
    os << "manifest validation failed (" << issues.size() << " issue" << (issues.size() == 1 ? "" : "s") << "):";
    for (const auto& i : issues) os << "\n  " << (i.clip_id.empty() ? "<no id>" : i.clip_id) << ": " << i.message;
    throw InputError(os.str());
  }
  return m;
}

LabeledClip label_of(const ManifestEntry& e) {
  LabeledClip c;
  c.clip_id = e.clip_id;
  c.subject_id = e.subject_id;
  c.task = e.task;
  c.updrs_raw = e.updrs_raw;
  c.class_label = group_scores(e.updrs_raw);
  return c;
}

std::vector<RgbImage> load_frames(const DatasetManifest& m, const ManifestEntry& e, std::size_t width,
                                  std::size_t height) {
  std::vector<RgbImage> frames;
  frames.reserve(e.frame_count);
  for (std::size_t i = 0; i < e.frame_count; ++i) {
    RgbImage img = read_png_rgb(m.root / e.frame_dir / frame_filename(i));
    if (img.width != width || img.height != height) img = resize_bilinear(img, width, height);
    frames.push_back(std::move(img));
  }
  return frames;
}

Tensor rgb_volume(const std::vector<RgbImage>& frames) {
  if (frames.empty()) throw InputError("clip has no frames");
  const std::size_t t = frames.size(), h = frames[0].height, w = frames[0].width;
  Tensor out(Shape{3, t, h, w});
  for (std::size_t z = 0; z < t; ++z) {
    if (frames[z].width != w || frames[z].height != h) throw InputError("frames of one clip differ in size");
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) out[((c * t + z) * h + y) * w + x] = frames[z].at(x, y, c);
  }
  return out;
}

}  // namespace pdml
