#include <cmath>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "pdml/config.hpp"
#include "pdml/dataset.hpp"
#include "pdml/error.hpp"
#include "pdml/hash.hpp"
#include "pdml/motion_boundary.hpp"
#include "pdml/png_io.hpp"
#include "pdml/synth.hpp"
#include "temp_dir.hpp"

using namespace pdml;

namespace {

SynthConfig tiny_synth() {
  SynthConfig c;
  c.n_subjects = 3;
  c.clips_per_subject = 2;
  c.width = 32;
  c.height = 24;
  c.frame_count_min = 5;
  c.frame_count_max = 7;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("png round trip is lossless on 8-bit values") {
  TempDir dir;
  RgbImage img(7, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256) / 255.0f;
  write_png(dir / "a.png", img);
  CHECK(read_png_rgb(dir / "a.png") == img);

  Plane g(6, 4);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<float>(i * 10) / 255.0f;
  write_png(dir / "g.png", g);
  CHECK(read_png_gray(dir / "g.png") == g);
  CHECK_THROWS_AS(read_png_rgb(dir / "missing.png"), IoError);
}

TEST_CASE("sha256 matches published vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Sha256 h;
  h.update("a").update("bc");
  CHECK(h.digest() == sha256_hex("abc"));
  // Length prefixes keep field boundaries apart.
  Sha256 x, y;
  x.field("ab").field("c");
  y.field("a").field("bc");
  CHECK(x.digest() != y.digest());
}

TEST_CASE("config defaults carry the published hyperparameters") {
  const PipelineConfig c = parse_config("{}", "");
  CHECK(c.sampler.k_segments == 4);
  CHECK(c.sampler.train_len == 32);
  CHECK(c.sampler.test_snippets == 64);
  CHECK(c.sampler.test_len == 16);
  CHECK(c.adam.learning_rate == doctest::Approx(1e-5));
  CHECK(c.batch_size == 2);
  CHECK(c.epochs == 120);
  CHECK(c.encoder.dropout == doctest::Approx(0.7));
  CHECK(c.folds == 5);
  CHECK(c.frame_width == 340);
  CHECK(c.frame_height == 256);
  CHECK(c.focal.alpha == 0.5);
  CHECK(c.focal.gamma == 2.0);
}

TEST_CASE("config parses sections and round-trips") {
  const std::string text = R"({
    "seed": 9, "task": "gait",
    "paths": {"manifest": "data/manifest.json", "work_dir": "w"},
    "sampler": {"train_len": 8, "test_len": 4, "test_snippets": 6},
    "model": {"stages": [{"channels": 4, "stride": [1, 2, 2]}], "dropout": 0.2, "attention": false},
    "optimizer": {"learning_rate": 0.001, "epochs": 3},
    "run": {"modalities": ["mb", "rgb"], "fuse": ["mb"], "jobs": 2},
    "synth": {"n_subjects": 5, "width": 32, "height": 32}
  })";
  const PipelineConfig c = parse_config(text, "/base");
  CHECK(c.seed == 9);
  CHECK(c.sampler.rng_seed == 9);
  CHECK(c.task == Task::gait);
  CHECK(c.manifest == std::filesystem::path("/base/data/manifest.json"));
  CHECK(c.encoder.stages.size() == 1);
  CHECK(c.encoder.stages[0].stride == std::array<std::size_t, 3>{1, 2, 2});
  CHECK_FALSE(c.attention);
  CHECK(c.modalities == std::vector<Modality>{Modality::motion_boundaries, Modality::rgb});
  CHECK(c.jobs == 2);
  CHECK(c.synth.n_subjects == 5);

  const PipelineConfig again = parse_config(config_to_json(c), "");
  CHECK(config_to_json(again) == config_to_json(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config(R"({"sede": 1})", ""), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"optimizer": {"lr": 1}})", ""), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"optimizer": {"batch_size": 0}})", ""), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"run": {"modalities": ["rgb"], "fuse": ["flow"]}})", ""), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"run": {"modalities": ["depth"]}})", ""), ConfigError);
  CHECK_THROWS_AS(parse_config("{", ""), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"augment": {"scales": [1.2]}})", ""), ConfigError);
}

TEST_CASE("synth config requires separable classes") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.classes[1].amplitude_px = {4.0, 5.0};  // overlaps class 0 in amplitude
  c.classes[1].decay_per_s = {0.0, 0.2};   // and in decay
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("modality lists") {
  CHECK(parse_modality_list("rgb,mb") == std::vector<Modality>{Modality::rgb, Modality::motion_boundaries});
  CHECK(modality_list({Modality::flow, Modality::rgb}, ',') == "flow,rgb");
  CHECK_THROWS_AS(parse_modality_list(""), ConfigError);
}

TEST_CASE("synthetic output round-trips through the manifest") {
  TempDir dir;
  const DatasetManifest m = generate_synthetic(tiny_synth(), dir.path());
  CHECK(m.entries.size() == 6);
  const DatasetManifest read = ingest("", dir / "manifest.json");
  CHECK(read == m);
  for (const auto& e : read.entries) {
    CHECK(std::filesystem::exists(dir / e.frame_dir.string() / "truth.json"));
    CHECK(std::filesystem::exists(dir / e.frame_dir.string() / mask_filename(0)));
  }
}

TEST_CASE("labels follow the UPDRS grouping and stay balanced") {
  SynthConfig c;
  c.width = c.height = 32;
  const auto clips = plan_synthetic(c);
  REQUIRE(clips.size() == 100);
  std::array<int, 3> counts{};
  for (const auto& clip : clips) {
    CHECK(group_scores(clip.entry.updrs_raw) == clip.class_label);
    CHECK(label_of(clip.entry).class_label == clip.class_label);
    ++counts[clip.class_label];
  }
  for (int n : counts) CHECK(n >= 33);
}

TEST_CASE("ingest itemizes every problem") {
  TempDir dir;
  DatasetManifest m = generate_synthetic(tiny_synth(), dir.path());
  m.entries[0].updrs_raw = 5;
  m.entries[1].frame_count += 1;
  m.entries[2].clip_id = m.entries[3].clip_id;
  write_manifest(m, dir / "bad.json");
  try {
    ingest("", dir / "bad.json");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(m.entries[0].clip_id + ": updrs_raw 5") != std::string::npos);
    CHECK(msg.find(m.entries[1].clip_id + ": frame_count") != std::string::npos);
    CHECK(msg.find("duplicate clip_id") != std::string::npos);
    CHECK(msg.find("3 issues") != std::string::npos);
  }

  std::filesystem::remove(dir / m.entries[4].frame_dir.string() / frame_filename(1));
  const auto issues = validate_manifest(m);
  CHECK(std::any_of(issues.begin(), issues.end(), [&](const ValidationIssue& i) {
    return i.clip_id == m.entries[4].clip_id;
  }));
  CHECK_THROWS_AS(read_manifest(dir / "nope.json"), IoError);
}

TEST_CASE("frames load and resize") {
  TempDir dir;
  const DatasetManifest m = generate_synthetic(tiny_synth(), dir.path());
  const auto& e = m.entries[0];
  const auto native = load_frames(m, e, 32, 24);
  CHECK(native.size() == e.frame_count);
  CHECK(native[0].width == 32);
  const auto small = load_frames(m, e, 16, 12);
  CHECK(small[0].width == 16);
  CHECK(small[0].height == 12);
  const Tensor vol = rgb_volume(native);
  CHECK(vol.shape() == Shape{3, e.frame_count, 24, 32});
  CHECK(vol[((1 * e.frame_count + 2) * 24 + 3) * 32 + 4] == native[2].at(4, 3, 1));
}

TEST_CASE("generation is deterministic") {
  TempDir a, b;
  generate_synthetic(tiny_synth(), a.path());
  generate_synthetic(tiny_synth(), b.path());
  for (const auto& f : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!f.is_regular_file() || f.path().filename() == "manifest.json") continue;
    const auto rel = std::filesystem::relative(f.path(), a.path());
    std::ifstream x(f.path(), std::ios::binary), y(b.path() / rel, std::ios::binary);
    const std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    CHECK_MESSAGE(sx == sy, rel.string());
  }
  SynthConfig other = tiny_synth();
  other.seed = 12;
  CHECK(plan_synthetic(other)[0].scene.phase != plan_synthetic(tiny_synth())[0].scene.phase);
}

TEST_CASE("unwritable output path is an I/O error") {
  TempDir dir;
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS_AS(generate_synthetic(tiny_synth(), dir / "file/sub"), IoError);
}

namespace {

// Peak equivalent radius of the mask in each full oscillation cycle.
std::vector<double> cycle_peaks(const SceneSpec& s, std::size_t frames) {
  const std::size_t period = static_cast<std::size_t>(std::lround(s.fps / s.frequency_hz));
  std::vector<double> peaks;
  for (std::size_t start = 0; start + period <= frames; start += period) {
    double best = 0;
    for (std::size_t t = start; t < start + period; ++t) {
      const Plane mask = render_scene(s, t).mask;
      double area = 0;
      for (float v : mask.data) area += v;
      best = std::max(best, std::sqrt(area / std::numbers::pi));
    }
    peaks.push_back(best);
  }
  return peaks;
}

SceneSpec blob_scene(double decay) {
  SceneSpec s;
  s.width = s.height = 64;
  s.center = {32, 32};
  s.size = 14;
  s.amplitude_px = 5;
  s.frequency_hz = 3;
  s.decay_per_s = decay;
  s.pan = {1.0, -0.5};
  s.texture_seed = 3;
  return s;
}

}  // namespace

TEST_CASE("a class without decay keeps a flat blob envelope") {
  const auto flat = cycle_peaks(blob_scene(0.0), 120);
  REQUIRE(flat.size() == 12);
  const auto [lo, hi] = std::minmax_element(flat.begin(), flat.end());
  CHECK((*hi - *lo) / *hi <= 0.05);

  const auto fading = cycle_peaks(blob_scene(1.2), 120);
  CHECK(fading.back() < 0.8 * fading.front());
}

TEST_CASE("ground-truth background flow equals the configured pan") {
  for (Task task : {Task::hand_movement, Task::gait}) {
    SceneSpec s = blob_scene(0.0);
    s.task = task;
    s.pan = {2.0, 0.0};
    for (std::size_t t : {0u, 7u}) {
      const FlowField f = true_flow(s, t);
      const Plane mask = render_scene(s, t).mask;
      double su = 0, sv = 0, n = 0;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.data[i] > 0.5f) continue;
        su += f.u.data[i];
        sv += f.v.data[i];
        ++n;
      }
      CHECK(su / n == 2.0);
      CHECK(sv / n == 0.0);
    }
  }
}

TEST_CASE("rendered background really moves by the pan") {
  // Away from the object, frame t+1 equals frame t shifted by an integer pan.
  SceneSpec s = blob_scene(0.0);
  s.pan = {2.0, 1.0};
  const RgbImage a = render_scene(s, 4).image, b = render_scene(s, 5).image;
  CHECK(b.at(10, 10, 0) == doctest::Approx(a.at(8, 9, 0)).epsilon(1e-6));
  CHECK(b.at(60, 50, 2) == doctest::Approx(a.at(58, 49, 2)).epsilon(1e-6));
}

TEST_CASE("estimated background flow matches the generator's pan") {
  for (Task task : {Task::hand_movement, Task::gait}) {
    SceneSpec s = blob_scene(0.0);
    s.task = task;
    s.pan = {1.5, -0.7};
    const RenderedFrame f0 = render_scene(s, 3), f1 = render_scene(s, 4);
    const FlowField est = estimate_flow(to_gray(f0.image), to_gray(f1.image), TvL1Params{});
    double su = 0, sv = 0, n = 0;
    for (std::size_t y = 6; y < 58; ++y)
      for (std::size_t x = 6; x < 58; ++x) {
        if (f0.mask.at(x, y) > 0.5f || f1.mask.at(x, y) > 0.5f) continue;
        su += est.u.at(x, y);
        sv += est.v.at(x, y);
        ++n;
      }
    CAPTURE(task_name(task));
    CHECK(std::hypot(su / n - 1.5, sv / n + 0.7) <= 0.5);
  }
}
