#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "pdml/error.hpp"
#include "pdml/sampling.hpp"

using namespace pdml;

namespace {

// Frame t of every channel is filled with the value t, so snippets reveal
// which clip frames they were cut from.
ClipVolume indexed_clip(std::size_t frames, Modality m = Modality::rgb, std::size_t h = 4, std::size_t w = 5) {
  const std::size_t c = modality_channels(m);
  Tensor t(Shape{c, frames, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t i = 0; i < h * w; ++i) t[(ch * frames + f) * h * w + i] = static_cast<float>(f);
  return ClipVolume{m, t, "clip", "subj"};
}

std::vector<std::size_t> frame_ids(const Snippet& s) {
  std::vector<std::size_t> ids;
  const std::size_t plane = s.frames.dim(2) * s.frames.dim(3);
  for (std::size_t j = 0; j < s.frames.dim(1); ++j) ids.push_back(static_cast<std::size_t>(s.frames[j * plane]));
  return ids;
}

Snippet random_snippet(Modality m, std::mt19937_64& rng, std::size_t len = 3, std::size_t h = 8, std::size_t w = 8) {
  std::normal_distribution<float> d;
  Snippet s;
  s.modality = m;
  s.frames = Tensor(Shape{modality_channels(m), len, h, w});
  for (auto& v : s.frames.data()) v = d(rng);
  return s;
}

}  // namespace

TEST_CASE("128 frames, K=4, length 32: each snippet is exactly its segment") {
  std::mt19937_64 rng(1);
  const auto snippets = segment_sample(indexed_clip(128), SamplerConfig{}, rng);
  REQUIRE(snippets.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(snippets[i].start == 32 * i);
    CHECK(snippets[i].source_segment == i);
    const auto ids = frame_ids(snippets[i]);
    for (std::size_t j = 0; j < 32; ++j) CHECK(ids[j] == 32 * i + j);
  }
}

TEST_CASE("short clips follow the short-segment rule") {
  const SamplerConfig cfg;
  for (std::size_t n : {4u, 7u, 31u, 100u, 123u, 127u, 129u, 300u}) {
    CAPTURE(n);
    const ClipVolume clip = indexed_clip(n, Modality::flow, 2, 3);
    std::mt19937_64 rng(n);
    for (int trial = 0; trial < 50; ++trial) {
      const auto snippets = segment_sample(clip, cfg, rng);
      REQUIRE(snippets.size() == 4);
      const std::size_t seg = n / 4;
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& s = snippets[i];
        CHECK(s.frames.shape() == Shape{2, 32, 2, 3});
        const std::size_t begin = i * seg, end = i == 3 ? n : begin + seg;
        CHECK(s.start >= begin);
        CHECK(s.start < end);
        if (i > 0) CHECK(s.start >= snippets[i - 1].start);
        // consecutive frames, wrapping to 0 only at the clip end
        const auto ids = frame_ids(s);
        for (std::size_t j = 0; j < 32; ++j) CHECK(ids[j] == (s.start + j) % n);
        // a window that fits inside its segment never leaves it
        if (end - begin >= 32) CHECK(s.start + 32 <= end);
      }
    }
  }
}

TEST_CASE("segment_sample is deterministic under a fixed seed") {
  const ClipVolume clip = indexed_clip(300);
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 5; ++i) {
    const auto sa = segment_sample(clip, SamplerConfig{}, a), sb = segment_sample(clip, SamplerConfig{}, b);
    for (std::size_t k = 0; k < 4; ++k) CHECK(sa[k].start == sb[k].start);
  }
}

TEST_CASE("segment_sample errors") {
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(segment_sample(ClipVolume{}, SamplerConfig{}, rng), InputError);
  CHECK_THROWS_AS(segment_sample(indexed_clip(3), SamplerConfig{}, rng), InputError);
  SamplerConfig bad;
  bad.k_segments = 0;
  CHECK_THROWS_AS(segment_sample(indexed_clip(10), bad, rng), ConfigError);
  ClipVolume wrong = indexed_clip(10, Modality::flow);
  wrong.modality = Modality::rgb;
  CHECK_THROWS_AS(segment_sample(wrong, SamplerConfig{}, rng), InputError);
}

TEST_CASE("dense snippets: 1024 frames tile the clip every 16 frames") {
  const auto snippets = dense_snippets(indexed_clip(1024, Modality::rgb, 2, 2), SamplerConfig{});
  REQUIRE(snippets.size() == 64);
  for (std::size_t j = 0; j < 64; ++j) {
    CHECK(snippets[j].start == 16 * j);
    CHECK(snippets[j].frames.dim(1) == 16);
  }
}

TEST_CASE("dense snippets: 16 frames give 64 copies of the clip") {
  const auto snippets = dense_snippets(indexed_clip(16), SamplerConfig{});
  REQUIRE(snippets.size() == 64);
  for (const auto& s : snippets) {
    CHECK(s.start == 0);
    CHECK(s.frames == snippets[0].frames);
  }
}

TEST_CASE("dense snippets: exhaustive bounds for 16..400 frames") {
  for (std::size_t n = 16; n <= 400; ++n) {
    CAPTURE(n);
    const auto starts = dense_starts(n, SamplerConfig{});
    REQUIRE(starts.size() == 64);
    CHECK(starts.front() == 0);
    CHECK(starts.back() == n - 16);
    for (std::size_t j = 0; j < 64; ++j) {
      CHECK(starts[j] + 16 <= n);
      if (j > 0) CHECK(starts[j] >= starts[j - 1]);
      // uniform spacing: within half a frame of the ideal position
      const double ideal = static_cast<double>(j) * static_cast<double>(n - 16) / 63.0;
      CHECK(std::abs(static_cast<double>(starts[j]) - ideal) <= 0.5);
    }
  }
  // N = 79 gives the 64 distinct starts 0..63
  const auto s79 = dense_starts(79, SamplerConfig{});
  for (std::size_t j = 0; j < 64; ++j) CHECK(s79[j] == j);
}

TEST_CASE("augmentation disabled is the identity") {
  std::mt19937_64 rng(3);
  const Snippet s = random_snippet(Modality::rgb, rng);
  AugConfig cfg;
  cfg.enabled = false;
  const Snippet out = augment(s, rng, cfg);
  CHECK(out.frames == s.frames);
  CHECK(out.transform == "none");
}

TEST_CASE("double flip restores the snippet, including the u sign") {
  std::mt19937_64 rng(5);
  for (Modality m : {Modality::rgb, Modality::flow, Modality::motion_boundaries}) {
    const Snippet s = random_snippet(m, rng, 2, 5, 7);
    const Snippet once = flip_horizontal(s);
    CHECK(flip_horizontal(once).frames == s.frames);
    // u channel is mirrored and negated, v channel only mirrored
    const std::size_t w = 7, plane = 35;
    const float sign = m == Modality::rgb ? 1.0f : -1.0f;
    CHECK(once.frames[0] == sign * s.frames[w - 1]);
    CHECK(once.frames[2 * plane] == s.frames[2 * plane + w - 1]);
  }
}

TEST_CASE("flip alone, without negation, would not be an involution for flow") {
  // Mirror a pure horizontal motion: its direction must reverse.
  Snippet s;
  s.modality = Modality::flow;
  s.frames = Tensor(Shape{2, 1, 3, 3}, 1.0f);
  for (std::size_t i = 9; i < 18; ++i) s.frames[i] = 0.0f;
  const Snippet f = flip_horizontal(s);
  for (std::size_t i = 0; i < 9; ++i) CHECK(f.frames[i] == -1.0f);
}

TEST_CASE("same transform applies to every frame") {
  std::mt19937_64 rng(11);
  Snippet s = random_snippet(Modality::rgb, rng, 1, 16, 16);
  // replicate frame 0 into a 4-frame snippet
  Snippet multi;
  multi.modality = Modality::rgb;
  multi.frames = Tensor(Shape{3, 4, 16, 16});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < 256; ++i) multi.frames[(c * 4 + t) * 256 + i] = s.frames[c * 256 + i];
  AugConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Snippet out = augment(multi, rng, cfg);
    CHECK(out.frames.shape() == multi.frames.shape());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t i = 0; i < 256; ++i) CHECK(out.frames[(c * 4 + t) * 256 + i] == out.frames[c * 4 * 256 + i]);
  }
}

TEST_CASE("corner crop at scale 0.5 picks the right quadrant") {
  Snippet s;
  s.modality = Modality::rgb;
  s.frames = Tensor(Shape{3, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) s.frames[y * 4 + x] = static_cast<float>((y >= 2) * 2 + (x >= 2));
  const std::pair<CropPosition, float> cases[] = {{CropPosition::top_left, 0.0f},
                                                  {CropPosition::top_right, 1.0f},
                                                  {CropPosition::bottom_left, 2.0f},
                                                  {CropPosition::bottom_right, 3.0f}};
  for (const auto& [pos, value] : cases) {
    const Snippet out = apply_transform(s, AugTransform{0.5, 0.5, pos, false});
    for (std::size_t i = 0; i < 16; ++i) CHECK(out.frames[i] == value);
  }
}

TEST_CASE("augmentation is deterministic and covers the transform set") {
  std::mt19937_64 r0(21);
  const Snippet s = random_snippet(Modality::motion_boundaries, r0, 2, 12, 12);
  std::mt19937_64 a(8), b(8);
  for (int i = 0; i < 10; ++i) CHECK(augment(s, a, AugConfig{}).frames == augment(s, b, AugConfig{}).frames);

  std::mt19937_64 rng(2);
  std::set<double> scales;
  std::set<int> crops;
  int flips = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const AugTransform t = draw_transform(AugConfig{}, rng);
    scales.insert(t.scale_x);
    scales.insert(t.scale_y);
    crops.insert(static_cast<int>(t.crop));
    flips += t.flip;
  }
  CHECK(scales == std::set<double>{1.0, 0.875, 0.75, 0.66});
  CHECK(crops.size() == 5);
  CHECK(std::abs(flips / static_cast<double>(n) - 0.5) < 0.03);
}

TEST_CASE("crops larger than the frame are rejected") {
  std::mt19937_64 rng(0);
  const Snippet s = random_snippet(Modality::rgb, rng);
  AugConfig cfg;
  cfg.scales = {1.25};
  CHECK_THROWS_AS(augment(s, rng, cfg), ConfigError);
  CHECK_THROWS_AS(apply_transform(s, AugTransform{1.1, 1.0, CropPosition::center, false}), ConfigError);
}

TEST_CASE("per-clip rng streams are reproducible and distinct") {
  auto a = clip_rng(7, "clip_a"), a2 = clip_rng(7, "clip_a"), b = clip_rng(7, "clip_b"), c = clip_rng(8, "clip_a");
  const auto va = a();
  CHECK(va == a2());
  CHECK(va != b());
  CHECK(va != c());
}

TEST_CASE("modality names round-trip") {
  for (Modality m : {Modality::rgb, Modality::flow, Modality::motion_boundaries}) CHECK(parse_modality(modality_name(m)) == m);
  CHECK_THROWS_AS(parse_modality("depth"), ConfigError);
}
