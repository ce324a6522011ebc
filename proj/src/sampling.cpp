#include "pdml/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pdml/error.hpp"
#include "pdml/image.hpp"

namespace pdml {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::flow: return "flow";
    case Modality::motion_boundaries: return "mb";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  if (name == "rgb") return Modality::rgb;
  if (name == "flow") return Modality::flow;
  if (name == "mb") return Modality::motion_boundaries;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected rgb, flow or mb)");
}

std::size_t modality_channels(Modality m) { return m == Modality::rgb ? 3 : 2; }

void SamplerConfig::validate() const {
  if (k_segments < 1 || train_len < 1 || test_snippets < 1 || test_len < 1) {
    throw ConfigError("sampler counts must all be >= 1");
  }
}

std::mt19937_64 clip_rng(std::uint64_t seed, std::string_view clip_id, std::uint64_t stream) {
  std::vector<std::uint32_t> material{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  for (unsigned char c : clip_id) material.push_back(c);
  std::seed_seq seq(material.begin(), material.end());
  return std::mt19937_64(seq);
}

std::vector<std::size_t> segment_starts(std::size_t n, const SamplerConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (n == 0) throw InputError("segment_sample: empty clip");
  const std::size_t k = config.k_segments;
  if (n < k) {
    throw InputError("segment_sample: clip has " + std::to_string(n) + " frames, fewer than " +
                     std::to_string(k) + " segments");
  }
  const std::size_t seg = n / k;
  std::vector<std::size_t> starts(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t begin = i * seg;
    const std::size_t end = i + 1 == k ? n : begin + seg;
    const std::size_t last_start = end - begin >= config.train_len ? end - config.train_len : end - 1;
    starts[i] = std::uniform_int_distribution<std::size_t>(begin, last_start)(rng);
  }
  return starts;
}

std::vector<std::size_t> dense_starts(std::size_t n, const SamplerConfig& config) {
  config.validate();
  if (n == 0) throw InputError("dense_snippets: empty clip");
  const std::size_t count = config.test_snippets;
  const std::size_t span = n > config.test_len ? n - config.test_len : 0;
  std::vector<std::size_t> starts(count, 0);
  if (count == 1) return starts;
  for (std::size_t j = 0; j < count; ++j) {
    starts[j] = static_cast<std::size_t>(
        std::llround(static_cast<double>(j) * static_cast<double>(span) / static_cast<double>(count - 1)));
  }
  return starts;
}

Tensor slice_window(const Tensor& frames, std::size_t start, std::size_t length) {
  if (frames.rank() != 4) throw DimensionError("slice_window: expected [C, T, H, W], got " + shape_string(frames.shape()));
  const std::size_t c = frames.dim(0), t = frames.dim(1), plane = frames.dim(2) * frames.dim(3);
  Tensor out(Shape{c, length, frames.dim(2), frames.dim(3)});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < length; ++j) {
      const std::size_t src_t = (start + j) % t;
      std::copy_n(frames.data().begin() + static_cast<std::ptrdiff_t>((ch * t + src_t) * plane), plane,
                  out.data().begin() + static_cast<std::ptrdiff_t>((ch * length + j) * plane));
    }
  }
  return out;
}

namespace {

Snippet make_snippet(const ClipVolume& clip, std::size_t start, std::size_t length, std::size_t index) {
  Snippet s;
  s.modality = clip.modality;
  s.frames = slice_window(clip.frames, start, length);
  s.source_segment = index;
  s.start = start;
  s.clip_id = clip.clip_id;
  s.subject_id = clip.subject_id;
  return s;
}

void check_clip(const ClipVolume& clip) {
  if (clip.frames.empty()) throw InputError("clip '" + clip.clip_id + "' has no frames");
  if (clip.frames.rank() != 4) throw InputError("clip '" + clip.clip_id + "' is not [C, T, H, W]");
  if (clip.frames.dim(0) != modality_channels(clip.modality)) {
    throw InputError("clip '" + clip.clip_id + "' has " + std::to_string(clip.frames.dim(0)) + " channels for modality " +
                     std::string(modality_name(clip.modality)));
  }
}

}  // namespace

std::vector<Snippet> segment_sample(const ClipVolume& clip, const SamplerConfig& config, std::mt19937_64& rng) {
  check_clip(clip);
  const auto starts = segment_starts(clip.length(), config, rng);
  std::vector<Snippet> out;
  out.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) out.push_back(make_snippet(clip, starts[i], config.train_len, i));
  return out;
}

std::vector<Snippet> dense_snippets(const ClipVolume& clip, const SamplerConfig& config) {
  check_clip(clip);
  const auto starts = dense_starts(clip.length(), config);
  std::vector<Snippet> out;
  out.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) out.push_back(make_snippet(clip, starts[i], config.test_len, i));
  return out;
}

// ---- augmentation ----------------------------------------------------------

void AugConfig::validate() const {
  if (scales.empty()) throw ConfigError("augmentation needs at least one scale");
  for (double s : scales) {
    if (!(s > 0.0)) throw ConfigError("augmentation scales must be positive");
    if (s > 1.0) throw ConfigError("augmentation scale " + std::to_string(s) + " gives a crop larger than the frame");
  }
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("flip probability must lie in [0, 1]");
  }
}

std::string AugTransform::describe() const {
  static constexpr const char* kCrop[] = {"tl", "tr", "bl", "br", "c"};
  std::ostringstream os;
  os << "scale=" << scale_x << "x" << scale_y << ",crop=" << kCrop[static_cast<int>(crop)] << ",flip=" << (flip ? 1 : 0);
  return os.str();
}

AugTransform draw_transform(const AugConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::uniform_int_distribution<std::size_t> pick_scale(0, config.scales.size() - 1);
  std::uniform_int_distribution<int> pick_crop(0, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugTransform t;
  t.scale_x = config.scales[pick_scale(rng)];
  t.scale_y = config.scales[pick_scale(rng)];
  t.crop = static_cast<CropPosition>(pick_crop(rng));
  t.flip = unit(rng) < config.flip_probability;
  return t;
}

Snippet flip_horizontal(const Snippet& snippet) {
  Snippet out = snippet;
  const Tensor& f = snippet.frames;
  const std::size_t c = f.dim(0), l = f.dim(1), h = f.dim(2), w = f.dim(3);
  const bool negate_u = snippet.modality != Modality::rgb;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float sign = (negate_u && ch == 0) ? -1.0f : 1.0f;
    for (std::size_t t = 0; t < l; ++t) {
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t row = ((ch * l + t) * h + y) * w;
        for (std::size_t x = 0; x < w; ++x) out.frames[row + x] = sign * f[row + (w - 1 - x)];
      }
    }
  }
  return out;
}

Snippet apply_transform(const Snippet& snippet, const AugTransform& tr) {
  const Tensor& f = snippet.frames;
  const std::size_t c = f.dim(0), l = f.dim(1), h = f.dim(2), w = f.dim(3);
  if (tr.scale_x > 1.0 || tr.scale_y > 1.0) throw ConfigError("crop larger than frame");
  const auto crop_w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tr.scale_x * static_cast<double>(w))));
  const auto crop_h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tr.scale_y * static_cast<double>(h))));
  std::size_t x0 = 0, y0 = 0;
  switch (tr.crop) {
    case CropPosition::top_left: break;
    case CropPosition::top_right: x0 = w - crop_w; break;
    case CropPosition::bottom_left: y0 = h - crop_h; break;
    case CropPosition::bottom_right: x0 = w - crop_w; y0 = h - crop_h; break;
    case CropPosition::center: x0 = (w - crop_w) / 2; y0 = (h - crop_h) / 2; break;
  }

  Snippet out = snippet;
  if (crop_w != w || crop_h != h) {
    Plane crop(crop_w, crop_h);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < l; ++t) {
        const std::size_t base = (ch * l + t) * h * w;
        for (std::size_t y = 0; y < crop_h; ++y)
          for (std::size_t x = 0; x < crop_w; ++x) crop.at(x, y) = f[base + (y0 + y) * w + x0 + x];
        const Plane resized = resize_bilinear(crop, w, h);
        std::copy(resized.data.begin(), resized.data.end(), out.frames.data().begin() + static_cast<std::ptrdiff_t>(base));
      }
    }
  }
  if (tr.flip) out = flip_horizontal(out);
  out.transform = tr.describe();
  return out;
}

Snippet augment(const Snippet& snippet, std::mt19937_64& rng, const AugConfig& config) {
  if (!config.enabled) return snippet;
  return apply_transform(snippet, draw_transform(config, rng));
}

}  // namespace pdml
