#include "pdml/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pdml/error.hpp"

namespace pdml {

namespace {

std::uint8_t quantize(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void write_raw(const std::filesystem::path& path, std::size_t w, std::size_t h, std::uint32_t format,
               const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write " + path.string() + ": " + msg);
  }
}

std::vector<std::uint8_t> read_raw(const std::filesystem::path& path, std::uint32_t format, std::size_t& w,
                                   std::size_t& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + msg);
  }
  w = img.width;
  h = img.height;
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize);
  write_raw(path, image.width, image.height, PNG_FORMAT_RGB, bytes);
}

void write_png(const std::filesystem::path& path, const Plane& gray) {
  std::vector<std::uint8_t> bytes(gray.data.size());
  std::transform(gray.data.begin(), gray.data.end(), bytes.begin(), quantize);
  write_raw(path, gray.width, gray.height, PNG_FORMAT_GRAY, bytes);
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_raw(path, PNG_FORMAT_RGB, w, h);
  RgbImage out(w, h);
  std::transform(bytes.begin(), bytes.end(), out.data.begin(), [](std::uint8_t b) { return b / 255.0f; });
  return out;
}

Plane read_png_gray(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_raw(path, PNG_FORMAT_GRAY, w, h);
  Plane out(w, h);
  std::transform(bytes.begin(), bytes.end(), out.data.begin(), [](std::uint8_t b) { return b / 255.0f; });
  return out;
}

}  // namespace pdml
