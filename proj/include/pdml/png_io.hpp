#pragma once

#include <filesystem>

#include "pdml/image.hpp"

namespace pdml {

// 8-bit PNG I/O. Values are clamped to [0, 1] and quantized on write; any
// colour type is accepted on read.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const Plane& gray);
RgbImage read_png_rgb(const std::filesystem::path& path);
Plane read_png_gray(const std::filesystem::path& path);

}  // namespace pdml
