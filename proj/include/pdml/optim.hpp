#pragma once

#include <filesystem>
#include <string>

#include "pdml/autodiff.hpp"

namespace pdml {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Bias-corrected Adam. Requires a populated gradient on every parameter;
// increments the shared step count and clears the gradients afterwards.
template <typename T>
void adam_step(ParamSet<T>& params, const AdamConfig& config);

// Parameter checkpoint: "PDML0001", then per parameter
//   u32 name length, UTF-8 name, u32 rank, u32 extents..., float32 data
// all little-endian. Parameters are written in name order.
void save_checkpoint(const ParamSet<float>& params, const std::filesystem::path& path);
ParamSet<float> load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ParamSet<float>& params);
ParamSet<float> decode_checkpoint(const std::string& bytes);

}  // namespace pdml
