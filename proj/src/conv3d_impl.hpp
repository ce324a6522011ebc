#pragma once

#include <array>
#include <cstddef>

#include "pdml/autodiff.hpp"

namespace pdml::detail {

struct ConvDims {
  std::size_t in_c, in_t, in_h, in_w;
  std::size_t out_c, out_t, out_h, out_w;
  std::size_t k_t, k_h, k_w;
  std::array<std::size_t, 3> stride;
  std::array<std::size_t, 3> pad;
};

ConvDims make_dims(const Shape& input, const Shape& kernel, const Conv3dGeometry& geom);

template <typename T>
void conv3d_forward_raw(const T* input, const T* kernel, const ConvDims& d, T* output);

// Accumulates into kernel_grad and input_grad; either pointer may be null.
template <typename T>
void conv3d_backward_raw(const T* input, const T* kernel, const T* out_grad, const ConvDims& d,
                         T* input_grad, T* kernel_grad);

}  // namespace pdml::detail
