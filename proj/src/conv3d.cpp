#include <string>
#include <vector>

#include "blas.hpp"
#include "conv3d_impl.hpp"
#include "pdml/autodiff.hpp"

namespace pdml {

namespace {

constexpr const char* kAxisNames[3] = {"time", "height", "width"};

}  // namespace

std::array<std::size_t, 3> conv3d_output_extents(const Shape& input, const Shape& kernel,
                                                 const Conv3dGeometry& geom) {
  if (input.size() != 4) {
    throw DimensionError("conv3d input must be [C, T, H, W], got " + shape_string(input));
  }
  if (kernel.size() != 5) {
    throw DimensionError("conv3d kernel must be [C_out, C_in, kT, kH, kW], got " +
                         shape_string(kernel));
  }
  if (kernel[1] != input[0]) {
    throw DimensionError("conv3d channel axis: kernel expects " + std::to_string(kernel[1]) +
                         " input channels, input has " + std::to_string(input[0]));
  }
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (geom.stride[a] < 1) {
      throw DimensionError(std::string("conv3d stride along ") + kAxisNames[a] + " must be >= 1");
    }
    const std::size_t padded = input[a + 1] + 2 * geom.padding[a];
    if (kernel[a + 2] > padded) {
      throw DimensionError(std::string("conv3d ") + kAxisNames[a] + " axis: kernel extent " +
                           std::to_string(kernel[a + 2]) + " exceeds padded input extent " +
                           std::to_string(padded));
    }
    out[a] = (padded - kernel[a + 2]) / geom.stride[a] + 1;
  }
  return out;
}

namespace detail {

template <typename T>
void im2col3d(const T* input, const ConvDims& d, T* cols) {
  const std::size_t plane = d.out_t * d.out_h * d.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    const T* chan = input + c * d.in_t * d.in_h * d.in_w;
    for (std::size_t kt = 0; kt < d.k_t; ++kt) {
      for (std::size_t kh = 0; kh < d.k_h; ++kh) {
        for (std::size_t kw = 0; kw < d.k_w; ++kw, ++row) {
          T* dst = cols + row * plane;
          for (std::size_t ot = 0; ot < d.out_t; ++ot) {
            const long it = static_cast<long>(ot * d.stride[0] + kt) - static_cast<long>(d.pad[0]);
            const bool t_ok = it >= 0 && it < static_cast<long>(d.in_t);
            for (std::size_t oh = 0; oh < d.out_h; ++oh) {
              const long ih =
                  static_cast<long>(oh * d.stride[1] + kh) - static_cast<long>(d.pad[1]);
              const bool h_ok = t_ok && ih >= 0 && ih < static_cast<long>(d.in_h);
              T* out_row = dst + (ot * d.out_h + oh) * d.out_w;
              if (!h_ok) {
                std::fill(out_row, out_row + d.out_w, T(0));
                continue;
              }
              const T* src = chan + (it * d.in_h + ih) * d.in_w;
              for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                const long iw =
                    static_cast<long>(ow * d.stride[2] + kw) - static_cast<long>(d.pad[2]);
                out_row[ow] = (iw >= 0 && iw < static_cast<long>(d.in_w)) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3d(const T* cols, const ConvDims& d, T* input_grad) {
  const std::size_t plane = d.out_t * d.out_h * d.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.in_c; ++c) {
    T* chan = input_grad + c * d.in_t * d.in_h * d.in_w;
    for (std::size_t kt = 0; kt < d.k_t; ++kt) {
      for (std::size_t kh = 0; kh < d.k_h; ++kh) {
        for (std::size_t kw = 0; kw < d.k_w; ++kw, ++row) {
          const T* src = cols + row * plane;
          for (std::size_t ot = 0; ot < d.out_t; ++ot) {
            const long it = static_cast<long>(ot * d.stride[0] + kt) - static_cast<long>(d.pad[0]);
            if (it < 0 || it >= static_cast<long>(d.in_t)) continue;
            for (std::size_t oh = 0; oh < d.out_h; ++oh) {
              const long ih =
                  static_cast<long>(oh * d.stride[1] + kh) - static_cast<long>(d.pad[1]);
              if (ih < 0 || ih >= static_cast<long>(d.in_h)) continue;
              T* dst = chan + (it * d.in_h + ih) * d.in_w;
              const T* in_row = src + (ot * d.out_h + oh) * d.out_w;
              for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                const long iw =
                    static_cast<long>(ow * d.stride[2] + kw) - static_cast<long>(d.pad[2]);
                if (iw >= 0 && iw < static_cast<long>(d.in_w)) dst[iw] += in_row[ow];
              }
            }
          }
        }
      }
    }
  }
}

ConvDims make_dims(const Shape& input, const Shape& kernel, const Conv3dGeometry& geom) {
  const auto out = conv3d_output_extents(input, kernel, geom);
  ConvDims d;
  d.in_c = input[0];
  d.in_t = input[1];
  d.in_h = input[2];
  d.in_w = input[3];
  d.out_c = kernel[0];
  d.k_t = kernel[2];
  d.k_h = kernel[3];
  d.k_w = kernel[4];
  d.out_t = out[0];
  d.out_h = out[1];
  d.out_w = out[2];
  d.stride = geom.stride;
  d.pad = geom.padding;
  return d;
}

template <typename T>
void conv3d_forward_raw(const T* input, const T* kernel, const ConvDims& d, T* output) {
  const std::size_t k = d.in_c * d.k_t * d.k_h * d.k_w;
  const std::size_t p = d.out_t * d.out_h * d.out_w;
  std::vector<T> cols(k * p);
  im2col3d(input, d, cols.data());
  gemm(false, false, d.out_c, p, k, T(1), kernel, k, cols.data(), p, T(0), output, p);
}

template <typename T>
void conv3d_backward_raw(const T* input, const T* kernel, const T* out_grad, const ConvDims& d,
                         T* input_grad, T* kernel_grad) {
  const std::size_t k = d.in_c * d.k_t * d.k_h * d.k_w;
  const std::size_t p = d.out_t * d.out_h * d.out_w;
  std::vector<T> cols(k * p);
  if (kernel_grad) {
    im2col3d(input, d, cols.data());
    gemm(false, true, d.out_c, k, p, T(1), out_grad, p, cols.data(), p, T(1), kernel_grad, k);
  }
  if (input_grad) {
    gemm(true, false, k, p, d.out_c, T(1), kernel, k, out_grad, p, T(0), cols.data(), p);
    col2im3d(cols.data(), d, input_grad);
  }
}

template void conv3d_forward_raw<float>(const float*, const float*, const ConvDims&, float*);
template void conv3d_forward_raw<double>(const double*, const double*, const ConvDims&, double*);
template void conv3d_backward_raw<float>(const float*, const float*, const float*,
                                         const ConvDims&, float*, float*);
template void conv3d_backward_raw<double>(const double*, const double*, const double*,
                                          const ConvDims&, double*, double*);

}  // namespace detail

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              const Conv3dGeometry& geom) {
  const auto d = detail::make_dims(input.shape(), kernel.shape(), geom);
  BasicTensor<T> out(Shape{d.out_c, d.out_t, d.out_h, d.out_w});
  detail::conv3d_forward_raw(input.data().data(), kernel.data().data(), d, out.data().data());
  return out;
}

template BasicTensor<float> conv3d_forward(const BasicTensor<float>&, const BasicTensor<float>&,
                                           const Conv3dGeometry&);
template BasicTensor<double> conv3d_forward(const BasicTensor<double>&,
                                            const BasicTensor<double>&, const Conv3dGeometry&);

}  // namespace pdml
