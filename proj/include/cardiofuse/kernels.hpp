#pragma once

// Dense compute kernels behind the autograd ops.
//
// Two implementations with identical signatures:
//   serial::   textbook loops, kept as the reference for tests and benchmarks
//   parallel:: cache-friendly loop order, OpenMP over independent output
//              blocks. No cross-thread reductions, so results do not depend
//              on the thread count.
//
// Matrices are row-major. All gemm variants accumulate into C when
// `accumulate` is true and overwrite it otherwise.

#include <cstddef>
#include <span>

namespace cardiofuse::kernels {

struct ConvShape {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 3;  // odd, stride 1, zero "same" padding

  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t output_size() const { return batch * out_channels * height * width; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

namespace serial {
// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// C[m,n] = A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
// dX += transposed convolution of dY with W
void conv2d_backward_input(const ConvShape& s, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
// dW += correlation of X with dY; dBias += per-channel sum of dY
void conv2d_backward_weight(const ConvShape& s, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> dbias);
}  // namespace serial

namespace parallel {
// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// C[m,n] = A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
// dX += transposed convolution of dY with W
void conv2d_backward_input(const ConvShape& s, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
// dW += correlation of X with dY; dBias += per-channel sum of dY
void conv2d_backward_weight(const ConvShape& s, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> dbias);
}  // namespace parallel

/// Worker count the parallel kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace cardiofuse::kernels
