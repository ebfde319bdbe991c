#include "cardiofuse/kernels.hpp"

// Reference kernels. Written for obviousness, not speed.

namespace cardiofuse::kernels::serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

namespace {

// Zero padded read of X[n, c, y, x].
double padded(const ConvShape& s, std::span<const double> x, std::size_t n, std::size_t c,
              long y, long xx) {
  if (y < 0 || xx < 0 || y >= static_cast<long>(s.height) || xx >= static_cast<long>(s.width)) {
    return 0.0;
  }
  return x[((n * s.in_channels + c) * s.height + static_cast<std::size_t>(y)) * s.width +
           static_cast<std::size_t>(xx)];
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const long half = static_cast<long>(s.kernel / 2);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t q = 0; q < s.width; ++q) {
          double sum = bias[o];
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t ky = 0; ky < s.kernel; ++ky) {
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const double wv = w[((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx];
                sum += wv * padded(s, x, n, c, static_cast<long>(r + ky) - half,
                                   static_cast<long>(q + kx) - half);
              }
            }
          }
          y[((n * s.out_channels + o) * s.height + r) * s.width + q] = sum;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const long half = static_cast<long>(s.kernel / 2);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t q = 0; q < s.width; ++q) {
          // Output (r', q') reads input (r, q) through tap (ky, kx) when r = r' + ky - half.
          double sum = 0.0;
          for (std::size_t o = 0; o < s.out_channels; ++o) {
            for (std::size_t ky = 0; ky < s.kernel; ++ky) {
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long ry = static_cast<long>(r) - static_cast<long>(ky) + half;
                const long rx = static_cast<long>(q) - static_cast<long>(kx) + half;
                if (ry < 0 || rx < 0 || ry >= static_cast<long>(s.height) ||
                    rx >= static_cast<long>(s.width)) {
                  continue;
                }
                sum += w[((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx] *
                       dy[((n * s.out_channels + o) * s.height + static_cast<std::size_t>(ry)) *
                              s.width +
                          static_cast<std::size_t>(rx)];
              }
            }
          }
          dx[((n * s.in_channels + c) * s.height + r) * s.width + q] += sum;
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> dbias) {
  const long half = static_cast<long>(s.kernel / 2);
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    double bsum = 0.0;
    for (std::size_t n = 0; n < s.batch; ++n) {
      for (std::size_t r = 0; r < s.height; ++r) {
        for (std::size_t q = 0; q < s.width; ++q) {
          bsum += dy[((n * s.out_channels + o) * s.height + r) * s.width + q];
        }
      }
    }
    dbias[o] += bsum;
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          double sum = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::size_t r = 0; r < s.height; ++r) {
              for (std::size_t q = 0; q < s.width; ++q) {
                sum += dy[((n * s.out_channels + o) * s.height + r) * s.width + q] *
                       padded(s, x, n, c, static_cast<long>(r + ky) - half,
                              static_cast<long>(q + kx) - half);
              }
            }
          }
          dw[((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx] += sum;
        }
      }
    }
  }
}

}  // namespace cardiofuse::kernels::serial
