#include <algorithm>

#include "cardiofuse/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cardiofuse::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline double dot(const double* a, const double* b, std::size_t k) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    s0 += a[p] * b[p];
    s1 += a[p + 1] * b[p + 1];
    s2 += a[p + 2] * b[p + 2];
    s3 += a[p + 3] * b[p + 3];
  }
  for (; p < k; ++p) s0 += a[p] * b[p];
  return (s0 + s1) + (s2 + s3);
}

// Valid output range [lo, hi) along one axis for tap offset d in [-half, half].
inline void tap_range(long d, std::size_t extent, std::size_t& lo, std::size_t& hi) {
  lo = d < 0 ? static_cast<std::size_t>(-d) : 0;
  const long h = static_cast<long>(extent) - (d > 0 ? d : 0);
  hi = h > 0 ? static_cast<std::size_t>(h) : 0;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = dot(arow, B + j * k, k);
      crow[j] = accumulate ? crow[j] + v : v;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[p * m + i];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const std::size_t plane = s.height * s.width;
  const long half = static_cast<long>(s.kernel / 2);
  const long jobs = static_cast<long>(s.batch * s.out_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels * 9 >= kParallelWork)
  for (long job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / s.out_channels;
    const std::size_t o = static_cast<std::size_t>(job) % s.out_channels;
    double* out = y.data() + (n * s.out_channels + o) * plane;
    std::fill(out, out + plane, bias[o]);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const double* in = x.data() + (n * s.in_channels + c) * plane;
      const double* wk = w.data() + (o * s.in_channels + c) * s.kernel * s.kernel;
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        const long dy = static_cast<long>(ky) - half;
        std::size_t r0, r1;
        tap_range(dy, s.height, r0, r1);
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const long dx = static_cast<long>(kx) - half;
          std::size_t q0, q1;
          tap_range(dx, s.width, q0, q1);
          const double wv = wk[ky * s.kernel + kx];
          for (std::size_t r = r0; r < r1; ++r) {
            double* orow = out + r * s.width;
            const double* irow = in + static_cast<std::size_t>(static_cast<long>(r) + dy) * s.width;
            for (std::size_t q = q0; q < q1; ++q) {
              orow[q] += wv * irow[static_cast<long>(q) + dx];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const std::size_t plane = s.height * s.width;
  const long half = static_cast<long>(s.kernel / 2);
  const long jobs = static_cast<long>(s.batch * s.in_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels * 9 >= kParallelWork)
  for (long job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / s.in_channels;
    const std::size_t c = static_cast<std::size_t>(job) % s.in_channels;
    double* gin = dx.data() + (n * s.in_channels + c) * plane;
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double* gout = dy.data() + (n * s.out_channels + o) * plane;
      const double* wk = w.data() + (o * s.in_channels + c) * s.kernel * s.kernel;
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        const long oy = static_cast<long>(ky) - half;
        std::size_t r0, r1;
        tap_range(oy, s.height, r0, r1);
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const long ox = static_cast<long>(kx) - half;
          std::size_t q0, q1;
          tap_range(ox, s.width, q0, q1);
          const double wv = wk[ky * s.kernel + kx];
          for (std::size_t r = r0; r < r1; ++r) {
            const double* grow = gout + r * s.width;
            double* irow = gin + static_cast<std::size_t>(static_cast<long>(r) + oy) * s.width;
            for (std::size_t q = q0; q < q1; ++q) {
              irow[static_cast<long>(q) + ox] += wv * grow[q];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> dbias) {
  const std::size_t plane = s.height * s.width;
  const long half = static_cast<long>(s.kernel / 2);
  const long outs = static_cast<long>(s.out_channels);
#pragma omp parallel for schedule(static) if (s.output_size() * s.in_channels * 9 >= kParallelWork)
  for (long oo = 0; oo < outs; ++oo) {
    const auto o = static_cast<std::size_t>(oo);
    double bsum = 0.0;
    for (std::size_t n = 0; n < s.batch; ++n) {
      const double* gout = dy.data() + (n * s.out_channels + o) * plane;
      for (std::size_t i = 0; i < plane; ++i) bsum += gout[i];
    }
    dbias[o] += bsum;
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      double* wk = dw.data() + (o * s.in_channels + c) * s.kernel * s.kernel;
      for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        const long oy = static_cast<long>(ky) - half;
        std::size_t r0, r1;
        tap_range(oy, s.height, r0, r1);
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          const long ox = static_cast<long>(kx) - half;
          std::size_t q0, q1;
          tap_range(ox, s.width, q0, q1);
          double sum = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n) {
            const double* gout = dy.data() + (n * s.out_channels + o) * plane;
            const double* in = x.data() + (n * s.in_channels + c) * plane;
            for (std::size_t r = r0; r < r1; ++r) {
              const double* grow = gout + r * s.width;
              const double* irow = in + static_cast<std::size_t>(static_cast<long>(r) + oy) * s.width +
                                   static_cast<std::size_t>(static_cast<long>(q0) + ox);
              sum += dot(grow + q0, irow, q1 - q0);
            }
          }
          wk[ky * s.kernel + kx] += sum;
        }
      }
    }
  }
}

}  // namespace parallel
}  // namespace cardiofuse::kernels
