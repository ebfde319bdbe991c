#include <gtest/gtest.h>

#include <vector>

#include "cardiofuse/kernels.hpp"
#include "cardiofuse/rng.hpp"

using namespace cardiofuse;
using kernels::ConvShape;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

struct GemmCase {
  std::size_t m, n, k;
};

class GemmTest : public ::testing::TestWithParam<GemmCase> {};

TEST_P(GemmTest, ParallelMatchesSerialForAllLayouts) {
  const auto [m, n, k] = GetParam();
  for (bool acc : {false, true}) {
    const auto a_mk = random_vec(m * k, 1), b_kn = random_vec(k * n, 2), b_nk = random_vec(n * k, 3);
    const auto a_km = random_vec(k * m, 4);
    const auto init = random_vec(m * n, 5);

    auto s = init, p = init;
    kernels::serial::gemm_nn(m, n, k, a_mk, b_kn, s, acc);
    kernels::parallel::gemm_nn(m, n, k, a_mk, b_kn, p, acc);
    expect_close(s, p);

    s = init, p = init;
    kernels::serial::gemm_nt(m, n, k, a_mk, b_nk, s, acc);
    kernels::parallel::gemm_nt(m, n, k, a_mk, b_nk, p, acc);
    expect_close(s, p);

    s = init, p = init;
    kernels::serial::gemm_tn(m, n, k, a_km, b_kn, s, acc);
    kernels::parallel::gemm_tn(m, n, k, a_km, b_kn, p, acc);
    expect_close(s, p);
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, GemmTest,
                         ::testing::Values(GemmCase{1, 1, 1}, GemmCase{3, 5, 7}, GemmCase{17, 9, 33},
                                           GemmCase{64, 64, 64}, GemmCase{2, 130, 3}));

TEST(Gemm, SerialMatchesHandProduct) {
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};     // 2x3
  const std::vector<double> b = {7, 8, 9, 10, 11, 12};  // 3x2
  std::vector<double> c(4, 100.0);
  kernels::serial::gemm_nn(2, 2, 3, a, b, c, false);
  EXPECT_EQ(c, (std::vector<double>{58, 64, 139, 154}));
  kernels::serial::gemm_nn(2, 2, 3, a, b, c, true);
  EXPECT_EQ(c, (std::vector<double>{116, 128, 278, 308}));
}

class ConvTest : public ::testing::TestWithParam<ConvShape> {};

TEST_P(ConvTest, ParallelMatchesSerial) {
  const ConvShape s = GetParam();
  const auto x = random_vec(s.input_size(), 10);
  const auto w = random_vec(s.weight_size(), 11);
  const auto bias = random_vec(s.out_channels, 12);
  const auto dy = random_vec(s.output_size(), 13);

  std::vector<double> ys(s.output_size()), yp(s.output_size());
  kernels::serial::conv2d_forward(s, x, w, bias, ys);
  kernels::parallel::conv2d_forward(s, x, w, bias, yp);
  expect_close(ys, yp);

  auto dxs = random_vec(s.input_size(), 14), dxp = dxs;
  kernels::serial::conv2d_backward_input(s, dy, w, dxs);
  kernels::parallel::conv2d_backward_input(s, dy, w, dxp);
  expect_close(dxs, dxp);

  auto dws = random_vec(s.weight_size(), 15), dwp = dws;
  auto dbs = random_vec(s.out_channels, 16), dbp = dbs;
  kernels::serial::conv2d_backward_weight(s, x, dy, dws, dbs);
  kernels::parallel::conv2d_backward_weight(s, x, dy, dwp, dbp);
  expect_close(dws, dwp, 1e-11);
  expect_close(dbs, dbp, 1e-11);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvShape{1, 1, 1, 3, 3, 3}, ConvShape{2, 1, 4, 8, 8, 3},
                                           ConvShape{3, 4, 8, 16, 16, 3}, ConvShape{2, 3, 2, 5, 7, 3},
                                           ConvShape{1, 2, 3, 6, 6, 5}));

TEST(Conv, IdentityKernelCopiesInput) {
  ConvShape s{1, 1, 1, 4, 4, 3};
  const auto x = random_vec(16, 3);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  std::vector<double> y(16), b(1, 0.25);
  kernels::serial::conv2d_forward(s, x, w, b, y);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y[i], x[i] + 0.25);
}

TEST(Conv, ZeroPaddingAtBorders) {
  // All-ones input and kernel: interior outputs count 9 taps, corners 4, edges 6.
  ConvShape s{1, 1, 1, 3, 3, 3};
  std::vector<double> x(9, 1.0), w(9, 1.0), b(1, 0.0), y(9);
  kernels::parallel::conv2d_forward(s, x, w, b, y);
  EXPECT_EQ(y, (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Kernels, ReportsAtLeastOneThread) { EXPECT_GE(kernels::max_threads(), 1); }

}  // namespace
