#include <cmath>
#include <vector>

#include "doctest.h"
#include "pcodec/kernels.hpp"
#include "pcodec/rng.hpp"

using namespace pcodec;

namespace {

std::vector<double> randn(Rng& rng, int64_t n) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.normal();
  return v;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("matmul variants match serial bitwise") {
    Rng rng(11);
    for (auto [m, k, n] : {std::array<int64_t, 3>{3, 5, 7}, {17, 9, 13}, {64, 33, 20}}) {
      auto a = randn(rng, m * k);
      auto b = randn(rng, k * n);
      std::vector<double> c0(m * n), c1(m * n);
      kern::matmul(a.data(), b.data(), c0.data(), m, k, n);
      kern::serial::matmul(a.data(), b.data(), c1.data(), m, k, n);
      CHECK(c0 == c1);

      auto at = randn(rng, k * m);
      kern::matmul_tn(at.data(), b.data(), c0.data(), m, k, n);
      kern::serial::matmul_tn(at.data(), b.data(), c1.data(), m, k, n);
      CHECK(c0 == c1);

      auto bt = randn(rng, n * k);
      kern::matmul_nt(a.data(), bt.data(), c0.data(), m, k, n);
      kern::serial::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
      CHECK(c0 == c1);
    }
  }

  TEST_CASE("matmul accumulate adds into destination") {
    Rng rng(12);
    const int64_t m = 4, k = 6, n = 5;
    auto a = randn(rng, m * k);
    auto b = randn(rng, k * n);
    std::vector<double> base(m * n, 0.5), acc = base, fresh(m * n);
    kern::matmul(a.data(), b.data(), fresh.data(), m, k, n);
    kern::matmul(a.data(), b.data(), acc.data(), m, k, n, true);
    for (int64_t i = 0; i < m * n; ++i) CHECK(acc[i] == doctest::Approx(0.5 + fresh[i]));
  }

  TEST_CASE("conv1d matches serial bitwise") {
    Rng rng(13);
    const int64_t ci = 3, l = 41, co = 5, kw = 7, stride = 2, pad = 3;
    const int64_t lout = (l + pad - kw) / stride + 1;
    auto x = randn(rng, ci * l);
    auto w = randn(rng, co * ci * kw);
    auto b = randn(rng, co);
    std::vector<double> y0(co * lout), y1(co * lout);
    kern::conv1d(x.data(), w.data(), b.data(), y0.data(), ci, l, co, kw, stride, pad, lout);
    kern::serial::conv1d(x.data(), w.data(), b.data(), y1.data(), ci, l, co, kw, stride, pad,
                         lout);
    CHECK(y0 == y1);
  }

  TEST_CASE("conv_transpose1d inverts stride arithmetic") {
    // single input channel, identity-ish kernel: output p = x[t] when p = t*stride
    const int64_t ci = 1, l = 5, co = 1, kw = 1, stride = 3, pad = 0;
    const int64_t lout = (l - 1) * stride + kw - pad;
    std::vector<double> x = {1, 2, 3, 4, 5}, w = {2.0}, y(lout);
    kern::conv_transpose1d(x.data(), w.data(), nullptr, y.data(), ci, l, co, kw, stride, pad,
                           lout);
    for (int64_t p = 0; p < lout; ++p)
      CHECK(y[p] == (p % stride == 0 ? 2.0 * x[p / stride] : 0.0));
  }

  TEST_CASE("fft matches naive dft") {
    Rng rng(14);
    for (int64_t n : {8, 64, 512}) {
      auto re = randn(rng, n);
      auto im = randn(rng, n);
      auto re0 = re, im0 = im;
      kern::fft(re.data(), im.data(), n, false);
      for (int64_t k = 0; k < n; ++k) {
        double sr = 0.0, si = 0.0;
        for (int64_t t = 0; t < n; ++t) {
          const double ang = -2.0 * M_PI * double(k) * double(t) / double(n);
          sr += re0[t] * std::cos(ang) - im0[t] * std::sin(ang);
          si += re0[t] * std::sin(ang) + im0[t] * std::cos(ang);
        }
        CHECK(re[k] == doctest::Approx(sr).epsilon(1e-9));
        CHECK(im[k] == doctest::Approx(si).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("fft inverse round-trips with 1/n scaling") {
    Rng rng(15);
    const int64_t n = 256;
    auto re = randn(rng, n);
    auto im = randn(rng, n);
    auto re0 = re, im0 = im;
    kern::fft(re.data(), im.data(), n, false);
    kern::fft(re.data(), im.data(), n, true);
    for (int64_t i = 0; i < n; ++i) {
      CHECK(re[i] / double(n) == doctest::Approx(re0[i]).epsilon(1e-10));
      CHECK(im[i] / double(n) == doctest::Approx(im0[i]).epsilon(1e-10));
    }
  }

  TEST_CASE("fft serial parity") {
    Rng rng(16);
    const int64_t n = 1024;
    auto re = randn(rng, n);
    auto im = randn(rng, n);
    auto re2 = re, im2 = im;
    kern::fft(re.data(), im.data(), n, false);
    kern::serial::fft(re2.data(), im2.data(), n, false);
    CHECK(re == re2);
    CHECK(im == im2);
  }

  TEST_CASE("nn_scan picks nearest, lowest index on ties") {
    // codebook rows 1 and 3 are identical; z sits exactly between rows 0 and 1
    std::vector<double> cb = {0.0, 0.0, 1.0, 1.0, 5.0, 5.0, 1.0, 1.0};
    std::vector<double> z = {1.0, 1.0, 0.9, 1.1, 4.0, 4.0};
    std::vector<int32_t> tok(3);
    kern::nn_scan(z.data(), cb.data(), tok.data(), 3, 2, 4);
    CHECK(tok[0] == 1);  // exact hit on rows 1 and 3 -> 1
    CHECK(tok[1] == 1);
    CHECK(tok[2] == 2);

    std::vector<int32_t> tok2(3);
    kern::serial::nn_scan(z.data(), cb.data(), tok2.data(), 3, 2, 4);
    CHECK(tok == tok2);
  }

  TEST_CASE("avg_pool1d and grad") {
    std::vector<double> x = {1, 2, 3, 4, 5, 6, 7};  // one channel, f=2 drops the tail
    std::vector<double> y(3);
    kern::avg_pool1d(x.data(), y.data(), 1, 7, 2);
    CHECK(y == std::vector<double>{1.5, 3.5, 5.5});
    std::vector<double> gy = {1.0, 2.0, 3.0}, gx(7);
    kern::avg_pool1d_grad(gy.data(), gx.data(), 1, 7, 2);
    CHECK(gx == std::vector<double>{0.5, 0.5, 1.0, 1.0, 1.5, 1.5, 0.0});
  }

  TEST_CASE("scatter_rows_add accumulates duplicate ids") {
    std::vector<double> g = {1, 2, 3, 4, 5, 6};  // 3 rows x 2 cols
    std::vector<int32_t> ids = {1, 0, 1};
    std::vector<double> table(4 * 2, 0.0);
    kern::scatter_rows_add(g.data(), ids.data(), table.data(), 3, 2);
    CHECK(table[0] == 3.0);
    CHECK(table[1] == 4.0);
    CHECK(table[2] == 1.0 + 5.0);
    CHECK(table[3] == 2.0 + 6.0);
  }
}
