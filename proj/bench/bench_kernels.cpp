// Times the OpenMP kernels against the serial reference implementations.
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "pcodec/kernels.hpp"
#include "pcodec/rng.hpp"

using namespace pcodec;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double omp_ms, double serial_ms) {
  std::printf("%-24s omp %8.3f ms   serial %8.3f ms   speedup %.2fx\n", name, omp_ms,
              serial_ms, serial_ms / omp_ms);
}

}  // namespace

int main() {
  Rng rng(7);
  {
    const int64_t m = 256, k = 256, n = 256;
    std::vector<double> a(m * k), b(k * n), c(m * n);
    for (auto& e : a) e = rng.normal();
    for (auto& e : b) e = rng.normal();
    report("matmul 256^3",
           time_ms([&] { kern::matmul(a.data(), b.data(), c.data(), m, k, n); }, 20),
           time_ms([&] { kern::serial::matmul(a.data(), b.data(), c.data(), m, k, n); }, 20));
  }
  {
    const int64_t ci = 32, l = 8192, co = 32, kw = 7, stride = 1, pad = 3;
    const int64_t lout = (l + pad - kw) / stride + 1;
    std::vector<double> x(ci * l), w(co * ci * kw), bias(co), y(co * lout);
    for (auto& e : x) e = rng.normal();
    for (auto& e : w) e = rng.normal();
    for (auto& e : bias) e = rng.normal();
    report("conv1d 32x8192 k7",
           time_ms([&] { kern::conv1d(x.data(), w.data(), bias.data(), y.data(), ci, l, co, kw,
                                      stride, pad, lout); },
                   10),
           time_ms([&] { kern::serial::conv1d(x.data(), w.data(), bias.data(), y.data(), ci, l,
                                              co, kw, stride, pad, lout); },
                   10));
  }
  {
    const int64_t n = 1024, frames = 64;
    std::vector<double> re(n), im(n);
    auto run = [&](bool serial) {
      for (int64_t f = 0; f < frames; ++f) {
        for (int64_t i = 0; i < n; ++i) {
          re[i] = std::sin(0.01 * double(i * (f + 1)));
          im[i] = 0.0;
        }
        if (serial)
          kern::serial::fft(re.data(), im.data(), n, false);
        else
          kern::fft(re.data(), im.data(), n, false);
      }
    };
    report("fft 1024 x64", time_ms([&] { run(false); }, 20), time_ms([&] { run(true); }, 20));
  }
  {
    const int64_t t = 4096, c = 64, v = 256;
    std::vector<double> z(t * c), cb(v * c);
    std::vector<int32_t> tok(t);
    for (auto& e : z) e = rng.normal();
    for (auto& e : cb) e = rng.normal();
    report("nn_scan 4096x64 v256",
           time_ms([&] { kern::nn_scan(z.data(), cb.data(), tok.data(), t, c, v); }, 10),
           time_ms([&] { kern::serial::nn_scan(z.data(), cb.data(), tok.data(), t, c, v); },
                   10));
  }
  return 0;
}
