#include "pcodec/kernels.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>
#include <vector>

namespace pcodec::kern {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = a[p * m + i];
      const double* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < co; ++o) {
    for (int64_t t = 0; t < lout; ++t) {
      double acc = bias ? bias[o] : 0.0;
      const int64_t base = t * stride - pad_l;
      for (int64_t i = 0; i < ci; ++i) {
        const double* xi = x + i * l;
        const double* wi = w + (o * ci + i) * kw;
        for (int64_t q = 0; q < kw; ++q) {
          const int64_t p = base + q;
          if (p >= 0 && p < l) acc += wi[q] * xi[p];
        }
      }
      y[o * lout + t] = acc;
    }
  }
}

void conv1d_input_grad(const double* gy, const double* w, double* gx, int64_t ci, int64_t l,
                       int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ci; ++i) {
    double* gxi = gx + i * l;
    for (int64_t p = 0; p < l; ++p) gxi[p] = 0.0;
    for (int64_t o = 0; o < co; ++o) {
      const double* gyo = gy + o * lout;
      const double* wi = w + (o * ci + i) * kw;
      for (int64_t t = 0; t < lout; ++t) {
        const int64_t base = t * stride - pad_l;
        const double g = gyo[t];
        for (int64_t q = 0; q < kw; ++q) {
          const int64_t p = base + q;
          if (p >= 0 && p < l) gxi[p] += g * wi[q];
        }
      }
    }
  }
}

void conv1d_weight_grad(const double* gy, const double* x, double* gw, double* gb, int64_t ci,
                        int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l,
                        int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < co; ++o) {
    const double* gyo = gy + o * lout;
    if (gb) {
      double acc = 0.0;
      for (int64_t t = 0; t < lout; ++t) acc += gyo[t];
      gb[o] = acc;
    }
    for (int64_t i = 0; i < ci; ++i) {
      const double* xi = x + i * l;
      double* gwi = gw + (o * ci + i) * kw;
      for (int64_t q = 0; q < kw; ++q) {
        double acc = 0.0;
        for (int64_t t = 0; t < lout; ++t) {
          const int64_t p = t * stride - pad_l + q;
          if (p >= 0 && p < l) acc += gyo[t] * xi[p];
        }
        gwi[q] = acc;
      }
    }
  }
}

void conv_transpose1d(const double* x, const double* w, const double* bias, double* y,
                      int64_t ci, int64_t l, int64_t co, int64_t kw, int64_t stride,
                      int64_t pad_l, int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < co; ++o) {
    double* yo = y + o * lout;
    for (int64_t p = 0; p < lout; ++p) {
      double acc = bias ? bias[o] : 0.0;
      // y[p] collects x[t]*w[q] over all (t, q) with t*stride + q == p + pad_l.
      for (int64_t q = 0; q < kw; ++q) {
        const int64_t num = p + pad_l - q;
        if (num < 0 || num % stride != 0) continue;
        const int64_t t = num / stride;
        if (t >= l) continue;
        for (int64_t i = 0; i < ci; ++i) acc += x[i * l + t] * w[(i * co + o) * kw + q];
      }
      yo[p] = acc;
    }
  }
}

void conv_transpose1d_input_grad(const double* gy, const double* w, double* gx, int64_t ci,
                                 int64_t l, int64_t co, int64_t kw, int64_t stride,
                                 int64_t pad_l, int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ci; ++i) {
    double* gxi = gx + i * l;
    for (int64_t t = 0; t < l; ++t) {
      double acc = 0.0;
      for (int64_t o = 0; o < co; ++o) {
        const double* gyo = gy + o * lout;
        const double* wio = w + (i * co + o) * kw;
        for (int64_t q = 0; q < kw; ++q) {
          const int64_t p = t * stride + q - pad_l;
          if (p >= 0 && p < lout) acc += gyo[p] * wio[q];
        }
      }
      gxi[t] = acc;
    }
  }
}

void conv_transpose1d_weight_grad(const double* gy, const double* x, double* gw, double* gb,
                                  int64_t ci, int64_t l, int64_t co, int64_t kw, int64_t stride,
                                  int64_t pad_l, int64_t lout) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ci; ++i) {
    const double* xi = x + i * l;
    for (int64_t o = 0; o < co; ++o) {
      const double* gyo = gy + o * lout;
      double* gwio = gw + (i * co + o) * kw;
      for (int64_t q = 0; q < kw; ++q) {
        double acc = 0.0;
        for (int64_t t = 0; t < l; ++t) {
          const int64_t p = t * stride + q - pad_l;
          if (p >= 0 && p < lout) acc += xi[t] * gyo[p];
        }
        gwio[q] = acc;
      }
    }
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < co; ++o) {
      double acc = 0.0;
      for (int64_t p = 0; p < lout; ++p) acc += gy[o * lout + p];
      gb[o] = acc;
    }
  }
}

namespace {

struct Twiddles {
  std::vector<double> cos_t, sin_t;  // e^{-2*pi*i*j/n} for j in [0, n/2)
};

const Twiddles& twiddles_for(int64_t n) {
  thread_local std::unordered_map<int64_t, Twiddles> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Twiddles tw;
  tw.cos_t.resize(n / 2);
  tw.sin_t.resize(n / 2);
  for (int64_t j = 0; j < n / 2; ++j) {
    const double ang = -2.0 * M_PI * double(j) / double(n);
    tw.cos_t[j] = std::cos(ang);
    tw.sin_t[j] = std::sin(ang);
  }
  return cache.emplace(n, std::move(tw)).first->second;
}

void fft_impl(double* re, double* im, int64_t n, bool inverse) {
  // Bit-reversal permutation, then iterative Cooley-Tukey butterflies.
  for (int64_t i = 1, j = 0; i < n; ++i) {
    int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const Twiddles& tw = twiddles_for(n);
  for (int64_t len = 2; len <= n; len <<= 1) {
    const int64_t half = len >> 1;
    const int64_t step = n / len;
    for (int64_t start = 0; start < n; start += len) {
      for (int64_t j = 0; j < half; ++j) {
        const double wr = tw.cos_t[j * step];
        const double wi = inverse ? -tw.sin_t[j * step] : tw.sin_t[j * step];
        const int64_t a = start + j, b = start + j + half;
        const double xr = re[b] * wr - im[b] * wi;
        const double xi = re[b] * wi + im[b] * wr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
      }
    }
  }
}

}  // namespace

void fft(double* re, double* im, int64_t n, bool inverse) { fft_impl(re, im, n, inverse); }

void nn_scan(const double* z, const double* codebook, int32_t* tokens, int64_t t, int64_t c,
             int64_t v) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < t; ++i) {
    const double* zi = z + i * c;
    int32_t best = 0;
    double best_d = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      const double* cj = codebook + j * c;
      double d = 0.0;
      for (int64_t q = 0; q < c; ++q) {
        const double diff = zi[q] - cj[q];
        d += diff * diff;
      }
      if (j == 0 || d < best_d) {
        best = int32_t(j);
        best_d = d;
      }
    }
    tokens[i] = best;
  }
}

void avg_pool1d(const double* x, double* y, int64_t ch, int64_t l, int64_t f) {
  const int64_t lout = l / f;
  const double inv = 1.0 / double(f);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ch; ++i) {
    const double* xi = x + i * l;
    double* yi = y + i * lout;
    for (int64_t t = 0; t < lout; ++t) {
      double acc = 0.0;
      for (int64_t j = 0; j < f; ++j) acc += xi[t * f + j];
      yi[t] = acc * inv;
    }
  }
}

void avg_pool1d_grad(const double* gy, double* gx, int64_t ch, int64_t l, int64_t f) {
  const int64_t lout = l / f;
  const double inv = 1.0 / double(f);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ch; ++i) {
    const double* gyi = gy + i * lout;
    double* gxi = gx + i * l;
    for (int64_t p = 0; p < l; ++p) gxi[p] = p < lout * f ? gyi[p / f] * inv : 0.0;
  }
}

void scatter_rows_add(const double* g, const int32_t* ids, double* table_grad, int64_t n,
                      int64_t h) {
#pragma omp parallel for schedule(static)
  for (int64_t col = 0; col < h; ++col) {
    for (int64_t r = 0; r < n; ++r) table_grad[int64_t(ids[r]) * h + col] += g[r * h + col];
  }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * b[p * n + j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      const double aip = a[p * m + i];
      for (int64_t j = 0; j < n; ++j) ci[j] += aip * b[p * n + j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout) {
  for (int64_t o = 0; o < co; ++o) {
    for (int64_t t = 0; t < lout; ++t) {
      double acc = bias ? bias[o] : 0.0;
      for (int64_t i = 0; i < ci; ++i) {
        for (int64_t q = 0; q < kw; ++q) {
          const int64_t p = t * stride - pad_l + q;
          if (p >= 0 && p < l) acc += w[(o * ci + i) * kw + q] * x[i * l + p];
        }
      }
      y[o * lout + t] = acc;
    }
  }
}

void fft(double* re, double* im, int64_t n, bool inverse) { fft_impl(re, im, n, inverse); }

void nn_scan(const double* z, const double* codebook, int32_t* tokens, int64_t t, int64_t c,
             int64_t v) {
  for (int64_t i = 0; i < t; ++i) {
    int32_t best = 0;
    double best_d = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      double d = 0.0;
      for (int64_t q = 0; q < c; ++q) {
        const double diff = z[i * c + q] - codebook[j * c + q];
        d += diff * diff;
      }
      if (j == 0 || d < best_d) {
        best = int32_t(j);
        best_d = d;
      }
    }
    tokens[i] = best;
  }
}

}  // namespace serial

}  // namespace pcodec::kern
