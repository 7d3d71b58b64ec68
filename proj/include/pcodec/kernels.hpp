#pragma once

#include <cstdint>

// Hot inner loops shared by the autograd ops. Every kernel writes each output
// element from a serial accumulation, so results are bitwise identical for any
// thread count. pcodec::kern is the OpenMP build used everywhere;
// pcodec::kern::serial is the plain-loop reference the tests compare against.
namespace pcodec::kern {

// C[m x n] = A[m x k] * B[k x n]   (+= when accumulate)
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate = false);
// C[m x n] = A^T * B with A[k x m], B[k x n]
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
// C[m x n] = A * B^T with A[m x k], B[n x k]
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);

// y[co x lout] = conv1d(x[ci x l], w[co x ci x kw]) with stride and zero padding.
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout);
void conv1d_input_grad(const double* gy, const double* w, double* gx, int64_t ci, int64_t l,
                       int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout);
void conv1d_weight_grad(const double* gy, const double* x, double* gw, double* gb, int64_t ci,
                        int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l,
                        int64_t lout);

// y[co x lout] = conv_transpose1d(x[ci x l], w[ci x co x kw]), lout = l*stride + kw - stride - pad_l - pad_r.
void conv_transpose1d(const double* x, const double* w, const double* bias, double* y,
                      int64_t ci, int64_t l, int64_t co, int64_t kw, int64_t stride,
                      int64_t pad_l, int64_t lout);
void conv_transpose1d_input_grad(const double* gy, const double* w, double* gx, int64_t ci,
                                 int64_t l, int64_t co, int64_t kw, int64_t stride,
                                 int64_t pad_l, int64_t lout);
void conv_transpose1d_weight_grad(const double* gy, const double* x, double* gw, double* gb,
                                  int64_t ci, int64_t l, int64_t co, int64_t kw, int64_t stride,
                                  int64_t pad_l, int64_t lout);

// In-place radix-2 FFT on interleaved-free re/im buffers, n a power of two.
// Unnormalized; inverse=true conjugates the twiddles (no 1/n scaling).
void fft(double* re, double* im, int64_t n, bool inverse);

// tokens[t] = argmin_v || z[t] - codebook[v] ||^2, lowest index on ties.
void nn_scan(const double* z, const double* codebook, int32_t* tokens, int64_t t, int64_t c,
             int64_t v);

// y[ch x (l/f)] = mean over windows of size f, stride f.
void avg_pool1d(const double* x, double* y, int64_t ch, int64_t l, int64_t f);
void avg_pool1d_grad(const double* gy, double* gx, int64_t ch, int64_t l, int64_t f);

// table_grad[ids[r]] += g[r] for g[n x h]; parallelized over columns so
// repeated ids never race.
void scatter_rows_add(const double* g, const int32_t* ids, double* table_grad, int64_t n,
                      int64_t h);

namespace serial {
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t ci,
            int64_t l, int64_t co, int64_t kw, int64_t stride, int64_t pad_l, int64_t lout);
void fft(double* re, double* im, int64_t n, bool inverse);
void nn_scan(const double* z, const double* codebook, int32_t* tokens, int64_t t, int64_t c,
             int64_t v);
}  // namespace serial

}  // namespace pcodec::kern
