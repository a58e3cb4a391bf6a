#pragma once

#include <complex>
#include <cstddef>
#include <vector>

// Dense numeric kernels behind the autodiff ops. Every kernel exists twice:
// kernels::serial is the reference, kernels::omp parallelizes the outer loop
// with OpenMP. Both variants accumulate each output element in the same
// serial order, so their results are bit-identical; tests assert exact
// equality and the bench tool compares throughput.
namespace seqnas::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c[k x n] = a[m x k]^T * b[m x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

// y[b,t,co] = bias[co] + sum_{ci,j} x[b, t+j-pad_left, ci] * w[co,ci,j]
void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left);
// gradient wrt x
void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);
// gradient wrt w and bias (accumulated into gw/gb)
void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);

// row-wise softmax over the last dimension
void softmax_rows(const double* x, double* y, int rows, int cols);

// in-place iterative radix-2 FFT; n must be a power of two
void fft(std::complex<double>* a, int n, bool inverse);

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left);
void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);
void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace omp

// Dispatching entry points used by the autodiff layer.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left);
void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);
void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left);
void softmax_rows(const double* x, double* y, int rows, int cols);
void fft(std::complex<double>* a, int n, bool inverse);

// circular convolution of two length-n real signals via FFT; n must be a
// power of two (callers zero-pad up to next_pow2 before wrapping matters)
void circular_conv(const double* x, const double* f, double* y, int n);

int next_pow2(int n);

}  // namespace seqnas::kernels
