#include "seqnas/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace seqnas::kernels {

namespace {
Backend g_backend = Backend::OpenMP;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < k; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < m; ++p)
        s += a[static_cast<size_t>(p) * k + i] * b[static_cast<size_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left) {
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) {
      double* yrow = y + (static_cast<size_t>(b) * len + t) * cout;
      for (int co = 0; co < cout; ++co) {
        double s = bias ? bias[co] : 0.0;
        const double* wk = w + static_cast<size_t>(co) * cin * ksize;
        for (int j = 0; j < ksize; ++j) {
          const int src = t + j - pad_left;
          if (src < 0 || src >= len) continue;
          const double* xrow = x + (static_cast<size_t>(b) * len + src) * cin;
          for (int ci = 0; ci < cin; ++ci) s += xrow[ci] * wk[static_cast<size_t>(ci) * ksize + j];
        }
        yrow[co] = s;
      }
    }
  }
}

void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) {
      double* gxrow = gx + (static_cast<size_t>(b) * len + t) * cin;
      for (int ci = 0; ci < cin; ++ci) {
        double s = 0.0;
        // x[b,t,ci] feeds y[b, t - j + pad_left, co] with weight w[co,ci,j]
        for (int j = 0; j < ksize; ++j) {
          const int dst = t - j + pad_left;
          if (dst < 0 || dst >= len) continue;
          const double* gyrow = gy + (static_cast<size_t>(b) * len + dst) * cout;
          for (int co = 0; co < cout; ++co)
            s += gyrow[co] * w[(static_cast<size_t>(co) * cin + ci) * ksize + j];
        }
        gxrow[ci] += s;
      }
    }
  }
}

void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int j = 0; j < ksize; ++j) {
        double s = 0.0;
        for (int b = 0; b < batch; ++b) {
          for (int t = 0; t < len; ++t) {
            const int src = t + j - pad_left;
            if (src < 0 || src >= len) continue;
            s += gy[(static_cast<size_t>(b) * len + t) * cout + co] *
                 x[(static_cast<size_t>(b) * len + src) * cin + ci];
          }
        }
        gw[(static_cast<size_t>(co) * cin + ci) * ksize + j] += s;
      }
    }
    if (gb) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b)
        for (int t = 0; t < len; ++t) s += gy[(static_cast<size_t>(b) * len + t) * cout + co];
      gb[co] += s;
    }
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* xi = x + static_cast<size_t>(i) * cols;
    double* yi = y + static_cast<size_t>(i) * cols;
    double mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < cols; ++j) yi[j] *= inv;
  }
}

void fft(std::complex<double>* a, int n, bool inverse) {
  if (n & (n - 1)) throw std::invalid_argument("fft: length must be a power of two");
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int half = 1; half < n; half <<= 1) {
    const double ang = (inverse ? 1.0 : -1.0) * 3.14159265358979323846 / half;
    const std::complex<double> wstep(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += half << 1) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < half; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
        w *= wstep;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / n;
    for (int i = 0; i < n; ++i) a[i] *= inv;
  }
}

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < k; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < m; ++p)
        s += a[static_cast<size_t>(p) * k + i] * b[static_cast<size_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) {
      double* yrow = y + (static_cast<size_t>(b) * len + t) * cout;
      for (int co = 0; co < cout; ++co) {
        double s = bias ? bias[co] : 0.0;
        const double* wk = w + static_cast<size_t>(co) * cin * ksize;
        for (int j = 0; j < ksize; ++j) {
          const int src = t + j - pad_left;
          if (src < 0 || src >= len) continue;
          const double* xrow = x + (static_cast<size_t>(b) * len + src) * cin;
          for (int ci = 0; ci < cin; ++ci) s += xrow[ci] * wk[static_cast<size_t>(ci) * ksize + j];
        }
        yrow[co] = s;
      }
    }
  }
}

void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) {
      double* gxrow = gx + (static_cast<size_t>(b) * len + t) * cin;
      for (int ci = 0; ci < cin; ++ci) {
        double s = 0.0;
        for (int j = 0; j < ksize; ++j) {
          const int dst = t - j + pad_left;
          if (dst < 0 || dst >= len) continue;
          const double* gyrow = gy + (static_cast<size_t>(b) * len + dst) * cout;
          for (int co = 0; co < cout; ++co)
            s += gyrow[co] * w[(static_cast<size_t>(co) * cin + ci) * ksize + j];
        }
        gxrow[ci] += s;
      }
    }
  }
}

void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < cin; ++ci) {
      for (int j = 0; j < ksize; ++j) {
        double s = 0.0;
        for (int b = 0; b < batch; ++b) {
          for (int t = 0; t < len; ++t) {
            const int src = t + j - pad_left;
            if (src < 0 || src >= len) continue;
            s += gy[(static_cast<size_t>(b) * len + t) * cout + co] *
                 x[(static_cast<size_t>(b) * len + src) * cin + ci];
          }
        }
        gw[(static_cast<size_t>(co) * cin + ci) * ksize + j] += s;
      }
    }
    if (gb) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b)
        for (int t = 0; t < len; ++t) s += gy[(static_cast<size_t>(b) * len + t) * cout + co];
      gb[co] += s;
    }
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i) {
    serial::softmax_rows(x + static_cast<size_t>(i) * cols, y + static_cast<size_t>(i) * cols, 1,
                         cols);
  }
}

}  // namespace omp

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_backend == Backend::OpenMP)
    omp::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_backend == Backend::OpenMP)
    omp::matmul_nt(a, b, c, m, k, n);
  else
    serial::matmul_nt(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (g_backend == Backend::OpenMP)
    omp::matmul_tn(a, b, c, m, k, n);
  else
    serial::matmul_tn(a, b, c, m, k, n);
}

void conv1d(const double* x, const double* w, const double* bias, double* y,
            int batch, int len, int cin, int cout, int ksize, int pad_left) {
  if (g_backend == Backend::OpenMP)
    omp::conv1d(x, w, bias, y, batch, len, cin, cout, ksize, pad_left);
  else
    serial::conv1d(x, w, bias, y, batch, len, cin, cout, ksize, pad_left);
}

void conv1d_grad_x(const double* gy, const double* w, double* gx,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
  if (g_backend == Backend::OpenMP)
    omp::conv1d_grad_x(gy, w, gx, batch, len, cin, cout, ksize, pad_left);
  else
    serial::conv1d_grad_x(gy, w, gx, batch, len, cin, cout, ksize, pad_left);
}

void conv1d_grad_w(const double* gy, const double* x, double* gw, double* gb,
                   int batch, int len, int cin, int cout, int ksize, int pad_left) {
  if (g_backend == Backend::OpenMP)
    omp::conv1d_grad_w(gy, x, gw, gb, batch, len, cin, cout, ksize, pad_left);
  else
    serial::conv1d_grad_w(gy, x, gw, gb, batch, len, cin, cout, ksize, pad_left);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  if (g_backend == Backend::OpenMP)
    omp::softmax_rows(x, y, rows, cols);
  else
    serial::softmax_rows(x, y, rows, cols);
}

void fft(std::complex<double>* a, int n, bool inverse) { serial::fft(a, n, inverse); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

void circular_conv(const double* x, const double* f, double* y, int n) {
  if (n & (n - 1))
    throw std::invalid_argument("circular_conv: circle length must be a power of two");
  std::vector<std::complex<double>> fx(n, 0.0), ff(n, 0.0);
  for (int i = 0; i < n; ++i) fx[i] = x[i];
  for (int i = 0; i < n; ++i) ff[i] = f[i];
  fft(fx.data(), n, false);
  fft(ff.data(), n, false);
  for (int i = 0; i < n; ++i) fx[i] *= ff[i];
  fft(fx.data(), n, true);
  for (int i = 0; i < n; ++i) y[i] = fx[i].real();
}

}  // namespace seqnas::kernels
