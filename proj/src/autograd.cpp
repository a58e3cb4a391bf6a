#include "seqnas/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "seqnas/kernels.hpp"

namespace seqnas {

namespace {

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int64_t rows_of(const Tensor& t) {
  return t.numel() / t.shape.back();
}

}  // namespace

TensorPtr Graph::make_out(std::vector<int> shape, bool req) {
  auto t = Tensor::zeros(std::move(shape));
  t->requires_grad = req;
  return t;
}

void Graph::record(TensorPtr out, std::function<void()> fn) {
  nodes_.push_back(Node{std::move(out), std::move(fn)});
}

void Graph::backward(const TensorPtr& loss) {
  if (loss->numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out->has_grad()) it->backprop();
  }
}

// ---------------------------------------------------------------- elementwise

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
  bool bias = false;
  if (a->shape == b->shape) {
    bias = false;
  } else if (b->ndim() == 1 && a->shape.back() == b->dim(0)) {
    bias = true;
  } else {
    throw std::invalid_argument("add: shape mismatch");
  }
  auto out = make_out(a->shape, needs(a) || needs(b));
  const int64_t n = a->numel();
  const int64_t c = bias ? b->dim(0) : 0;
  if (bias) {
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i % c];
  } else {
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  }
  if (!out->requires_grad) return out;
  record(out, [a, b, out, bias, c, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      if (bias) {
        for (int64_t i = 0; i < n; ++i) b->grad[i % c] += out->grad[i];
      } else {
        for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
      }
    }
  });
  return out;
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
  bool bcast = false;
  if (a->shape == b->shape) {
    bcast = false;
  } else if (b->ndim() == 1 && a->shape.back() == b->dim(0)) {
    bcast = true;
  } else {
    throw std::invalid_argument("mul: shape mismatch");
  }
  auto out = make_out(a->shape, needs(a) || needs(b));
  const int64_t n = a->numel();
  const int64_t c = bcast ? b->dim(0) : 0;
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[bcast ? i % c : i];
  if (!out->requires_grad) return out;
  record(out, [a, b, out, bcast, c, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[bcast ? i % c : i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[bcast ? i % c : i] += out->grad[i] * a->data[i];
    }
  });
  return out;
}

TensorPtr Graph::affine(const TensorPtr& x, double scale, double shift) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = x->data[i] * scale + shift;
  if (!out->requires_grad) return out;
  record(out, [x, out, scale, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * scale;
  });
  return out;
}

TensorPtr Graph::relu(const TensorPtr& x) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr Graph::sigmoid(const TensorPtr& x) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      double s = out->data[i];
      x->grad[i] += out->grad[i] * s * (1.0 - s);
    }
  });
  return out;
}

TensorPtr Graph::tanh_(const TensorPtr& x) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = std::tanh(x->data[i]);
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      x->grad[i] += out->grad[i] * (1.0 - out->data[i] * out->data[i]);
  });
  return out;
}

TensorPtr Graph::softplus(const TensorPtr& x) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) {
    double v = x->data[i];
    out->data[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  }
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      x->grad[i] += out->grad[i] / (1.0 + std::exp(-x->data[i]));
  });
  return out;
}

TensorPtr Graph::exp_(const TensorPtr& x) {
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = std::exp(x->data[i]);
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * out->data[i];
  });
  return out;
}

TensorPtr Graph::dropout(const TensorPtr& x, double rate, Rng& rng, bool train) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) return x;
  auto out = make_out(x->shape, needs(x));
  const int64_t n = x->numel();
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out->data[i] = x->data[i] * m;
  }
  if (!out->requires_grad) return out;
  record(out, [x, out, mask, n] {
    x->ensure_grad();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * (*mask)[i];
  });
  return out;
}

// ------------------------------------------------------------- linear algebra

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
  check(a->ndim() == 2 && b->ndim() == 2 && a->dim(1) == b->dim(0),
        "matmul: expected (M,K) x (K,N)");
  const int m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = make_out({m, n}, needs(a) || needs(b));
  kernels::matmul(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (!out->requires_grad) return out;
  record(out, [a, b, out, m, k, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      std::vector<double> ga(static_cast<size_t>(m) * k);
      kernels::matmul_nt(out->grad.data(), b->data.data(), ga.data(), m, n, k);
      for (size_t i = 0; i < ga.size(); ++i) a->grad[i] += ga[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      std::vector<double> gb(static_cast<size_t>(k) * n);
      kernels::matmul_tn(a->data.data(), out->grad.data(), gb.data(), m, k, n);
      for (size_t i = 0; i < gb.size(); ++i) b->grad[i] += gb[i];
    }
  });
  return out;
}

TensorPtr Graph::matmul_nt(const TensorPtr& a, const TensorPtr& b) {
  check(a->ndim() == 2 && b->ndim() == 2 && a->dim(1) == b->dim(1),
        "matmul_nt: expected (M,K) x (N,K)");
  const int m = a->dim(0), k = a->dim(1), n = b->dim(0);
  auto out = make_out({m, n}, needs(a) || needs(b));
  kernels::matmul_nt(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (!out->requires_grad) return out;
  record(out, [a, b, out, m, k, n] {
    if (a->requires_grad) {
      a->ensure_grad();
      std::vector<double> ga(static_cast<size_t>(m) * k);
      kernels::matmul(out->grad.data(), b->data.data(), ga.data(), m, n, k);
      for (size_t i = 0; i < ga.size(); ++i) a->grad[i] += ga[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      std::vector<double> gb(static_cast<size_t>(n) * k);
      kernels::matmul_tn(out->grad.data(), a->data.data(), gb.data(), m, n, k);
      for (size_t i = 0; i < gb.size(); ++i) b->grad[i] += gb[i];
    }
  });
  return out;
}

TensorPtr Graph::linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  check(x->ndim() >= 1 && w->ndim() == 2 && x->shape.back() == w->dim(0),
        "linear: expected x(...,K) and w(K,N)");
  const int k = w->dim(0), n = w->dim(1);
  const int64_t r = rows_of(*x);
  if (b) check(b->ndim() == 1 && b->dim(0) == n, "linear: bias shape mismatch");
  std::vector<int> oshape = x->shape;
  oshape.back() = n;
  auto out = make_out(std::move(oshape), needs(x) || needs(w) || (b && needs(b)));
  kernels::matmul(x->data.data(), w->data.data(), out->data.data(), static_cast<int>(r), k, n);
  if (b) {
    for (int64_t i = 0; i < r; ++i)
      for (int j = 0; j < n; ++j) out->data[i * n + j] += b->data[j];
  }
  if (!out->requires_grad) return out;
  record(out, [x, w, b, out, r, k, n] {
    if (x->requires_grad) {
      x->ensure_grad();
      std::vector<double> gx(static_cast<size_t>(r) * k);
      kernels::matmul_nt(out->grad.data(), w->data.data(), gx.data(), static_cast<int>(r), n, k);
      for (size_t i = 0; i < gx.size(); ++i) x->grad[i] += gx[i];
    }
    if (w->requires_grad) {
      w->ensure_grad();
      std::vector<double> gw(static_cast<size_t>(k) * n);
      kernels::matmul_tn(x->data.data(), out->grad.data(), gw.data(), static_cast<int>(r), k, n);
      for (size_t i = 0; i < gw.size(); ++i) w->grad[i] += gw[i];
    }
    if (b && b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < n; ++j) b->grad[j] += out->grad[i * n + j];
    }
  });
  return out;
}

TensorPtr Graph::bmm(const TensorPtr& a, const TensorPtr& b, bool transpose_b) {
  check(a->ndim() == 3 && b->ndim() == 3 && a->dim(0) == b->dim(0), "bmm: expected 3D inputs");
  const int bs = a->dim(0), m = a->dim(1), k = a->dim(2);
  const int n = transpose_b ? b->dim(1) : b->dim(2);
  check(transpose_b ? b->dim(2) == k : b->dim(1) == k, "bmm: inner dims mismatch");
  auto out = make_out({bs, m, n}, needs(a) || needs(b));
  const int64_t sa = static_cast<int64_t>(m) * k, sb = static_cast<int64_t>(b->dim(1)) * b->dim(2),
                so = static_cast<int64_t>(m) * n;
  for (int i = 0; i < bs; ++i) {
    const double* ai = a->data.data() + i * sa;
    const double* bi = b->data.data() + i * sb;
    double* oi = out->data.data() + i * so;
    if (transpose_b)
      kernels::matmul_nt(ai, bi, oi, m, k, n);
    else
      kernels::matmul(ai, bi, oi, m, k, n);
  }
  if (!out->requires_grad) return out;
  record(out, [a, b, out, transpose_b, bs, m, k, n, sa, sb, so] {
    for (int i = 0; i < bs; ++i) {
      const double* gyi = out->grad.data() + i * so;
      const double* ai = a->data.data() + i * sa;
      const double* bi = b->data.data() + i * sb;
      if (a->requires_grad) {
        a->ensure_grad();
        std::vector<double> ga(static_cast<size_t>(sa));
        if (transpose_b)
          kernels::matmul(gyi, bi, ga.data(), m, n, k);
        else
          kernels::matmul_nt(gyi, bi, ga.data(), m, n, k);
        double* dst = a->grad.data() + i * sa;
        for (int64_t j = 0; j < sa; ++j) dst[j] += ga[j];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        std::vector<double> gb(static_cast<size_t>(sb));
        if (transpose_b)
          kernels::matmul_tn(gyi, ai, gb.data(), m, n, k);
        else
          kernels::matmul_tn(ai, gyi, gb.data(), m, k, n);
        double* dst = b->grad.data() + i * sb;
        for (int64_t j = 0; j < sb; ++j) dst[j] += gb[j];
      }
    }
  });
  return out;
}

// -------------------------------------------------------------- shape plumbing

TensorPtr Graph::slice_time(const TensorPtr& x, int t) {
  check(x->ndim() == 3, "slice_time: expected (B,L,D)");
  const int bsz = x->dim(0), len = x->dim(1), d = x->dim(2);
  check(t >= 0 && t < len, "slice_time: index out of range");
  auto out = make_out({bsz, d}, needs(x));
  for (int i = 0; i < bsz; ++i)
    std::copy_n(x->data.data() + (static_cast<int64_t>(i) * len + t) * d, d,
                out->data.data() + static_cast<int64_t>(i) * d);
  if (!out->requires_grad) return out;
  record(out, [x, out, bsz, len, d, t] {
    x->ensure_grad();
    for (int i = 0; i < bsz; ++i) {
      double* dst = x->grad.data() + (static_cast<int64_t>(i) * len + t) * d;
      const double* src = out->grad.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

TensorPtr Graph::stack_time(const std::vector<TensorPtr>& steps) {
  check(!steps.empty(), "stack_time: empty input");
  const int bsz = steps[0]->dim(0), d = steps[0]->dim(1);
  const int len = static_cast<int>(steps.size());
  bool req = false;
  for (const auto& s : steps) {
    check(s->ndim() == 2 && s->dim(0) == bsz && s->dim(1) == d, "stack_time: shape mismatch");
    req = req || needs(s);
  }
  auto out = make_out({bsz, len, d}, req);
  for (int t = 0; t < len; ++t)
    for (int i = 0; i < bsz; ++i)
      std::copy_n(steps[static_cast<size_t>(t)]->data.data() + static_cast<int64_t>(i) * d, d,
                  out->data.data() + (static_cast<int64_t>(i) * len + t) * d);
  if (!out->requires_grad) return out;
  record(out, [steps, out, bsz, len, d] {
    for (int t = 0; t < len; ++t) {
      const auto& s = steps[static_cast<size_t>(t)];
      if (!s->requires_grad) continue;
      s->ensure_grad();
      for (int i = 0; i < bsz; ++i) {
        double* dst = s->grad.data() + static_cast<int64_t>(i) * d;
        const double* src = out->grad.data() + (static_cast<int64_t>(i) * len + t) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

TensorPtr Graph::concat_lastdim(const TensorPtr& a, const TensorPtr& b) {
  check(a->ndim() == b->ndim() && a->ndim() >= 1, "concat_lastdim: rank mismatch");
  for (int i = 0; i + 1 < a->ndim(); ++i)
    check(a->dim(i) == b->dim(i), "concat_lastdim: leading dims mismatch");
  const int da = a->shape.back(), db = b->shape.back();
  const int64_t r = rows_of(*a);
  std::vector<int> oshape = a->shape;
  oshape.back() = da + db;
  auto out = make_out(std::move(oshape), needs(a) || needs(b));
  for (int64_t i = 0; i < r; ++i) {
    std::copy_n(a->data.data() + i * da, da, out->data.data() + i * (da + db));
    std::copy_n(b->data.data() + i * db, db, out->data.data() + i * (da + db) + da);
  }
  if (!out->requires_grad) return out;
  record(out, [a, b, out, r, da, db] {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < da; ++j) a->grad[i * da + j] += out->grad[i * (da + db) + j];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < db; ++j) b->grad[i * db + j] += out->grad[i * (da + db) + da + j];
    }
  });
  return out;
}

TensorPtr Graph::split_heads(const TensorPtr& x, int heads) {
  check(x->ndim() == 3 && heads > 0 && x->dim(2) % heads == 0,
        "split_heads: dim not divisible by head count");
  const int bsz = x->dim(0), len = x->dim(1), d = x->dim(2), hd = d / heads;
  auto out = make_out({bsz * heads, len, hd}, needs(x));
  for (int b = 0; b < bsz; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < len; ++l)
        std::copy_n(x->data.data() + (static_cast<int64_t>(b) * len + l) * d + h * hd, hd,
                    out->data.data() +
                        (static_cast<int64_t>(b * heads + h) * len + l) * hd);
  if (!out->requires_grad) return out;
  record(out, [x, out, bsz, heads, len, d, hd] {
    x->ensure_grad();
    for (int b = 0; b < bsz; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < len; ++l) {
          double* dst = x->grad.data() + (static_cast<int64_t>(b) * len + l) * d + h * hd;
          const double* src =
              out->grad.data() + (static_cast<int64_t>(b * heads + h) * len + l) * hd;
          for (int j = 0; j < hd; ++j) dst[j] += src[j];
        }
  });
  return out;
}

TensorPtr Graph::merge_heads(const TensorPtr& x, int heads) {
  check(x->ndim() == 3 && heads > 0 && x->dim(0) % heads == 0,
        "merge_heads: batch not divisible by head count");
  const int bsz = x->dim(0) / heads, len = x->dim(1), hd = x->dim(2), d = hd * heads;
  auto out = make_out({bsz, len, d}, needs(x));
  for (int b = 0; b < bsz; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < len; ++l)
        std::copy_n(x->data.data() + (static_cast<int64_t>(b * heads + h) * len + l) * hd, hd,
                    out->data.data() + (static_cast<int64_t>(b) * len + l) * d + h * hd);
  if (!out->requires_grad) return out;
  record(out, [x, out, bsz, heads, len, d, hd] {
    x->ensure_grad();
    for (int b = 0; b < bsz; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < len; ++l) {
          double* dst = x->grad.data() + (static_cast<int64_t>(b * heads + h) * len + l) * hd;
          const double* src = out->grad.data() + (static_cast<int64_t>(b) * len + l) * d + h * hd;
          for (int j = 0; j < hd; ++j) dst[j] += src[j];
        }
  });
  return out;
}

TensorPtr Graph::gather_rows(const TensorPtr& x, std::vector<int> rows) {
  check(x->ndim() == 2, "gather_rows: expected (N,D)");
  const int n = x->dim(0), d = x->dim(1);
  for (int r : rows) check(r >= 0 && r < n, "gather_rows: row index out of range");
  const int m = static_cast<int>(rows.size());
  check(m > 0, "gather_rows: empty index list");
  auto out = make_out({m, d}, needs(x));
  for (int i = 0; i < m; ++i)
    std::copy_n(x->data.data() + static_cast<int64_t>(rows[static_cast<size_t>(i)]) * d, d,
                out->data.data() + static_cast<int64_t>(i) * d);
  if (!out->requires_grad) return out;
  record(out, [x, out, rows = std::move(rows), m, d] {
    x->ensure_grad();
    for (int i = 0; i < m; ++i) {
      double* dst = x->grad.data() + static_cast<int64_t>(rows[static_cast<size_t>(i)]) * d;
      const double* src = out->grad.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

TensorPtr Graph::reshape(const TensorPtr& x, std::vector<int> shape) {
  int64_t numel = 1;
  for (int d : shape) {
    check(d > 0, "reshape: dimensions must be positive");
    numel *= d;
  }
  check(numel == x->numel(), "reshape: element count mismatch");
  auto out = make_out(shape, needs(x));
  out->data = x->data;
  if (!out->requires_grad) return out;
  record(out, [x, out] {
    x->ensure_grad();
    for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += out->grad[i];
  });
  return out;
}

// --------------------------------------------------- normalization, reductions

TensorPtr Graph::softmax(const TensorPtr& x, int axis) {
  check(axis == -1 || axis == x->ndim() - 1, "softmax: only the last axis is supported");
  const int c = x->shape.back();
  const int64_t r = rows_of(*x);
  auto out = make_out(x->shape, needs(x));
  kernels::softmax_rows(x->data.data(), out->data.data(), static_cast<int>(r), c);
  if (!out->requires_grad) return out;
  record(out, [x, out, r, c] {
    x->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      const double* y = out->data.data() + i * c;
      const double* gy = out->grad.data() + i * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += y[j] * gy[j];
      double* gx = x->grad.data() + i * c;
      for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
  return out;
}

TensorPtr Graph::layernorm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps) {
  const int d = x->shape.back();
  check(gamma->ndim() == 1 && gamma->dim(0) == d && beta->ndim() == 1 && beta->dim(0) == d,
        "layernorm: parameter shape mismatch");
  const int64_t r = rows_of(*x);
  auto out = make_out(x->shape, needs(x) || needs(gamma) || needs(beta));
  auto xhat = std::make_shared<std::vector<double>>(x->data.size());
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    const double* xi = x->data.data() + i * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<size_t>(i)] = is;
    double* hi = xhat->data() + i * d;
    double* oi = out->data.data() + i * d;
    for (int j = 0; j < d; ++j) {
      hi[j] = (xi[j] - mu) * is;
      oi[j] = gamma->data[j] * hi[j] + beta->data[j];
    }
  }
  if (!out->requires_grad) return out;
  record(out, [x, gamma, beta, out, xhat, inv, r, d] {
    for (int64_t i = 0; i < r; ++i) {
      const double* gy = out->grad.data() + i * d;
      const double* hi = xhat->data() + i * d;
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        for (int j = 0; j < d; ++j) gamma->grad[j] += gy[j] * hi[j];
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        for (int j = 0; j < d; ++j) beta->grad[j] += gy[j];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double sum_g = 0.0, sum_gh = 0.0;
        for (int j = 0; j < d; ++j) {
          double g = gy[j] * gamma->data[j];
          sum_g += g;
          sum_gh += g * hi[j];
        }
        const double is = (*inv)[static_cast<size_t>(i)];
        double* gx = x->grad.data() + i * d;
        for (int j = 0; j < d; ++j) {
          double g = gy[j] * gamma->data[j];
          gx[j] += is * (g - sum_g / d - hi[j] * sum_gh / d);
        }
      }
    }
  });
  return out;
}

TensorPtr Graph::batchnorm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                             const TensorPtr& running_mean, const TensorPtr& running_var,
                             bool train, double momentum, double eps) {
  const int c = x->shape.back();
  check(gamma->dim(0) == c && beta->dim(0) == c && running_mean->dim(0) == c &&
            running_var->dim(0) == c,
        "batchnorm1d: parameter shape mismatch");
  const int64_t r = rows_of(*x);
  auto out = make_out(x->shape, needs(x) || needs(gamma) || needs(beta));
  auto xhat = std::make_shared<std::vector<double>>(x->data.size());
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  std::vector<double> mu(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  if (train) {
    for (int64_t i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) mu[static_cast<size_t>(j)] += x->data[i * c + j];
    for (int j = 0; j < c; ++j) mu[static_cast<size_t>(j)] /= static_cast<double>(r);
    for (int64_t i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        double dv = x->data[i * c + j] - mu[static_cast<size_t>(j)];
        var[static_cast<size_t>(j)] += dv * dv;
      }
    for (int j = 0; j < c; ++j) var[static_cast<size_t>(j)] /= static_cast<double>(r);
    const double unbias = r > 1 ? static_cast<double>(r) / static_cast<double>(r - 1) : 1.0;
    for (int j = 0; j < c; ++j) {
      running_mean->data[j] =
          (1.0 - momentum) * running_mean->data[j] + momentum * mu[static_cast<size_t>(j)];
      running_var->data[j] = (1.0 - momentum) * running_var->data[j] +
                             momentum * var[static_cast<size_t>(j)] * unbias;
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mu[static_cast<size_t>(j)] = running_mean->data[j];
      var[static_cast<size_t>(j)] = running_var->data[j];
    }
  }
  for (int j = 0; j < c; ++j)
    (*inv)[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + eps);
  for (int64_t i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      double h = (x->data[i * c + j] - mu[static_cast<size_t>(j)]) * (*inv)[static_cast<size_t>(j)];
      (*xhat)[static_cast<size_t>(i * c + j)] = h;
      out->data[i * c + j] = gamma->data[j] * h + beta->data[j];
    }
  if (!out->requires_grad) return out;
  record(out, [x, gamma, beta, out, xhat, inv, r, c, train] {
    std::vector<double> sum_g(static_cast<size_t>(c), 0.0), sum_gh(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        double gy = out->grad[i * c + j];
        sum_g[static_cast<size_t>(j)] += gy;
        sum_gh[static_cast<size_t>(j)] += gy * (*xhat)[static_cast<size_t>(i * c + j)];
      }
    if (gamma->requires_grad) {
      gamma->ensure_grad();
      for (int j = 0; j < c; ++j) gamma->grad[j] += sum_gh[static_cast<size_t>(j)];
    }
    if (beta->requires_grad) {
      beta->ensure_grad();
      for (int j = 0; j < c; ++j) beta->grad[j] += sum_g[static_cast<size_t>(j)];
    }
    if (x->requires_grad) {
      x->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const size_t js = static_cast<size_t>(j);
          double gy = out->grad[i * c + j];
          double gi = gamma->data[j] * (*inv)[js];
          if (train) {
            x->grad[i * c + j] +=
                gi * (gy - sum_g[js] / static_cast<double>(r) -
                      (*xhat)[static_cast<size_t>(i * c + j)] * sum_gh[js] / static_cast<double>(r));
          } else {
            x->grad[i * c + j] += gi * gy;
          }
        }
    }
  });
  return out;
}

TensorPtr Graph::mean_pool(const TensorPtr& x, int axis) {
  if (x->ndim() == 3 && axis == 1) {
    const int bsz = x->dim(0), len = x->dim(1), d = x->dim(2);
    auto out = make_out({bsz, d}, needs(x));
    for (int b = 0; b < bsz; ++b)
      for (int l = 0; l < len; ++l)
        for (int j = 0; j < d; ++j)
          out->data[static_cast<int64_t>(b) * d + j] +=
              x->data[(static_cast<int64_t>(b) * len + l) * d + j] / len;
    if (!out->requires_grad) return out;
    record(out, [x, out, bsz, len, d] {
      x->ensure_grad();
      for (int b = 0; b < bsz; ++b)
        for (int l = 0; l < len; ++l)
          for (int j = 0; j < d; ++j)
            x->grad[(static_cast<int64_t>(b) * len + l) * d + j] +=
                out->grad[static_cast<int64_t>(b) * d + j] / len;
    });
    return out;
  }
  if (x->ndim() == 2 && axis == 0) {
    const int n = x->dim(0), d = x->dim(1);
    auto out = make_out({1, d}, needs(x));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) out->data[j] += x->data[static_cast<int64_t>(i) * d + j] / n;
    if (!out->requires_grad) return out;
    record(out, [x, out, n, d] {
      x->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x->grad[static_cast<int64_t>(i) * d + j] += out->grad[j] / n;
    });
    return out;
  }
  throw std::invalid_argument("mean_pool: unsupported rank/axis combination");
}

TensorPtr Graph::mean_scalar(const TensorPtr& x) {
  const int64_t n = x->numel();
  auto out = make_out({1}, needs(x));
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x->data[i];
  out->data[0] = s / static_cast<double>(n);
  if (!out->requires_grad) return out;
  record(out, [x, out, n] {
    x->ensure_grad();
    const double g = out->grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
  });
  return out;
}

TensorPtr Graph::l2_normalize_rows(const TensorPtr& x) {
  check(x->ndim() == 2, "l2_normalize_rows: expected (N,D)");
  const int n = x->dim(0), d = x->dim(1);
  auto out = make_out(x->shape, needs(x));
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* xi = x->data.data() + static_cast<int64_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += xi[j] * xi[j];
    double nm = std::max(std::sqrt(s), 1e-12);
    (*norms)[static_cast<size_t>(i)] = nm;
    double* oi = out->data.data() + static_cast<int64_t>(i) * d;
    for (int j = 0; j < d; ++j) oi[j] = xi[j] / nm;
  }
  if (!out->requires_grad) return out;
  record(out, [x, out, norms, n, d] {
    x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* y = out->data.data() + static_cast<int64_t>(i) * d;
      const double* gy = out->grad.data() + static_cast<int64_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += y[j] * gy[j];
      const double nm = (*norms)[static_cast<size_t>(i)];
      double* gx = x->grad.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) gx[j] += (gy[j] - y[j] * dot) / nm;
    }
  });
  return out;
}

TensorPtr Graph::cosine_similarity(const TensorPtr& a, const TensorPtr& b) {
  check(a->ndim() == 2 && a->shape == b->shape, "cosine_similarity: expected equal (N,D)");
  const int n = a->dim(0), d = a->dim(1);
  auto out = make_out({n}, needs(a) || needs(b));
  auto na = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  auto nb = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* ai = a->data.data() + static_cast<int64_t>(i) * d;
    const double* bi = b->data.data() + static_cast<int64_t>(i) * d;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int j = 0; j < d; ++j) {
      sab += ai[j] * bi[j];
      saa += ai[j] * ai[j];
      sbb += bi[j] * bi[j];
    }
    (*na)[static_cast<size_t>(i)] = std::max(std::sqrt(saa), 1e-12);
    (*nb)[static_cast<size_t>(i)] = std::max(std::sqrt(sbb), 1e-12);
    out->data[i] = sab / ((*na)[static_cast<size_t>(i)] * (*nb)[static_cast<size_t>(i)]);
  }
  if (!out->requires_grad) return out;
  record(out, [a, b, out, na, nb, n, d] {
    for (int i = 0; i < n; ++i) {
      const double g = out->grad[i];
      if (g == 0.0) continue;
      const double* ai = a->data.data() + static_cast<int64_t>(i) * d;
      const double* bi = b->data.data() + static_cast<int64_t>(i) * d;
      const double c = out->data[i];
      const double nai = (*na)[static_cast<size_t>(i)], nbi = (*nb)[static_cast<size_t>(i)];
      if (a->requires_grad) {
        a->ensure_grad();
        double* ga = a->grad.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) ga[j] += g * (bi[j] / (nai * nbi) - c * ai[j] / (nai * nai));
      }
      if (b->requires_grad) {
        b->ensure_grad();
        double* gb = b->grad.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < d; ++j) gb[j] += g * (ai[j] / (nai * nbi) - c * bi[j] / (nbi * nbi));
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- sequence ops

TensorPtr Graph::conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int pad_left) {
  check(x->ndim() == 3 && w->ndim() == 3 && x->dim(2) == w->dim(1),
        "conv1d: expected x(B,L,Cin) and w(Cout,Cin,K)");
  const int bsz = x->dim(0), len = x->dim(1), cin = x->dim(2);
  const int cout = w->dim(0), ksize = w->dim(2);
  check(b->ndim() == 1 && b->dim(0) == cout, "conv1d: bias shape mismatch");
  auto out = make_out({bsz, len, cout}, needs(x) || needs(w) || needs(b));
  kernels::conv1d(x->data.data(), w->data.data(), b->data.data(), out->data.data(), bsz, len, cin,
                  cout, ksize, pad_left);
  if (!out->requires_grad) return out;
  record(out, [x, w, b, out, bsz, len, cin, cout, ksize, pad_left] {
    if (x->requires_grad) {
      x->ensure_grad();
      kernels::conv1d_grad_x(out->grad.data(), w->data.data(), x->grad.data(), bsz, len, cin, cout,
                             ksize, pad_left);
    }
    if (w->requires_grad || b->requires_grad) {
      w->ensure_grad();
      b->ensure_grad();
      kernels::conv1d_grad_w(out->grad.data(), x->data.data(), w->grad.data(), b->grad.data(), bsz,
                             len, cin, cout, ksize, pad_left);
    }
  });
  return out;
}

TensorPtr Graph::embedding(const std::vector<int>& ids, int batch, int len,
                           const TensorPtr& table) {
  check(table->ndim() == 2, "embedding: table must be (V,D)");
  check(static_cast<int64_t>(ids.size()) == static_cast<int64_t>(batch) * len,
        "embedding: id count does not match batch*len");
  const int v = table->dim(0), d = table->dim(1);
  for (int id : ids)
    if (id < 0 || id >= v) throw std::out_of_range("embedding: token id out of range");
  auto out = make_out({batch, len, d}, needs(table));
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table->data.data() + static_cast<int64_t>(ids[i]) * d, d,
                out->data.data() + static_cast<int64_t>(i) * d);
  if (!out->requires_grad) return out;
  record(out, [table, out, ids, d] {
    table->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = table->grad.data() + static_cast<int64_t>(ids[i]) * d;
      const double* src = out->grad.data() + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

TensorPtr Graph::add_causal_mask(const TensorPtr& scores) {
  check(scores->ndim() == 3 && scores->dim(1) == scores->dim(2),
        "add_causal_mask: expected (R,L,L)");
  const int r = scores->dim(0), len = scores->dim(1);
  auto out = make_out(scores->shape, needs(scores));
  for (int i = 0; i < r; ++i)
    for (int q = 0; q < len; ++q)
      for (int k = 0; k < len; ++k) {
        const int64_t idx = (static_cast<int64_t>(i) * len + q) * len + k;
        out->data[idx] = scores->data[idx] + (k > q ? -1e30 : 0.0);
      }
  if (!out->requires_grad) return out;
  record(out, [scores, out] {
    scores->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) scores->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr Graph::fft_circular_conv(const TensorPtr& x, const TensorPtr& filter, bool causal) {
  check(x->ndim() == 3 && filter->ndim() == 2 && x->dim(2) == filter->dim(1),
        "fft_circular_conv: expected x(B,L,D) and filter(Lf,D)");
  const int bsz = x->dim(0), len = x->dim(1), d = x->dim(2), lf = filter->dim(0);
  const int n = kernels::next_pow2(len + lf);
  const int center = causal ? 0 : lf / 2;
  auto out = make_out(x->shape, needs(x) || needs(filter));
  std::vector<double> xx(static_cast<size_t>(n)), ff(static_cast<size_t>(n)),
      cv(static_cast<size_t>(n));
  for (int b = 0; b < bsz; ++b)
    for (int j = 0; j < d; ++j) {
      std::fill(xx.begin(), xx.end(), 0.0);
      std::fill(ff.begin(), ff.end(), 0.0);
      for (int t = 0; t < len; ++t) xx[static_cast<size_t>(t)] = x->data[(static_cast<int64_t>(b) * len + t) * d + j];
      for (int s = 0; s < lf; ++s) ff[static_cast<size_t>(s)] = filter->data[static_cast<int64_t>(s) * d + j];
      kernels::circular_conv(xx.data(), ff.data(), cv.data(), n);
      for (int t = 0; t < len; ++t)
        out->data[(static_cast<int64_t>(b) * len + t) * d + j] = cv[static_cast<size_t>(t + center)];
    }
  if (!out->requires_grad) return out;
  record(out, [x, filter, out, bsz, len, d, lf, n, center] {
    std::vector<double> u(static_cast<size_t>(n)), v(static_cast<size_t>(n)),
        cv(static_cast<size_t>(n));
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < d; ++j) {
        if (x->requires_grad) {
          x->ensure_grad();
          std::fill(u.begin(), u.end(), 0.0);
          std::fill(v.begin(), v.end(), 0.0);
          for (int t = 0; t < len; ++t)
            u[static_cast<size_t>(t)] = out->grad[(static_cast<int64_t>(b) * len + t) * d + j];
          for (int s = 0; s < lf; ++s)
            v[static_cast<size_t>(s)] = filter->data[static_cast<int64_t>(lf - 1 - s) * d + j];
          kernels::circular_conv(u.data(), v.data(), cv.data(), n);
          for (int t = 0; t < len; ++t)
            x->grad[(static_cast<int64_t>(b) * len + t) * d + j] +=
                cv[static_cast<size_t>(t + lf - 1 - center)];
        }
        if (filter->requires_grad) {
          filter->ensure_grad();
          std::fill(u.begin(), u.end(), 0.0);
          std::fill(v.begin(), v.end(), 0.0);
          for (int t = 0; t < len; ++t)
            u[static_cast<size_t>(t)] = x->data[(static_cast<int64_t>(b) * len + t) * d + j];
          for (int t = 0; t < len; ++t)
            v[static_cast<size_t>(t)] = out->grad[(static_cast<int64_t>(b) * len + len - 1 - t) * d + j];
          kernels::circular_conv(u.data(), v.data(), cv.data(), n);
          for (int s = 0; s < lf; ++s) {
            const int idx = len - 1 + center - s;
            if (idx >= 0) filter->grad[static_cast<int64_t>(s) * d + j] += cv[static_cast<size_t>(idx)];
          }
        }
      }
  });
  return out;
}

// --------------------------------------------------------------------- losses

TensorPtr Graph::cross_entropy(const TensorPtr& logits, const std::vector<int>& targets) {
  check(logits->ndim() == 2, "cross_entropy: expected (N,V) logits");
  const int n = logits->dim(0), v = logits->dim(1);
  check(static_cast<int>(targets.size()) == n, "cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= v) throw std::out_of_range("cross_entropy: target out of range");
  auto out = make_out({1}, needs(logits));
  auto probs = std::make_shared<std::vector<double>>(logits->data.size());
  kernels::softmax_rows(logits->data.data(), probs->data(), n, v);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double p = (*probs)[static_cast<size_t>(i) * v + targets[static_cast<size_t>(i)]];
    loss -= std::log(std::max(p, 1e-300));
  }
  out->data[0] = loss / n;
  if (!out->requires_grad) return out;
  record(out, [logits, out, probs, targets, n, v] {
    logits->ensure_grad();
    const double g = out->grad[0] / n;
    for (int i = 0; i < n; ++i) {
      double* gl = logits->grad.data() + static_cast<int64_t>(i) * v;
      const double* p = probs->data() + static_cast<int64_t>(i) * v;
      for (int j = 0; j < v; ++j) gl[j] += g * p[j];
      gl[targets[static_cast<size_t>(i)]] -= g;
    }
  });
  return out;
}

TensorPtr Graph::mse_loss(const TensorPtr& pred, const std::vector<double>& targets) {
  const int64_t n = pred->numel();
  check(static_cast<int64_t>(targets.size()) == n, "mse_loss: target count mismatch");
  auto out = make_out({1}, needs(pred));
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double dlt = pred->data[i] - targets[static_cast<size_t>(i)];
    s += dlt * dlt;
  }
  out->data[0] = s / static_cast<double>(n);
  if (!out->requires_grad) return out;
  record(out, [pred, out, targets, n] {
    pred->ensure_grad();
    const double g = out->grad[0] * 2.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      pred->grad[i] += g * (pred->data[i] - targets[static_cast<size_t>(i)]);
  });
  return out;
}

}  // namespace seqnas
