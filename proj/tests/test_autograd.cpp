#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "seqnas/autograd.hpp"
#include "seqnas/tensor.hpp"
#include "seqnas/util.hpp"

using namespace seqnas;

namespace {

TensorPtr randt(std::vector<int> shape, uint64_t seed, bool req = true, double lo = -1.0,
                double hi = 1.0) {
  auto t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  t->requires_grad = req;
  return t;
}

// fixed random weights turn any tensor into a scalar with nontrivial
// upstream gradients everywhere
TensorPtr weigh(Graph& g, const TensorPtr& out, uint64_t seed) {
  auto w = randt(out->shape, seed, false);
  return g.mean_scalar(g.mul(out, w));
}

}  // namespace

TEST_CASE("square function gradient at x=3 is 6") {
  auto x = Tensor::scalar(3.0);
  x->requires_grad = true;
  Graph g;
  auto y = g.mul(x, x);
  g.backward(y);
  CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("tensors without requires_grad stay grad-free") {
  auto x = Tensor::scalar(3.0);
  auto w = Tensor::scalar(2.0);
  w->requires_grad = true;
  Graph g;
  auto y = g.mul(x, w);
  g.backward(y);
  CHECK_FALSE(x->has_grad());
  CHECK(w->has_grad());
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = randt({3}, 1);
  Graph g;
  auto y = g.relu(x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("shape mismatches name the op") {
  auto a = randt({2, 3}, 2);
  auto b = randt({3, 2}, 3);
  Graph g;
  CHECK_THROWS_WITH_AS(g.add(a, b), "add: shape mismatch", std::invalid_argument);
}

TEST_CASE("softmax of [0,0] is [0.5,0.5]") {
  auto x = Tensor::from_data({1, 2}, {0.0, 0.0});
  Graph g;
  auto y = g.softmax(x);
  CHECK(y->data[0] == 0.5);
  CHECK(y->data[1] == 0.5);
}

TEST_CASE("cross_entropy of uniform logits is ln(V)") {
  const int v = 7;
  auto logits = Tensor::full({3, v}, 0.4);
  Graph g;
  auto loss = g.cross_entropy(logits, {0, 3, 6});
  CHECK(loss->item() == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
}

TEST_CASE("grad: add, both forms") {
  auto a = randt({2, 3}, 10);
  auto b = randt({2, 3}, 11);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.add(a, b), 12); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto bias = randt({3}, 13);
  res = gradcheck([&](Graph& g) { return weigh(g, g.add(a, bias), 14); }, {a, bias});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: mul, both forms") {
  auto a = randt({2, 4}, 20);
  auto b = randt({2, 4}, 21);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.mul(a, b), 22); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto s = randt({4}, 23);
  res = gradcheck([&](Graph& g) { return weigh(g, g.mul(a, s), 24); }, {a, s});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: affine") {
  auto x = randt({3, 2}, 30);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.affine(x, -1.7, 0.3), 31); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: elementwise nonlinearities") {
  auto x = randt({3, 4}, 40);
  for (auto& v : x->data) v += v > 0 ? 0.2 : -0.2;  // keep clear of the relu kink
  auto relu_res = gradcheck([&](Graph& g) { return weigh(g, g.relu(x), 41); }, {x});
  CHECK_MESSAGE(relu_res.max_rel < 1e-3, relu_res.where);

  auto y = randt({3, 4}, 42);
  for (const char* which : {"sigmoid", "tanh", "softplus", "exp"}) {
    auto res = gradcheck(
        [&](Graph& g) {
          TensorPtr o;
          if (which[0] == 's' && which[1] == 'i') o = g.sigmoid(y);
          else if (which[0] == 't') o = g.tanh_(y);
          else if (which[0] == 's') o = g.softplus(y);
          else o = g.exp_(y);
          return weigh(g, o, 43);
        },
        {y});
    CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
  }
}

TEST_CASE("grad: dropout with a fixed seed") {
  auto x = randt({4, 5}, 50);
  auto res = gradcheck(
      [&](Graph& g) {
        Rng rng(99);
        return weigh(g, g.dropout(x, 0.4, rng, true), 51);
      },
      {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("dropout in eval mode is the identity") {
  auto x = randt({2, 3}, 52);
  Graph g;
  Rng rng(1);
  auto y = g.dropout(x, 0.5, rng, false);
  CHECK(y.get() == x.get());
}

TEST_CASE("grad: matmul family") {
  auto a = randt({3, 4}, 60);
  auto b = randt({4, 5}, 61);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.matmul(a, b), 62); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto bt = randt({5, 4}, 63);
  res = gradcheck([&](Graph& g) { return weigh(g, g.matmul_nt(a, bt), 64); }, {a, bt});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: linear on a 3D input") {
  auto x = randt({2, 3, 4}, 70);
  auto w = randt({4, 5}, 71);
  auto b = randt({5}, 72);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.linear(x, w, b), 73); }, {x, w, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: bmm with and without transpose") {
  auto a = randt({2, 3, 4}, 80);
  auto b = randt({2, 4, 5}, 81);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.bmm(a, b), 82); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto bt = randt({2, 5, 4}, 83);
  res = gradcheck([&](Graph& g) { return weigh(g, g.bmm(a, bt, true), 84); }, {a, bt});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: slice/stack time round-trip") {
  auto x = randt({2, 3, 4}, 90);
  auto res = gradcheck(
      [&](Graph& g) {
        std::vector<TensorPtr> steps;
        for (int t = 0; t < 3; ++t) steps.push_back(g.slice_time(x, t));
        std::swap(steps[0], steps[2]);
        return weigh(g, g.stack_time(steps), 91);
      },
      {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: concat_lastdim") {
  auto a = randt({2, 3}, 95);
  auto b = randt({2, 5}, 96);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.concat_lastdim(a, b), 97); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("split_heads and merge_heads invert each other") {
  auto x = randt({2, 4, 6}, 100, false);
  Graph g;
  auto y = g.merge_heads(g.split_heads(x, 3), 3);
  CHECK(y->shape == x->shape);
  for (size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == x->data[i]);
}

TEST_CASE("grad: head reshaping") {
  auto x = randt({2, 3, 6}, 101);
  auto res = gradcheck(
      [&](Graph& g) { return weigh(g, g.merge_heads(g.split_heads(x, 2), 2), 102); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: gather_rows accumulates over repeats") {
  auto x = randt({4, 3}, 105);
  auto res = gradcheck(
      [&](Graph& g) { return weigh(g, g.gather_rows(x, {0, 2, 0, 3, 0}), 106); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: softmax") {
  auto x = randt({4, 5}, 110);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.softmax(x), 111); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
  Graph g;
  CHECK_THROWS_AS(g.softmax(x, 0), std::invalid_argument);
}

TEST_CASE("layernorm normalizes each feature vector") {
  auto x = randt({4, 8}, 120, false, -3.0, 3.0);
  auto gamma = Tensor::full({8}, 1.0);
  auto beta = Tensor::zeros({8});
  Graph g;
  auto y = g.layernorm(x, gamma, beta);
  for (int r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mu += y->data[static_cast<size_t>(r) * 8 + c];
    mu /= 8;
    for (int c = 0; c < 8; ++c) {
      double d = y->data[static_cast<size_t>(r) * 8 + c] - mu;
      var += d * d;
    }
    var /= 8;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("grad: layernorm") {
  auto x = randt({3, 6}, 121);
  auto gamma = randt({6}, 122, true, 0.5, 1.5);
  auto beta = randt({6}, 123);
  auto res =
      gradcheck([&](Graph& g) { return weigh(g, g.layernorm(x, gamma, beta), 124); },
                {x, gamma, beta});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("batchnorm1d train mode updates running stats") {
  auto x = randt({4, 5, 3}, 130, false, -2.0, 2.0);
  auto gamma = Tensor::full({3}, 1.0);
  auto beta = Tensor::zeros({3});
  auto rm = Tensor::zeros({3});
  auto rv = Tensor::full({3}, 1.0);
  Graph g;
  auto y = g.batchnorm1d(x, gamma, beta, rm, rv, true);
  const int rows = 4 * 5;
  for (int c = 0; c < 3; ++c) {
    double mu = 0.0, var = 0.0;
    for (int i = 0; i < rows; ++i) mu += x->data[static_cast<size_t>(i) * 3 + c];
    mu /= rows;
    for (int i = 0; i < rows; ++i) {
      double d = x->data[static_cast<size_t>(i) * 3 + c] - mu;
      var += d * d;
    }
    var /= rows;
    CHECK(rm->data[static_cast<size_t>(c)] == doctest::Approx(0.1 * mu).epsilon(1e-12));
    CHECK(rv->data[static_cast<size_t>(c)] ==
          doctest::Approx(0.9 + 0.1 * var * rows / (rows - 1)).epsilon(1e-12));
    double ymu = 0.0;
    for (int i = 0; i < rows; ++i) ymu += y->data[static_cast<size_t>(i) * 3 + c];
    CHECK(ymu / rows == doctest::Approx(0.0).epsilon(1e-10));
  }
}

TEST_CASE("batchnorm1d eval mode uses running stats") {
  auto x = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto gamma = Tensor::from_data({2}, {2.0, 1.0});
  auto beta = Tensor::from_data({2}, {0.5, -0.5});
  auto rm = Tensor::from_data({2}, {1.0, 0.0});
  auto rv = Tensor::from_data({2}, {4.0, 1.0});
  Graph g;
  auto y = g.batchnorm1d(x, gamma, beta, rm, rv, false);
  CHECK(y->data[0] == doctest::Approx(0.5 + 2.0 * (1.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(y->data[1] == doctest::Approx(-0.5 + (2.0 - 0.0) / std::sqrt(1.0 + 1e-5)));
  CHECK(rm->data[0] == 1.0);  // eval must not touch the buffers
}

TEST_CASE("grad: batchnorm1d in both modes") {
  auto x = randt({3, 4, 2}, 131);
  auto gamma = randt({2}, 132, true, 0.5, 1.5);
  auto beta = randt({2}, 133);
  auto rm = Tensor::zeros({2});
  auto rv = Tensor::full({2}, 1.0);
  auto res = gradcheck(
      [&](Graph& g) { return weigh(g, g.batchnorm1d(x, gamma, beta, rm, rv, true), 134); },
      {x, gamma, beta});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  rm = randt({2}, 135, false);
  rv = randt({2}, 136, false, 0.5, 2.0);
  res = gradcheck(
      [&](Graph& g) { return weigh(g, g.batchnorm1d(x, gamma, beta, rm, rv, false), 137); },
      {x, gamma, beta});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: mean_pool over time and rows") {
  auto x = randt({2, 4, 3}, 140);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.mean_pool(x, 1), 141); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto m = randt({5, 3}, 142);
  res = gradcheck([&](Graph& g) { return weigh(g, g.mean_pool(m, 0), 143); }, {m});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  Graph g;
  CHECK_THROWS_AS(g.mean_pool(m, 1), std::invalid_argument);
}

TEST_CASE("grad: l2_normalize_rows and cosine_similarity") {
  auto x = randt({3, 4}, 150);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.l2_normalize_rows(x), 151); }, {x});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  auto a = randt({3, 4}, 152);
  auto b = randt({3, 4}, 153);
  res = gradcheck([&](Graph& g) { return weigh(g, g.cosine_similarity(a, b), 154); }, {a, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("cosine_similarity endpoints") {
  auto a = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, 1.0, 0.0, 0.0});
  auto b = Tensor::from_data({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 0.0});
  Graph g;
  auto c = g.cosine_similarity(a, b);
  CHECK(c->data[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c->data[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("grad: conv1d") {
  auto x = randt({2, 6, 3}, 160);
  auto w = randt({4, 3, 5}, 161);
  auto b = randt({4}, 162);
  auto res = gradcheck([&](Graph& g) { return weigh(g, g.conv1d(x, w, b, 2), 163); }, {x, w, b});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: embedding accumulates over repeated ids") {
  auto table = randt({5, 3}, 170);
  std::vector<int> ids = {0, 2, 4, 2, 2, 1};
  auto res =
      gradcheck([&](Graph& g) { return weigh(g, g.embedding(ids, 2, 3, table), 171); }, {table});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  Graph g;
  CHECK_THROWS_AS(g.embedding({0, 5, 1, 0, 1, 2}, 2, 3, table), std::out_of_range);
}

TEST_CASE("causal mask zeroes attention to the future") {
  auto scores = randt({1, 3, 3}, 180, false);
  Graph g;
  auto w = g.softmax(g.add_causal_mask(scores));
  CHECK(w->data[0] == doctest::Approx(1.0).epsilon(1e-12));  // first row sees only itself
  CHECK(w->data[1] == doctest::Approx(0.0));
  CHECK(w->data[2] == doctest::Approx(0.0));
  CHECK(w->data[3] + w->data[4] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w->data[5] == doctest::Approx(0.0));
}

TEST_CASE("grad: attention scores through the causal mask") {
  auto scores = randt({2, 3, 3}, 181);
  auto res = gradcheck(
      [&](Graph& g) { return weigh(g, g.softmax(g.add_causal_mask(scores)), 182); }, {scores});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("fft_circular_conv matches the direct definition") {
  const int bsz = 2, len = 9, d = 3;
  auto x = randt({bsz, len, d}, 190, false);
  for (int lf : {4, 5}) {
    auto f = randt({lf, d}, 191 + lf, false);
    for (bool causal : {true, false}) {
      Graph g;
      auto y = g.fft_circular_conv(x, f, causal);
      const int c = causal ? 0 : lf / 2;
      for (int b = 0; b < bsz; ++b)
        for (int t = 0; t < len; ++t)
          for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < lf; ++k) {
              int src = t + c - k;
              if (src < 0 || src >= len) continue;
              s += f->data[static_cast<size_t>(k) * d + j] *
                   x->data[(static_cast<size_t>(b) * len + src) * d + j];
            }
            CHECK(y->data[(static_cast<size_t>(b) * len + t) * d + j] ==
                  doctest::Approx(s).epsilon(1e-9));
          }
    }
  }
}

TEST_CASE("grad: fft_circular_conv") {
  auto x = randt({2, 7, 2}, 200);
  for (int lf : {3, 4, 9}) {
    auto f = randt({lf, 2}, 201 + lf);
    for (bool causal : {true, false}) {
      auto res = gradcheck(
          [&](Graph& g) { return weigh(g, g.fft_circular_conv(x, f, causal), 205); }, {x, f});
      CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
    }
  }
}

TEST_CASE("grad: cross_entropy") {
  auto logits = randt({5, 4}, 210);
  std::vector<int> targets = {0, 3, 1, 1, 2};
  auto res = gradcheck([&](Graph& g) { return g.cross_entropy(logits, targets); }, {logits});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);

  Graph g;
  CHECK_THROWS_AS(g.cross_entropy(logits, {0, 1, 2, 3, 4}), std::out_of_range);
}

TEST_CASE("grad: mse_loss") {
  auto pred = randt({6}, 220);
  std::vector<double> targets = {0.1, -0.4, 0.2, 0.9, -0.2, 0.0};
  auto res = gradcheck([&](Graph& g) { return g.mse_loss(pred, targets); }, {pred});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad: a small MLP chain") {
  auto x = randt({4, 3}, 230, false);
  auto w1 = randt({3, 8}, 231);
  auto b1 = randt({8}, 232);
  auto w2 = randt({8, 5}, 233);
  auto b2 = randt({5}, 234);
  std::vector<int> targets = {1, 0, 4, 2};
  auto res = gradcheck(
      [&](Graph& g) {
        auto h = g.relu(g.linear(x, w1, b1));
        return g.cross_entropy(g.linear(h, w2, b2), targets);
      },
      {w1, b1, w2, b2});
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("grad accumulates when a tensor feeds two consumers") {
  auto x = Tensor::scalar(2.0);
  x->requires_grad = true;
  Graph g;
  auto y = g.add(g.mul(x, x), x);  // x^2 + x, derivative 2x + 1 = 5
  g.backward(y);
  CHECK(x->grad[0] == doctest::Approx(5.0).epsilon(1e-12));
}
