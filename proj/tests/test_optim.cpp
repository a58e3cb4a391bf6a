#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqnas/autograd.hpp"
#include "seqnas/optimizer.hpp"
#include "seqnas/tensor.hpp"
#include "seqnas/util.hpp"

using namespace seqnas;

TEST_CASE("schedule: linear warmup then linear decay") {
  LrSchedule s{1.0, 10, 110};
  CHECK(s.at(1) == doctest::Approx(0.1));
  CHECK(s.at(5) == doctest::Approx(0.5));
  CHECK(s.at(10) == doctest::Approx(1.0));
  CHECK(s.at(60) == doctest::Approx(0.5));
  CHECK(s.at(110) == doctest::Approx(0.0));
  CHECK(s.at(200) == doctest::Approx(0.0));
  LrSchedule flat;
  flat.peak = 0.25;
  CHECK(flat.at(1) == doctest::Approx(0.25));
  CHECK(flat.at(100000) == doctest::Approx(0.25));
}

TEST_CASE("adamw: zero grads and zero decay leave params unchanged") {
  auto p = Tensor::from_data({3}, {1.0, -2.0, 0.5});
  p->requires_grad = true;
  p->ensure_grad();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.schedule.peak = 0.1;
  AdamW opt({p}, cfg);
  opt.step();
  CHECK(p->data[0] == 1.0);
  CHECK(p->data[1] == -2.0);
  CHECK(p->data[2] == 0.5);
}

TEST_CASE("adamw: params without grads are skipped even with decay") {
  auto p = Tensor::from_data({2}, {1.0, 2.0});
  p->requires_grad = true;  // never given a gradient
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  AdamW opt({p}, cfg);
  opt.step();
  CHECK(p->data[0] == 1.0);
  CHECK(p->data[1] == 2.0);
}

TEST_CASE("adamw: first step moves by about lr thanks to bias correction") {
  auto p = Tensor::from_data({1}, {1.0});
  p->requires_grad = true;
  p->ensure_grad();
  p->grad[0] = 1.0;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.schedule.peak = 0.01;
  AdamW opt({p}, cfg);
  opt.step();
  CHECK(p->data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-3));
}

TEST_CASE("adamw: one step on theta^2 decreases it") {
  auto theta = Tensor::scalar(1.0);
  theta->requires_grad = true;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.schedule.peak = 0.1;
  AdamW opt({theta}, cfg);
  Graph g;
  auto loss = g.mul(theta, theta);
  g.backward(loss);
  opt.step();
  CHECK(theta->data[0] < 1.0);
  CHECK(theta->data[0] * theta->data[0] < 1.0);
}

TEST_CASE("adamw: 200 steps solve a small least-squares problem") {
  // consistent system y = X w*, so the optimum is w* with zero loss
  const int n = 8, d = 3;
  Rng rng(77);
  auto x = Tensor::zeros({n, d});
  for (auto& v : x->data) v = rng.uniform(-1.0, 1.0);
  std::vector<double> wstar = {0.7, -0.3, 0.2};
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) y[static_cast<size_t>(i)] += x->data[static_cast<size_t>(i) * d + j] * wstar[static_cast<size_t>(j)];

  auto w = Tensor::zeros({d, 1});
  w->requires_grad = true;
  w->name = "w";
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.schedule.peak = 0.05;
  AdamW opt({w}, cfg);
  double final_loss = 1e9;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Graph g;
    auto pred = g.matmul(x, w);
    auto loss = g.mse_loss(pred, y);
    final_loss = loss->item();
    g.backward(loss);
    opt.step();
  }
  CHECK(final_loss < 1e-4);
  for (int j = 0; j < d; ++j)
    CHECK(w->data[static_cast<size_t>(j)] == doctest::Approx(wstar[static_cast<size_t>(j)]).epsilon(0.05));
}

TEST_CASE("adamw: non-finite gradient aborts with the parameter name") {
  auto p = Tensor::from_data({1}, {1.0});
  p->requires_grad = true;
  p->name = "bad_param";
  p->ensure_grad();
  p->grad[0] = std::nan("");
  AdamW opt({p}, AdamWConfig{});
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("bad_param"), std::runtime_error);
}

TEST_CASE("adamw: per-parameter bias correction under intermittent updates") {
  // b only receives gradients on even steps; its own update count must drive
  // its bias correction, so its first update matches a's first update.
  auto a = Tensor::from_data({1}, {1.0});
  auto b = Tensor::from_data({1}, {1.0});
  a->requires_grad = b->requires_grad = true;
  a->name = "a";
  b->name = "b";
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.schedule.peak = 0.01;
  AdamW opt1({a}, cfg), opt2({b}, cfg);
  a->ensure_grad();
  a->grad[0] = 1.0;
  opt1.step();

  // b: one empty step first, then the same gradient
  opt2.step();
  b->ensure_grad();
  b->grad[0] = 1.0;
  opt2.step();
  CHECK(a->data[0] == doctest::Approx(b->data[0]).epsilon(1e-12));
}

TEST_CASE("adamw: decoupled weight decay shrinks weights without grads on the loss path") {
  auto p = Tensor::from_data({1}, {2.0});
  p->requires_grad = true;
  p->ensure_grad();  // zero gradient, but present
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.schedule.peak = 0.5;
  AdamW opt({p}, cfg);
  opt.step();
  CHECK(p->data[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-12));
}
