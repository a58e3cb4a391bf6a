#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "seqnas/blocks.hpp"

using namespace seqnas;

namespace {

TensorPtr random_input(Rng& rng, int b, int l, int d) {
  auto x = Tensor::zeros({b, l, d});
  for (auto& v : x->data) v = rng.normal();
  return x;
}

TensorPtr find_param(Block& block, const std::string& name) {
  for (const auto& p : block.params())
    if (p->name == name) return p;
  REQUIRE(false);
  return nullptr;
}

// weighted mean keeps the loss sensitive to every output coordinate
TensorPtr weighted_mean(Graph& g, const TensorPtr& y, const TensorPtr& w) {
  return g.mean_scalar(g.mul(y, w));
}

TensorPtr const_weights(Rng& rng, const std::vector<int>& shape) {
  auto w = Tensor::zeros(shape);
  for (auto& v : w->data) v = 0.5 + rng.uniform();
  return w;
}

}  // namespace

TEST_CASE("block kind names round-trip") {
  for (int i = 0; i < kNumBlockKinds; ++i) {
    const auto kind = static_cast<BlockKind>(i);
    CHECK(block_kind_from_name(block_kind_name(kind)) == kind);
  }
  CHECK(block_kind_name(BlockKind::CNN) == "CNN");
  CHECK(block_kind_name(BlockKind::TRANSFORMER) == "TRANSFORMER");
  CHECK_THROWS_AS(block_kind_from_name("GRU"), std::invalid_argument);
}

TEST_CASE("build_block validates specs") {
  Rng rng(1);
  CHECK_THROWS_AS(build_block({BlockKind::CNN, 0, 64}, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_block({BlockKind::CNN, 64, -1}, rng), std::invalid_argument);
  BlockSpec bad_kernel{BlockKind::CNN, 64, 64};
  bad_kernel.kernel = 7;
  CHECK_THROWS_AS(build_block(bad_kernel, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_block({BlockKind::TRANSFORMER, 64, 100}, rng), std::invalid_argument);
  CHECK_NOTHROW(build_block({BlockKind::TRANSFORMER, 64, 128}, rng));
}

TEST_CASE("cnn maps (2,20,64) to (2,20,128)") {
  Rng rng(2);
  auto block = build_block({BlockKind::CNN, 64, 128}, rng);
  auto x = random_input(rng, 2, 20, 64);
  Graph g;
  auto y = block->forward(g, x, false, false, rng);
  CHECK(y->shape == std::vector<int>{2, 20, 128});
}

TEST_CASE("shape contract holds across sampled dims for every kind") {
  Rng rng(3);
  const std::vector<std::pair<int, int>> dims = {{64, 64}, {64, 128}, {128, 256}, {256, 512}};
  for (int ki = 0; ki < kNumBlockKinds; ++ki) {
    for (auto [di, dout] : dims) {
      auto block = build_block({static_cast<BlockKind>(ki), di, dout}, rng);
      auto x = random_input(rng, 1, 4, di);
      Graph g;
      auto y = block->forward(g, x, false, true, rng);
      CHECK(y->shape == std::vector<int>{1, 4, dout});
    }
  }
}

TEST_CASE("hyena with identity projection has no projection parameters") {
  Rng rng(4);
  auto same = build_block({BlockKind::HYENA, 64, 64}, rng);
  auto proj = build_block({BlockKind::HYENA, 64, 128}, rng);
  CHECK(same->params().size() == 4);  // filter MLP only
  CHECK(proj->params().size() == 6);
  for (const auto& p : same->params()) CHECK(p->name.find("proj") == std::string::npos);
}

TEST_CASE("causal forward never reads the future") {
  Rng rng(5);
  const int len = 10, perturb_at = 6;
  for (int ki = 0; ki < kNumBlockKinds; ++ki) {
    CAPTURE(ki);
    auto block = build_block({static_cast<BlockKind>(ki), 64, 64}, rng);
    auto x = random_input(rng, 1, len, 64);
    Graph g1;
    auto y1 = block->forward(g1, x, false, true, rng);
    // per-channel perturbation: a constant shift would cancel inside layernorm
    for (int j = 0; j < 64; ++j)
      x->data[static_cast<size_t>(perturb_at * 64 + j)] += 0.1 + 0.02 * j;
    Graph g2;
    auto y2 = block->forward(g2, x, false, true, rng);
    double before = 0.0, after = 0.0;
    for (int t = 0; t < len; ++t)
      for (int j = 0; j < 64; ++j) {
        const double d = std::abs(y1->data[static_cast<size_t>(t * 64 + j)] -
                                  y2->data[static_cast<size_t>(t * 64 + j)]);
        (t < perturb_at ? before : after) = std::max(t < perturb_at ? before : after, d);
      }
    CHECK(before < 1e-12);
    CHECK(after > 1e-12);
  }
}

TEST_CASE("non-causal cnn has a centered window") {
  Rng rng(6);
  auto block = build_block({BlockKind::CNN, 32, 32}, rng);
  auto x = random_input(rng, 1, 10, 32);
  Graph g1;
  auto y1 = block->forward(g1, x, false, false, rng);
  for (int j = 0; j < 32; ++j) x->data[static_cast<size_t>(6 * 32 + j)] += 0.5;
  Graph g2;
  auto y2 = block->forward(g2, x, false, false, rng);
  double before = 0.0;
  for (int t = 0; t < 6; ++t)
    for (int j = 0; j < 32; ++j)
      before = std::max(before, std::abs(y1->data[static_cast<size_t>(t * 32 + j)] -
                                         y2->data[static_cast<size_t>(t * 32 + j)]));
  CHECK(before > 1e-12);  // kernel 5, pad 2: position 4 already sees t=6
}

TEST_CASE("eval forwards are bit-identical") {
  for (int ki = 0; ki < kNumBlockKinds; ++ki) {
    CAPTURE(ki);
    Rng rng(7);
    auto block = build_block({static_cast<BlockKind>(ki), 64, 64}, rng);
    auto x = random_input(rng, 2, 8, 64);
    Rng fwd1(100), fwd2(999);  // different states must not matter in eval
    Graph g1, g2;
    auto y1 = block->forward(g1, x, false, true, fwd1);
    auto y2 = block->forward(g2, x, false, true, fwd2);
    CHECK(y1->data == y2->data);
  }
}

TEST_CASE("lstm train-mode dropout depends on the rng stream") {
  Rng rng(8);
  auto block = build_block({BlockKind::LSTM, 16, 16}, rng);
  auto x = random_input(rng, 1, 6, 16);
  Graph g1, g2, g3;
  Rng a(42), b(42), c(43);
  auto y1 = block->forward(g1, x, true, true, a);
  auto y2 = block->forward(g2, x, true, true, b);
  auto y3 = block->forward(g3, x, true, true, c);
  CHECK(y1->data == y2->data);
  CHECK(y1->data != y3->data);
}

TEST_CASE("lstm is order sensitive") {
  Rng rng(9);
  auto block = build_block({BlockKind::LSTM, 8, 8}, rng);
  auto x = random_input(rng, 1, 12, 8);
  auto xr = Tensor::zeros({1, 12, 8});
  for (int t = 0; t < 12; ++t)
    for (int j = 0; j < 8; ++j)
      xr->data[static_cast<size_t>(t * 8 + j)] = x->data[static_cast<size_t>((11 - t) * 8 + j)];
  Graph g1, g2;
  auto y1 = block->forward(g1, x, false, true, rng);
  auto y2 = block->forward(g2, xr, false, true, rng);
  CHECK(y1->data != y2->data);
}

TEST_CASE("lstm recurrent weights start orthogonal") {
  Rng rng(10);
  auto block = build_block({BlockKind::LSTM, 8, 16}, rng);
  for (const char* name : {"w_hi", "w_hf", "w_hg", "w_ho"}) {
    auto w = find_param(*block, name);
    REQUIRE(w->shape == std::vector<int>{16, 16});
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        double dot = 0.0;
        for (int j = 0; j < 16; ++j)
          dot += w->data[static_cast<size_t>(r * 16 + j)] * w->data[static_cast<size_t>(c * 16 + j)];
        CHECK(std::abs(dot - (r == c ? 1.0 : 0.0)) < 1e-9);
      }
  }
}

TEST_CASE("xavier init stays inside its limit") {
  Rng rng(11);
  auto block = build_block({BlockKind::CNN, 32, 48}, rng);
  auto w = find_param(*block, "conv.w");
  const double limit = std::sqrt(6.0 / (32 * 5 + 48 * 5));
  double peak = 0.0;
  for (double v : w->data) {
    CHECK(std::abs(v) <= limit);
    peak = std::max(peak, std::abs(v));
  }
  CHECK(peak > 0.5 * limit);
}

TEST_CASE("builds are deterministic in the seed") {
  for (int ki = 0; ki < kNumBlockKinds; ++ki) {
    Rng r1(77), r2(77), r3(78);
    auto a = build_block({static_cast<BlockKind>(ki), 64, 64}, r1);
    auto b = build_block({static_cast<BlockKind>(ki), 64, 64}, r2);
    auto c = build_block({static_cast<BlockKind>(ki), 64, 64}, r3);
    auto pa = a->params(), pb = b->params(), pc = c->params();
    REQUIRE(pa.size() == pb.size());
    bool all_equal = true, any_differs = false;
    for (size_t i = 0; i < pa.size(); ++i) {
      all_equal = all_equal && pa[i]->data == pb[i]->data;
      any_differs = any_differs || pa[i]->data != pc[i]->data;
    }
    CHECK(all_equal);
    CHECK(any_differs);
  }
}

TEST_CASE("cnn gradients match finite differences") {
  Rng rng(12);
  auto block = build_block({BlockKind::CNN, 2, 3}, rng);
  auto x = random_input(rng, 1, 6, 2);
  auto w = const_weights(rng, {1, 6, 3});
  auto params = block->params();
  params.push_back(x);
  auto res = gradcheck(
      [&](Graph& g) {
        Rng fwd(1);
        return weighted_mean(g, block->forward(g, x, true, true, fwd), w);
      },
      params);
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("lstm gradients match finite differences through dropout") {
  Rng rng(13);
  auto block = build_block({BlockKind::LSTM, 2, 3}, rng);
  auto x = random_input(rng, 1, 4, 2);
  auto w = const_weights(rng, {1, 4, 3});
  auto params = block->params();
  params.push_back(x);
  auto res = gradcheck(
      [&](Graph& g) {
        Rng fwd(4);  // reseeded per call so the dropout mask is stable
        return weighted_mean(g, block->forward(g, x, true, true, fwd), w);
      },
      params);
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("mamba gradients match finite differences") {
  Rng rng(14);
  auto block = build_block({BlockKind::MAMBA, 2, 3}, rng);
  auto x = random_input(rng, 1, 5, 2);
  auto w = const_weights(rng, {1, 5, 3});
  auto params = block->params();
  params.push_back(x);
  auto res = gradcheck(
      [&](Graph& g) {
        Rng fwd(1);
        return weighted_mean(g, block->forward(g, x, true, true, fwd), w);
      },
      params);
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}

TEST_CASE("hyena gradients match finite differences") {
  Rng rng(15);
  auto block = build_block({BlockKind::HYENA, 2, 3}, rng);
  auto x = random_input(rng, 1, 6, 2);
  auto w = const_weights(rng, {1, 6, 3});
  auto params = block->params();
  // jitter off the init point: position 0 feeds 0.0 into the filter MLP, so a
  // zero bias would sit exactly on the relu kink where FD is meaningless
  for (auto& p : params)
    for (auto& v : p->data) v += rng.uniform(-0.05, 0.05);
  params.push_back(x);
  for (bool causal : {true, false}) {
    auto res = gradcheck(
        [&, causal](Graph& g) {
          Rng fwd(1);
          return weighted_mean(g, block->forward(g, x, true, causal, fwd), w);
        },
        params);
    CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
  }
}

TEST_CASE("transformer gradients match finite differences on sampled coordinates") {
  Rng rng(16);
  auto block = build_block({BlockKind::TRANSFORMER, 64, 64}, rng);
  auto x = random_input(rng, 1, 3, 64);
  auto w = const_weights(rng, {1, 3, 64});
  auto params = block->params();
  params.push_back(x);
  auto res = gradcheck(
      [&](Graph& g) {
        Rng fwd(1);
        return weighted_mean(g, block->forward(g, x, true, true, fwd), w);
      },
      params, 1e-5, 60);
  CHECK_MESSAGE(res.max_rel < 1e-3, res.where);
}
