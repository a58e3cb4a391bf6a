#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "seqnas/supernet.hpp"
#include "seqnas/tokenizer.hpp"

using namespace seqnas;

namespace {

Path make_path(std::vector<BlockKind> types, std::vector<int> dims, std::string id = "p") {
  Path p;
  p.depth = static_cast<int>(types.size());
  p.types = std::move(types);
  p.dims = std::move(dims);
  p.path_id = std::move(id);
  return p;
}

std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> t(static_cast<size_t>(n));
  for (auto& v : t) v = 4 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(vocab - 4)));
  return t;
}

std::map<std::string, std::vector<double>> snapshot(Supernet& net) {
  std::map<std::string, std::vector<double>> s;
  for (const auto& [name, t] : net.named_tensors()) s.emplace(name, t->data);
  return s;
}

double mean_of(const std::vector<double>& v, size_t lo, size_t hi) {
  double acc = 0.0;
  for (size_t i = lo; i < hi; ++i) acc += v[i];
  return acc / static_cast<double>(hi - lo);
}

void rm_checkpoint(const std::string& prefix) {
  std::remove((prefix + ".bin").c_str());
  std::remove((prefix + ".json").c_str());
}

}  // namespace

TEST_CASE("block keys stringify and order") {
  BlockKey k{BlockKind::CNN, 64, 128};
  CHECK(k.str() == "CNN_64_128");
  CHECK(BlockKey{BlockKind::LSTM, 128, 128}.str() == "LSTM_128_128");
  CHECK(BlockKey{BlockKind::CNN, 64, 128} == BlockKey{BlockKind::CNN, 64, 128});
  CHECK(BlockKey{BlockKind::CNN, 64, 128} < BlockKey{BlockKind::CNN, 64, 256});
  CHECK(BlockKey{BlockKind::CNN, 64, 128} < BlockKey{BlockKind::HYENA, 64, 128});

  auto p = make_path({BlockKind::CNN, BlockKind::LSTM}, {128, 256});
  CHECK(layer_key(p, 0, 64) == BlockKey{BlockKind::CNN, 64, 128});
  CHECK(layer_key(p, 1, 64) == BlockKey{BlockKind::LSTM, 128, 256});
  CHECK_THROWS_AS(layer_key(p, 2, 64), std::invalid_argument);
}

TEST_CASE("shared layers collapse to one registry key") {
  // Two paths that agree on the first layer need three blocks, not four.
  std::vector<Path> paths = {
      make_path({BlockKind::CNN, BlockKind::TRANSFORMER}, {128, 128}),
      make_path({BlockKind::CNN, BlockKind::LSTM}, {128, 128}),
  };
  auto keys = collect_keys(paths, 64);
  CHECK(keys.size() == 3);
  CHECK(std::count(keys.begin(), keys.end(), BlockKey{BlockKind::CNN, 64, 128}) == 1);
}

TEST_CASE("the composed space shares blocks heavily") {
  SpaceConfig cfg;
  auto paths = compose_space(cfg);
  REQUIRE(paths.size() == 360);
  int total_layers = 0;
  for (const auto& p : paths) total_layers += p.depth;
  auto keys = collect_keys(paths, cfg.h0);
  CHECK(keys.size() > 0);
  CHECK(static_cast<int>(keys.size()) < total_layers);
  CHECK(collect_keys(paths, cfg.h0) == keys);
}

TEST_CASE("objective names round trip") {
  for (auto o : {Objective::MM, Objective::CL, Objective::NTP})
    CHECK(objective_from_name(objective_name(o)) == o);
  CHECK(objective_name(Objective::MM) == "mm");
  CHECK_THROWS_AS(objective_from_name("mlm"), std::invalid_argument);
}

TEST_CASE("path sampling stays inside the uniform band") {
  std::vector<Path> paths;
  for (int i = 0; i < 360; ++i)
    paths.push_back(make_path({BlockKind::CNN}, {16}, "d3-p" + std::to_string(i)));
  Rng rng(7);
  std::vector<int> counts(paths.size(), 0);
  std::map<const Path*, int> index;
  for (size_t i = 0; i < paths.size(); ++i) index.emplace(&paths[i], static_cast<int>(i));
  for (int i = 0; i < 36000; ++i) ++counts[static_cast<size_t>(index.at(&sample_path(paths, rng)))];
  for (int c : counts) {
    CHECK(c >= 60);
    CHECK(c <= 140);
  }
}

TEST_CASE("path sampling passes a chi square test against uniform") {
  const int k = 360;
  const int n = 100000;
  std::vector<Path> paths;
  for (int i = 0; i < k; ++i) paths.push_back(make_path({BlockKind::CNN}, {16}));
  Rng rng(123);
  std::vector<double> counts(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<size_t>(&sample_path(paths, rng) - paths.data())];
  const double expected = static_cast<double>(n) / k;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Wilson-Hilferty critical value for df = 359 at the 0.999 quantile; the
  // draw is uniform iff chi2 stays below it (p > 0.001).
  const double df = k - 1;
  const double z = 3.090232306167813;  // normal quantile at 0.999
  const double a = 1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df));
  const double crit = df * a * a * a;
  CHECK(chi2 < crit);
}

TEST_CASE("path sampling is seed deterministic") {
  std::vector<Path> paths;
  for (int i = 0; i < 17; ++i) paths.push_back(make_path({BlockKind::CNN}, {16}));
  Rng a(5), b(5), c(6);
  std::vector<int> ia, ib, ic;
  for (int i = 0; i < 500; ++i) {
    ia.push_back(static_cast<int>(&sample_path(paths, a) - paths.data()));
    ib.push_back(static_cast<int>(&sample_path(paths, b) - paths.data()));
    ic.push_back(static_cast<int>(&sample_path(paths, c) - paths.data()));
  }
  CHECK(ia == ib);
  CHECK(ia != ic);
}

TEST_CASE("assembled forward produces the expected shapes") {
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {32})};
  Supernet net(paths, 16, 9, 1);
  CHECK(net.registry_size() == 1);
  Rng data(2);
  auto toks = random_tokens(2 * 16, 9, data);
  Graph g;
  Rng fwd(0);
  auto bb = net.backbone(g, paths[0], toks, 2, 16, false, false, fwd);
  CHECK(bb->shape == std::vector<int>{2, 16, 32});
  Graph g2;
  auto ft = net.features(g2, paths[0], toks, 2, 16, false, false, fwd);
  CHECK(ft->shape == std::vector<int>{2, 16, 16});
  auto lg = net.lm_logits(g2, ft);
  CHECK(lg->shape == std::vector<int>{2, 16, 9});
}

TEST_CASE("assembly is repeatable and sharing is live") {
  std::vector<Path> paths = {
      make_path({BlockKind::CNN}, {16}, "a"),
      make_path({BlockKind::CNN, BlockKind::LSTM}, {16, 16}, "b"),
  };
  Supernet net(paths, 16, 9, 3);
  CHECK(net.registry_size() == 2);
  Rng data(4);
  auto toks = random_tokens(2 * 12, 9, data);

  auto run_b = [&] {
    Graph g;
    Rng fwd(0);
    return net.features(g, paths[1], toks, 2, 12, false, false, fwd);
  };
  auto y1 = run_b();
  auto y2 = run_b();
  CHECK(y1->data == y2->data);

  // Nudging the shared CNN through its registry entry must show up in every
  // path that uses it.
  net.block(BlockKey{BlockKind::CNN, 16, 16}).params()[0]->data[0] += 0.25;
  auto y3 = run_b();
  CHECK(y1->data != y3->data);
}

TEST_CASE("sequences beyond the positional table are rejected") {
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, 9, 1);
  Rng data(9);
  Graph g;
  Rng fwd(0);
  auto long_toks = random_tokens(257, 9, data);
  CHECK_THROWS_AS(net.features(g, paths[0], long_toks, 1, 257, false, false, fwd),
                  std::invalid_argument);
  auto max_toks = random_tokens(256, 9, data);
  Graph g2;
  auto y = net.features(g2, paths[0], max_toks, 1, 256, false, false, fwd);
  CHECK(y->shape == std::vector<int>{1, 256, 16});
}

TEST_CASE("mask corruption hits the configured fraction and action mix") {
  const int vocab = 9, B = 4, L = 50;
  Rng rng(11);
  int positions = 0, masked = 0, to_mask = 0, to_random = 0, kept = 0;
  for (int rep = 0; rep < 40; ++rep) {
    auto toks = random_tokens(B * L, vocab, rng);
    auto mb = make_mm_batch(toks, B, L, 0.15, vocab, rng);
    positions += B * L;
    masked += static_cast<int>(mb.masked_rows.size());
    REQUIRE(mb.masked_rows.size() == mb.targets.size());
    REQUIRE(mb.masked_rows.size() == mb.action.size());
    std::set<int> seen;
    for (size_t i = 0; i < mb.masked_rows.size(); ++i) {
      const int row = mb.masked_rows[i];
      CHECK(seen.insert(row).second);
      CHECK(mb.targets[i] == toks[static_cast<size_t>(row)]);
      switch (mb.action[i]) {
        case 0:
          ++to_mask;
          CHECK(mb.corrupted[static_cast<size_t>(row)] == Vocab::MASK);
          break;
        case 1:
          ++to_random;
          CHECK(mb.corrupted[static_cast<size_t>(row)] >= 4);
          CHECK(mb.corrupted[static_cast<size_t>(row)] < vocab);
          break;
        default:
          ++kept;
          CHECK(mb.corrupted[static_cast<size_t>(row)] == toks[static_cast<size_t>(row)]);
      }
    }
    // untouched positions pass through unchanged
    std::set<int> rows(mb.masked_rows.begin(), mb.masked_rows.end());
    for (int r = 0; r < B * L; ++r)
      if (!rows.count(r)) CHECK(mb.corrupted[static_cast<size_t>(r)] == toks[static_cast<size_t>(r)]);
  }
  const double frac = static_cast<double>(masked) / positions;
  CHECK(frac > 0.13);
  CHECK(frac < 0.17);
  const double m = static_cast<double>(masked);
  CHECK(to_mask / m > 0.76);
  CHECK(to_mask / m < 0.84);
  CHECK(to_random / m > 0.07);
  CHECK(to_random / m < 0.13);
  CHECK(kept / m > 0.07);
  CHECK(kept / m < 0.13);
}

TEST_CASE("mask corruption resamples instead of returning an empty mask") {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    auto mb = make_mm_batch({4, 5, 6}, 1, 3, 0.02, 9, rng);
    CHECK(!mb.masked_rows.empty());
  }
}

TEST_CASE("mask corruption is seed deterministic") {
  std::vector<int> toks = {4, 5, 6, 7, 4, 5, 6, 7};
  Rng a(21), b(21);
  auto m1 = make_mm_batch(toks, 2, 4, 0.5, 9, a);
  auto m2 = make_mm_batch(toks, 2, 4, 0.5, 9, b);
  CHECK(m1.corrupted == m2.corrupted);
  CHECK(m1.masked_rows == m2.masked_rows);
  CHECK(m1.action == m2.action);
}

TEST_CASE("masked loss equals a hand computed cross entropy over masked rows") {
  const int vocab = 9, B = 2, L = 12;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 7);
  Rng data(5);
  auto toks = random_tokens(B * L, vocab, data);
  auto mb = make_mm_batch(toks, B, L, 0.3, vocab, data);
  REQUIRE(!mb.masked_rows.empty());

  Graph g;
  Rng fwd(0);
  auto loss = mm_loss_on(g, net, paths[0], mb, B, L, false, fwd);

  Graph g2;
  Rng fwd2(0);
  auto logits = net.lm_logits(g2, net.features(g2, paths[0], mb.corrupted, B, L, false, false, fwd2));
  double acc = 0.0;
  for (size_t i = 0; i < mb.masked_rows.size(); ++i) {
    const double* lg = logits->data.data() + static_cast<size_t>(mb.masked_rows[i]) * vocab;
    const double mx = *std::max_element(lg, lg + vocab);
    double se = 0.0;
    for (int v = 0; v < vocab; ++v) se += std::exp(lg[v] - mx);
    acc -= lg[mb.targets[i]] - mx - std::log(se);
  }
  acc /= static_cast<double>(mb.masked_rows.size());
  CHECK(loss->item() == doctest::Approx(acc).epsilon(1e-9));
}

TEST_CASE("untrained masked loss sits near log vocab") {
  const int vocab = 9;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 13);
  Rng data(6);
  auto toks = random_tokens(4 * 24, vocab, data);
  Graph g;
  Rng fwd(1);
  auto loss = mm_loss(g, net, paths[0], toks, 4, 24, 0.15, false, fwd);
  CHECK(std::abs(loss->item() - std::log(vocab)) < 0.5);
}

TEST_CASE("nt xent of identical embeddings is log batch size") {
  std::vector<double> row = {0.3, -0.7, 2.0};
  std::vector<double> flat;
  for (int i = 0; i < 4; ++i) flat.insert(flat.end(), row.begin(), row.end());
  auto z1 = Tensor::from_data({4, 3}, flat);
  auto z2 = Tensor::from_data({4, 3}, flat);
  Graph g;
  auto loss = nt_xent(g, z1, z2, 0.1);
  CHECK(loss->item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("nt xent matches the two point closed form") {
  // positives at cosine +1, the lone negatives at -1, temperature 1:
  // -log(e / (e + e^{-1})) = log(1 + e^{-2})
  auto z1 = Tensor::from_data({2, 2}, {1.0, 0.0, -1.0, 0.0});
  auto z2 = Tensor::from_data({2, 2}, {1.0, 0.0, -1.0, 0.0});
  Graph g;
  auto loss = nt_xent(g, z1, z2, 1.0);
  CHECK(loss->item() == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-9));
}

TEST_CASE("nt xent rejects degenerate inputs") {
  auto z = Tensor::from_data({1, 2}, {1.0, 0.0});
  Graph g;
  CHECK_THROWS_AS(nt_xent(g, z, z, 1.0), std::invalid_argument);
  auto z2 = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Graph g2;
  CHECK_THROWS_AS(nt_xent(g2, z2, z2, 0.0), std::invalid_argument);
}

TEST_CASE("contrastive views crop contiguously and mask tokens") {
  std::vector<int> seq(20);
  for (int i = 0; i < 20; ++i) seq[static_cast<size_t>(i)] = 4 + i % 5;
  Rng rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    auto v = make_cl_view(seq, 0.8, 0.0, rng);
    REQUIRE(v.size() == 16);
    // with no masking the view must be a contiguous window of the original
    bool found = false;
    for (size_t s = 0; s + v.size() <= seq.size(); ++s)
      if (std::equal(v.begin(), v.end(), seq.begin() + static_cast<long>(s))) found = true;
    CHECK(found);
  }
  auto all_masked = make_cl_view(seq, 0.8, 1.0, rng);
  for (int id : all_masked) CHECK(id == Vocab::MASK);
  CHECK(make_cl_view({4}, 0.8, 0.0, rng).size() == 1);

  Rng a(14), b(14);
  CHECK(make_cl_view(seq, 0.8, 0.3, a) == make_cl_view(seq, 0.8, 0.3, b));
}

TEST_CASE("contrastive loss on duplicated sequences hits log batch size") {
  // A batch of four copies of one sequence with identity augmentation gives
  // identical embeddings everywhere, which pins the loss at ln 4.
  const int vocab = 9, L = 16, B = 4;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 17);
  Rng data(3);
  auto one = random_tokens(L, vocab, data);
  std::vector<int> toks;
  for (int b = 0; b < B; ++b) toks.insert(toks.end(), one.begin(), one.end());
  Graph g;
  Rng fwd(2);
  auto loss = cl_loss(g, net, paths[0], toks, B, L, 0.1, 0.0, 1.0, false, fwd);
  CHECK(loss->item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("contrastive loss rejects a batch of one") {
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, 9, 17);
  Rng data(3);
  auto toks = random_tokens(8, 9, data);
  Graph g;
  Rng fwd(0);
  CHECK_THROWS_AS(cl_loss(g, net, paths[0], toks, 1, 8, 0.1, 0.15, 0.8, false, fwd),
                  std::invalid_argument);
}

TEST_CASE("untrained next token loss sits near log vocab") {
  const int vocab = 9;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 19);
  Rng data(4);
  auto toks = random_tokens(4 * 20, vocab, data);
  Graph g;
  Rng fwd(0);
  auto loss = ntp_loss(g, net, paths[0], toks, 4, 20, false, fwd);
  CHECK(std::abs(loss->item() - std::log(vocab)) < 0.5);
}

TEST_CASE("next token logits ignore future positions") {
  const int vocab = 9, L = 10;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 23);
  Rng data(5);
  auto t1 = random_tokens(L, vocab, data);
  auto t2 = t1;
  t2[5] = (t2[5] == 4) ? 5 : 4;

  auto logits_of = [&](const std::vector<int>& t) {
    Graph g;
    Rng fwd(0);
    return net.lm_logits(g, net.features(g, paths[0], t, 1, L, false, true, fwd));
  };
  auto l1 = logits_of(t1);
  auto l2 = logits_of(t2);
  double before = 0.0, after = 0.0;
  for (int t = 0; t < L; ++t)
    for (int v = 0; v < vocab; ++v) {
      const double d = std::abs(l1->data[static_cast<size_t>(t * vocab + v)] -
                                l2->data[static_cast<size_t>(t * vocab + v)]);
      (t < 5 ? before : after) = std::max(t < 5 ? before : after, d);
    }
  CHECK(before < 1e-12);
  CHECK(after > 1e-12);
}

TEST_CASE("next token loss rejects length one sequences") {
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, 9, 23);
  Graph g;
  Rng fwd(0);
  CHECK_THROWS_AS(ntp_loss(g, net, paths[0], {4, 5}, 2, 1, false, fwd), std::invalid_argument);
}

TEST_CASE("pretraining updates only the sampled path and shared periphery") {
  std::vector<Path> paths = {
      make_path({BlockKind::CNN}, {12}, "a"),
      make_path({BlockKind::LSTM}, {12}, "b"),
  };
  Supernet net(paths, 12, 9, 31);
  Rng data(2);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 8; ++i) corpus.push_back(random_tokens(12, 9, data));

  auto before = snapshot(net);
  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 1;
  cfg.batch_size = 2;
  cfg.seed = 40;
  auto res = pretrain(net, corpus, cfg);
  REQUIRE(res.loss.size() == 1);
  REQUIRE(res.sampled.size() == 1);
  const int hit = res.sampled[0];
  const std::string hit_prefix = (hit == 0) ? "CNN_12_12." : "LSTM_12_12.";
  const std::string idle_prefix = (hit == 0) ? "LSTM_12_12." : "CNN_12_12.";

  auto after = snapshot(net);
  bool hit_changed = false;
  for (const auto& [name, vals] : after) {
    if (name.rfind(idle_prefix, 0) == 0) {
      CHECK(vals == before.at(name));  // untouched weights stay bit identical
    } else if (name.rfind(hit_prefix, 0) == 0 && vals != before.at(name)) {
      hit_changed = true;
    }
  }
  CHECK(hit_changed);
  CHECK(after.at("emb.table") != before.at("emb.table"));
  CHECK(after.at("head.w") != before.at("head.w"));
}

TEST_CASE("pretraining records a trace and writes named checkpoints") {
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {12})};
  Supernet net(paths, 12, 9, 37);
  Rng data(6);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back(random_tokens(10, 9, data));

  const std::string prefix = "supernet_ckpt_trace";
  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 6;
  cfg.batch_size = 2;
  cfg.seed = 50;
  cfg.checkpoint_prefix = prefix;
  auto res = pretrain(net, corpus, cfg);
  CHECK(res.loss.size() == 6);
  for (double l : res.loss) CHECK(std::isfinite(l));

  REQUIRE(checkpoint_exists(prefix));
  auto names = checkpoint_names(prefix);
  std::set<std::string> ns(names.begin(), names.end());
  CHECK(ns.count("CNN_12_12.conv.w"));
  CHECK(ns.count("CNN_12_12.bn.running_mean"));
  CHECK(ns.count("emb.table"));
  CHECK(ns.count("pos.table"));
  CHECK(ns.count("adapter.12.w"));
  CHECK(ns.count("head.w"));
  CHECK(ns.count("opt.m.head.w"));
  CHECK(ns.count("opt.global_step"));
  CHECK(ns.count("pretrain.step"));

  auto step = Tensor::scalar(0.0);
  load_checkpoint(prefix, {{"pretrain.step", step}});
  CHECK(step->item() == doctest::Approx(6.0));
  rm_checkpoint(prefix);
}

TEST_CASE("pretraining aborts on divergence and hands back the trace") {
  std::vector<Path> paths = {make_path({BlockKind::HYENA}, {8})};
  Supernet net(paths, 8, 8, 41);
  Rng data(7);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 4; ++i) corpus.push_back(random_tokens(8, 8, data));

  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 80;
  cfg.batch_size = 2;
  cfg.seed = 60;
  cfg.opt.schedule.peak = 1e8;  // guarantees blowup in a norm-free path
  bool threw = false;
  try {
    pretrain(net, corpus, cfg);
  } catch (const PretrainDiverged& e) {
    threw = true;
    CHECK(!e.trace.empty());
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("masked pretraining learns a two symbol corpus") {
  const int vocab = 9, L = 16;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 43);
  std::vector<std::vector<int>> corpus;
  for (int w = 0; w < 16; ++w) {
    std::vector<int> s(L);
    for (int t = 0; t < L; ++t) s[static_cast<size_t>(t)] = 4 + (t + w) % 2;
    corpus.push_back(std::move(s));
  }
  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 500;
  cfg.batch_size = 4;
  cfg.seed = 70;
  cfg.opt.schedule.peak = 3e-3;
  cfg.opt.weight_decay = 0.0;
  auto res = pretrain(net, corpus, cfg);
  CHECK(mean_of(res.loss, 450, 500) < 0.5 * std::log(vocab));
}

TEST_CASE("next token pretraining drives an alternating corpus toward zero") {
  const int vocab = 9, L = 16;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 47);
  std::vector<std::vector<int>> corpus;
  for (int w = 0; w < 8; ++w) {
    std::vector<int> s(L);
    for (int t = 0; t < L; ++t) s[static_cast<size_t>(t)] = 4 + (t + w) % 2;
    corpus.push_back(std::move(s));
  }
  PretrainConfig cfg;
  cfg.objective = Objective::NTP;
  cfg.steps = 400;
  cfg.batch_size = 4;
  cfg.seed = 80;
  cfg.opt.schedule.peak = 3e-3;
  cfg.opt.weight_decay = 0.0;
  auto res = pretrain(net, corpus, cfg);
  CHECK(mean_of(res.loss, 350, 400) < 0.1);
}

TEST_CASE("contrastive pretraining reduces its loss on motif data") {
  const int vocab = 9, L = 20;
  std::vector<Path> paths = {make_path({BlockKind::CNN}, {16})};
  Supernet net(paths, 16, vocab, 53);
  Rng data(9);
  std::vector<std::vector<int>> corpus;
  for (int w = 0; w < 16; ++w) {
    auto s = random_tokens(L, vocab, data);
    const std::vector<int> motif = (w % 2 == 0) ? std::vector<int>{4, 5, 6, 7}
                                                : std::vector<int>{7, 6, 5, 4};
    const int off = static_cast<int>(data.uniform_index(L - 4));
    for (int j = 0; j < 4; ++j) s[static_cast<size_t>(off + j)] = motif[static_cast<size_t>(j)];
    corpus.push_back(std::move(s));
  }
  PretrainConfig cfg;
  cfg.objective = Objective::CL;
  cfg.steps = 300;
  cfg.batch_size = 4;
  cfg.seed = 90;
  cfg.opt.schedule.peak = 1e-3;
  auto res = pretrain(net, corpus, cfg);
  CHECK(mean_of(res.loss, 250, 300) < mean_of(res.loss, 0, 50));
}

TEST_CASE("masked pretraining improves its moving average by a fifth") {
  const int vocab = 9, L = 16;
  std::vector<Path> paths = {
      make_path({BlockKind::CNN}, {16}, "a"),
      make_path({BlockKind::CNN, BlockKind::CNN}, {16, 16}, "b"),
  };
  Supernet net(paths, 16, vocab, 59);
  std::vector<std::vector<int>> corpus;
  for (int w = 0; w < 32; ++w) {
    std::vector<int> s(L);
    for (int t = 0; t < L; ++t) s[static_cast<size_t>(t)] = 4 + (t + w) % 4;
    corpus.push_back(std::move(s));
  }
  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 2000;
  cfg.batch_size = 4;
  cfg.seed = 100;
  cfg.opt.schedule.peak = 2e-3;
  auto res = pretrain(net, corpus, cfg);
  REQUIRE(res.loss.size() == 2000);
  const double first = mean_of(res.loss, 0, 100);
  const double last = mean_of(res.loss, 1900, 2000);
  CHECK(last <= 0.8 * first);
}

TEST_CASE("resuming from a checkpoint reproduces the rest of the run") {
  const int vocab = 9, L = 12;
  std::vector<Path> paths = {
      make_path({BlockKind::CNN}, {12}, "a"),
      make_path({BlockKind::LSTM}, {12}, "b"),
  };
  Rng data(12);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 8; ++i) corpus.push_back(random_tokens(L, vocab, data));

  const std::string prefix = "supernet_ckpt_resume";
  PretrainConfig cfg;
  cfg.objective = Objective::MM;
  cfg.steps = 24;
  cfg.batch_size = 2;
  cfg.seed = 110;
  cfg.checkpoint_prefix = prefix;
  cfg.checkpoint_every = 12;

  Supernet full(paths, 12, vocab, 61);
  auto ref = pretrain(full, corpus, cfg);
  REQUIRE(ref.loss.size() == 24);

  Supernet resumed(paths, 12, vocab, 61);
  auto tail = pretrain_resume(resumed, corpus, cfg, prefix + "-step12");
  REQUIRE(tail.loss.size() == 12);
  for (int i = 0; i < 12; ++i) {
    CHECK(tail.loss[static_cast<size_t>(i)] == ref.loss[static_cast<size_t>(12 + i)]);
    CHECK(tail.sampled[static_cast<size_t>(i)] == ref.sampled[static_cast<size_t>(12 + i)]);
  }
  // both runs land on identical weights
  auto a = snapshot(full);
  auto b = snapshot(resumed);
  CHECK(a == b);
  rm_checkpoint(prefix);
  rm_checkpoint(prefix + "-step12");
  rm_checkpoint(prefix + "-step24");
}
