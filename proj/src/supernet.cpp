#include "seqnas/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "seqnas/tokenizer.hpp"

namespace seqnas {

std::string BlockKey::str() const {
  return block_kind_name(kind) + "_" + std::to_string(dim_in) + "_" + std::to_string(dim_out);
}

BlockKey layer_key(const Path& path, int layer, int h0) {
  if (layer < 0 || layer >= path.depth || path.types.size() != static_cast<size_t>(path.depth) ||
      path.dims.size() != static_cast<size_t>(path.depth))
    throw std::invalid_argument("layer_key: layer index out of range");
  BlockKey k;
  k.kind = path.types[static_cast<size_t>(layer)];
  k.dim_in = layer == 0 ? h0 : path.dims[static_cast<size_t>(layer - 1)];
  k.dim_out = path.dims[static_cast<size_t>(layer)];
  return k;
}

std::vector<BlockKey> collect_keys(const std::vector<Path>& paths, int h0) {
  std::set<BlockKey> keys;
  for (const auto& p : paths)
    for (int i = 0; i < p.depth; ++i) keys.insert(layer_key(p, i, h0));
  return {keys.begin(), keys.end()};
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::MM: return "mm";
    case Objective::CL: return "cl";
    case Objective::NTP: return "ntp";
  }
  throw std::invalid_argument("unknown objective");
}

Objective objective_from_name(const std::string& s) {
  if (s == "mm") return Objective::MM;
  if (s == "cl") return Objective::CL;
  if (s == "ntp") return Objective::NTP;
  throw std::invalid_argument("unknown objective '" + s + "' (expected mm, cl or ntp)");
}

Supernet::Supernet(std::vector<Path> paths, int h0, int vocab_size, uint64_t seed)
    : paths_(std::move(paths)), h0_(h0), vocab_(vocab_size) {
  if (paths_.empty()) throw std::invalid_argument("supernet needs at least one path");
  if (h0_ < 1) throw std::invalid_argument("supernet: h0 must be positive");
  if (vocab_ <= Vocab::CLS + 1)
    throw std::invalid_argument("supernet: vocabulary must extend past the special tokens");

  Rng rng(seed);
  emb_ = Tensor::zeros({vocab_, h0_});
  for (auto& v : emb_->data) v = rng.uniform(-0.05, 0.05);
  emb_->requires_grad = true;
  emb_->name = "emb.table";
  pos_ = Tensor::zeros({kMaxLen, h0_});
  for (auto& v : pos_->data) v = rng.uniform(-0.05, 0.05);
  pos_->requires_grad = true;
  pos_->name = "pos.table";

  for (const auto& key : collect_keys(paths_, h0_)) {
    BlockSpec spec;
    spec.kind = key.kind;
    spec.dim_in = key.dim_in;
    spec.dim_out = key.dim_out;
    auto blk = build_block(spec, rng);
    for (const auto& p : blk->params()) p->name = key.str() + "." + p->name;
    for (const auto& b : blk->buffers()) b->name = key.str() + "." + b->name;
    blocks_.emplace(key, std::move(blk));
  }

  std::set<int> widths;
  for (const auto& p : paths_) widths.insert(p.dims.back());
  for (int d : widths) {
    auto w = xavier_uniform({d, h0_}, d, h0_, rng, "adapter." + std::to_string(d) + ".w");
    auto b = param_full({h0_}, 0.0, "adapter." + std::to_string(d) + ".b");
    adapters_.emplace(d, std::make_pair(w, b));
  }

  // kept small so an untrained head emits near-uniform predictions
  head_w_ = Tensor::zeros({h0_, vocab_});
  for (auto& v : head_w_->data) v = rng.uniform(-0.02, 0.02);
  head_w_->requires_grad = true;
  head_w_->name = "head.w";
  head_b_ = param_full({vocab_}, 0.0, "head.b");
}

Block& Supernet::block(const BlockKey& key) {
  auto it = blocks_.find(key);
  if (it == blocks_.end())
    throw std::runtime_error("supernet registry has no block " + key.str());
  return *it->second;
}

TensorPtr Supernet::backbone(Graph& g, const Path& path, const std::vector<int>& tokens,
                             int batch, int len, bool train, bool causal, Rng& rng) {
  if (len < 1 || batch < 1) throw std::invalid_argument("backbone: empty batch");
  if (len > kMaxLen)
    throw std::invalid_argument("backbone: sequence length " + std::to_string(len) +
                                " exceeds the positional table (" + std::to_string(kMaxLen) + ")");
  if (tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(len))
    throw std::invalid_argument("backbone: token count does not match batch x len");

  std::vector<int> pos_ids(tokens.size());
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < len; ++t) pos_ids[static_cast<size_t>(b * len + t)] = t;
  auto x = g.add(g.embedding(tokens, batch, len, emb_), g.embedding(pos_ids, batch, len, pos_));
  for (int i = 0; i < path.depth; ++i) {
    auto it = blocks_.find(layer_key(path, i, h0_));
    if (it == blocks_.end())
      throw std::runtime_error("supernet registry has no block " + layer_key(path, i, h0_).str());
    x = it->second->forward(g, x, train, causal, rng);
  }
  return x;
}

TensorPtr Supernet::features(Graph& g, const Path& path, const std::vector<int>& tokens,
                             int batch, int len, bool train, bool causal, Rng& rng) {
  auto x = backbone(g, path, tokens, batch, len, train, causal, rng);
  auto it = adapters_.find(path.dims.back());
  if (it == adapters_.end())
    throw std::runtime_error("supernet has no adapter for width " +
                             std::to_string(path.dims.back()));
  return g.linear(x, it->second.first, it->second.second);
}

TensorPtr Supernet::lm_logits(Graph& g, const TensorPtr& feats) {
  return g.linear(feats, head_w_, head_b_);
}

std::vector<TensorPtr> Supernet::all_params() {
  std::vector<TensorPtr> out = {emb_, pos_};
  for (auto& [d, a] : adapters_) {
    out.push_back(a.first);
    out.push_back(a.second);
  }
  out.push_back(head_w_);
  out.push_back(head_b_);
  for (auto& [key, blk] : blocks_)
    for (const auto& p : blk->params()) out.push_back(p);
  return out;
}

std::map<std::string, TensorPtr> Supernet::named_tensors() {
  std::map<std::string, TensorPtr> out;
  auto put = [&out](const TensorPtr& t) {
    if (!out.emplace(t->name, t).second)
      throw std::runtime_error("supernet: duplicate tensor name '" + t->name + "'");
  };
  for (const auto& p : all_params()) put(p);
  for (auto& [key, blk] : blocks_)
    for (const auto& b : blk->buffers()) put(b);
  return out;
}

void Supernet::load_state(const std::string& checkpoint_prefix) {
  load_checkpoint(checkpoint_prefix, named_tensors());
}

const Path& sample_path(const std::vector<Path>& paths, Rng& rng) {
  if (paths.empty()) throw std::invalid_argument("sample_path: empty candidate list");
  return paths[rng.uniform_index(paths.size())];
}

// ---- objectives ----

MmBatch make_mm_batch(const std::vector<int>& tokens, int batch, int len, double mask_rate,
                      int vocab_size, Rng& rng) {
  if (tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(len))
    throw std::invalid_argument("make_mm_batch: token count does not match batch x len");
  if (mask_rate <= 0.0 || mask_rate > 1.0)
    throw std::invalid_argument("make_mm_batch: mask rate must lie in (0, 1]");
  if (vocab_size <= Vocab::CLS + 1)
    throw std::invalid_argument("make_mm_batch: no non-special tokens to corrupt with");

  for (int attempt = 0; attempt < 10000; ++attempt) {
    MmBatch mb;
    mb.corrupted = tokens;
    for (int row = 0; row < batch * len; ++row) {
      if (!rng.bernoulli(mask_rate)) continue;
      mb.masked_rows.push_back(row);
      mb.targets.push_back(tokens[static_cast<size_t>(row)]);
      const double u = rng.uniform();
      if (u < 0.8) {
        mb.corrupted[static_cast<size_t>(row)] = Vocab::MASK;
        mb.action.push_back(0);
      } else if (u < 0.9) {
        mb.corrupted[static_cast<size_t>(row)] =
            4 + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(vocab_size - 4)));
        mb.action.push_back(1);
      } else {
        mb.action.push_back(2);
      }
    }
    if (!mb.masked_rows.empty()) return mb;
  }
  throw std::runtime_error("make_mm_batch: drew an empty mask 10000 times in a row");
}

TensorPtr mm_loss_on(Graph& g, Supernet& net, const Path& path, const MmBatch& mb, int batch,
                     int len, bool train, Rng& rng) {
  if (mb.masked_rows.empty()) throw std::invalid_argument("mm_loss_on: no masked positions");
  auto feats = net.features(g, path, mb.corrupted, batch, len, train, false, rng);
  auto flat = g.reshape(feats, {batch * len, net.h0()});
  auto picked = g.gather_rows(flat, mb.masked_rows);
  return g.cross_entropy(net.lm_logits(g, picked), mb.targets);
}

TensorPtr mm_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                  int batch, int len, double mask_rate, bool train, Rng& rng) {
  auto mb = make_mm_batch(tokens, batch, len, mask_rate, net.vocab_size(), rng);
  return mm_loss_on(g, net, path, mb, batch, len, train, rng);
}

TensorPtr nt_xent(Graph& g, const TensorPtr& z1, const TensorPtr& z2, double tau) {
  if (z1->ndim() != 2 || z2->ndim() != 2 || z1->shape != z2->shape)
    throw std::invalid_argument("nt_xent: expected two equally shaped (B,D) embeddings");
  const int b = z1->dim(0);
  if (b < 2) throw std::invalid_argument("nt_xent: a batch of one has no negatives");
  if (tau <= 0.0) throw std::invalid_argument("nt_xent: temperature must be positive");
  auto sim = g.matmul_nt(g.l2_normalize_rows(z1), g.l2_normalize_rows(z2));
  auto scaled = g.affine(sim, 1.0 / tau, 0.0);
  std::vector<int> diag(static_cast<size_t>(b));
  std::iota(diag.begin(), diag.end(), 0);
  return g.cross_entropy(scaled, diag);
}

std::vector<int> make_cl_view(const std::vector<int>& seq, double crop_frac, double mask_rate,
                              Rng& rng) {
  if (seq.empty()) throw std::invalid_argument("make_cl_view: empty sequence");
  if (crop_frac <= 0.0 || crop_frac > 1.0)
    throw std::invalid_argument("make_cl_view: crop fraction must lie in (0, 1]");
  const int len = static_cast<int>(seq.size());
  int keep = std::max(1, static_cast<int>(std::lround(crop_frac * len)));
  keep = std::min(keep, len);
  const int start =
      keep < len ? static_cast<int>(rng.uniform_index(static_cast<uint64_t>(len - keep + 1))) : 0;
  std::vector<int> view(seq.begin() + start, seq.begin() + start + keep);
  for (auto& id : view)
    if (rng.bernoulli(mask_rate)) id = Vocab::MASK;
  return view;
}

TensorPtr cl_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                  int batch, int len, double tau, double view_mask_rate, double crop_frac,
                  bool train, Rng& rng) {
  if (batch < 2)
    throw std::invalid_argument("cl_loss: contrastive batches need at least two sequences");
  if (tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(len))
    throw std::invalid_argument("cl_loss: token count does not match batch x len");

  std::vector<int> v1, v2;
  int keep = 0;
  for (int b = 0; b < batch; ++b) {
    std::vector<int> seq(tokens.begin() + static_cast<long>(b) * len,
                         tokens.begin() + static_cast<long>(b + 1) * len);
    auto a = make_cl_view(seq, crop_frac, view_mask_rate, rng);
    auto c = make_cl_view(seq, crop_frac, view_mask_rate, rng);
    keep = static_cast<int>(a.size());
    v1.insert(v1.end(), a.begin(), a.end());
    v2.insert(v2.end(), c.begin(), c.end());
  }
  auto z1 = g.mean_pool(net.features(g, path, v1, batch, keep, train, false, rng), 1);
  auto z2 = g.mean_pool(net.features(g, path, v2, batch, keep, train, false, rng), 1);
  return nt_xent(g, z1, z2, tau);
}

TensorPtr ntp_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                   int batch, int len, bool train, Rng& rng) {
  if (len < 2)
    throw std::invalid_argument("ntp_loss: next-token prediction needs length >= 2");
  auto feats = net.features(g, path, tokens, batch, len, train, true, rng);
  auto flat = g.reshape(feats, {batch * len, net.h0()});
  std::vector<int> rows, targets;
  rows.reserve(static_cast<size_t>(batch) * static_cast<size_t>(len - 1));
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t + 1 < len; ++t) {
      rows.push_back(b * len + t);
      targets.push_back(tokens[static_cast<size_t>(b * len + t + 1)]);
    }
  auto picked = g.gather_rows(flat, rows);
  return g.cross_entropy(net.lm_logits(g, picked), targets);
}

// ---- pretraining ----

namespace {

void save_pretrain_checkpoint(const std::string& path, Supernet& net, AdamW& opt, int step,
                              Objective objective) {
  auto tensors = net.named_tensors();
  for (auto& [name, t] : opt.state_tensors()) tensors.emplace(name, t);
  tensors.emplace("pretrain.step", Tensor::scalar(static_cast<double>(step)));
  tensors.emplace("pretrain.objective", Tensor::scalar(static_cast<double>(static_cast<int>(objective))));
  save_checkpoint(path, tensors);
}

PretrainResult run_pretrain(Supernet& net, const std::vector<std::vector<int>>& corpus,
                            const PretrainConfig& cfg, AdamW& opt, int start) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  const size_t len = corpus.front().size();
  for (const auto& s : corpus)
    if (s.size() != len)
      throw std::invalid_argument("pretrain: corpus windows must share one length");
  if (len == 0) throw std::invalid_argument("pretrain: zero-length corpus windows");
  if (cfg.batch_size < 1) throw std::invalid_argument("pretrain: batch size must be positive");
  if (cfg.steps < start)
    throw std::invalid_argument("pretrain: checkpoint is already past the requested step count");
  const int seq_len = static_cast<int>(len);

  auto params = net.all_params();
  PretrainResult res;
  for (int step = start + 1; step <= cfg.steps; ++step) {
    // one self-contained stream per step, so an interrupted run resumes on
    // exactly the draws the full run would have made
    Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(step)));
    const int pi = static_cast<int>(rng.uniform_index(net.paths().size()));
    const Path& path = net.paths()[static_cast<size_t>(pi)];

    std::vector<int> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size) * len);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& s = corpus[rng.uniform_index(corpus.size())];
      batch.insert(batch.end(), s.begin(), s.end());
    }

    Graph g;
    TensorPtr loss;
    switch (cfg.objective) {
      case Objective::MM:
        loss = mm_loss(g, net, path, batch, cfg.batch_size, seq_len, cfg.mask_rate, true, rng);
        break;
      case Objective::CL:
        loss = cl_loss(g, net, path, batch, cfg.batch_size, seq_len, cfg.tau_cl,
                       cfg.cl_view_mask_rate, cfg.cl_crop_frac, true, rng);
        break;
      case Objective::NTP:
        loss = ntp_loss(g, net, path, batch, cfg.batch_size, seq_len, true, rng);
        break;
    }

    const double lv = loss->item();
    res.loss.push_back(lv);
    res.sampled.push_back(pi);
    if (!std::isfinite(lv))
      throw PretrainDiverged("pretraining diverged: non-finite loss at step " +
                                 std::to_string(step),
                             res.loss);

    opt.zero_grad();
    g.backward(loss);
    for (const auto& p : params) {
      if (!p->has_grad()) continue;
      for (double gv : p->grad)
        if (!std::isfinite(gv))
          throw PretrainDiverged("pretraining diverged: non-finite gradient in '" + p->name +
                                     "' at step " + std::to_string(step),
                                 res.loss);
    }
    opt.step();

    if (!cfg.checkpoint_prefix.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0)
      save_pretrain_checkpoint(cfg.checkpoint_prefix + "-step" + std::to_string(step), net, opt,
                               step, cfg.objective);
  }

  if (!cfg.checkpoint_prefix.empty())
    save_pretrain_checkpoint(cfg.checkpoint_prefix, net, opt, cfg.steps, cfg.objective);
  return res;
}

}  // namespace

PretrainResult pretrain(Supernet& net, const std::vector<std::vector<int>>& corpus,
                        const PretrainConfig& cfg) {
  AdamW opt(net.all_params(), cfg.opt);
  return run_pretrain(net, corpus, cfg, opt, 0);
}

PretrainResult pretrain_resume(Supernet& net, const std::vector<std::vector<int>>& corpus,
                               const PretrainConfig& cfg, const std::string& prefix) {
  net.load_state(prefix);
  AdamW opt(net.all_params(), cfg.opt);
  auto opt_state = opt.state_tensors();
  auto step = Tensor::scalar(0.0);
  opt_state.emplace("pretrain.step", step);
  load_checkpoint(prefix, opt_state);
  opt_state.erase("pretrain.step");
  opt.load_state_tensors(opt_state);
  return run_pretrain(net, corpus, cfg, opt, static_cast<int>(step->item()));
}

}  // namespace seqnas
