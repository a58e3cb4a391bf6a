#include "seqnas/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace seqnas {

std::string block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::CNN: return "CNN";
    case BlockKind::HYENA: return "HYENA";
    case BlockKind::TRANSFORMER: return "TRANSFORMER";
    case BlockKind::LSTM: return "LSTM";
    case BlockKind::MAMBA: return "MAMBA";
  }
  throw std::invalid_argument("unknown block kind");
}

BlockKind block_kind_from_name(const std::string& name) {
  for (int i = 0; i < kNumBlockKinds; ++i)
    if (block_kind_name(static_cast<BlockKind>(i)) == name) return static_cast<BlockKind>(i);
  throw std::invalid_argument("unknown block kind: " + name);
}

TensorPtr xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng,
                         std::string name) {
  auto t = Tensor::zeros(std::move(shape));
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t->data) v = rng.uniform(-limit, limit);
  t->requires_grad = true;
  t->name = std::move(name);
  return t;
}

TensorPtr param_full(std::vector<int> shape, double v, std::string name) {
  auto t = Tensor::full(std::move(shape), v);
  t->requires_grad = true;
  t->name = std::move(name);
  return t;
}

void fill_orthogonal(double* w, int n, Rng& rng) {
  for (int i = 0; i < n; ++i) {
    while (true) {
      for (int j = 0; j < n; ++j) w[i * n + j] = rng.normal();
      for (int p = 0; p < i; ++p) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += w[i * n + j] * w[p * n + j];
        for (int j = 0; j < n; ++j) w[i * n + j] -= dot * w[p * n + j];
      }
      double nrm = 0.0;
      for (int j = 0; j < n; ++j) nrm += w[i * n + j] * w[i * n + j];
      nrm = std::sqrt(nrm);
      if (nrm > 1e-8) {
        for (int j = 0; j < n; ++j) w[i * n + j] /= nrm;
        break;
      }
    }
  }
}

namespace {

void check_spec(const BlockSpec& spec) {
  if (spec.dim_in <= 0 || spec.dim_out <= 0)
    throw std::invalid_argument("block dims must be positive");
  if (spec.kind == BlockKind::CNN && spec.kernel != 5 && spec.kernel != 9)
    throw std::invalid_argument("cnn kernel must be 5 or 9");
  if (spec.kind == BlockKind::TRANSFORMER && spec.dim_out % 64 != 0)
    throw std::invalid_argument("transformer dim_out must be divisible by 64");
}

class CnnBlock : public Block {
 public:
  CnnBlock(const BlockSpec& spec, Rng& rng) : Block(spec) {
    const int ci = spec.dim_in, co = spec.dim_out, k = spec.kernel;
    w_ = xavier_uniform({co, ci, k}, ci * k, co * k, rng, "conv.w");
    b_ = param_full({co}, 0.0, "conv.b");
    gamma_ = param_full({co}, 1.0, "bn.gamma");
    beta_ = param_full({co}, 0.0, "bn.beta");
    rm_ = Tensor::zeros({co});
    rm_->name = "bn.running_mean";
    rv_ = Tensor::full({co}, 1.0);
    rv_->name = "bn.running_var";
  }

  TensorPtr forward(Graph& g, const TensorPtr& x, bool train, bool causal, Rng&) override {
    const int pad = causal ? spec_.kernel - 1 : spec_.kernel / 2;
    auto y = g.relu(g.conv1d(x, w_, b_, pad));
    return g.batchnorm1d(y, gamma_, beta_, rm_, rv_, train);
  }

  std::vector<TensorPtr> params() override { return {w_, b_, gamma_, beta_}; }
  std::vector<TensorPtr> buffers() override { return {rm_, rv_}; }

 private:
  TensorPtr w_, b_, gamma_, beta_, rm_, rv_;
};

class TransformerBlock : public Block {
 public:
  TransformerBlock(const BlockSpec& spec, Rng& rng) : Block(spec), heads_(spec.dim_out / 64) {
    const int di = spec.dim_in, d = spec.dim_out;
    if (di != d) {
      w_in_ = xavier_uniform({di, d}, di, d, rng, "in.w");
      b_in_ = param_full({d}, 0.0, "in.b");
    }
    ln1_g_ = param_full({d}, 1.0, "ln1.gamma");
    ln1_b_ = param_full({d}, 0.0, "ln1.beta");
    ln2_g_ = param_full({d}, 1.0, "ln2.gamma");
    ln2_b_ = param_full({d}, 0.0, "ln2.beta");
    wq_ = xavier_uniform({d, d}, d, d, rng, "attn.wq");
    wk_ = xavier_uniform({d, d}, d, d, rng, "attn.wk");
    wv_ = xavier_uniform({d, d}, d, d, rng, "attn.wv");
    wo_ = xavier_uniform({d, d}, d, d, rng, "attn.wo");
    bq_ = param_full({d}, 0.0, "attn.bq");
    bk_ = param_full({d}, 0.0, "attn.bk");
    bv_ = param_full({d}, 0.0, "attn.bv");
    bo_ = param_full({d}, 0.0, "attn.bo");
    w1_ = xavier_uniform({d, 4 * d}, d, 4 * d, rng, "ff.w1");
    b1_ = param_full({4 * d}, 0.0, "ff.b1");
    w2_ = xavier_uniform({4 * d, d}, 4 * d, d, rng, "ff.w2");
    b2_ = param_full({d}, 0.0, "ff.b2");
  }

  TensorPtr forward(Graph& g, const TensorPtr& x, bool, bool causal, Rng&) override {
    auto h = w_in_ ? g.linear(x, w_in_, b_in_) : x;
    auto a = g.layernorm(h, ln1_g_, ln1_b_);
    auto q = g.split_heads(g.linear(a, wq_, bq_), heads_);
    auto k = g.split_heads(g.linear(a, wk_, bk_), heads_);
    auto v = g.split_heads(g.linear(a, wv_, bv_), heads_);
    auto scores = g.affine(g.bmm(q, k, true), 1.0 / 8.0, 0.0);  // 1/sqrt(64)
    if (causal) scores = g.add_causal_mask(scores);
    auto ctx = g.merge_heads(g.bmm(g.softmax(scores), v), heads_);
    h = g.add(h, g.linear(ctx, wo_, bo_));
    auto f = g.layernorm(h, ln2_g_, ln2_b_);
    f = g.linear(g.relu(g.linear(f, w1_, b1_)), w2_, b2_);
    return g.add(h, f);
  }

  std::vector<TensorPtr> params() override {
    std::vector<TensorPtr> p;
    if (w_in_) {
      p.push_back(w_in_);
      p.push_back(b_in_);
    }
    for (const auto& t : {ln1_g_, ln1_b_, ln2_g_, ln2_b_, wq_, wk_, wv_, wo_, bq_, bk_, bv_, bo_,
                          w1_, b1_, w2_, b2_})
      p.push_back(t);
    return p;
  }

  int heads() const { return heads_; }

 private:
  int heads_;
  TensorPtr w_in_, b_in_;
  TensorPtr ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  TensorPtr wq_, wk_, wv_, wo_, bq_, bk_, bv_, bo_;
  TensorPtr w1_, b1_, w2_, b2_;
};

class LstmBlock : public Block {
 public:
  LstmBlock(const BlockSpec& spec, Rng& rng) : Block(spec) {
    const int di = spec.dim_in, h = spec.dim_out;
    const char* gates = "ifgo";
    for (int gi = 0; gi < 4; ++gi) {
      const std::string gate(1, gates[gi]);
      wx_[gi] = xavier_uniform({di, h}, di, h, rng, "w_x" + gate);
      wh_[gi] = param_full({h, h}, 0.0, "w_h" + gate);
      fill_orthogonal(wh_[gi]->data.data(), h, rng);
      b_[gi] = param_full({h}, 0.0, "b_" + gate);
    }
  }

  TensorPtr forward(Graph& g, const TensorPtr& x, bool train, bool, Rng& rng) override {
    const int bsz = x->dim(0), len = x->dim(1);
    std::vector<TensorPtr> steps;
    TensorPtr ht = Tensor::zeros({bsz, spec_.dim_out});
    TensorPtr ct = Tensor::zeros({bsz, spec_.dim_out});
    for (int t = 0; t < len; ++t) {
      auto xt = g.slice_time(x, t);
      auto i = g.sigmoid(g.add(g.linear(xt, wx_[0], b_[0]), g.matmul(ht, wh_[0])));
      auto f = g.sigmoid(g.add(g.linear(xt, wx_[1], b_[1]), g.matmul(ht, wh_[1])));
      auto z = g.tanh_(g.add(g.linear(xt, wx_[2], b_[2]), g.matmul(ht, wh_[2])));
      auto o = g.sigmoid(g.add(g.linear(xt, wx_[3], b_[3]), g.matmul(ht, wh_[3])));
      ct = g.add(g.mul(f, ct), g.mul(i, z));
      ht = g.mul(o, g.tanh_(ct));
      steps.push_back(ht);
    }
    auto y = g.stack_time(steps);
    return g.dropout(y, spec_.lstm_dropout, rng, train);
  }

  std::vector<TensorPtr> params() override {
    std::vector<TensorPtr> p;
    for (int gi = 0; gi < 4; ++gi) {
      p.push_back(wx_[gi]);
      p.push_back(wh_[gi]);
      p.push_back(b_[gi]);
    }
    return p;
  }

 private:
  TensorPtr wx_[4], wh_[4], b_[4];
};

class MambaBlock : public Block {
 public:
  MambaBlock(const BlockSpec& spec, Rng& rng) : Block(spec) {
    const int di = spec.dim_in, d = spec.dim_out;
    ln_g_ = param_full({di}, 1.0, "ln.gamma");
    ln_b_ = param_full({di}, 0.0, "ln.beta");
    if (di != d) {
      w_p_ = xavier_uniform({di, d}, di, d, rng, "proj.w");
      b_p_ = param_full({d}, 0.0, "proj.b");
    }
    w_delta_ = xavier_uniform({d, d}, d, d, rng, "delta.w");
    b_delta_ = param_full({d}, 0.0, "delta.b");
    a_ = param_full({d}, 1.0, "decay.a");
    w_gate_ = xavier_uniform({d, d}, d, d, rng, "gate.w");
    b_gate_ = param_full({d}, 0.0, "gate.b");
  }

  TensorPtr forward(Graph& g, const TensorPtr& x, bool, bool, Rng&) override {
    auto h = g.layernorm(x, ln_g_, ln_b_);
    if (w_p_) h = g.linear(h, w_p_, b_p_);
    const int bsz = h->dim(0), len = h->dim(1);
    auto rate = g.softplus(a_);
    TensorPtr s = Tensor::zeros({bsz, spec_.dim_out});
    std::vector<TensorPtr> steps;
    for (int t = 0; t < len; ++t) {
      auto ut = g.slice_time(h, t);
      auto delta = g.softplus(g.linear(ut, w_delta_, b_delta_));
      auto lam = g.exp_(g.affine(g.mul(delta, rate), -1.0, 0.0));
      s = g.add(g.mul(lam, s), g.mul(g.affine(lam, -1.0, 1.0), ut));
      auto gate = g.sigmoid(g.linear(ut, w_gate_, b_gate_));
      steps.push_back(g.mul(s, gate));
    }
    return g.stack_time(steps);
  }

  std::vector<TensorPtr> params() override {
    std::vector<TensorPtr> p = {ln_g_, ln_b_};
    if (w_p_) {
      p.push_back(w_p_);
      p.push_back(b_p_);
    }
    for (const auto& t : {w_delta_, b_delta_, a_, w_gate_, b_gate_}) p.push_back(t);
    return p;
  }

 private:
  TensorPtr ln_g_, ln_b_, w_p_, b_p_, w_delta_, b_delta_, a_, w_gate_, b_gate_;
};

class HyenaBlock : public Block {
 public:
  HyenaBlock(const BlockSpec& spec, Rng& rng) : Block(spec) {
    const int di = spec.dim_in, d = spec.dim_out;
    if (di != d) {
      w_p_ = xavier_uniform({di, d}, di, d, rng, "proj.w");
      b_p_ = param_full({d}, 0.0, "proj.b");
    }
    w1_ = xavier_uniform({1, kHidden}, 1, kHidden, rng, "filter.w1");
    b1_ = param_full({kHidden}, 0.0, "filter.b1");
    w2_ = xavier_uniform({kHidden, d}, kHidden, d, rng, "filter.w2");
    b2_ = param_full({d}, 0.0, "filter.b2");
  }

  TensorPtr forward(Graph& g, const TensorPtr& x, bool, bool causal, Rng&) override {
    auto h = w_p_ ? g.linear(x, w_p_, b_p_) : x;
    const int len = h->dim(1);
    auto pos = Tensor::zeros({len, 1});
    for (int t = 0; t < len; ++t)
      pos->data[static_cast<size_t>(t)] = static_cast<double>(t) / std::max(len - 1, 1);
    auto filt = g.linear(g.relu(g.linear(pos, w1_, b1_)), w2_, b2_);
    return g.fft_circular_conv(h, filt, causal);
  }

  std::vector<TensorPtr> params() override {
    std::vector<TensorPtr> p;
    if (w_p_) {
      p.push_back(w_p_);
      p.push_back(b_p_);
    }
    for (const auto& t : {w1_, b1_, w2_, b2_}) p.push_back(t);
    return p;
  }

 private:
  static constexpr int kHidden = 16;
  TensorPtr w_p_, b_p_, w1_, b1_, w2_, b2_;
};

}  // namespace

std::unique_ptr<Block> build_block(const BlockSpec& spec, Rng& rng) {
  check_spec(spec);
  switch (spec.kind) {
    case BlockKind::CNN: return std::make_unique<CnnBlock>(spec, rng);
    case BlockKind::HYENA: return std::make_unique<HyenaBlock>(spec, rng);
    case BlockKind::TRANSFORMER: return std::make_unique<TransformerBlock>(spec, rng);
    case BlockKind::LSTM: return std::make_unique<LstmBlock>(spec, rng);
    case BlockKind::MAMBA: return std::make_unique<MambaBlock>(spec, rng);
  }
  throw std::invalid_argument("unknown block kind");
}

}  // namespace seqnas
