#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqnas/autograd.hpp"
#include "seqnas/blocks.hpp"
#include "seqnas/checkpoint.hpp"
#include "seqnas/optimizer.hpp"
#include "seqnas/space.hpp"

namespace seqnas {

// Identity of a shared block: any two path layers that agree on kind and
// dimensions resolve to the same weights.
struct BlockKey {
  BlockKind kind = BlockKind::CNN;
  int dim_in = 0;
  int dim_out = 0;

  // "CNN_64_128"; doubles as the checkpoint name prefix
  std::string str() const;
  bool operator==(const BlockKey& o) const {
    return kind == o.kind && dim_in == o.dim_in && dim_out == o.dim_out;
  }
  bool operator<(const BlockKey& o) const {
    if (kind != o.kind) return kind < o.kind;
    if (dim_in != o.dim_in) return dim_in < o.dim_in;
    return dim_out < o.dim_out;
  }
};

// Key of layer i; layer 0 consumes the embedding width h0.
BlockKey layer_key(const Path& path, int layer, int h0);

// Sorted distinct keys across a path list.
std::vector<BlockKey> collect_keys(const std::vector<Path>& paths, int h0);

enum class Objective { MM, CL, NTP };
std::string objective_name(Objective o);
Objective objective_from_name(const std::string& s);

// Weight-sharing container: one block per distinct key plus the periphery
// every path runs through, i.e. token embedding, learned positional table,
// per-width adapters onto h0 and a single vocabulary head.
class Supernet {
 public:
  static constexpr int kMaxLen = 256;

  Supernet(std::vector<Path> paths, int h0, int vocab_size, uint64_t seed);

  const std::vector<Path>& paths() const { return paths_; }
  int h0() const { return h0_; }
  int vocab_size() const { return vocab_; }
  size_t registry_size() const { return blocks_.size(); }
  Block& block(const BlockKey& key);

  // (B,L) token ids through embedding + positional table + the path's block
  // stack -> (B, L, h_d)
  TensorPtr backbone(Graph& g, const Path& path, const std::vector<int>& tokens, int batch,
                     int len, bool train, bool causal, Rng& rng);
  // backbone + the terminal width adapter -> (B, L, h0)
  TensorPtr features(Graph& g, const Path& path, const std::vector<int>& tokens, int batch,
                     int len, bool train, bool causal, Rng& rng);
  // vocabulary head -> (..., V)
  TensorPtr lm_logits(Graph& g, const TensorPtr& feats);

  std::vector<TensorPtr> all_params();
  // parameters and buffers under stable names, for checkpoints
  std::map<std::string, TensorPtr> named_tensors();
  void load_state(const std::string& checkpoint_prefix);

 private:
  std::vector<Path> paths_;
  int h0_;
  int vocab_;
  std::map<BlockKey, std::unique_ptr<Block>> blocks_;
  std::map<int, std::pair<TensorPtr, TensorPtr>> adapters_;
  TensorPtr emb_, pos_, head_w_, head_b_;
};

// Uniform draw over the candidate list.
const Path& sample_path(const std::vector<Path>& paths, Rng& rng);

// ---- self-supervised objectives ----

// One corrupted batch. Positions are selected Bernoulli(rate); of those, 80%
// become [MASK], 10% a random non-special token, 10% stay as they were. An
// all-clear draw is resampled so the loss always has support.
struct MmBatch {
  std::vector<int> corrupted;    // B*L input ids
  std::vector<int> masked_rows;  // flat b*L+t indices of the selected positions
  std::vector<int> targets;      // original ids, parallel to masked_rows
  std::vector<int> action;       // 0 = [MASK], 1 = random token, 2 = kept
};
MmBatch make_mm_batch(const std::vector<int>& tokens, int batch, int len, double mask_rate,
                      int vocab_size, Rng& rng);

TensorPtr mm_loss_on(Graph& g, Supernet& net, const Path& path, const MmBatch& mb, int batch,
                     int len, bool train, Rng& rng);
// cross entropy over the corrupted positions only
TensorPtr mm_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                  int batch, int len, double mask_rate, bool train, Rng& rng);

// Softmax over each row of the scaled cosine matrix against the diagonal;
// every row sees its positive plus B-1 in-batch negatives.
TensorPtr nt_xent(Graph& g, const TensorPtr& z1, const TensorPtr& z2, double tau);

// Contiguous crop to round(crop_frac * L) tokens, then Bernoulli(mask_rate)
// replacement with [MASK].
std::vector<int> make_cl_view(const std::vector<int>& seq, double crop_frac, double mask_rate,
                              Rng& rng);

TensorPtr cl_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                  int batch, int len, double tau, double view_mask_rate, double crop_frac,
                  bool train, Rng& rng);

// shifted cross entropy under causal masking: position t predicts t+1
TensorPtr ntp_loss(Graph& g, Supernet& net, const Path& path, const std::vector<int>& tokens,
                   int batch, int len, bool train, Rng& rng);

// ---- pretraining ----

struct PretrainConfig {
  Objective objective = Objective::MM;
  double mask_rate = 0.15;
  double tau_cl = 0.1;
  double cl_view_mask_rate = 0.15;
  double cl_crop_frac = 0.8;
  int steps = 1000;
  int batch_size = 8;
  AdamWConfig opt;
  uint64_t seed = 0;
  std::string checkpoint_prefix;  // empty: no checkpoints are written
  int checkpoint_every = 0;       // 0: only the final checkpoint
};

struct PretrainResult {
  std::vector<double> loss;  // one entry per executed step
  std::vector<int> sampled;  // path index drawn at each step
};

struct PretrainDiverged : std::runtime_error {
  PretrainDiverged(const std::string& what, std::vector<double> trace_)
      : std::runtime_error(what), trace(std::move(trace_)) {}
  std::vector<double> trace;
};

// One uniformly sampled path per step; only that path's blocks and the shared
// periphery receive gradients, everything else stays bit identical. The
// corpus is a list of equal-length token windows drawn with replacement.
// Checkpoints land at "<prefix>-step<N>" plus a final one at "<prefix>".
PretrainResult pretrain(Supernet& net, const std::vector<std::vector<int>>& corpus,
                        const PretrainConfig& cfg);

// Restores tensors and optimizer state from `prefix` and continues to
// cfg.steps. With the seed unchanged the remaining steps replay exactly as
// the uninterrupted run would have produced them.
PretrainResult pretrain_resume(Supernet& net, const std::vector<std::vector<int>>& corpus,
                               const PretrainConfig& cfg, const std::string& prefix);

}  // namespace seqnas
