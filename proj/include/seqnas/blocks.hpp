#pragma once

#include <memory>
#include <string>
#include <vector>

#include "seqnas/autograd.hpp"
#include "seqnas/tensor.hpp"
#include "seqnas/util.hpp"

namespace seqnas {

enum class BlockKind { CNN = 0, HYENA = 1, TRANSFORMER = 2, LSTM = 3, MAMBA = 4 };
constexpr int kNumBlockKinds = 5;

std::string block_kind_name(BlockKind k);
BlockKind block_kind_from_name(const std::string& name);

struct BlockSpec {
  BlockKind kind = BlockKind::CNN;
  int dim_in = 0;
  int dim_out = 0;
  int kernel = 5;  // CNN only; 5 or 9, padding follows as kernel/2
  double lstm_dropout = 0.4;
};

// Structure is immutable; parameters are shared mutable tensors. Forward maps
// (B, L, dim_in) -> (B, L, dim_out).
class Block {
 public:
  explicit Block(const BlockSpec& spec) : spec_(spec) {}
  virtual ~Block() = default;
  virtual TensorPtr forward(Graph& g, const TensorPtr& x, bool train, bool causal, Rng& rng) = 0;
  virtual std::vector<TensorPtr> params() = 0;
  virtual std::vector<TensorPtr> buffers() { return {}; }
  const BlockSpec& spec() const { return spec_; }

 protected:
  BlockSpec spec_;
};

std::unique_ptr<Block> build_block(const BlockSpec& spec, Rng& rng);

// init helpers, shared with the supernet's embedding and head layers
TensorPtr xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng,
                         std::string name);
TensorPtr param_full(std::vector<int> shape, double v, std::string name);
// fills an n x n matrix with orthonormal rows (Gram-Schmidt on normal draws)
void fill_orthogonal(double* w, int n, Rng& rng);

}  // namespace seqnas
