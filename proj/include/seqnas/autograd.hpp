#pragma once

#include <functional>
#include <vector>

#include "seqnas/tensor.hpp"
#include "seqnas/util.hpp"

namespace seqnas {

// Reverse-mode tape. Ops append nodes in construction order, which is a
// topological order of the DAG; backward() replays the closures once in
// reverse. A Graph is single-threaded; independent Graphs may run in
// parallel as long as they do not step shared parameters concurrently.
class Graph {
 public:
  // ---- elementwise ----
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);  // same shape, or b broadcast over trailing dim
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);  // same shape, or b broadcast over trailing dim
  TensorPtr affine(const TensorPtr& x, double scale, double shift);
  TensorPtr relu(const TensorPtr& x);
  TensorPtr sigmoid(const TensorPtr& x);
  TensorPtr tanh_(const TensorPtr& x);
  TensorPtr softplus(const TensorPtr& x);
  TensorPtr exp_(const TensorPtr& x);
  TensorPtr dropout(const TensorPtr& x, double rate, Rng& rng, bool train);

  // ---- linear algebra ----
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);     // (M,K)x(K,N)
  TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);  // (M,K)x(N,K)^T
  TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);  // x(...,K) w(K,N)
  TensorPtr bmm(const TensorPtr& a, const TensorPtr& b, bool transpose_b = false);  // (B,M,K)x(B,K,N)

  // ---- shape plumbing ----
  TensorPtr slice_time(const TensorPtr& x, int t);                 // (B,L,D) -> (B,D)
  TensorPtr stack_time(const std::vector<TensorPtr>& steps);       // L x (B,D) -> (B,L,D)
  TensorPtr concat_lastdim(const TensorPtr& a, const TensorPtr& b);
  TensorPtr split_heads(const TensorPtr& x, int heads);            // (B,L,H*d) -> (B*H,L,d)
  TensorPtr merge_heads(const TensorPtr& x, int heads);            // (B*H,L,d) -> (B,L,H*d)
  TensorPtr gather_rows(const TensorPtr& x, std::vector<int> rows);  // (N,D) -> (M,D)
  TensorPtr reshape(const TensorPtr& x, std::vector<int> shape);     // same numel

  // ---- normalization / reductions ----
  TensorPtr softmax(const TensorPtr& x, int axis = -1);  // axis must be the last dimension
  TensorPtr layernorm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                      double eps = 1e-5);
  // x (B,L,C); per-channel stats over (B,L).  running_mean/var are buffers
  // mutated in train mode and are not part of the tape.
  TensorPtr batchnorm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                        const TensorPtr& running_mean, const TensorPtr& running_var, bool train,
                        double momentum = 0.1, double eps = 1e-5);
  TensorPtr mean_pool(const TensorPtr& x, int axis);  // (B,L,D) axis=1 -> (B,D); (N,D) axis=0 -> (1,D)
  TensorPtr mean_scalar(const TensorPtr& x);          // mean over all entries -> (1)
  TensorPtr l2_normalize_rows(const TensorPtr& x);
  TensorPtr cosine_similarity(const TensorPtr& a, const TensorPtr& b);  // rowwise -> (N)

  // ---- sequence ops ----
  TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b, int pad_left);
  TensorPtr embedding(const std::vector<int>& ids, int batch, int len, const TensorPtr& table);
  TensorPtr add_causal_mask(const TensorPtr& scores);  // (R,L,L), -inf above diagonal
  TensorPtr fft_circular_conv(const TensorPtr& x, const TensorPtr& filter, bool causal);

  // ---- losses ----
  TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int>& targets);  // (N,V) -> (1)
  TensorPtr mse_loss(const TensorPtr& pred, const std::vector<double>& targets);      // (N)/(N,1) -> (1)

  // Backpropagate from a scalar loss; fills .grad of every tensor that
  // requires grad and contributed to it. Gradients accumulate.
  void backward(const TensorPtr& loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr out;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;

  TensorPtr make_out(std::vector<int> shape, bool req);
  void record(TensorPtr out, std::function<void()> fn);
  static bool needs(const TensorPtr& t) { return t->requires_grad; }
};

}  // namespace seqnas
