#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "seqnas/evaluator.hpp"
#include "seqnas/space.hpp"

namespace seqnas {

inline constexpr int kArchFeatDim = kNumBlockKinds + 2;
inline constexpr int kTaskEmbedDim = 128;

// Graph view of a sequential path: strictly super-diagonal adjacency and one
// node per layer with one-hot kind plus min-max normalized in/out widths.
struct ArchEncoding {
  int n = 0;
  std::vector<std::vector<double>> adj;  // n x n
  std::vector<std::vector<double>> x;    // n x kArchFeatDim
};

// dim_bounds = (d_min, d_max) over the space, h0 included; every width on the
// path must lie inside them
ArchEncoding encode_arch(const Path& path, int h0, std::pair<int, int> dim_bounds);

// hashed bag of words over the lowercased description, L2-normalized
std::vector<double> embed_task(const TaskSpec& spec);

struct PredictorConfig {
  int hidden = 64;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch_size = 32;
  int epochs = 50;
  double dropout = 0.3;
  uint64_t seed = 0;
};

// Two rounds of message passing over the path graph (state <- self transform
// + transformed mean of predecessors), mean readout, then a two-layer
// perceptron over [arch || task] that emits one score.
class Predictor {
 public:
  Predictor(int hidden, uint64_t seed);

  double score(const ArchEncoding& enc, const std::vector<double>& task_emb) const;
  const std::vector<double>& loss_history() const { return loss_history_; }
  int hidden() const { return hidden_; }

  std::map<std::string, TensorPtr> named_tensors() const;
  void save(const std::string& prefix) const;
  void load(const std::string& prefix);

  TensorPtr forward(Graph& g, const ArchEncoding& enc, const std::vector<double>& task_emb,
                    double dropout, bool train, Rng& rng) const;
  std::vector<TensorPtr> params() const;
  std::vector<double>& mutable_loss_history() { return loss_history_; }

 private:
  int hidden_ = 64;
  TensorPtr r1_self_, r1_pred_, r1_b_;
  TensorPtr r2_self_, r2_pred_, r2_b_;
  TensorPtr mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
  std::vector<double> loss_history_;
};

// Fits the surrogate on every record whose task is in train_tasks, against
// per-task z-scored, direction-adjusted targets (duplicate records average
// first, as in ranking). Record order does not matter.
Predictor train_predictor(const std::vector<PerfRecord>& records,
                          const std::map<std::string, ArchEncoding>& encodings,
                          const std::map<int, std::vector<double>>& embeddings,
                          const std::vector<TaskSpec>& tasks, const std::vector<int>& train_tasks,
                          const PredictorConfig& cfg = {});

// descending predicted score, ties by id
std::vector<std::string> predict_topk(const Predictor& p,
                                      const std::map<std::string, ArchEncoding>& candidates,
                                      const std::vector<double>& task_emb, int k);

// per task: the top ceil(frac * n) architectures by direction-adjusted metric
std::map<int, std::set<std::string>> ground_truth_sets(const std::vector<PerfRecord>& records,
                                                       const std::vector<TaskSpec>& tasks,
                                                       double frac = 0.1);

struct PredictionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double hit_rate = 0.0;
};
PredictionMetrics prediction_metrics(const std::vector<std::string>& pred,
                                     const std::set<std::string>& truth, int k);

struct TaskSplit {
  std::vector<int> train, test;
};
// named presets: "supervised" or "transfer"
TaskSplit predictor_task_split(const std::string& setting);

}  // namespace seqnas
