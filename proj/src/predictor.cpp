#include "seqnas/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqnas/blocks.hpp"
#include "seqnas/checkpoint.hpp"

namespace seqnas {

ArchEncoding encode_arch(const Path& path, int h0, std::pair<int, int> dim_bounds) {
  const auto [lo, hi] = dim_bounds;
  if (hi <= lo) throw std::invalid_argument("encode_arch: degenerate dimension bounds");
  if (path.depth < 1 || path.dims.size() != static_cast<size_t>(path.depth) ||
      path.types.size() != static_cast<size_t>(path.depth))
    throw std::invalid_argument("encode_arch: malformed path");
  auto z = [&](int h) {
    if (h < lo || h > hi)
      throw std::invalid_argument("encode_arch: width " + std::to_string(h) +
                                  " outside bounds [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]");
    return static_cast<double>(h - lo) / static_cast<double>(hi - lo);
  };

  ArchEncoding e;
  e.n = path.depth;
  e.adj.assign(static_cast<size_t>(e.n), std::vector<double>(static_cast<size_t>(e.n), 0.0));
  for (int i = 0; i + 1 < e.n; ++i) e.adj[static_cast<size_t>(i)][static_cast<size_t>(i) + 1] = 1.0;
  for (int i = 0; i < e.n; ++i) {
    std::vector<double> row(kArchFeatDim, 0.0);
    row[static_cast<size_t>(path.types[static_cast<size_t>(i)])] = 1.0;
    row[kNumBlockKinds] = z(i == 0 ? h0 : path.dims[static_cast<size_t>(i - 1)]);
    row[kNumBlockKinds + 1] = z(path.dims[static_cast<size_t>(i)]);
    e.x.push_back(std::move(row));
  }
  return e;
}

std::vector<double> embed_task(const TaskSpec& spec) {
  const auto words = split_words_lower(spec.description);
  if (words.empty()) throw std::invalid_argument("embed_task: empty task description");
  std::vector<double> v(kTaskEmbedDim, 0.0);
  for (const auto& w : words) v[fnv1a(w) % kTaskEmbedDim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Predictor::Predictor(int hidden, uint64_t seed) : hidden_(hidden) {
  if (hidden < 1) throw std::invalid_argument("predictor: hidden width must be positive");
  Rng rng(seed);
  r1_self_ = xavier_uniform({kArchFeatDim, hidden}, kArchFeatDim, hidden, rng, "gnn.r1.self.w");
  r1_pred_ = xavier_uniform({kArchFeatDim, hidden}, kArchFeatDim, hidden, rng, "gnn.r1.pred.w");
  r1_b_ = param_full({hidden}, 0.0, "gnn.r1.b");
  r2_self_ = xavier_uniform({hidden, hidden}, hidden, hidden, rng, "gnn.r2.self.w");
  r2_pred_ = xavier_uniform({hidden, hidden}, hidden, hidden, rng, "gnn.r2.pred.w");
  r2_b_ = param_full({hidden}, 0.0, "gnn.r2.b");
  const int cat = hidden + kTaskEmbedDim;
  mlp_w1_ = xavier_uniform({cat, hidden}, cat, hidden, rng, "mlp.w1");
  mlp_b1_ = param_full({hidden}, 0.0, "mlp.b1");
  mlp_w2_ = xavier_uniform({hidden, 1}, hidden, 1, rng, "mlp.w2");
  mlp_b2_ = param_full({1}, 0.0, "mlp.b2");
}

TensorPtr Predictor::forward(Graph& g, const ArchEncoding& enc,
                             const std::vector<double>& task_emb, double dropout, bool train,
                             Rng& rng) const {
  if (enc.n < 1) throw std::invalid_argument("predictor: empty architecture encoding");
  if (task_emb.size() != static_cast<size_t>(kTaskEmbedDim))
    throw std::invalid_argument("predictor: task embedding has the wrong width");

  const size_t n = static_cast<size_t>(enc.n);
  std::vector<double> flat;
  flat.reserve(n * kArchFeatDim);
  for (const auto& row : enc.x) flat.insert(flat.end(), row.begin(), row.end());
  auto x0 = Tensor::from_data({enc.n, kArchFeatDim}, std::move(flat));

  // row i of pm averages the states of i's predecessors (edge j -> i)
  std::vector<double> pm(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double indeg = 0;
    for (size_t j = 0; j < n; ++j) indeg += enc.adj[j][i] != 0.0;
    if (indeg == 0) continue;
    for (size_t j = 0; j < n; ++j)
      if (enc.adj[j][i] != 0.0) pm[i * n + j] = 1.0 / indeg;
  }
  auto mix = Tensor::from_data({enc.n, enc.n}, std::move(pm));

  auto s1 = g.relu(
      g.add(g.linear(x0, r1_self_, r1_b_), g.matmul(g.matmul(mix, x0), r1_pred_)));
  auto s2 = g.relu(
      g.add(g.linear(s1, r2_self_, r2_b_), g.matmul(g.matmul(mix, s1), r2_pred_)));

  auto ha = g.mean_pool(s2, 0);
  auto ht = Tensor::from_data({1, kTaskEmbedDim}, task_emb);
  auto h = g.relu(g.linear(g.concat_lastdim(ha, ht), mlp_w1_, mlp_b1_));
  h = g.dropout(h, dropout, rng, train);
  return g.linear(h, mlp_w2_, mlp_b2_);
}

double Predictor::score(const ArchEncoding& enc, const std::vector<double>& task_emb) const {
  Graph g;
  Rng rng(0);
  return forward(g, enc, task_emb, 0.0, false, rng)->data[0];
}

std::vector<TensorPtr> Predictor::params() const {
  return {r1_self_, r1_pred_, r1_b_, r2_self_, r2_pred_, r2_b_,
          mlp_w1_,  mlp_b1_,  mlp_w2_, mlp_b2_};
}

std::map<std::string, TensorPtr> Predictor::named_tensors() const {
  std::map<std::string, TensorPtr> out;
  for (const auto& p : params()) out.emplace(p->name, p);
  return out;
}

void Predictor::save(const std::string& prefix) const { save_checkpoint(prefix, named_tensors()); }

void Predictor::load(const std::string& prefix) { load_checkpoint(prefix, named_tensors()); }

Predictor train_predictor(const std::vector<PerfRecord>& records,
                          const std::map<std::string, ArchEncoding>& encodings,
                          const std::map<int, std::vector<double>>& embeddings,
                          const std::vector<TaskSpec>& tasks, const std::vector<int>& train_tasks,
                          const PredictorConfig& cfg) {
  if (train_tasks.empty()) throw std::invalid_argument("train_predictor: empty task split");
  std::map<int, int> direction;
  for (const auto& t : tasks) direction[t.task_id] = t.direction();

  // average duplicates, then z-score within each task (direction folded in so
  // larger target always means better)
  std::map<std::pair<int, std::string>, std::pair<double, int>> sums;
  for (const auto& r : records) {
    if (std::find(train_tasks.begin(), train_tasks.end(), r.task_id) == train_tasks.end())
      continue;
    if (!direction.count(r.task_id))
      throw std::runtime_error("train_predictor: no task spec for task " +
                               std::to_string(r.task_id));
    if (!encodings.count(r.path_id))
      throw std::runtime_error("train_predictor: no encoding for path '" + r.path_id + "'");
    if (!embeddings.count(r.task_id))
      throw std::runtime_error("train_predictor: no embedding for task " +
                               std::to_string(r.task_id));
    auto& slot = sums[{r.task_id, r.path_id}];
    slot.first += r.metric_value;
    slot.second += 1;
  }
  if (sums.empty()) throw std::invalid_argument("train_predictor: no records in the task split");

  struct Sample {
    const ArchEncoding* enc;
    const std::vector<double>* emb;
    double y;
  };
  std::vector<Sample> samples;
  for (auto it = sums.begin(); it != sums.end();) {
    const int task = it->first.first;
    auto end = it;
    double mu = 0.0;
    int n = 0;
    for (; end != sums.end() && end->first.first == task; ++end, ++n)
      mu += end->second.first / end->second.second;
    mu /= n;
    double var = 0.0;
    for (auto j = it; j != end; ++j) {
      const double v = j->second.first / j->second.second - mu;
      var += v * v;
    }
    const double sigma = std::sqrt(var / n);
    for (; it != end; ++it) {
      const double v = it->second.first / it->second.second;
      samples.push_back(Sample{&encodings.at(it->first.second), &embeddings.at(task),
                               sigma == 0.0 ? 0.0 : direction.at(task) * (v - mu) / sigma});
    }
  }

  Predictor pred(cfg.hidden, cfg.seed);
  AdamWConfig ocfg;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.schedule = LrSchedule{cfg.lr, 0, 0};
  AdamW opt(pred.params(), ocfg);
  Rng rng(cfg.seed ^ 0xd1342543de82ef95ULL);

  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    double epoch_loss = 0.0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t bsz = std::min(order.size() - at, static_cast<size_t>(cfg.batch_size));
      Graph g;
      std::vector<TensorPtr> outs;
      std::vector<double> targets;
      for (size_t b = 0; b < bsz; ++b) {
        const auto& s = samples[order[at + b]];
        outs.push_back(pred.forward(g, *s.enc, *s.emb, cfg.dropout, true, rng));
        targets.push_back(s.y);
      }
      auto loss = g.mse_loss(
          g.reshape(g.stack_time(outs), {static_cast<int>(bsz), 1}), targets);
      if (!std::isfinite(loss->item()))
        throw std::runtime_error("train_predictor: non-finite loss at epoch " +
                                 std::to_string(epoch));
      epoch_loss += loss->item() * static_cast<double>(bsz);
      opt.zero_grad();
      g.backward(loss);
      opt.step();
    }
    pred.mutable_loss_history().push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  return pred;
}

std::vector<std::string> predict_topk(const Predictor& p,
                                      const std::map<std::string, ArchEncoding>& candidates,
                                      const std::vector<double>& task_emb, int k) {
  if (k < 1 || k > static_cast<int>(candidates.size()))
    throw std::invalid_argument("predict_topk: k out of range");
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [id, enc] : candidates) scored.emplace_back(-p.score(enc, task_emb), id);
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<size_t>(i)].second);
  return out;
}

std::map<int, std::set<std::string>> ground_truth_sets(const std::vector<PerfRecord>& records,
                                                       const std::vector<TaskSpec>& tasks,
                                                       double frac) {
  if (frac <= 0.0 || frac > 1.0) throw std::invalid_argument("ground_truth_sets: frac in (0,1]");
  std::map<int, std::set<std::string>> out;
  for (const auto& t : tasks) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& r : records)
      if (r.task_id == t.task_id) {
        auto& slot = sums[r.path_id];
        slot.first += r.metric_value;
        slot.second += 1;
      }
    if (sums.empty())
      throw std::runtime_error("ground_truth_sets: no records for task " +
                               std::to_string(t.task_id));
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [id, slot] : sums)
      ranked.emplace_back(-t.direction() * slot.first / slot.second, id);
    std::sort(ranked.begin(), ranked.end());
    const size_t take = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(frac * static_cast<double>(ranked.size()))));
    std::set<std::string> g;
    for (size_t i = 0; i < take && i < ranked.size(); ++i) g.insert(ranked[i].second);
    out[t.task_id] = std::move(g);
  }
  return out;
}

PredictionMetrics prediction_metrics(const std::vector<std::string>& pred,
                                     const std::set<std::string>& truth, int k) {
  if (truth.empty()) throw std::invalid_argument("prediction_metrics: empty ground truth");
  if (k < 1 || k > static_cast<int>(pred.size()))
    throw std::invalid_argument("prediction_metrics: k out of range");
  int inter = 0;
  for (int i = 0; i < k; ++i) inter += truth.count(pred[static_cast<size_t>(i)]) ? 1 : 0;
  PredictionMetrics m;
  m.precision = static_cast<double>(inter) / static_cast<double>(k);
  m.recall = static_cast<double>(inter) / static_cast<double>(truth.size());
  m.hit_rate = inter >= 1 ? 1.0 : 0.0;
  return m;
}

TaskSplit predictor_task_split(const std::string& setting) {
  if (setting == "supervised")
    return {{0, 1, 4, 5, 7, 8, 9, 11, 12, 13, 14, 16}, {2, 3, 6, 10, 15, 17}};
  if (setting == "transfer") return {{5, 6, 7, 8, 9, 10, 12, 13, 14}, {2, 11, 16, 17}};
  throw std::invalid_argument("unknown predictor split '" + setting +
                              "' (expected supervised or transfer)");
}

}  // namespace seqnas
