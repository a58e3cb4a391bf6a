#include "seqnas/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqnas/tokenizer.hpp"

namespace seqnas {

std::string protocol_name(EvalProtocol p) {
  switch (p) {
    case EvalProtocol::ONLY_FT: return "ONLY_FT";
    case EvalProtocol::MASK_FT: return "MASK_FT";
    case EvalProtocol::CON_FT: return "CON_FT";
    case EvalProtocol::NTP_FT: return "NTP_FT";
    case EvalProtocol::FOUNDATION: return "FOUNDATION";
  }
  throw std::invalid_argument("unknown protocol");
}

EvalProtocol protocol_from_name(const std::string& s) {
  std::string up = s;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "ONLY_FT") return EvalProtocol::ONLY_FT;
  if (up == "MASK_FT") return EvalProtocol::MASK_FT;
  if (up == "CON_FT") return EvalProtocol::CON_FT;
  if (up == "NTP_FT") return EvalProtocol::NTP_FT;
  if (up == "FOUNDATION") return EvalProtocol::FOUNDATION;
  throw std::invalid_argument("unknown protocol '" + s + "'");
}

bool protocol_inherits(EvalProtocol p) { return p != EvalProtocol::ONLY_FT; }

Objective protocol_objective(EvalProtocol p) {
  switch (p) {
    case EvalProtocol::MASK_FT: return Objective::MM;
    case EvalProtocol::CON_FT: return Objective::CL;
    case EvalProtocol::NTP_FT: return Objective::NTP;
    default:
      throw std::invalid_argument("protocol " + protocol_name(p) +
                                  " is not tied to a pretraining objective");
  }
}

std::string perf_record_json(const PerfRecord& r) {
  nlohmann::json j;
  j["path_id"] = r.path_id;
  j["task_id"] = r.task_id;
  j["protocol"] = r.protocol;
  j["tokenizer_id"] = r.tokenizer_id;
  j["metric_value"] = r.metric_value;
  j["seed"] = r.seed;
  return j.dump();
}

PerfRecord perf_record_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PerfRecord r;
  r.path_id = j.at("path_id").get<std::string>();
  r.task_id = j.at("task_id").get<int>();
  r.protocol = j.at("protocol").get<std::string>();
  r.tokenizer_id = j.at("tokenizer_id").get<std::string>();
  r.metric_value = j.at("metric_value").get<double>();
  r.seed = j.at("seed").get<uint64_t>();
  return r;
}

// ---- metrics ----

namespace {

std::vector<double> frac_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  return pearson(frac_ranks(a), frac_ranks(b));
}

double spearman_rho(const std::map<std::string, double>& a,
                    const std::map<std::string, double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman: id sets differ in size");
  std::vector<double> va, vb;
  for (const auto& [id, v] : a) {
    const auto it = b.find(id);
    if (it == b.end()) throw std::invalid_argument("spearman: id '" + id + "' missing on one side");
    va.push_back(v);
    vb.push_back(it->second);
  }
  return spearman_rho(va, vb);
}

double metric_value(const std::vector<double>& preds, const std::vector<double>& labels,
                    Metric kind) {
  if (preds.size() != labels.size()) throw std::invalid_argument("metric: length mismatch");
  if (preds.size() < 2) throw std::invalid_argument("metric: need at least two points");
  const size_t n = preds.size();
  switch (kind) {
    case Metric::Accuracy: {
      double hits = 0.0;
      for (size_t i = 0; i < n; ++i) hits += preds[i] == labels[i];
      return hits / static_cast<double>(n);
    }
    case Metric::Mcc: {
      double tp = 0, tn = 0, fp = 0, fn = 0;
      for (size_t i = 0; i < n; ++i) {
        const bool p = preds[i] > 0.5, l = labels[i] > 0.5;
        tp += p && l;
        tn += !p && !l;
        fp += p && !l;
        fn += !p && l;
      }
      const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
      if (denom == 0.0) return 0.0;
      return (tp * tn - fp * fn) / std::sqrt(denom);
    }
    case Metric::Rmse: {
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) acc += (preds[i] - labels[i]) * (preds[i] - labels[i]);
      return std::sqrt(acc / static_cast<double>(n));
    }
    case Metric::Spearman:
      return spearman_rho(preds, labels);
  }
  throw std::invalid_argument("unknown metric kind");
}

// ---- ranking ----

RankTable zscore_rank(const std::vector<PerfRecord>& records, const std::vector<TaskSpec>& tasks) {
  if (tasks.empty()) throw std::invalid_argument("zscore_rank: no tasks");
  std::map<int, int> direction;
  for (const auto& t : tasks) direction[t.task_id] = t.direction();

  std::set<std::string> archs;
  std::map<std::pair<std::string, int>, std::pair<double, int>> sums;
  for (const auto& r : records) {
    if (!direction.count(r.task_id)) continue;
    archs.insert(r.path_id);
    auto& slot = sums[{r.path_id, r.task_id}];
    slot.first += r.metric_value;
    slot.second += 1;
  }
  if (archs.size() < 2)
    throw std::invalid_argument("zscore_rank: need at least two architectures per task");

  std::string missing;
  for (const auto& a : archs)
    for (const auto& t : tasks)
      if (!sums.count({a, t.task_id}))
        missing += (missing.empty() ? "" : ", ") + ("'" + a + "' on task " + std::to_string(t.task_id));
  if (!missing.empty())
    throw std::runtime_error("zscore_rank: missing records for " + missing);

  RankTable table;
  std::map<std::string, double> score;
  for (const auto& a : archs) score[a] = 0.0;
  for (const auto& t : tasks) {
    table.task_ids.push_back(t.task_id);
    std::map<std::string, double> perf;
    double mu = 0.0;
    for (const auto& a : archs) {
      const auto& slot = sums.at({a, t.task_id});
      perf[a] = slot.first / slot.second;
      mu += perf[a];
    }
    mu /= static_cast<double>(archs.size());
    double var = 0.0;
    for (const auto& a : archs) var += (perf[a] - mu) * (perf[a] - mu);
    const double sigma = std::sqrt(var / static_cast<double>(archs.size()));
    table.mu[t.task_id] = mu;
    table.sigma[t.task_id] = sigma;
    if (sigma == 0.0) continue;  // degenerate task: no contribution
    for (const auto& a : archs) score[a] += direction.at(t.task_id) * (perf[a] - mu) / sigma;
  }

  for (const auto& [a, s] : score)
    table.rows.push_back(RankRow{a, s / static_cast<double>(tasks.size())});
  std::sort(table.rows.begin(), table.rows.end(), [](const RankRow& x, const RankRow& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.path_id < y.path_id;
  });
  return table;
}

std::vector<std::string> select_top_k(const RankTable& table, int k) {
  if (k < 1 || k > static_cast<int>(table.rows.size()))
    throw std::invalid_argument("select_top_k: k out of range");
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(table.rows[static_cast<size_t>(i)].path_id);
  return out;
}

std::string rank_table_csv(const RankTable& table) {
  std::string out = "rank,path_id,score\n";
  for (size_t i = 0; i < table.rows.size(); ++i)
    out += std::to_string(i + 1) + "," + table.rows[i].path_id + "," +
           format_double(table.rows[i].score) + "\n";
  return out;
}

std::string rank_table_markdown(const RankTable& table) {
  std::string out = "| rank | path_id | score |\n| ---- | ------- | ----- |\n";
  for (size_t i = 0; i < table.rows.size(); ++i)
    out += "| " + std::to_string(i + 1) + " | " + table.rows[i].path_id + " | " +
           format_double(table.rows[i].score) + " |\n";
  return out;
}

// ---- fine-tuning ----

TokenizerRef make_kmer_ref(Alphabet alphabet, int k, bool overlapping) {
  auto tok = std::make_shared<KmerTokenizer>(alphabet, k, overlapping);
  TokenizerRef ref;
  ref.id = "kmer" + std::to_string(k) + (overlapping ? "" : "nv");
  ref.vocab = tok->vocab().size();
  ref.encode = [tok](const Sequence& s) { return tok->encode(s); };
  return ref;
}

namespace {

struct EncodedItems {
  std::vector<std::vector<int>> tokens;  // fixed window per item
  int window = 0;
};

EncodedItems encode_items(const LabeledDataset& data, const TokenizerRef& tok) {
  EncodedItems out;
  for (const auto& item : data.items) out.tokens.push_back(tok.encode(item.seq));
  for (const auto& t : out.tokens) out.window = std::max(out.window, static_cast<int>(t.size()));
  out.window = std::min(out.window, Supernet::kMaxLen);
  for (auto& t : out.tokens) {
    if (static_cast<int>(t.size()) > out.window)
      t.resize(static_cast<size_t>(out.window));  // over-long sequences keep their head
    while (static_cast<int>(t.size()) < out.window) t.push_back(Vocab::PAD);
  }
  return out;
}

// The protocols optimize each path independently, so fine-tuning de-shares
// the path: one private block per layer. Layers that alias the same supernet
// block start from identical inherited weights and fork from there, and each
// keeps its own batchnorm statistics, which a shared block cannot (two
// occurrences in one stack see different activation scales).
struct TaskModel {
  TensorPtr emb, pos;
  std::vector<std::unique_ptr<Block>> layers;
  std::vector<std::string> share_prefix;  // supernet name of each layer's source block
  TensorPtr head_w, head_b;

  TaskModel(const Path& p, int h0, int vocab, int num_out, uint64_t seed) {
    if (vocab <= Vocab::CLS + 1)
      throw std::invalid_argument("finetune: vocabulary must extend past the special tokens");
    Rng rng(seed);
    emb = Tensor::zeros({vocab, h0});
    for (auto& v : emb->data) v = rng.uniform(-0.05, 0.05);
    emb->requires_grad = true;
    emb->name = "emb.table";
    pos = Tensor::zeros({Supernet::kMaxLen, h0});
    for (auto& v : pos->data) v = rng.uniform(-0.05, 0.05);
    pos->requires_grad = true;
    pos->name = "pos.table";

    for (int i = 0; i < p.depth; ++i) {
      const auto key = layer_key(p, i, h0);
      BlockSpec spec;
      spec.kind = key.kind;
      spec.dim_in = key.dim_in;
      spec.dim_out = key.dim_out;
      auto blk = build_block(spec, rng);
      const std::string prefix = "layer" + std::to_string(i) + ".";
      for (const auto& t : blk->params()) t->name = prefix + t->name;
      for (const auto& t : blk->buffers()) t->name = prefix + t->name;
      share_prefix.push_back(key.str() + ".");
      layers.push_back(std::move(blk));
    }

    Rng hrng(seed ^ 0x5851f42d4c957f2dULL);
    const int hd = p.dims.back();
    head_w = xavier_uniform({hd, num_out}, hd, num_out, hrng, "task.w");
    head_b = param_full({num_out}, 0.0, "task.b");
  }

  // pulls embedding, positions and every layer's source block out of a
  // supernet checkpoint; aliased layers load the same entries
  void inherit(const std::string& checkpoint) {
    load_checkpoint(checkpoint, {{"emb.table", emb}, {"pos.table", pos}});
    for (size_t i = 0; i < layers.size(); ++i) {
      std::map<std::string, TensorPtr> want;
      auto stage = [&](const std::vector<TensorPtr>& ts) {
        for (const auto& t : ts)
          want.emplace(share_prefix[i] + t->name.substr(t->name.find('.') + 1), t);
      };
      stage(layers[i]->params());
      stage(layers[i]->buffers());
      load_checkpoint(checkpoint, want);
    }
  }

  TensorPtr logits(Graph& g, const std::vector<int>& tokens, int batch, int len, bool train,
                   Rng& rng) {
    std::vector<int> pos_ids(tokens.size());
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < len; ++t) pos_ids[static_cast<size_t>(b * len + t)] = t;
    auto x = g.add(g.embedding(tokens, batch, len, emb), g.embedding(pos_ids, batch, len, pos));
    for (auto& blk : layers) x = blk->forward(g, x, train, false, rng);
    return g.linear(g.mean_pool(x, 1), head_w, head_b);
  }

  std::vector<TensorPtr> trainable() {
    std::vector<TensorPtr> out = {emb, pos};
    for (auto& blk : layers)
      for (const auto& t : blk->params()) out.push_back(t);
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
  }
};

double evaluate_split(TaskModel& model, const TaskSpec& task, const EncodedItems& enc,
                      const LabeledDataset& data, const std::vector<int>& split, int batch_size) {
  std::vector<double> preds, labels;
  const int L = enc.window;
  for (size_t at = 0; at < split.size(); at += static_cast<size_t>(batch_size)) {
    const int bsz = static_cast<int>(std::min(split.size() - at, static_cast<size_t>(batch_size)));
    std::vector<int> toks;
    toks.reserve(static_cast<size_t>(bsz) * static_cast<size_t>(L));
    for (int b = 0; b < bsz; ++b) {
      const auto& t = enc.tokens[static_cast<size_t>(split[at + static_cast<size_t>(b)])];
      toks.insert(toks.end(), t.begin(), t.end());
    }
    Graph g;
    Rng rng(0);  // eval mode draws nothing
    auto lg = model.logits(g, toks, bsz, L, false, rng);
    const int C = lg->dim(1);
    for (int b = 0; b < bsz; ++b) {
      const int item = split[at + static_cast<size_t>(b)];
      labels.push_back(data.items[static_cast<size_t>(item)].label);
      if (task.problem == Problem::Regression) {
        preds.push_back(lg->data[static_cast<size_t>(b) * static_cast<size_t>(C)]);
      } else {
        const double* row = lg->data.data() + static_cast<size_t>(b) * static_cast<size_t>(C);
        preds.push_back(static_cast<double>(std::max_element(row, row + C) - row));
      }
    }
  }
  return metric_value(preds, labels, task.metric);
}

}  // namespace

FinetuneOutcome finetune(const FinetuneSetup& setup, const TaskSpec& task,
                         const LabeledDataset& data) {
  if (data.train.empty() || data.valid.empty() || data.test.empty())
    throw std::invalid_argument("finetune: dataset is missing a split");
  if (setup.hyper.epochs < 1) throw std::invalid_argument("finetune: epochs must be positive");

  const int C = task.problem == Problem::Regression ? 1 : task.num_classes;
  TaskModel model(setup.path, setup.h0, setup.tokenizer.vocab, C, setup.hyper.seed);

  if (protocol_inherits(setup.protocol)) {
    if (setup.checkpoint.empty() || !checkpoint_exists(setup.checkpoint))
      throw std::runtime_error("finetune: protocol " + protocol_name(setup.protocol) +
                               " requires a pretraining checkpoint");
    if (setup.protocol != EvalProtocol::FOUNDATION) {
      auto obj = Tensor::scalar(-1.0);
      load_checkpoint(setup.checkpoint, {{"pretrain.objective", obj}});
      const auto want = protocol_objective(setup.protocol);
      const auto have = static_cast<Objective>(static_cast<int>(obj->item()));
      if (have != want)
        throw std::runtime_error("finetune: checkpoint was pretrained with objective " +
                                 objective_name(have) + ", protocol " +
                                 protocol_name(setup.protocol) + " expects " +
                                 objective_name(want));
    }
    model.inherit(setup.checkpoint);
  }

  auto enc = encode_items(data, setup.tokenizer);
  auto params = model.trainable();

  const double lr =
      setup.hyper.lr > 0.0 ? setup.hyper.lr : (task.modality == Alphabet::DNA ? 3e-5 : 5e-5);
  const int steps_per_epoch =
      static_cast<int>((data.train.size() + static_cast<size_t>(setup.hyper.batch_size) - 1) /
                       static_cast<size_t>(setup.hyper.batch_size));
  AdamWConfig ocfg;
  ocfg.weight_decay = setup.hyper.weight_decay;
  ocfg.schedule = LrSchedule{lr, setup.hyper.warmup_steps,
                             static_cast<int64_t>(setup.hyper.epochs) * steps_per_epoch};
  AdamW opt(params, ocfg);

  Rng rng(setup.hyper.seed);
  const int L = enc.window;
  FinetuneOutcome out;
  std::vector<std::vector<double>> best_params;
  const bool higher_better = task.direction() > 0;

  for (int epoch = 0; epoch < setup.hyper.epochs; ++epoch) {
    auto order = data.train;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);

    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(setup.hyper.batch_size)) {
      const int bsz = static_cast<int>(
          std::min(order.size() - at, static_cast<size_t>(setup.hyper.batch_size)));
      std::vector<int> toks;
      std::vector<int> cls_targets;
      std::vector<double> reg_targets;
      for (int b = 0; b < bsz; ++b) {
        const int item = order[at + static_cast<size_t>(b)];
        const auto& t = enc.tokens[static_cast<size_t>(item)];
        toks.insert(toks.end(), t.begin(), t.end());
        const double label = data.items[static_cast<size_t>(item)].label;
        if (task.problem == Problem::Regression)
          reg_targets.push_back(label);
        else
          cls_targets.push_back(static_cast<int>(label));
      }
      Graph g;
      auto lg = model.logits(g, toks, bsz, L, true, rng);
      auto loss = task.problem == Problem::Regression ? g.mse_loss(lg, reg_targets)
                                                      : g.cross_entropy(lg, cls_targets);
      if (!std::isfinite(loss->item()))
        throw std::runtime_error("finetune: non-finite loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      g.backward(loss);
      opt.step();
    }

    const double val = evaluate_split(model, task, enc, data, data.valid, setup.hyper.batch_size);
    out.val_history.push_back(val);
    const bool better = best_params.empty() ||
                        (higher_better ? val > out.val_history[static_cast<size_t>(out.best_epoch)]
                                       : val < out.val_history[static_cast<size_t>(out.best_epoch)]);
    if (better) {
      out.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : params) best_params.push_back(p->data);
    }
  }

  for (size_t i = 0; i < params.size(); ++i) params[i]->data = best_params[i];

  out.record.path_id = setup.path.path_id;
  out.record.task_id = task.task_id;
  out.record.protocol = protocol_name(setup.protocol);
  out.record.tokenizer_id = setup.tokenizer.id;
  out.record.seed = setup.hyper.seed;
  out.record.metric_value =
      evaluate_split(model, task, enc, data, data.test, setup.hyper.batch_size);
  if (!std::isfinite(out.record.metric_value))
    throw std::runtime_error("finetune: non-finite test metric");
  return out;
}

std::vector<PerfRecord> foundation_flow(const Path& top_path,
                                        const std::vector<std::vector<int>>& corpus,
                                        const std::vector<std::pair<TaskSpec, LabeledDataset>>& tasks,
                                        const FoundationConfig& cfg) {
  if (cfg.pretrain.checkpoint_prefix.empty())
    throw std::invalid_argument("foundation_flow: a checkpoint prefix is required");
  Supernet net({top_path}, cfg.h0, cfg.tokenizer.vocab, cfg.pretrain.seed);
  PretrainConfig pc = cfg.pretrain;
  pc.objective = cfg.objective;
  pretrain(net, corpus, pc);

  std::vector<PerfRecord> out;
  for (const auto& [spec, data] : tasks) {
    FinetuneSetup setup;
    setup.path = top_path;
    setup.protocol = EvalProtocol::FOUNDATION;
    setup.checkpoint = pc.checkpoint_prefix;
    setup.tokenizer = cfg.tokenizer;
    setup.h0 = cfg.h0;
    setup.hyper = cfg.hyper;
    out.push_back(finetune(setup, spec, data).record);
  }
  return out;
}

}  // namespace seqnas
