#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqnas/sequence.hpp"
#include "seqnas/supernet.hpp"

namespace seqnas {

// ONLY_FT trains from scratch; MASK_FT/CON_FT/NTP_FT inherit from a supernet
// pretrained with the matching objective; FOUNDATION inherits from a fresh
// single-path pretraining run.
enum class EvalProtocol { ONLY_FT, MASK_FT, CON_FT, NTP_FT, FOUNDATION };
std::string protocol_name(EvalProtocol p);
EvalProtocol protocol_from_name(const std::string& s);
bool protocol_inherits(EvalProtocol p);
// the pretraining objective a supernet-inheriting protocol expects
Objective protocol_objective(EvalProtocol p);

struct PerfRecord {
  std::string path_id;
  int task_id = 0;
  std::string protocol;
  std::string tokenizer_id;
  double metric_value = 0.0;
  uint64_t seed = 0;
};
std::string perf_record_json(const PerfRecord& r);
PerfRecord perf_record_from_json(const std::string& text);

// accuracy / mcc / rmse / spearman over paired prediction-label vectors;
// classification metrics read class ids, mcc is binary and returns 0 when a
// marginal is degenerate
double metric_value(const std::vector<double>& preds, const std::vector<double>& labels,
                    Metric kind);

// tied-rank (fractional) Spearman correlation; 0 when either side is constant
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);
double spearman_rho(const std::map<std::string, double>& a,
                    const std::map<std::string, double>& b);

struct RankRow {
  std::string path_id;
  double score = 0.0;
};

struct RankTable {
  std::vector<int> task_ids;
  std::map<int, double> mu, sigma;  // per-task statistics over architectures
  std::vector<RankRow> rows;        // descending score, ties by path_id
};

// Score(a) = mean over tasks of s_t (P_t(a) - mu_t) / sigma_t with population
// sigma; a zero-variance task contributes nothing. Duplicate records for a
// pair average into one performance. Missing pairs are reported by name.
RankTable zscore_rank(const std::vector<PerfRecord>& records, const std::vector<TaskSpec>& tasks);
std::vector<std::string> select_top_k(const RankTable& table, int k);
std::string rank_table_csv(const RankTable& table);
std::string rank_table_markdown(const RankTable& table);

// Uniform handle over tokenizer kinds, carrying the id that lands in records.
struct TokenizerRef {
  std::string id;
  int vocab = 0;
  std::function<std::vector<int>(const Sequence&)> encode;
};
TokenizerRef make_kmer_ref(Alphabet alphabet, int k, bool overlapping);

struct FinetuneHyper {
  double lr = 0.0;  // 0 resolves by modality: 3e-5 DNA, 5e-5 protein
  int batch_size = 32;
  int warmup_steps = 50;
  double weight_decay = 0.01;
  int epochs = 3;
  uint64_t seed = 0;
};

struct FinetuneSetup {
  Path path;
  EvalProtocol protocol = EvalProtocol::ONLY_FT;
  std::string checkpoint;  // consulted only by inheriting protocols
  TokenizerRef tokenizer;
  int h0 = 64;
  FinetuneHyper hyper;
};

struct FinetuneOutcome {
  PerfRecord record;               // test metric at the best validation epoch
  std::vector<double> val_history;  // one validation metric per epoch
  int best_epoch = 0;
};

// Assembles the path with a mean-pool + linear task head and trains the whole
// stack, selecting the best validation epoch for the test evaluation.
FinetuneOutcome finetune(const FinetuneSetup& setup, const TaskSpec& task,
                         const LabeledDataset& data);

struct FoundationConfig {
  Objective objective = Objective::MM;
  PretrainConfig pretrain;  // checkpoint_prefix required
  FinetuneHyper hyper;
  TokenizerRef tokenizer;
  int h0 = 64;
};

// Re-initializes the chosen path, pretrains it on the corpus, then fine-tunes
// it on every task from those weights; records carry protocol FOUNDATION.
std::vector<PerfRecord> foundation_flow(const Path& top_path,
                                        const std::vector<std::vector<int>>& corpus,
                                        const std::vector<std::pair<TaskSpec, LabeledDataset>>& tasks,
                                        const FoundationConfig& cfg);

}  // namespace seqnas
