#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqnas/evaluator.hpp"
#include "seqnas/sequence.hpp"
#include "seqnas/space.hpp"
#include "seqnas/supernet.hpp"

namespace seqnas {

// ---- config text ----

struct ConfigParseError : std::runtime_error {
  int line;
  ConfigParseError(const std::string& what, int line_no)
      : std::runtime_error(what + " at line " + std::to_string(line_no)), line(line_no) {}
};

// Scalar, or a homogeneous array of scalars.
struct TomlValue {
  enum class Kind { Int, Float, String, Bool, Array };
  Kind kind = Kind::Int;
  int64_t i = 0;
  double f = 0.0;
  std::string s;
  bool b = false;
  std::vector<TomlValue> arr;

  // Int or Float read as double
  double as_number() const;
};

// Minimal TOML subset: # comments, key = value lines, [table.sub] headers and
// [[table]] array-of-tables blocks. Values are ints, floats, booleans,
// double-quoted strings and flat arrays.
struct TomlTable {
  std::map<std::string, TomlValue> values;
  std::map<std::string, TomlTable> subtables;
  std::map<std::string, std::vector<TomlTable>> arrays;

  static TomlTable parse(const std::string& text);

  bool has(const std::string& key) const { return values.count(key) != 0; }
  bool has_table(const std::string& name) const { return subtables.count(name) != 0; }
  const TomlTable& table(const std::string& name) const;
  const TomlValue& value(const std::string& key) const;

  int64_t get_int(const std::string& key, int64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::string get_string(const std::string& key, const std::string& def) const;
  std::vector<int64_t> get_ints(const std::string& key) const;  // empty when absent
  std::vector<std::string> get_strings(const std::string& key) const;

  int64_t require_int(const std::string& key) const;
  std::string require_string(const std::string& key) const;
};

// ---- run config ----

struct TokenizerSpec {
  std::string kind = "kmer";  // kmer | bpe
  std::string alphabet = "dna";
  int k = 1;
  bool overlapping = true;
  int vocab_size = 64;      // bpe
  std::string corpus_file;  // bpe training text; falls back to the run corpus
};

// Synthetic planted-motif binary task.
struct TaskGenSpec {
  int id = 0;
  std::string description;  // optional override of the generator's wording
  std::string motif = "ACGT";
  int n = 64;
  int length = 32;
  double noise = 0.0;
  uint64_t seed = 0;  // 0: derived from the run seed and task id
};

struct RunConfig {
  std::string name = "run";
  std::string out_dir;
  uint64_t seed = 0;
  int workers = 1;

  SpaceConfig space;
  int max_paths = 0;  // cap on composed paths fed into the grid; 0 = all

  std::vector<TokenizerSpec> tokenizers;
  std::vector<Objective> objectives;  // supernets to pretrain
  PretrainConfig pretrain;            // shared knobs; objective and prefix set per run
  std::vector<EvalProtocol> protocols;
  FinetuneHyper hyper;  // per-cell seeds are derived, hyper.seed is ignored

  int corpus_count = 64;
  int corpus_length = 48;
  uint64_t corpus_seed = 0;  // 0: derived from the run seed
  std::string corpus_file;   // one sequence per line; overrides the synthetic corpus

  std::vector<TaskGenSpec> tasks;

  std::string text;  // the raw config text; hashed into the manifest
};

// Parse and validate. Every inheriting protocol must have its objective
// listed, [run].seed is mandatory, and FOUNDATION is not a grid protocol.
RunConfig parse_run_config(const std::string& text);
// Reads the file and additionally checks that referenced files exist.
RunConfig load_run_config(const std::string& path);

uint64_t config_hash(const RunConfig& cfg);

// ---- building blocks shared with the CLI ----

std::vector<std::string> make_corpus_lines(const RunConfig& cfg);
TokenizerRef make_tokenizer_ref(const TokenizerSpec& spec,
                                const std::vector<std::string>& corpus_lines);
std::vector<std::pair<TaskSpec, LabeledDataset>> materialize_tasks(const RunConfig& cfg);

// ---- results store ----

// Append-only JSONL of PerfRecord plus a manifest. Records are keyed by the
// hash of their identity fields, so reruns and parallel workers cannot
// duplicate a result.
class ResultsStore {
 public:
  explicit ResultsStore(const std::string& dir);  // creates dir, loads existing records

  static uint64_t record_key(const PerfRecord& rec);

  bool add(const PerfRecord& rec);  // false (and no write) when the key exists
  bool contains(const PerfRecord& rec) const { return contains_key(record_key(rec)); }
  bool contains_key(uint64_t key) const { return keys_.count(key) != 0; }
  const std::vector<PerfRecord>& records() const { return records_; }
  size_t size() const { return records_.size(); }

  const std::string& dir() const { return dir_; }
  std::string records_path() const;
  std::string manifest_path() const;

  // stage name -> keys of the records that stage owns
  void write_manifest(const RunConfig& cfg,
                      const std::vector<std::pair<std::string, std::vector<uint64_t>>>& stages) const;

 private:
  std::string dir_;
  std::vector<PerfRecord> records_;
  std::set<uint64_t> keys_;
};

// ---- orchestration and reports ----

// compose_space -> pretrain per needed objective -> finetune grid
// (paths x tasks x protocols x tokenizers) -> rank -> reports -> knowledge
// base. Completed records are skipped by key, so reruns are idempotent.
ResultsStore run_experiment(const RunConfig& cfg);

// kind: leaderboard | task-table | correlation. Writes CSV (and markdown for
// leaderboards) under out_dir and returns the written paths.
std::vector<std::string> write_report(const ResultsStore& store, const std::vector<TaskSpec>& tasks,
                                      const std::string& kind, const std::string& out_dir);

std::vector<RankRow> parse_rank_csv(const std::string& text);

}  // namespace seqnas
