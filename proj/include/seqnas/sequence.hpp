#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace seqnas {

enum class Alphabet { DNA, PROTEIN };

// DNA: four bases plus the N wildcard. PROTEIN: twenty amino acids plus X.
const std::string& alphabet_chars(Alphabet a);
std::string alphabet_name(Alphabet a);
Alphabet alphabet_from_name(const std::string& name);
char wildcard_char(Alphabet a);  // 'N' for DNA, 'X' for protein

struct InvalidResidue : std::runtime_error {
  char residue;
  explicit InvalidResidue(char c, int line = -1)
      : std::runtime_error(line >= 0
                               ? std::string("invalid residue '") + c + "' at line " + std::to_string(line)
                               : std::string("invalid residue '") + c + "'"),
        residue(c) {}
};

struct EmptyDataset : std::runtime_error {
  explicit EmptyDataset(const std::string& what) : std::runtime_error(what) {}
};

struct DatasetParseError : std::runtime_error {
  int line;
  DatasetParseError(const std::string& what, int line_no)
      : std::runtime_error(what + " at line " + std::to_string(line_no)), line(line_no) {}
};

struct Sequence {
  std::string residues;
  Alphabet alphabet = Alphabet::DNA;
};

// Throws InvalidResidue on the first out-of-alphabet character; empty
// sequences are invalid.
void validate_sequence(const Sequence& s, int line = -1);

enum class Problem { Binary, Multiclass, Regression };
enum class Metric { Accuracy, Mcc, Rmse, Spearman };

std::string metric_name(Metric m);
Metric metric_from_name(const std::string& name);

struct TaskSpec {
  int task_id = 0;
  std::string description;
  Alphabet modality = Alphabet::DNA;
  Problem problem = Problem::Binary;
  int num_classes = 2;  // classification head width; 1 for regression
  Metric metric = Metric::Accuracy;

  // s_t: -1 for error-like metrics, +1 otherwise
  int direction() const { return metric == Metric::Rmse ? -1 : 1; }
};

// "binary", "multiclass(k)" or "regression"
std::string problem_string(const TaskSpec& spec);

std::string task_manifest_json(const TaskSpec& spec);
TaskSpec task_from_manifest_json(const std::string& text);

struct LabeledItem {
  Sequence seq;
  double label = 0.0;
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  std::vector<int> train, valid, test;

  // Deterministic seeded shuffle into 8:1:1.
  void make_splits(uint64_t seed);
};

// TSV ingestion: sequence<TAB>label per line.
LabeledDataset load_plain(const std::string& path, Alphabet alphabet);

// Synthetic balanced binary motif-presence task. Positives carry the motif
// planted at a uniform position before whole-sequence noise is applied;
// negatives are rejection-sampled to exclude it.
std::pair<TaskSpec, LabeledDataset> gen_motif_task(uint64_t seed, int n, int len,
                                                   const std::string& motif, double noise);

}  // namespace seqnas
