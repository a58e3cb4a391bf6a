#include "seqnas/sequence.hpp"

#include <array>
#include <charconv>
#include <fstream>

#include <json.hpp>

#include "seqnas/util.hpp"

namespace seqnas {

const std::string& alphabet_chars(Alphabet a) {
  static const std::string dna = "ACGTN";
  static const std::string protein = "ACDEFGHIKLMNPQRSTVWYX";
  return a == Alphabet::DNA ? dna : protein;
}

std::string alphabet_name(Alphabet a) { return a == Alphabet::DNA ? "DNA" : "PROTEIN"; }

char wildcard_char(Alphabet a) { return a == Alphabet::DNA ? 'N' : 'X'; }

Alphabet alphabet_from_name(const std::string& name) {
  if (name == "DNA") return Alphabet::DNA;
  if (name == "PROTEIN") return Alphabet::PROTEIN;
  throw std::invalid_argument("unknown alphabet: " + name);
}

void validate_sequence(const Sequence& s, int line) {
  if (s.residues.empty())
    throw DatasetParseError("empty sequence", line >= 0 ? line : 0);
  const std::string& chars = alphabet_chars(s.alphabet);
  for (char c : s.residues)
    if (chars.find(c) == std::string::npos) throw InvalidResidue(c, line);
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Accuracy: return "accuracy";
    case Metric::Mcc: return "mcc";
    case Metric::Rmse: return "rmse";
    case Metric::Spearman: return "spearman";
  }
  return "accuracy";
}

Metric metric_from_name(const std::string& name) {
  if (name == "accuracy") return Metric::Accuracy;
  if (name == "mcc") return Metric::Mcc;
  if (name == "rmse") return Metric::Rmse;
  if (name == "spearman") return Metric::Spearman;
  throw std::invalid_argument("unknown metric: " + name);
}

std::string problem_string(const TaskSpec& spec) {
  switch (spec.problem) {
    case Problem::Binary: return "binary";
    case Problem::Multiclass: return "multiclass(" + std::to_string(spec.num_classes) + ")";
    case Problem::Regression: return "regression";
  }
  return "binary";
}

namespace {

void parse_problem(const std::string& text, TaskSpec& spec) {
  if (text == "binary") {
    spec.problem = Problem::Binary;
    spec.num_classes = 2;
  } else if (text == "regression") {
    spec.problem = Problem::Regression;
    spec.num_classes = 1;
  } else if (text.rfind("multiclass(", 0) == 0 && text.back() == ')') {
    spec.problem = Problem::Multiclass;
    spec.num_classes = std::stoi(text.substr(11, text.size() - 12));
    if (spec.num_classes < 2) throw std::invalid_argument("multiclass needs k >= 2");
  } else {
    throw std::invalid_argument("unknown problem: " + text);
  }
}

}  // namespace

std::string task_manifest_json(const TaskSpec& spec) {
  if (spec.description.empty()) throw std::invalid_argument("task description must be non-empty");
  nlohmann::json j;
  j["task_id"] = spec.task_id;
  j["description"] = spec.description;
  j["modality"] = alphabet_name(spec.modality);
  j["problem"] = problem_string(spec);
  j["metric"] = metric_name(spec.metric);
  j["direction"] = spec.direction();
  return j.dump(2) + "\n";
}

TaskSpec task_from_manifest_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TaskSpec spec;
  spec.task_id = j.at("task_id").get<int>();
  spec.description = j.at("description").get<std::string>();
  if (spec.description.empty()) throw std::invalid_argument("task description must be non-empty");
  spec.modality = alphabet_from_name(j.at("modality").get<std::string>());
  parse_problem(j.at("problem").get<std::string>(), spec);
  spec.metric = metric_from_name(j.at("metric").get<std::string>());
  if (j.at("direction").get<int>() != spec.direction())
    throw std::invalid_argument("manifest direction contradicts metric");
  return spec;
}

void LabeledDataset::make_splits(uint64_t seed) {
  const int n = static_cast<int>(items.size());
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i) + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  const int n_train = n * 8 / 10;
  const int n_valid = n / 10;
  train.assign(idx.begin(), idx.begin() + n_train);
  valid.assign(idx.begin() + n_train, idx.begin() + n_train + n_valid);
  test.assign(idx.begin() + n_train + n_valid, idx.end());
}

LabeledDataset load_plain(const std::string& path, Alphabet alphabet) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  LabeledDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DatasetParseError("expected sequence<TAB>label", line_no);
    LabeledItem item;
    item.seq.residues = line.substr(0, tab);
    item.seq.alphabet = alphabet;
    validate_sequence(item.seq, line_no);
    const std::string label = line.substr(tab + 1);
    const char* first = label.data();
    const char* last = label.data() + label.size();
    auto res = std::from_chars(first, last, item.label);
    if (res.ec != std::errc{} || res.ptr != last)
      throw DatasetParseError("unparseable label '" + label + "'", line_no);
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty()) throw EmptyDataset("dataset file has no items: " + path);
  return ds;
}

std::pair<TaskSpec, LabeledDataset> gen_motif_task(uint64_t seed, int n, int len,
                                                   const std::string& motif, double noise) {
  if (motif.empty() || len < static_cast<int>(motif.size()))
    throw std::invalid_argument("motif longer than sequence length");
  if (noise < 0.0 || noise >= 0.5) throw std::invalid_argument("noise must be in [0, 0.5)");
  static const std::array<char, 4> bases = {'A', 'C', 'G', 'T'};
  Rng rng(seed);

  auto random_seq = [&](Rng& r) {
    std::string s(static_cast<size_t>(len), 'A');
    for (auto& c : s) c = bases[r.uniform_index(4)];
    return s;
  };
  auto flip = [&](Rng& r, char c) {
    char nc = c;
    while (nc == c) nc = bases[r.uniform_index(4)];
    return nc;
  };

  LabeledDataset ds;
  const int n_pos = n / 2;
  for (int i = 0; i < n_pos; ++i) {
    std::string s = random_seq(rng);
    const int at = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(len - static_cast<int>(motif.size()) + 1)));
    s.replace(static_cast<size_t>(at), motif.size(), motif);
    if (noise > 0.0)
      for (auto& c : s)
        if (rng.bernoulli(noise)) c = flip(rng, c);
    ds.items.push_back({{std::move(s), Alphabet::DNA}, 1.0});
  }
  for (int i = 0; i < n - n_pos; ++i) {
    std::string s = random_seq(rng);
    while (s.find(motif) != std::string::npos) s = random_seq(rng);
    ds.items.push_back({{std::move(s), Alphabet::DNA}, 0.0});
  }
  ds.make_splits(seed);

  TaskSpec spec;
  spec.task_id = static_cast<int>(seed % 1000000);
  spec.description = "synthetic DNA motif presence classification: detect whether the motif " +
                     motif + " occurs in a length-" + std::to_string(len) + " sequence";
  spec.modality = Alphabet::DNA;
  spec.problem = Problem::Binary;
  spec.num_classes = 2;
  spec.metric = Metric::Accuracy;
  return {spec, std::move(ds)};
}

}  // namespace seqnas
