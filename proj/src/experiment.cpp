#include "seqnas/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "seqnas/agent.hpp"
#include "seqnas/blocks.hpp"
#include "seqnas/checkpoint.hpp"
#include "seqnas/tokenizer.hpp"
#include "seqnas/util.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;

namespace seqnas {

namespace {

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
    } else if (c == '"') {
      in_str = true;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

bool int_shaped(const std::string& s) {
  size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

// one scalar, consuming the whole (trimmed) token
TomlValue parse_scalar(const std::string& raw, int line_no) {
  TomlValue v;
  if (raw[0] == '"') {
    v.kind = TomlValue::Kind::String;
    for (size_t i = 1; i < raw.size(); ++i) {
      char c = raw[i];
      if (c == '\\') {
        if (i + 1 >= raw.size()) throw ConfigParseError("dangling escape", line_no);
        char e = raw[++i];
        if (e == '"') v.s += '"';
        else if (e == '\\') v.s += '\\';
        else if (e == 'n') v.s += '\n';
        else if (e == 't') v.s += '\t';
        else throw ConfigParseError(std::string("unknown escape \\") + e, line_no);
      } else if (c == '"') {
        if (i + 1 != raw.size())
          throw ConfigParseError("trailing content after string", line_no);
        return v;
      } else {
        v.s += c;
      }
    }
    throw ConfigParseError("unterminated string", line_no);
  }
  if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::Bool;
    v.b = raw == "true";
    return v;
  }
  if (int_shaped(raw)) {
    v.kind = TomlValue::Kind::Int;
    v.i = std::stoll(raw);
    return v;
  }
  char* end = nullptr;
  double d = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() + raw.size()) {
    v.kind = TomlValue::Kind::Float;
    v.f = d;
    return v;
  }
  throw ConfigParseError("cannot parse value '" + raw + "'", line_no);
}

std::vector<std::string> split_elements(const std::string& inner, int line_no) {
  std::vector<std::string> parts;
  std::string cur;
  bool in_str = false;
  for (size_t i = 0; i < inner.size(); ++i) {
    char c = inner[i];
    if (in_str) {
      cur += c;
      if (c == '\\' && i + 1 < inner.size()) cur += inner[++i];
      else if (c == '"') in_str = false;
    } else if (c == '"') {
      in_str = true;
      cur += c;
    } else if (c == '[' || c == ']') {
      throw ConfigParseError("nested arrays are not supported", line_no);
    } else if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (in_str) throw ConfigParseError("unterminated string", line_no);
  parts.push_back(cur);
  return parts;
}

TomlValue parse_value(const std::string& raw, int line_no) {
  if (raw[0] != '[') return parse_scalar(raw, line_no);
  if (raw.size() < 2 || raw.back() != ']')
    throw ConfigParseError("array does not close", line_no);
  TomlValue v;
  v.kind = TomlValue::Kind::Array;
  std::string inner = trim(raw.substr(1, raw.size() - 2));
  if (inner.empty()) return v;
  for (const auto& part : split_elements(inner, line_no)) {
    std::string elem = trim(part);
    if (elem.empty()) throw ConfigParseError("empty array element", line_no);
    v.arr.push_back(parse_scalar(elem, line_no));
  }
  return v;
}

std::vector<std::string> dotted_parts(const std::string& name, int line_no) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : name) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts)
    if (!valid_key(p)) throw ConfigParseError("bad table name '" + name + "'", line_no);
  return parts;
}

}  // namespace

double TomlValue::as_number() const {
  if (kind == Kind::Int) return static_cast<double>(i);
  if (kind == Kind::Float) return f;
  throw std::invalid_argument("value is not numeric");
}

TomlTable TomlTable::parse(const std::string& text) {
  TomlTable root;
  TomlTable* current = &root;
  std::set<std::string> seen_headers;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line[0] == '[') {
      bool is_array = line.size() > 1 && line[1] == '[';
      const size_t open = is_array ? 2 : 1;
      const std::string close = is_array ? "]]" : "]";
      if (line.size() < open + close.size() ||
          line.compare(line.size() - close.size(), close.size(), close) != 0)
        throw ConfigParseError("malformed table header", line_no);
      std::string name = trim(line.substr(open, line.size() - open - close.size()));
      auto parts = dotted_parts(name, line_no);
      if (is_array) {
        TomlTable* t = &root;
        for (size_t i = 0; i + 1 < parts.size(); ++i) t = &t->subtables[parts[i]];
        t->arrays[parts.back()].emplace_back();
        current = &t->arrays[parts.back()].back();
      } else {
        if (!seen_headers.insert(name).second)
          throw ConfigParseError("duplicate table [" + name + "]", line_no);
        TomlTable* t = &root;
        for (const auto& p : parts) t = &t->subtables[p];
        current = t;
      }
      continue;
    }

    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigParseError("expected 'key = value'", line_no);
    std::string key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw ConfigParseError("bad key '" + key + "'", line_no);
    if (current->values.count(key))
      throw ConfigParseError("duplicate key '" + key + "'", line_no);
    std::string val = trim(line.substr(eq + 1));
    if (val.empty()) throw ConfigParseError("missing value for '" + key + "'", line_no);
    current->values[key] = parse_value(val, line_no);
  }
  return root;
}

const TomlTable& TomlTable::table(const std::string& name) const {
  auto it = subtables.find(name);
  if (it == subtables.end()) throw std::invalid_argument("no table named '" + name + "'");
  return it->second;
}

const TomlValue& TomlTable::value(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw std::invalid_argument("no value named '" + key + "'");
  return it->second;
}

int64_t TomlTable::get_int(const std::string& key, int64_t def) const {
  if (!has(key)) return def;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::Int)
    throw std::invalid_argument("'" + key + "' is not an integer");
  return v.i;
}

double TomlTable::get_double(const std::string& key, double def) const {
  if (!has(key)) return def;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::Int && v.kind != TomlValue::Kind::Float)
    throw std::invalid_argument("'" + key + "' is not a number");
  return v.as_number();
}

bool TomlTable::get_bool(const std::string& key, bool def) const {
  if (!has(key)) return def;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::Bool)
    throw std::invalid_argument("'" + key + "' is not a boolean");
  return v.b;
}

std::string TomlTable::get_string(const std::string& key, const std::string& def) const {
  if (!has(key)) return def;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::String)
    throw std::invalid_argument("'" + key + "' is not a string");
  return v.s;
}

std::vector<int64_t> TomlTable::get_ints(const std::string& key) const {
  std::vector<int64_t> out;
  if (!has(key)) return out;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::Array)
    throw std::invalid_argument("'" + key + "' is not an array");
  for (const auto& e : v.arr) {
    if (e.kind != TomlValue::Kind::Int)
      throw std::invalid_argument("'" + key + "' is not an integer array");
    out.push_back(e.i);
  }
  return out;
}

std::vector<std::string> TomlTable::get_strings(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  const auto& v = value(key);
  if (v.kind != TomlValue::Kind::Array)
    throw std::invalid_argument("'" + key + "' is not an array");
  for (const auto& e : v.arr) {
    if (e.kind != TomlValue::Kind::String)
      throw std::invalid_argument("'" + key + "' is not a string array");
    out.push_back(e.s);
  }
  return out;
}

int64_t TomlTable::require_int(const std::string& key) const {
  if (!has(key)) throw std::invalid_argument("missing required key '" + key + "'");
  return get_int(key, 0);
}

std::string TomlTable::require_string(const std::string& key) const {
  if (!has(key)) throw std::invalid_argument("missing required key '" + key + "'");
  return get_string(key, "");
}

// ---- run config ----

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::vector<int> to_int_vec(const std::vector<int64_t>& v) {
  std::vector<int> out;
  out.reserve(v.size());
  for (auto x : v) out.push_back(static_cast<int>(x));
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  auto root = TomlTable::parse(text);
  RunConfig cfg;
  cfg.text = text;

  if (!root.has_table("run") || !root.table("run").has("seed"))
    throw std::invalid_argument("[run] needs an explicit seed");
  const auto& run = root.table("run");
  cfg.name = run.get_string("name", cfg.name);
  cfg.out_dir = run.get_string("out_dir", cfg.name);
  cfg.seed = static_cast<uint64_t>(run.require_int("seed"));
  cfg.workers = static_cast<int>(run.get_int("workers", 1));
  if (cfg.workers < 1) throw std::invalid_argument("[run].workers must be positive");

  cfg.space.seed = fnv1a("space") ^ cfg.seed;
  if (root.has_table("space")) {
    const auto& t = root.table("space");
    if (t.has("depths")) cfg.space.depths = to_int_vec(t.get_ints("depths"));
    if (t.has("widths")) cfg.space.widths = to_int_vec(t.get_ints("widths"));
    if (t.has("modules")) {
      cfg.space.modules.clear();
      for (const auto& name : t.get_strings("modules"))
        cfg.space.modules.push_back(block_kind_from_name(upper(name)));
    }
    cfg.space.h0 = static_cast<int>(t.get_int("h0", cfg.space.h0));
    if (t.has("depth_targets")) cfg.space.depth_targets = to_int_vec(t.get_ints("depth_targets"));
    cfg.space.tau_dist = t.get_double("tau_dist", cfg.space.tau_dist);
    if (t.has("seed")) cfg.space.seed = static_cast<uint64_t>(t.get_int("seed", 0));
    cfg.max_paths = static_cast<int>(t.get_int("max_paths", 0));
  }

  if (root.arrays.count("tokenizer")) {
    for (const auto& t : root.arrays.at("tokenizer")) {
      TokenizerSpec spec;
      spec.kind = t.get_string("kind", spec.kind);
      if (spec.kind != "kmer" && spec.kind != "bpe")
        throw std::invalid_argument("unknown tokenizer kind '" + spec.kind + "' (kmer or bpe)");
      spec.alphabet = t.get_string("alphabet", spec.alphabet);
      alphabet_from_name(upper(spec.alphabet));
      spec.k = static_cast<int>(t.get_int("k", spec.k));
      if (spec.k < 1) throw std::invalid_argument("tokenizer k must be positive");
      spec.overlapping = t.get_bool("overlapping", spec.overlapping);
      spec.vocab_size = static_cast<int>(t.get_int("vocab_size", spec.vocab_size));
      spec.corpus_file = t.get_string("file", "");
      cfg.tokenizers.push_back(spec);
    }
  }
  if (cfg.tokenizers.empty()) cfg.tokenizers.emplace_back();

  cfg.pretrain.seed = fnv1a("pretrain") ^ cfg.seed;
  if (root.has_table("pretrain")) {
    const auto& t = root.table("pretrain");
    for (const auto& name : t.get_strings("objectives")) {
      Objective o = objective_from_name(name);
      if (std::find(cfg.objectives.begin(), cfg.objectives.end(), o) == cfg.objectives.end())
        cfg.objectives.push_back(o);
    }
    cfg.pretrain.steps = static_cast<int>(t.get_int("steps", cfg.pretrain.steps));
    cfg.pretrain.batch_size = static_cast<int>(t.get_int("batch_size", cfg.pretrain.batch_size));
    cfg.pretrain.mask_rate = t.get_double("mask_rate", cfg.pretrain.mask_rate);
    cfg.pretrain.tau_cl = t.get_double("tau_cl", cfg.pretrain.tau_cl);
    cfg.pretrain.cl_view_mask_rate =
        t.get_double("cl_view_mask_rate", cfg.pretrain.cl_view_mask_rate);
    cfg.pretrain.cl_crop_frac = t.get_double("cl_crop_frac", cfg.pretrain.cl_crop_frac);
    if (t.has("seed")) cfg.pretrain.seed = static_cast<uint64_t>(t.get_int("seed", 0));
    cfg.pretrain.opt.schedule.peak = t.get_double("peak_lr", cfg.pretrain.opt.schedule.peak);
    cfg.pretrain.opt.schedule.warmup_steps = t.get_int("warmup_steps", 0);
    cfg.pretrain.checkpoint_every = static_cast<int>(t.get_int("checkpoint_every", 0));
  }
  cfg.pretrain.opt.schedule.total_steps = cfg.pretrain.steps;

  if (root.has_table("eval")) {
    const auto& t = root.table("eval");
    for (const auto& name : t.get_strings("protocols")) {
      EvalProtocol p = protocol_from_name(name);
      if (p == EvalProtocol::FOUNDATION)
        throw std::invalid_argument(
            "FOUNDATION is a flow of its own (foundation_flow), not a grid protocol");
      if (std::find(cfg.protocols.begin(), cfg.protocols.end(), p) == cfg.protocols.end())
        cfg.protocols.push_back(p);
    }
    cfg.hyper.epochs = static_cast<int>(t.get_int("epochs", cfg.hyper.epochs));
    cfg.hyper.batch_size = static_cast<int>(t.get_int("batch_size", cfg.hyper.batch_size));
    cfg.hyper.lr = t.get_double("lr", cfg.hyper.lr);
    cfg.hyper.warmup_steps = static_cast<int>(t.get_int("warmup_steps", cfg.hyper.warmup_steps));
    cfg.hyper.weight_decay = t.get_double("weight_decay", cfg.hyper.weight_decay);
  }
  if (cfg.protocols.empty()) cfg.protocols.push_back(EvalProtocol::ONLY_FT);
  for (auto p : cfg.protocols) {
    if (!protocol_inherits(p)) continue;
    Objective need = protocol_objective(p);
    if (std::find(cfg.objectives.begin(), cfg.objectives.end(), need) == cfg.objectives.end())
      throw std::invalid_argument("protocol " + protocol_name(p) + " needs objective " +
                                  objective_name(need) + " in [pretrain].objectives");
  }

  cfg.corpus_seed = fnv1a("corpus") ^ cfg.seed;
  if (root.has_table("corpus")) {
    const auto& t = root.table("corpus");
    cfg.corpus_count = static_cast<int>(t.get_int("count", cfg.corpus_count));
    cfg.corpus_length = static_cast<int>(t.get_int("length", cfg.corpus_length));
    if (t.has("seed")) cfg.corpus_seed = static_cast<uint64_t>(t.get_int("seed", 0));
    cfg.corpus_file = t.get_string("file", "");
  }
  if (cfg.corpus_count < 1 || cfg.corpus_length < 1)
    throw std::invalid_argument("[corpus] needs positive count and length");

  if (!root.arrays.count("task") || root.arrays.at("task").empty())
    throw std::invalid_argument("at least one [[task]] block is required");
  std::set<int> ids;
  for (const auto& t : root.arrays.at("task")) {
    TaskGenSpec g;
    g.id = static_cast<int>(t.require_int("id"));
    if (!ids.insert(g.id).second)
      throw std::invalid_argument("duplicate task id " + std::to_string(g.id));
    g.description = t.get_string("description", "");
    g.motif = t.get_string("motif", g.motif);
    g.n = static_cast<int>(t.get_int("n", g.n));
    g.length = static_cast<int>(t.get_int("length", g.length));
    g.noise = t.get_double("noise", g.noise);
    g.seed = t.has("seed") ? static_cast<uint64_t>(t.get_int("seed", 0))
                           : (fnv1a("task." + std::to_string(g.id)) ^ cfg.seed);
    if (static_cast<int>(g.motif.size()) > g.length)
      throw std::invalid_argument("task " + std::to_string(g.id) +
                                  ": motif longer than the sequence length");
    cfg.tasks.push_back(g);
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  auto cfg = parse_run_config(read_text_file(path));
  auto check = [](const std::string& file) {
    if (!file.empty() && !fs::exists(file))
      throw std::runtime_error("referenced file '" + file + "' does not exist");
  };
  check(cfg.corpus_file);
  for (const auto& t : cfg.tokenizers) check(t.corpus_file);
  return cfg;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a(cfg.text); }

// ---- building blocks ----

std::vector<std::string> make_corpus_lines(const RunConfig& cfg) {
  if (!cfg.corpus_file.empty()) {
    auto lines = split_lines(read_text_file(cfg.corpus_file));
    if (lines.empty())
      throw std::runtime_error("corpus file '" + cfg.corpus_file + "' has no sequences");
    return lines;
  }
  static const char kBases[] = "ACGT";
  Rng rng(cfg.corpus_seed);
  std::vector<std::string> lines(static_cast<size_t>(cfg.corpus_count));
  for (auto& line : lines) {
    line.resize(static_cast<size_t>(cfg.corpus_length));
    for (auto& c : line) c = kBases[rng.uniform_index(4)];
  }
  return lines;
}

TokenizerRef make_tokenizer_ref(const TokenizerSpec& spec,
                                const std::vector<std::string>& corpus_lines) {
  if (spec.kind == "kmer")
    return make_kmer_ref(alphabet_from_name(upper(spec.alphabet)), spec.k, spec.overlapping);
  if (spec.kind != "bpe")
    throw std::invalid_argument("unknown tokenizer kind '" + spec.kind + "'");
  std::vector<std::string> corpus =
      spec.corpus_file.empty() ? corpus_lines : split_lines(read_text_file(spec.corpus_file));
  if (corpus.empty()) throw std::invalid_argument("bpe tokenizer needs a training corpus");
  auto tok = std::make_shared<BpeTokenizer>(BpeTokenizer::train(corpus, spec.vocab_size));
  TokenizerRef ref;
  ref.id = "bpe" + std::to_string(spec.vocab_size);
  ref.vocab = tok->vocab().size();
  ref.encode = [tok](const Sequence& s) { return tok->encode(s.residues); };
  return ref;
}

std::vector<std::pair<TaskSpec, LabeledDataset>> materialize_tasks(const RunConfig& cfg) {
  std::vector<std::pair<TaskSpec, LabeledDataset>> out;
  out.reserve(cfg.tasks.size());
  for (const auto& g : cfg.tasks) {
    auto [spec, data] = gen_motif_task(g.seed, g.n, g.length, g.motif, g.noise);
    spec.task_id = g.id;
    if (!g.description.empty()) spec.description = g.description;
    out.emplace_back(std::move(spec), std::move(data));
  }
  return out;
}

// ---- results store ----

ResultsStore::ResultsStore(const std::string& dir) : dir_(dir) {
  if (dir_.empty()) throw std::invalid_argument("results store needs a directory");
  fs::create_directories(dir_);
  if (!fs::exists(records_path())) return;
  std::istringstream in(read_text_file(records_path()));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto rec = perf_record_from_json(line);
    keys_.insert(record_key(rec));
    records_.push_back(std::move(rec));
  }
}

uint64_t ResultsStore::record_key(const PerfRecord& rec) {
  nlohmann::ordered_json j;
  j["path_id"] = rec.path_id;
  j["task_id"] = rec.task_id;
  j["protocol"] = rec.protocol;
  j["tokenizer_id"] = rec.tokenizer_id;
  j["seed"] = rec.seed;
  return fnv1a(j.dump());
}

bool ResultsStore::add(const PerfRecord& rec) {
  uint64_t key = record_key(rec);
  if (keys_.count(key)) return false;
  std::ofstream out(records_path(), std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + records_path());
  out << perf_record_json(rec) << "\n";
  out.flush();
  keys_.insert(key);
  records_.push_back(rec);
  return true;
}

std::string ResultsStore::records_path() const { return dir_ + "/records.jsonl"; }
std::string ResultsStore::manifest_path() const { return dir_ + "/manifest.json"; }

void ResultsStore::write_manifest(
    const RunConfig& cfg,
    const std::vector<std::pair<std::string, std::vector<uint64_t>>>& stages) const {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["config_hash"] = to_hex(config_hash(cfg));
  j["config"] = cfg.text;
  j["records"] = records_.size();
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& [stage, keys] : stages) {
    nlohmann::ordered_json s;
    s["stage"] = stage;
    s["records"] = nlohmann::ordered_json::array();
    for (uint64_t k : keys) s["records"].push_back(to_hex(k));
    j["stages"].push_back(std::move(s));
  }
  write_text_file(manifest_path(), j.dump(2) + "\n");
}

// ---- orchestration ----

namespace {

template <class F>
auto run_stage(const std::string& name, F&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error("stage " + name + ": " + e.what());
  }
}

// equal-length token windows for pretraining; over-long windows keep their
// head, short ones are padded
std::vector<std::vector<int>> encode_corpus(const std::vector<std::string>& lines,
                                            const TokenizerRef& tok, Alphabet alphabet) {
  std::vector<std::vector<int>> out;
  out.reserve(lines.size());
  int window = 0;
  for (const auto& line : lines) {
    out.push_back(tok.encode(Sequence{line, alphabet}));
    window = std::max(window, static_cast<int>(out.back().size()));
  }
  window = std::min(window, Supernet::kMaxLen);
  for (auto& t : out) {
    if (static_cast<int>(t.size()) > window) t.resize(static_cast<size_t>(window));
    while (static_cast<int>(t.size()) < window) t.push_back(Vocab::PAD);
  }
  return out;
}

struct Cell {
  size_t tok = 0, task = 0, path = 0;
  EvalProtocol proto = EvalProtocol::ONLY_FT;
  uint64_t key = 0, seed = 0;
  bool pending = false;
};

}  // namespace

ResultsStore run_experiment(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("run config needs an out_dir");
  ResultsStore store(cfg.out_dir);
  std::vector<std::pair<std::string, std::vector<uint64_t>>> stages;

  auto paths = run_stage("space", [&] {
    auto p = compose_space(cfg.space);
    if (cfg.max_paths > 0 && static_cast<int>(p.size()) > cfg.max_paths)
      p.resize(static_cast<size_t>(cfg.max_paths));
    write_text_file(cfg.out_dir + "/space.json", space_to_json(p));
    return p;
  });
  stages.push_back({"space", {}});

  auto corpus_lines = run_stage("corpus", [&] { return make_corpus_lines(cfg); });
  stages.push_back({"corpus", {}});

  struct TokEntry {
    TokenizerRef ref;
    Alphabet alphabet = Alphabet::DNA;
  };
  auto toks = run_stage("tokenizers", [&] {
    std::vector<TokEntry> out;
    for (const auto& spec : cfg.tokenizers)
      out.push_back(
          {make_tokenizer_ref(spec, corpus_lines), alphabet_from_name(upper(spec.alphabet))});
    return out;
  });
  stages.push_back({"tokenizers", {}});

  auto tasks = run_stage("tasks", [&] {
    auto out = materialize_tasks(cfg);
    fs::create_directories(cfg.out_dir + "/tasks");
    for (const auto& [spec, data] : out) {
      nlohmann::ordered_json j;
      j["task_id"] = spec.task_id;
      j["description"] = spec.description;
      j["modality"] = alphabet_name(spec.modality);
      j["problem"] = problem_string(spec);
      j["metric"] = metric_name(spec.metric);
      j["items"] = data.items.size();
      write_text_file(cfg.out_dir + "/tasks/task_" + std::to_string(spec.task_id) + ".json",
                      j.dump(2) + "\n");
    }
    return out;
  });
  stages.push_back({"tasks", {}});

  // the grid, in its canonical order: tokenizer, protocol, task, path
  std::vector<Cell> cells;
  for (size_t ti = 0; ti < toks.size(); ++ti)
    for (EvalProtocol proto : cfg.protocols)
      for (size_t ki = 0; ki < tasks.size(); ++ki)
        for (size_t pi = 0; pi < paths.size(); ++pi) {
          Cell c;
          c.tok = ti;
          c.proto = proto;
          c.task = ki;
          c.path = pi;
          // the cell seed depends only on the cell identity and the run seed,
          // never on where the run happens to live on disk
          c.seed = fnv1a("cell|" + paths[pi].path_id + "|" +
                         std::to_string(tasks[ki].first.task_id) + "|" + protocol_name(proto) +
                         "|" + toks[ti].ref.id) ^
                   cfg.seed;
          PerfRecord probe;
          probe.path_id = paths[pi].path_id;
          probe.task_id = tasks[ki].first.task_id;
          probe.protocol = protocol_name(proto);
          probe.tokenizer_id = toks[ti].ref.id;
          probe.seed = c.seed;
          c.key = ResultsStore::record_key(probe);
          c.pending = !store.contains_key(c.key);
          cells.push_back(c);
        }

  // pretrain one supernet per (objective, tokenizer) that still has pending
  // dependents; completed checkpoints are reused
  auto prefix_for = [&](Objective obj, size_t ti) {
    return cfg.out_dir + "/checkpoints/supernet_" + objective_name(obj) + "_" + toks[ti].ref.id;
  };
  std::set<std::pair<int, size_t>> to_train;
  for (const auto& c : cells)
    if (c.pending && protocol_inherits(c.proto))
      to_train.insert({static_cast<int>(protocol_objective(c.proto)), c.tok});
  for (const auto& [obj_i, ti] : to_train) {
    const Objective obj = static_cast<Objective>(obj_i);
    const std::string prefix = prefix_for(obj, ti);
    const std::string stage = "pretrain/" + objective_name(obj) + "/" + toks[ti].ref.id;
    if (!checkpoint_exists(prefix)) {
      run_stage(stage, [&] {
        fs::create_directories(cfg.out_dir + "/checkpoints");
        auto tokens = encode_corpus(corpus_lines, toks[ti].ref, toks[ti].alphabet);
        Supernet net(paths, cfg.space.h0, toks[ti].ref.vocab,
                     fnv1a("supernet." + objective_name(obj) + "." + toks[ti].ref.id) ^ cfg.seed);
        PretrainConfig pc = cfg.pretrain;
        pc.objective = obj;
        pc.checkpoint_prefix = prefix;
        pc.seed = fnv1a(objective_name(obj) + "." + toks[ti].ref.id) ^ cfg.pretrain.seed;
        pretrain(net, tokens, pc);
      });
    }
    stages.push_back({stage, {}});
  }

  // fine-tune the pending cells; computation may fan out over workers, the
  // commit below stays serial and in canonical order
  std::vector<size_t> pending;
  for (size_t i = 0; i < cells.size(); ++i)
    if (cells[i].pending) pending.push_back(i);
  std::vector<PerfRecord> results(pending.size());
  std::vector<std::string> errors(pending.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(cfg.workers) if (cfg.workers > 1)
#endif
  for (long w = 0; w < static_cast<long>(pending.size()); ++w) {
    const Cell& c = cells[pending[static_cast<size_t>(w)]];
    try {
      FinetuneSetup setup;
      setup.path = paths[c.path];
      setup.protocol = c.proto;
      if (protocol_inherits(c.proto)) setup.checkpoint = prefix_for(protocol_objective(c.proto), c.tok);
      setup.tokenizer = toks[c.tok].ref;
      setup.h0 = cfg.space.h0;
      setup.hyper = cfg.hyper;
      setup.hyper.seed = c.seed;
      results[static_cast<size_t>(w)] =
          finetune(setup, tasks[c.task].first, tasks[c.task].second).record;
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(w)] = e.what();
    }
  }
  for (size_t w = 0; w < pending.size(); ++w) {
    const Cell& c = cells[pending[w]];
    if (!errors[w].empty())
      throw std::runtime_error("stage finetune/" + protocol_name(c.proto) + "/" +
                               toks[c.tok].ref.id + ": " + errors[w]);
    if (ResultsStore::record_key(results[w]) != c.key)
      throw std::runtime_error("stage finetune: computed record identity diverges from the plan");
    store.add(results[w]);
  }

  // one stage entry per protocol x tokenizer slice, owning all of its records
  for (size_t ti = 0; ti < toks.size(); ++ti)
    for (EvalProtocol proto : cfg.protocols) {
      std::vector<uint64_t> keys;
      for (const auto& c : cells)
        if (c.tok == ti && c.proto == proto) keys.push_back(c.key);
      stages.push_back(
          {"finetune/" + protocol_name(proto) + "/" + toks[ti].ref.id, std::move(keys)});
    }

  std::vector<TaskSpec> specs;
  specs.reserve(tasks.size());
  for (const auto& [spec, data] : tasks) specs.push_back(spec);
  run_stage("report", [&] {
    const std::string rdir = cfg.out_dir + "/reports";
    write_report(store, specs, "leaderboard", rdir);
    write_report(store, specs, "task-table", rdir);
    write_report(store, specs, "correlation", rdir);
  });
  stages.push_back({"report", {}});

  run_stage("kb", [&] {
    KnowledgeBase kb;
    for (const auto& spec : specs) kb.add_task(spec);
    for (const auto& rec : store.records()) kb.add_record(rec);
    fs::create_directories(cfg.out_dir + "/kb");
    kb.save(cfg.out_dir + "/kb/tasks.json", cfg.out_dir + "/kb/records.jsonl");
  });
  stages.push_back({"kb", {}});

  store.write_manifest(cfg, stages);
  return store;
}

// ---- reports ----

namespace {

// the caller's specs, restricted to tasks the slice actually measured
std::vector<TaskSpec> slice_tasks(const std::vector<PerfRecord>& recs,
                                  const std::vector<TaskSpec>& tasks) {
  std::set<int> ids;
  for (const auto& r : recs) ids.insert(r.task_id);
  std::vector<TaskSpec> out;
  for (const auto& t : tasks)
    if (ids.erase(t.task_id)) out.push_back(t);
  if (!ids.empty())
    throw std::invalid_argument("records mention task " + std::to_string(*ids.begin()) +
                                " but no spec describes it");
  return out;
}

int protocol_order(const std::string& name) {
  return static_cast<int>(protocol_from_name(name));
}

}  // namespace

std::vector<std::string> write_report(const ResultsStore& store, const std::vector<TaskSpec>& tasks,
                                      const std::string& kind, const std::string& out_dir) {
  if (store.size() == 0) throw std::invalid_argument("results store is empty");
  if (out_dir.empty()) throw std::invalid_argument("report needs an out_dir");
  fs::create_directories(out_dir);

  std::map<std::pair<std::string, std::string>, std::vector<PerfRecord>> slices;
  for (const auto& r : store.records()) slices[{r.protocol, r.tokenizer_id}].push_back(r);

  std::vector<std::string> written;
  if (kind == "leaderboard") {
    for (const auto& [key, recs] : slices) {
      auto table = zscore_rank(recs, slice_tasks(recs, tasks));
      std::string base = out_dir + "/leaderboard_" + key.first + "_" + key.second;
      write_text_file(base + ".csv", rank_table_csv(table));
      write_text_file(base + ".md", rank_table_markdown(table));
      written.push_back(base + ".csv");
      written.push_back(base + ".md");
    }
    return written;
  }

  if (kind == "task-table") {
    for (const auto& [key, recs] : slices) {
      std::map<std::string, std::map<int, std::pair<double, int>>> agg;  // path -> task -> sum, n
      std::set<int> task_ids;
      for (const auto& r : recs) {
        auto& [sum, n] = agg[r.path_id][r.task_id];
        sum += r.metric_value;
        ++n;
        task_ids.insert(r.task_id);
      }
      std::string csv = "path_id";
      for (int id : task_ids) csv += ",task_" + std::to_string(id);
      csv += "\n";
      for (const auto& [path, per_task] : agg) {
        csv += path;
        for (int id : task_ids) {
          csv += ",";
          auto it = per_task.find(id);
          if (it != per_task.end()) csv += format_double(it->second.first / it->second.second);
        }
        csv += "\n";
      }
      std::string file = out_dir + "/task_table_" + key.first + "_" + key.second + ".csv";
      write_text_file(file, csv);
      written.push_back(file);
    }
    return written;
  }

  if (kind == "correlation") {
    // per tokenizer, Spearman between the per-path ranking scores of every
    // protocol pair, over the paths both protocols measured
    std::map<std::string, std::vector<std::string>> protos_by_tok;
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> scores;
    for (const auto& [key, recs] : slices) {
      auto table = zscore_rank(recs, slice_tasks(recs, tasks));
      std::map<std::string, double> by_path;
      for (const auto& row : table.rows) by_path[row.path_id] = row.score;
      scores[{key.second, key.first}] = std::move(by_path);
      protos_by_tok[key.second].push_back(key.first);
    }
    std::string csv = "tokenizer,protocol_a,protocol_b,spearman\n";
    for (auto& [tok, protos] : protos_by_tok) {
      std::sort(protos.begin(), protos.end(), [](const std::string& a, const std::string& b) {
        return protocol_order(a) < protocol_order(b);
      });
      for (size_t a = 0; a < protos.size(); ++a)
        for (size_t b = a; b < protos.size(); ++b) {
          const auto& ma = scores.at({tok, protos[a]});
          const auto& mb = scores.at({tok, protos[b]});
          std::map<std::string, double> fa, fb;
          for (const auto& [path, v] : ma) {
            auto it = mb.find(path);
            if (it != mb.end()) {
              fa[path] = v;
              fb[path] = it->second;
            }
          }
          if (fa.size() < 2) continue;
          csv += tok + "," + protos[a] + "," + protos[b] + "," +
                 format_double(spearman_rho(fa, fb)) + "\n";
        }
    }
    std::string file = out_dir + "/correlation.csv";
    write_text_file(file, csv);
    return {file};
  }

  throw std::invalid_argument("unknown report kind '" + kind +
                              "' (leaderboard, task-table, correlation)");
}

std::vector<RankRow> parse_rank_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty rank csv");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "rank,path_id,score")
    throw std::invalid_argument("rank csv must start with 'rank,path_id,score'");
  std::vector<RankRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t c1 = line.find(',');
    size_t c2 = line.rfind(',');
    if (c1 == std::string::npos || c2 == c1)
      throw std::invalid_argument("malformed rank csv row: " + line);
    RankRow row;
    row.path_id = line.substr(c1 + 1, c2 - c1 - 1);
    std::string num = line.substr(c2 + 1);
    char* end = nullptr;
    row.score = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size())
      throw std::invalid_argument("bad score '" + num + "' in rank csv");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace seqnas
