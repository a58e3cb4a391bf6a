#include "seqnas/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "seqnas/predictor.hpp"
#include "seqnas/prompts.hpp"
#include "seqnas/util.hpp"

namespace seqnas {

using nlohmann::ordered_json;

// ---- knowledge base ----

void KnowledgeBase::add_task(const TaskSpec& spec) { add_task(spec, embed_task(spec)); }

void KnowledgeBase::add_task(const TaskSpec& spec, std::vector<double> embedding) {
  if (tasks_.count(spec.task_id))
    throw std::invalid_argument("knowledge base already has task " + std::to_string(spec.task_id));
  tasks_[spec.task_id] = spec;
  embeddings_[spec.task_id] = std::move(embedding);
  records_[spec.task_id];
}

void KnowledgeBase::add_record(const PerfRecord& rec) {
  auto it = records_.find(rec.task_id);
  if (it == records_.end())
    throw std::invalid_argument("record for unknown task " + std::to_string(rec.task_id));
  it->second.push_back(rec);
}

std::vector<int> KnowledgeBase::task_ids() const {
  std::vector<int> ids;
  ids.reserve(tasks_.size());
  for (const auto& [id, spec] : tasks_) ids.push_back(id);
  return ids;
}

const TaskSpec& KnowledgeBase::task(int task_id) const {
  auto it = tasks_.find(task_id);
  if (it == tasks_.end())
    throw std::invalid_argument("knowledge base has no task " + std::to_string(task_id));
  return it->second;
}

const std::vector<double>& KnowledgeBase::embedding(int task_id) const {
  task(task_id);
  return embeddings_.at(task_id);
}

const std::vector<PerfRecord>& KnowledgeBase::records(int task_id) const {
  task(task_id);
  return records_.at(task_id);
}

std::vector<std::pair<std::string, double>> KnowledgeBase::ranked_archs(int task_id, int k) const {
  if (k < 1) throw std::invalid_argument("ranked_archs: k must be >= 1");
  const TaskSpec& spec = task(task_id);
  std::map<std::string, std::pair<double, int>> sums;
  for (const auto& r : records_.at(task_id)) {
    auto& [sum, count] = sums[r.path_id];
    sum += r.metric_value;
    count += 1;
  }
  std::vector<std::pair<std::string, double>> out;
  out.reserve(sums.size());
  for (const auto& [id, sc] : sums) out.emplace_back(id, sc.first / sc.second);
  const double dir = spec.direction();
  std::sort(out.begin(), out.end(), [dir](const auto& a, const auto& b) {
    if (dir * a.second != dir * b.second) return dir * a.second > dir * b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(out.size()) > k) out.resize(k);
  return out;
}

std::vector<std::string> KnowledgeBase::top_archs(int task_id, int k) const {
  std::vector<std::string> ids;
  for (auto& [id, mean] : ranked_archs(task_id, k)) ids.push_back(id);
  return ids;
}

bool KnowledgeBase::has_path(const std::string& path_id) const {
  for (const auto& [task_id, recs] : records_)
    for (const auto& r : recs)
      if (r.path_id == path_id) return true;
  return false;
}

void KnowledgeBase::save(const std::string& tasks_json, const std::string& records_jsonl) const {
  ordered_json tasks = ordered_json::array();
  for (const auto& [id, spec] : tasks_) {
    ordered_json entry;
    entry["task"] = ordered_json::parse(task_manifest_json(spec));
    entry["embedding"] = embeddings_.at(id);
    tasks.push_back(std::move(entry));
  }
  ordered_json top;
  top["tasks"] = std::move(tasks);
  write_text_file(tasks_json, top.dump(2) + "\n");

  std::string lines;
  for (const auto& [id, recs] : records_)
    for (const auto& r : recs) lines += perf_record_json(r) + "\n";
  write_text_file(records_jsonl, lines);
}

KnowledgeBase KnowledgeBase::load(const std::string& tasks_json, const std::string& records_jsonl) {
  KnowledgeBase kb;
  auto top = ordered_json::parse(read_text_file(tasks_json));
  for (const auto& entry : top.at("tasks")) {
    TaskSpec spec = task_from_manifest_json(entry.at("task").dump());
    kb.add_task(spec, entry.at("embedding").get<std::vector<double>>());
  }
  std::istringstream in(read_text_file(records_jsonl));
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    kb.add_record(perf_record_from_json(line));
  }
  return kb;
}

// ---- retrieval ----

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: size mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::pair<int, double>> retrieve_similar_tasks(const KnowledgeBase& kb,
                                                           const std::vector<double>& query_embedding,
                                                           int n) {
  if (kb.empty()) throw std::invalid_argument("retrieve_similar_tasks: knowledge base is empty");
  if (n < 1 || n > kb.num_tasks())
    throw std::invalid_argument("retrieve_similar_tasks: n must be in [1, " +
                                std::to_string(kb.num_tasks()) + "], got " + std::to_string(n));
  std::vector<std::pair<int, double>> sims;
  for (int id : kb.task_ids()) sims.emplace_back(id, cosine_similarity(query_embedding, kb.embedding(id)));
  std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  sims.resize(n);
  return sims;
}

std::vector<std::pair<int, double>> retrieve_similar_tasks(const KnowledgeBase& kb,
                                                           const TaskSpec& query, int n) {
  return retrieve_similar_tasks(kb, embed_task(query), n);
}

// ---- prompt assembly ----

namespace {

std::string replace_all(std::string text, const std::string& key, const std::string& value) {
  size_t at = 0;
  while ((at = text.find(key, at)) != std::string::npos) {
    text.replace(at, key.size(), value);
    at += value.size();
  }
  return text;
}

std::string query_block(const TaskSpec& q) {
  return "- Description: " + q.description + "\n- Modality: " + alphabet_name(q.modality) +
         "\n- Problem: " + problem_string(q) + "\n- Metric: " + metric_name(q.metric);
}

std::string kb_listing(const KnowledgeBase& kb, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    const TaskSpec& t = kb.task(id);
    out += "Task Index: " + std::to_string(id) + " | " + t.description +
           " | modality: " + alphabet_name(t.modality) + " | problem: " + problem_string(t) +
           " | metric: " + metric_name(t.metric) + "\n";
  }
  return out;
}

std::string performance_block(const KnowledgeBase& kb, const std::vector<int>& ids, int k) {
  std::string out;
  for (int id : ids) {
    const TaskSpec& t = kb.task(id);
    out += "Task " + std::to_string(id) + " (" + t.description + "):\n";
    for (auto& [path, mean] : kb.ranked_archs(id, k))
      out += "- " + path + " (" + metric_name(t.metric) + " " + format_double(mean) + ")\n";
  }
  return out;
}

}  // namespace

std::string build_rag_prompt(const KnowledgeBase& kb, const TaskSpec& query, int n, int k) {
  if (n < 1) throw std::invalid_argument("build_rag_prompt: empty retrieval context");
  if (k < 1) throw std::invalid_argument("build_rag_prompt: k must be >= 1");
  auto ranked = retrieve_similar_tasks(kb, query, n);
  std::vector<int> ids;
  for (auto& [id, sim] : ranked) ids.push_back(id);
  std::string prompt = prompts::kRag;
  prompt = replace_all(prompt, "{query_task}", query_block(query));
  prompt = replace_all(prompt, "{knowledge_base}", kb_listing(kb, ids));
  prompt = replace_all(prompt, "{performance_data}", performance_block(kb, ids, k));
  return prompt;
}

std::string analyst_prompt(const TaskSpec& query) {
  return replace_all(prompts::kAnalyst, "{query_task}", query_block(query));
}

std::string task_retriever_prompt(const KnowledgeBase& kb, const TaskSpec& query,
                                  const std::string& analyst_output, int n) {
  auto ranked = retrieve_similar_tasks(kb, query, n);
  std::string ranking;
  for (auto& [id, sim] : ranked) {
    if (!ranking.empty()) ranking += ", ";
    ranking += std::to_string(id);
  }
  std::string prompt = prompts::kTaskRetriever;
  prompt = replace_all(prompt, "{top_k}", std::to_string(n));
  prompt = replace_all(prompt, "{analyst_output}", analyst_output);
  prompt = replace_all(prompt, "{knowledge_base}", kb_listing(kb, kb.task_ids()));
  prompt = replace_all(prompt, "{similarity_ranking}", ranking);
  return prompt;
}

std::string predictor_prompt(const TaskSpec& query, const std::string& arch_info, int m) {
  if (m < 1) throw std::invalid_argument("predictor_prompt: m must be >= 1");
  std::string prompt = prompts::kPredictor;
  prompt = replace_all(prompt, "{recommendation_count}", std::to_string(m));
  prompt = replace_all(prompt, "{query_task}", query_block(query));
  prompt = replace_all(prompt, "{arch_info}", arch_info);
  return prompt;
}

// ---- parsing and the local retrieval tool ----

std::vector<int> parse_task_indices(const std::string& text) {
  static const std::regex re(R"(Task Index:\s*\[?([0-9]+)\]?)");
  std::vector<int> out;
  std::set<int> seen;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    int id;
    try {
      id = std::stoi((*it)[1].str());
    } catch (const std::out_of_range&) {
      continue;
    }
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

std::string architecture_retrieval_tool(const KnowledgeBase& kb, const std::string& text, int k,
                                        int max_tasks) {
  if (k < 1) throw std::invalid_argument("architecture_retrieval_tool: k must be >= 1");
  auto ids = parse_task_indices(text);
  if (ids.empty())
    throw std::invalid_argument("architecture_retrieval_tool: no task indices in input");
  if (max_tasks > 0 && static_cast<int>(ids.size()) > max_tasks) ids.resize(max_tasks);

  ordered_json out;
  out["tasks"] = ordered_json::array();
  for (int id : ids) {
    const TaskSpec& t = kb.task(id);
    ordered_json entry;
    entry["task_id"] = id;
    entry["description"] = t.description;
    entry["metric"] = metric_name(t.metric);
    entry["architectures"] = ordered_json::array();
    for (auto& [path, mean] : kb.ranked_archs(id, k))
      entry["architectures"].push_back(ordered_json{{"path_id", path}, {"mean_metric", mean}});
    out["tasks"].push_back(std::move(entry));
  }
  return out.dump(2);
}

std::vector<std::string> parse_recommendations(const std::string& text, int m) {
  if (m < 1) throw std::invalid_argument("parse_recommendations: m must be >= 1");
  if (text.empty()) throw std::invalid_argument("parse_recommendations: empty text");

  auto allowed = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == ':';
  };
  std::vector<std::string> names;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string key = "Architecture:";
    size_t at = line.find(key);
    if (at == std::string::npos) continue;
    size_t i = at + key.size();
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '[')) ++i;
    std::string name;
    while (i < line.size() && allowed(line[i])) name += line[i++];
    if (name.empty()) continue;
    if (seen.insert(name).second) names.push_back(name);
  }
  if (static_cast<int>(names.size()) < m)
    throw std::runtime_error("parse_recommendations: found " + std::to_string(names.size()) +
                             " architecture names, need " + std::to_string(m));
  names.resize(m);
  return names;
}

// ---- llm client ----

LlmConfig llm_config_from_env() {
  LlmConfig cfg;
  if (const char* ep = std::getenv("SEQNAS_LLM_ENDPOINT"); ep && *ep) {
    cfg.endpoint = ep;
    cfg.transport = LlmTransport::Http;
  }
  if (const char* key = std::getenv("SEQNAS_LLM_API_KEY"); key && *key) cfg.api_key = key;
  if (const char* model = std::getenv("SEQNAS_LLM_MODEL"); model && *model) cfg.model = model;
  return cfg;
}

LlmClient::LlmClient(LlmConfig cfg) : cfg_(std::move(cfg)) {}

void LlmClient::script(const std::string& prompt, const std::string& response) {
  canned_[fnv1a(prompt)] = response;
}

std::string LlmClient::complete(const std::string& prompt) {
  ++calls_;
  if (cfg_.transport == LlmTransport::Mock) {
    const uint64_t key = fnv1a(prompt);
    auto it = canned_.find(key);
    if (it == canned_.end())
      throw std::runtime_error("mock transport has no canned response for prompt hash " + to_hex(key));
    return it->second;
  }

  ordered_json req;
  req["model"] = cfg_.model;
  req["temperature"] = 0;
  req["messages"] = ordered_json::array({ordered_json{{"role", "user"}, {"content", prompt}}});

  httplib::Client cli(cfg_.endpoint);
  cli.set_connection_timeout(cfg_.timeout_seconds, 0);
  cli.set_read_timeout(cfg_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  auto res = cli.Post(cfg_.path, headers, req.dump(), "application/json");
  if (!res) throw std::runtime_error("LLM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("LLM endpoint returned status " + std::to_string(res->status) + ": " +
                             res->body);
  auto j = ordered_json::parse(res->body);
  return j.at("choices").at(0).at("message").at("content").get<std::string>();
}

// ---- pipeline ----

AgentResult run_agent_pipeline(const KnowledgeBase& kb, const TaskSpec& query, LlmClient& client,
                               int n, int k, int m) {
  if (m < 1) throw std::invalid_argument("run_agent_pipeline: m must be >= 1");
  if (k < 1) throw std::invalid_argument("run_agent_pipeline: k must be >= 1");
  if (kb.empty()) throw std::invalid_argument("run_agent_pipeline: knowledge base is empty");
  if (n < 1 || n > kb.num_tasks())
    throw std::invalid_argument("run_agent_pipeline: n must be in [1, " +
                                std::to_string(kb.num_tasks()) + "], got " + std::to_string(n));

  AgentTrace trace;
  // Two retries with the identical prompt, then fail with the trace so far.
  auto llm_role = [&](const std::string& role, const std::string& prompt,
                      const std::function<std::string(const std::string&)>& validate) {
    std::string out, err;
    for (int attempt = 0; attempt < 3; ++attempt) {
      out = client.complete(prompt);
      err = validate(out);
      if (err.empty()) {
        trace.stages.push_back({role, prompt, out});
        return out;
      }
    }
    trace.stages.push_back({role, prompt, out});
    throw PipelineParseError(role + ": " + err + " (after 3 attempts)", trace);
  };

  const std::string analyst_out =
      llm_role("analyst", analyst_prompt(query), [](const std::string& s) -> std::string {
        if (s.find_first_not_of(" \t\r\n") == std::string::npos) return "empty analyst output";
        return "";
      });

  const std::string retriever_out = llm_role(
      "task_retriever", task_retriever_prompt(kb, query, analyst_out, n),
      [&](const std::string& s) -> std::string {
        auto ids = parse_task_indices(s);
        for (int id : ids)
          if (!kb.has_task(id)) return "unknown task index " + std::to_string(id);
        if (static_cast<int>(ids.size()) < n)
          return "found " + std::to_string(ids.size()) + " task indices, need " + std::to_string(n);
        return "";
      });

  const std::string arch_info = architecture_retrieval_tool(kb, retriever_out, k, n);
  trace.stages.push_back({"arch_retriever", retriever_out, arch_info});

  std::vector<std::string> recommendations;
  llm_role("predictor", predictor_prompt(query, arch_info, m),
           [&](const std::string& s) -> std::string {
             std::vector<std::string> got;
             try {
               got = parse_recommendations(s, m);
             } catch (const std::exception& e) {
               return e.what();
             }
             for (const auto& id : got)
               if (!kb.has_path(id))
                 return "recommended architecture '" + id + "' is not in the knowledge base";
             recommendations = std::move(got);
             return "";
           });

  return {recommendations, trace};
}

}  // namespace seqnas
