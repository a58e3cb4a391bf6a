#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqnas/evaluator.hpp"
#include "seqnas/sequence.hpp"

namespace seqnas {

// Task manifests, their embeddings and per-task performance records. Backs
// both the RAG prompt and the agent pipeline; read-only while serving.
class KnowledgeBase {
 public:
  // Derives the embedding from the description via embed_task.
  void add_task(const TaskSpec& spec);
  // Explicit embedding, e.g. when loading a persisted base.
  void add_task(const TaskSpec& spec, std::vector<double> embedding);
  // The record's task must already be present.
  void add_record(const PerfRecord& rec);

  bool empty() const { return tasks_.empty(); }
  int num_tasks() const { return static_cast<int>(tasks_.size()); }
  bool has_task(int task_id) const { return tasks_.count(task_id) != 0; }
  std::vector<int> task_ids() const;
  const TaskSpec& task(int task_id) const;
  const std::vector<double>& embedding(int task_id) const;
  const std::vector<PerfRecord>& records(int task_id) const;

  // Architectures for one task, best first: direction-adjusted mean metric,
  // duplicates averaged, ties by path_id. At most k entries.
  std::vector<std::pair<std::string, double>> ranked_archs(int task_id, int k) const;
  std::vector<std::string> top_archs(int task_id, int k) const;

  // Whether any record mentions this architecture.
  bool has_path(const std::string& path_id) const;

  // tasks_json: array of {task, embedding}; records_jsonl: one PerfRecord per line.
  void save(const std::string& tasks_json, const std::string& records_jsonl) const;
  static KnowledgeBase load(const std::string& tasks_json, const std::string& records_jsonl);

 private:
  std::map<int, TaskSpec> tasks_;
  std::map<int, std::vector<double>> embeddings_;
  std::map<int, std::vector<PerfRecord>> records_;
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Top-n tasks by cosine similarity of embeddings, ties by task_id.
// Throws if the base is empty or n is out of (0, num_tasks].
std::vector<std::pair<int, double>> retrieve_similar_tasks(const KnowledgeBase& kb,
                                                           const std::vector<double>& query_embedding,
                                                           int n);
std::vector<std::pair<int, double>> retrieve_similar_tasks(const KnowledgeBase& kb,
                                                           const TaskSpec& query, int n);

// Single-shot prompt: top-n similar tasks with their top-k architectures and
// the required answer format. Deterministic for fixed inputs.
std::string build_rag_prompt(const KnowledgeBase& kb, const TaskSpec& query, int n, int k);

// ---- LLM client ----

enum class LlmTransport { Http, Mock };

struct LlmConfig {
  LlmTransport transport = LlmTransport::Mock;
  std::string endpoint;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key;
  std::string model = "mock";
  int timeout_seconds = 60;
};

// Reads SEQNAS_LLM_ENDPOINT, SEQNAS_LLM_API_KEY and SEQNAS_LLM_MODEL; the
// transport is http when an endpoint is set, mock otherwise.
LlmConfig llm_config_from_env();

// Chat-completion client. The http transport POSTs
// {model, temperature: 0, messages: [{role: "user", content}]} and reads
// choices[0].message.content; the mock transport replays canned responses
// keyed by the fnv1a hash of the prompt and fails on unknown prompts.
class LlmClient {
 public:
  explicit LlmClient(LlmConfig cfg = {});
  const LlmConfig& config() const { return cfg_; }

  // Mock only: canned response for exactly this prompt.
  void script(const std::string& prompt, const std::string& response);
  int calls() const { return calls_; }

  std::string complete(const std::string& prompt);

 private:
  LlmConfig cfg_;
  std::map<uint64_t, std::string> canned_;
  int calls_ = 0;
};

// ---- agent pipeline ----

struct AgentStage {
  std::string role;    // analyst | task_retriever | arch_retriever | predictor
  std::string input;   // prompt, or tool input for the local stage
  std::string output;  // model response or tool output
};

struct AgentTrace {
  std::vector<AgentStage> stages;
};

class PipelineParseError : public std::runtime_error {
 public:
  PipelineParseError(const std::string& what, AgentTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const AgentTrace& trace() const { return trace_; }

 private:
  AgentTrace trace_;
};

struct AgentResult {
  std::vector<std::string> recommendations;  // exactly m ids, all present in the base
  AgentTrace trace;                          // four stages in pipeline order
};

// Role prompts are deterministic and public so mock transports can be
// scripted against the exact bytes the pipeline sends.
std::string analyst_prompt(const TaskSpec& query);
std::string task_retriever_prompt(const KnowledgeBase& kb, const TaskSpec& query,
                                  const std::string& analyst_output, int n);
std::string predictor_prompt(const TaskSpec& query, const std::string& arch_info, int m);

// "Task Index: [i]" / "Task Index: i" occurrences in order, deduplicated.
std::vector<int> parse_task_indices(const std::string& text);

// Local tool behind the Arch Retriever role: resolves the task indices named
// in the retriever's output to their top-k architectures. max_tasks > 0 caps
// how many distinct indices are used.
std::string architecture_retrieval_tool(const KnowledgeBase& kb, const std::string& text, int k,
                                        int max_tasks = -1);

// Names on "Architecture:" lines, deduplicated preserving order, first m.
// Throws when fewer than m names parse.
std::vector<std::string> parse_recommendations(const std::string& text, int m);

// Analyst -> Task Retriever -> Arch Retriever (local tool) -> Predictor.
// Each LLM role gets two retries with the identical prompt; output that still
// fails to parse raises PipelineParseError carrying the trace so far.
AgentResult run_agent_pipeline(const KnowledgeBase& kb, const TaskSpec& query, LlmClient& client,
                               int n = 3, int k = 5, int m = 3);

}  // namespace seqnas
