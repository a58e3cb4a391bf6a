#pragma once

#include <string>

// Prompt templates for the RAG and agent entry points, kept verbatim as
// versioned assets. Slots use {placeholder} syntax and are filled by the
// builders in agent.cpp.

namespace seqnas::prompts {

// {query_task} {knowledge_base} {performance_data}
extern const std::string kRag;

// {query_task}
extern const std::string kAnalyst;

// {top_k} {analyst_output} {knowledge_base} {similarity_ranking}
extern const std::string kTaskRetriever;

// {recommendation_count} {query_task} {arch_info}
extern const std::string kPredictor;

}  // namespace seqnas::prompts
