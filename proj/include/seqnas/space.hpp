#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqnas/blocks.hpp"

namespace seqnas {

struct SpaceConfig {
  std::vector<int> depths = {3, 4, 5, 6};
  std::vector<int> widths = {64, 128, 256, 512};
  std::vector<BlockKind> modules = {BlockKind::CNN, BlockKind::HYENA, BlockKind::TRANSFORMER,
                                    BlockKind::LSTM, BlockKind::MAMBA};
  int h0 = 64;
  std::vector<int> depth_targets = {60, 100, 100, 100};  // parallel to depths
  double tau_dist = 0.5;
  uint64_t seed = 0;
};

struct Path {
  int depth = 0;
  std::vector<BlockKind> types;
  std::vector<int> dims;
  std::string path_id;
};

void validate_space_config(const SpaceConfig& cfg);

// all non-decreasing dimension tuples over cfg.widths with h_1 >= h0
std::vector<std::vector<int>> enum_dim_paths(const SpaceConfig& cfg, int d);

// Euclidean distance between log2 width tuples, shared h0 prepended
double log_distance(const std::vector<int>& ha, const std::vector<int>& hb, int h0);

// scans in lexicographic order; keeps a tuple iff its distance to every kept
// tuple is >= tau
std::vector<std::vector<int>> greedy_select(std::vector<std::vector<int>> paths, double tau,
                                            int h0);

// k-means++ init, Lloyd to convergence; returns per cluster the index of the
// member nearest its centroid (ties toward the lowest index)
std::vector<int> kmeans_reduce(const std::vector<std::vector<double>>& items, int k,
                               uint64_t seed);

std::vector<Path> compose_space(const SpaceConfig& cfg);

struct DepthStats {
  int depth = 0;
  int64_t dim_tuples = 0;
  int64_t type_tuples = 0;
  int64_t raw_paths = 0;  // dim_tuples * type_tuples
};

struct SpaceStats {
  std::vector<DepthStats> per_depth;
  int64_t raw_total = 0;
  int64_t composed_total = 0;
};

SpaceStats space_stats(const SpaceConfig& cfg);

std::string space_to_json(const std::vector<Path>& paths);
std::vector<Path> space_from_json(const std::string& text);

}  // namespace seqnas
