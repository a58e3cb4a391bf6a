#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqnas/tensor.hpp"

namespace seqnas {

// Parameter checkpoints are a pair of files: "<prefix>.bin" holding every
// value as little-endian f64 in name-sorted order, and "<prefix>.json"
// mapping each parameter name to its element offset and shape.
void save_checkpoint(const std::string& prefix, const std::map<std::string, TensorPtr>& params);

// Loads every tensor in `params` by name. The checkpoint may contain extra
// entries; a missing name or shape mismatch throws std::runtime_error.
void load_checkpoint(const std::string& prefix, const std::map<std::string, TensorPtr>& params);

bool checkpoint_exists(const std::string& prefix);
std::vector<std::string> checkpoint_names(const std::string& prefix);

}  // namespace seqnas
