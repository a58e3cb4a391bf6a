#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqnas/tensor.hpp"

namespace seqnas {

// Linear warmup from 0 to peak over warmup_steps, then linear decay to 0 at
// total_steps. Step indices are 1-based; a default-constructed schedule is a
// constant peak rate.
struct LrSchedule {
  double peak = 1e-3;
  int64_t warmup_steps = 0;
  int64_t total_steps = 0;

  double at(int64_t step) const {
    if (warmup_steps <= 0 && total_steps <= 0) return peak;
    if (step <= warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps > 0 ? warmup_steps : 1);
    if (total_steps <= warmup_steps) return peak;
    if (step >= total_steps) return 0.0;
    return peak * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup_steps);
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
  LrSchedule schedule;
};

// Decoupled-weight-decay Adam over a fixed parameter set. Each step() updates
// only the parameters that currently hold a gradient; bias correction uses a
// per-parameter update count so parameters touched by different sampled paths
// stay correctly corrected, while the learning-rate schedule follows the
// global step.
class AdamW {
 public:
  AdamW(std::vector<TensorPtr> params, AdamWConfig cfg);

  // Applies one update. Throws std::runtime_error naming the parameter on a
  // non-finite gradient.
  void step();
  void zero_grad();

  int64_t global_step() const { return global_step_; }
  double last_lr() const { return last_lr_; }
  const AdamWConfig& config() const { return cfg_; }

  // Moment estimates and step counters keyed by parameter name, so a training
  // loop can round-trip them through a checkpoint. Every parameter must carry
  // a unique non-empty name.
  std::map<std::string, TensorPtr> state_tensors() const;
  void load_state_tensors(const std::map<std::string, TensorPtr>& state);

 private:
  struct Slot {
    std::vector<double> m, v;
    int64_t t = 0;
  };
  std::vector<TensorPtr> params_;
  std::unordered_map<Tensor*, Slot> slots_;
  AdamWConfig cfg_;
  int64_t global_step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace seqnas
