#include "seqnas/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace seqnas {

AdamW::AdamW(std::vector<TensorPtr> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    Slot s;
    s.m.assign(p->data.size(), 0.0);
    s.v.assign(p->data.size(), 0.0);
    slots_.emplace(p.get(), std::move(s));
  }
}

void AdamW::step() {
  ++global_step_;
  const double lr = cfg_.schedule.at(global_step_);
  last_lr_ = lr;
  for (const auto& p : params_) {
    if (!p->has_grad()) continue;
    Slot& s = slots_.at(p.get());
    ++s.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (size_t i = 0; i < p->data.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g))
        throw std::runtime_error("AdamW: non-finite gradient in parameter '" +
                                 (p->name.empty() ? std::string("<unnamed>") : p->name) +
                                 "' at step " + std::to_string(global_step_));
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p->data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p->data[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

std::map<std::string, TensorPtr> AdamW::state_tensors() const {
  std::map<std::string, TensorPtr> out;
  for (const auto& p : params_) {
    if (p->name.empty()) throw std::runtime_error("AdamW: cannot serialize state of an unnamed parameter");
    const Slot& s = slots_.at(p.get());
    auto m = Tensor::from_data({static_cast<int>(s.m.size())}, s.m);
    auto v = Tensor::from_data({static_cast<int>(s.v.size())}, s.v);
    auto t = Tensor::scalar(static_cast<double>(s.t));
    if (!out.emplace("opt.m." + p->name, m).second)
      throw std::runtime_error("AdamW: duplicate parameter name '" + p->name + "'");
    out.emplace("opt.v." + p->name, v);
    out.emplace("opt.t." + p->name, t);
  }
  out.emplace("opt.global_step", Tensor::scalar(static_cast<double>(global_step_)));
  return out;
}

void AdamW::load_state_tensors(const std::map<std::string, TensorPtr>& state) {
  for (const auto& p : params_) {
    Slot& s = slots_.at(p.get());
    const auto m = state.find("opt.m." + p->name);
    const auto v = state.find("opt.v." + p->name);
    const auto t = state.find("opt.t." + p->name);
    if (m == state.end() || v == state.end() || t == state.end())
      throw std::runtime_error("AdamW: checkpoint is missing state for parameter '" + p->name + "'");
    if (m->second->data.size() != s.m.size() || v->second->data.size() != s.v.size())
      throw std::runtime_error("AdamW: state size mismatch for parameter '" + p->name + "'");
    s.m = m->second->data;
    s.v = v->second->data;
    s.t = static_cast<int64_t>(t->second->item());
  }
  const auto gs = state.find("opt.global_step");
  if (gs == state.end()) throw std::runtime_error("AdamW: checkpoint is missing the global step");
  global_step_ = static_cast<int64_t>(gs->second->item());
}

}  // namespace seqnas
