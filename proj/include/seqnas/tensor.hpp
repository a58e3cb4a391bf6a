#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqnas {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Row-major f64 tensor. grad is sized lazily; when present it always matches
// data in length.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  // Releases the gradient buffer entirely so has_grad() reports which
  // parameters the next backward pass actually touched.
  void zero_grad() { grad.clear(); }
  bool has_grad() const { return grad.size() == data.size(); }

  static TensorPtr zeros(std::vector<int> shape) { return std::make_shared<Tensor>(std::move(shape)); }

  static TensorPtr full(std::vector<int> shape, double v) {
    auto t = zeros(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), v);
    return t;
  }

  static TensorPtr from_data(std::vector<int> shape, std::vector<double> values) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != numel_of(t->shape))
      throw std::invalid_argument("from_data: value count does not match shape");
    t->data = std::move(values);
    return t;
  }

  static TensorPtr scalar(double v) { return from_data({1}, {v}); }

  double item() const {
    if (numel() != 1) throw std::runtime_error("item() on non-scalar tensor");
    return data[0];
  }
};

}  // namespace seqnas
