#include <doctest.h>

#include <cstdio>
#include <limits>
#include <map>

#include "seqnas/checkpoint.hpp"
#include "seqnas/tensor.hpp"
#include "seqnas/util.hpp"

using namespace seqnas;

namespace {

void cleanup(const std::string& prefix) {
  std::remove((prefix + ".bin").c_str());
  std::remove((prefix + ".json").c_str());
}

}  // namespace

TEST_CASE("checkpoint round-trips exact bits") {
  const std::string prefix = "ckpt_roundtrip";
  auto a = Tensor::from_data({2, 3}, {1.0, -2.5, 3.25, 0.0, -0.0, 1e-300});
  auto b = Tensor::from_data({4}, {std::numeric_limits<double>::max(),
                                   std::numeric_limits<double>::min(),
                                   std::numeric_limits<double>::denorm_min(), -1.0 / 3.0});
  save_checkpoint(prefix, {{"layer.weight", a}, {"layer.bias", b}});
  CHECK(checkpoint_exists(prefix));

  auto a2 = Tensor::zeros({2, 3});
  auto b2 = Tensor::zeros({4});
  load_checkpoint(prefix, {{"layer.weight", a2}, {"layer.bias", b2}});
  for (size_t i = 0; i < a->data.size(); ++i) CHECK(a2->data[i] == a->data[i]);
  for (size_t i = 0; i < b->data.size(); ++i) CHECK(b2->data[i] == b->data[i]);
  CHECK(std::signbit(a2->data[4]));
  cleanup(prefix);
}

TEST_CASE("checkpoint supports subset loads") {
  const std::string prefix = "ckpt_subset";
  auto a = Tensor::from_data({2}, {1.0, 2.0});
  auto b = Tensor::from_data({3}, {3.0, 4.0, 5.0});
  auto c = Tensor::from_data({1}, {6.0});
  save_checkpoint(prefix, {{"x", a}, {"y", b}, {"z", c}});

  auto y = Tensor::zeros({3});
  load_checkpoint(prefix, {{"y", y}});
  CHECK(y->data[0] == 3.0);
  CHECK(y->data[2] == 5.0);
  cleanup(prefix);
}

TEST_CASE("checkpoint rejects unknown names and bad shapes") {
  const std::string prefix = "ckpt_errors";
  auto a = Tensor::from_data({2}, {1.0, 2.0});
  save_checkpoint(prefix, {{"only", a}});

  auto missing = Tensor::zeros({2});
  CHECK_THROWS_WITH_AS(load_checkpoint(prefix, {{"nope", missing}}),
                       doctest::Contains("nope"), std::runtime_error);
  auto wrong = Tensor::zeros({3});
  CHECK_THROWS_WITH_AS(load_checkpoint(prefix, {{"only", wrong}}),
                       doctest::Contains("shape"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("ckpt_does_not_exist", {{"a", a}}), std::runtime_error);
  cleanup(prefix);
}

TEST_CASE("checkpoint names come back sorted") {
  const std::string prefix = "ckpt_names";
  auto t = Tensor::zeros({1});
  save_checkpoint(prefix, {{"b", t}, {"a", t}, {"c", t}});
  auto names = checkpoint_names(prefix);
  REQUIRE(names.size() == 3);
  CHECK(names[0] == "a");
  CHECK(names[1] == "b");
  CHECK(names[2] == "c");
  cleanup(prefix);
}

TEST_CASE("identical params produce identical checkpoint bytes") {
  auto t1 = Tensor::from_data({3}, {0.1, 0.2, 0.3});
  auto t2 = Tensor::from_data({3}, {0.1, 0.2, 0.3});
  save_checkpoint("ckpt_det1", {{"p", t1}});
  save_checkpoint("ckpt_det2", {{"p", t2}});
  CHECK(read_text_file("ckpt_det1.bin") == read_text_file("ckpt_det2.bin"));
  CHECK(read_text_file("ckpt_det1.json") == read_text_file("ckpt_det2.json"));
  cleanup("ckpt_det1");
  cleanup("ckpt_det2");
}
