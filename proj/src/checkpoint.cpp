#include "seqnas/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace seqnas {

namespace {

void write_f64_le(std::ofstream& out, double v) {
  const auto u = std::bit_cast<uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(b, 8);
}

double read_f64_le(std::ifstream& in) {
  char b[8];
  in.read(b, 8);
  if (!in) throw std::runtime_error("checkpoint: truncated binary file");
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void save_checkpoint(const std::string& prefix, const std::map<std::string, TensorPtr>& params) {
  std::ofstream bin(prefix + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + prefix + ".bin");
  nlohmann::json manifest;
  int64_t offset = 0;
  for (const auto& [name, t] : params) {
    manifest[name] = {{"offset", offset}, {"shape", t->shape}};
    for (double v : t->data) write_f64_le(bin, v);
    offset += t->numel();
  }
  bin.close();
  if (!bin) throw std::runtime_error("checkpoint: write failed for " + prefix + ".bin");
  std::ofstream js(prefix + ".json", std::ios::trunc);
  if (!js) throw std::runtime_error("checkpoint: cannot write " + prefix + ".json");
  js << manifest.dump(2) << "\n";
}

void load_checkpoint(const std::string& prefix, const std::map<std::string, TensorPtr>& params) {
  std::ifstream js(prefix + ".json");
  if (!js) throw std::runtime_error("checkpoint: missing manifest " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: missing binary " + prefix + ".bin");
  for (const auto& [name, t] : params) {
    auto it = manifest.find(name);
    if (it == manifest.end())
      throw std::runtime_error("checkpoint: parameter '" + name + "' not found in " + prefix);
    const auto shape = it->at("shape").get<std::vector<int>>();
    if (shape != t->shape)
      throw std::runtime_error("checkpoint: shape mismatch for parameter '" + name + "'");
    const int64_t offset = it->at("offset").get<int64_t>();
    bin.seekg(offset * 8, std::ios::beg);
    for (auto& v : t->data) v = read_f64_le(bin);
  }
}

bool checkpoint_exists(const std::string& prefix) {
  return std::filesystem::exists(prefix + ".json") && std::filesystem::exists(prefix + ".bin");
}

std::vector<std::string> checkpoint_names(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw std::runtime_error("checkpoint: missing manifest " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  std::vector<std::string> names;
  for (const auto& [name, entry] : manifest.items()) {
    (void)entry;
    names.push_back(name);
  }
  return names;
}

}  // namespace seqnas
