#include "seqnas/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace seqnas {

Vocab Vocab::with_specials() {
  Vocab v;
  v.add("<pad>");
  v.add("<unk>");
  v.add("<mask>");
  v.add("<cls>");
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = token_to_id.find(token);
  if (it != token_to_id.end()) return it->second;
  const int id = size();
  id_to_token.push_back(token);
  token_to_id.emplace(token, id);
  return id;
}

int Vocab::id_or_unk(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? UNK : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab id out of range");
  return id_to_token[static_cast<size_t>(id)];
}

KmerTokenizer::KmerTokenizer(Alphabet alphabet, int k, bool overlapping)
    : alphabet_(alphabet), k_(k), overlapping_(overlapping), vocab_(Vocab::with_specials()) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const std::string& chars = alphabet_chars(alphabet);
  // odometer enumeration in alphabet order
  std::string cur(static_cast<size_t>(k), chars[0]);
  std::vector<int> digits(static_cast<size_t>(k), 0);
  const int base = static_cast<int>(chars.size());
  while (true) {
    vocab_.add(cur);
    int pos = k - 1;
    while (pos >= 0) {
      if (++digits[static_cast<size_t>(pos)] < base) {
        cur[static_cast<size_t>(pos)] = chars[static_cast<size_t>(digits[static_cast<size_t>(pos)])];
        break;
      }
      digits[static_cast<size_t>(pos)] = 0;
      cur[static_cast<size_t>(pos)] = chars[0];
      --pos;
    }
    if (pos < 0) break;
  }
}

std::vector<int> KmerTokenizer::encode(const Sequence& seq) const {
  validate_sequence(seq);
  if (seq.alphabet != alphabet_) throw std::invalid_argument("tokenizer/sequence alphabet mismatch");
  const int len = static_cast<int>(seq.residues.size());
  if (len < k_) throw std::invalid_argument("sequence shorter than k");
  const char wc = wildcard_char(alphabet_);
  std::vector<int> ids;
  const int stride = overlapping_ ? 1 : k_;
  for (int i = 0; i + k_ <= len; i += stride) {
    const std::string kmer = seq.residues.substr(static_cast<size_t>(i), static_cast<size_t>(k_));
    // wildcard-bearing k-mers stay out of the effective vocab beyond k=1
    if (k_ > 1 && kmer.find(wc) != std::string::npos)
      ids.push_back(Vocab::UNK);
    else
      ids.push_back(vocab_.id_or_unk(kmer));
  }
  return ids;
}

BpeTokenizer BpeTokenizer::train(const std::vector<std::string>& corpus, int vocab_size) {
  std::set<char> chars;
  for (const auto& text : corpus)
    for (char c : text) chars.insert(c);
  if (chars.empty()) throw EmptyDataset("bpe training corpus is empty");
  const int base = static_cast<int>(chars.size()) + 4;
  if (vocab_size <= base)
    throw std::invalid_argument("vocab_size must exceed base characters + specials (" +
                                std::to_string(base) + ")");

  BpeTokenizer tok;
  tok.vocab_ = Vocab::with_specials();
  for (char c : chars) tok.vocab_.add(std::string(1, c));

  std::vector<std::vector<std::string>> words;
  for (const auto& text : corpus) {
    std::vector<std::string> w;
    for (char c : text) w.emplace_back(1, c);
    words.push_back(std::move(w));
  }

  const int budget = vocab_size - base;
  for (int round = 0; round < budget; ++round) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& w : words)
      for (size_t i = 0; i + 1 < w.size(); ++i) ++counts[{w[i], w[i + 1]}];
    std::pair<std::string, std::string> best;
    int best_count = 0;
    for (const auto& [pair, count] : counts)  // std::map order = lexicographic tie-break
      if (count > best_count) {
        best = pair;
        best_count = count;
      }
    if (best_count < 2) break;
    tok.merges_.push_back(best);
    tok.vocab_.add(best.first + best.second);
    const std::string joined = best.first + best.second;
    for (auto& w : words) {
      std::vector<std::string> out;
      out.reserve(w.size());
      for (size_t i = 0; i < w.size(); ++i) {
        if (i + 1 < w.size() && w[i] == best.first && w[i + 1] == best.second) {
          out.push_back(joined);
          ++i;
        } else {
          out.push_back(std::move(w[i]));
        }
      }
      w = std::move(out);
    }
  }
  return tok;
}

std::vector<int> BpeTokenizer::encode(const std::string& text) const {
  std::vector<std::string> w;
  for (char c : text) w.emplace_back(1, c);
  for (const auto& [left, right] : merges_) {
    const std::string joined = left + right;
    std::vector<std::string> out;
    out.reserve(w.size());
    for (size_t i = 0; i < w.size(); ++i) {
      if (i + 1 < w.size() && w[i] == left && w[i + 1] == right) {
        out.push_back(joined);
        ++i;
      } else {
        out.push_back(std::move(w[i]));
      }
    }
    w = std::move(out);
  }
  std::vector<int> ids;
  ids.reserve(w.size());
  for (const auto& t : w) ids.push_back(vocab_.id_or_unk(t));
  return ids;
}

std::string BpeTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 4) continue;  // specials carry no residues
    out += vocab_.token(id);
  }
  return out;
}

std::string BpeTokenizer::to_json() const {
  nlohmann::json j;
  j["merges"] = nlohmann::json::array();
  for (const auto& [l, r] : merges_) j["merges"].push_back({l, r});
  nlohmann::json v;
  for (int i = 0; i < vocab_.size(); ++i) v[vocab_.token(i)] = i;
  j["vocab"] = v;
  return j.dump(2) + "\n";
}

BpeTokenizer BpeTokenizer::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  BpeTokenizer tok;
  const auto& v = j.at("vocab");
  std::vector<std::string> by_id(v.size());
  for (const auto& [token, id] : v.items()) by_id.at(id.get<size_t>()) = token;
  for (const auto& t : by_id) tok.vocab_.add(t);
  std::set<std::string> derivable;
  for (const auto& t : by_id)
    if (t.size() == 1) derivable.insert(t);
  for (const auto& m : j.at("merges")) {
    std::string l = m.at(0).get<std::string>();
    std::string r = m.at(1).get<std::string>();
    if (!derivable.count(l) || !derivable.count(r))
      throw std::runtime_error("merge (" + l + "," + r + ") is not derivable in order");
    derivable.insert(l + r);
    tok.merges_.emplace_back(std::move(l), std::move(r));
  }
  return tok;
}

}  // namespace seqnas
