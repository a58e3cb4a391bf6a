#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqnas/sequence.hpp"

namespace seqnas {

// Token inventory with the four reserved specials at fixed ids.
struct Vocab {
  static constexpr int PAD = 0;
  static constexpr int UNK = 1;
  static constexpr int MASK = 2;
  static constexpr int CLS = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static Vocab with_specials();
  int add(const std::string& token);
  int size() const { return static_cast<int>(id_to_token.size()); }
  // UNK for unknown tokens
  int id_or_unk(const std::string& token) const;
  const std::string& token(int id) const;
};

class KmerTokenizer {
 public:
  // The vocab enumerates every alphabet^k string (wildcard included), so for
  // k=1 the wildcard is a real token; longer wildcard k-mers encode to UNK.
  KmerTokenizer(Alphabet alphabet, int k, bool overlapping);

  std::vector<int> encode(const Sequence& seq) const;
  const Vocab& vocab() const { return vocab_; }
  int k() const { return k_; }
  bool overlapping() const { return overlapping_; }
  Alphabet alphabet() const { return alphabet_; }

 private:
  Alphabet alphabet_;
  int k_;
  bool overlapping_;
  Vocab vocab_;
};

class BpeTokenizer {
 public:
  // Base character inventory is whatever appears in the corpus; learns up to
  // (vocab_size - |base chars| - 4) merges and stops early when no adjacent
  // pair repeats. Equal counts break ties lexicographically on (left, right).
  static BpeTokenizer train(const std::vector<std::string>& corpus, int vocab_size);

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  std::string to_json() const;
  static BpeTokenizer from_json(const std::string& text);

  const Vocab& vocab() const { return vocab_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

 private:
  BpeTokenizer() = default;
  Vocab vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
};

}  // namespace seqnas
