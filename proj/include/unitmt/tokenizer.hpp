#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unitmt/quantizer.hpp"

namespace unitmt {

struct TokenSequence {
  std::vector<int> tokens;
  std::string language;

  bool operator==(const TokenSequence&) const = default;
};

// Fixed special-token ids; language tags follow them, then the base unit
// alphabet, then one id per learned merge.
enum SpecialToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kMask = 3,
  kUnk = 4,
  kNumFixedSpecials = 5,
};

struct BpeMerge {
  int left = 0;
  int right = 0;
  int result = 0;
};

class BpeVocab {
 public:
  BpeVocab() = default;
  BpeVocab(int vocab_size, std::vector<std::string> languages, std::vector<int> alphabet,
           std::vector<BpeMerge> merges);

  int vocab_size() const { return vocab_size_; }
  // Ids actually in use: specials + alphabet + merges (<= vocab_size()).
  int num_tokens() const { return first_merge_id() + static_cast<int>(merges_.size()); }
  int num_specials() const { return kNumFixedSpecials + static_cast<int>(languages_.size()); }

  const std::vector<std::string>& languages() const { return languages_; }
  const std::vector<int>& alphabet() const { return alphabet_; }
  const std::vector<BpeMerge>& merges() const { return merges_; }

  int language_token(const std::string& language) const;
  bool is_language_token(int id) const { return id >= kNumFixedSpecials && id < num_specials(); }
  bool is_special(int id) const { return id >= 0 && id < num_specials(); }
  const std::string& language_of_token(int id) const;

  // Token id of a base unit, or kUnk when the unit was not seen in training.
  int unit_token(int unit) const;
  int first_merge_id() const { return num_specials() + static_cast<int>(alphabet_.size()); }

  // Units spelled by a non-special token.
  const std::vector<int>& spelling(int id) const;

 private:
  void build_tables();

  int vocab_size_ = 0;
  std::vector<std::string> languages_;
  std::vector<int> alphabet_;
  std::vector<BpeMerge> merges_;
  std::unordered_map<int, int> unit_to_token_;
  std::vector<std::vector<int>> spellings_;  // indexed by token id
};

// Greedy most-frequent-pair merging over the union corpus until the vocab is
// full or no pair occurs at least twice. Ties go to the smaller (left, right)
// pair. `languages` fixes the language-tag table; when empty it is taken
// from the corpus in order of first appearance.
BpeVocab train_bpe(const std::vector<UnitSequence>& corpus, int vocab_size,
                   std::vector<std::string> languages = {});

TokenSequence encode(const BpeVocab& v, const UnitSequence& s);
UnitSequence decode(const BpeVocab& v, const TokenSequence& t);

void write_vocab(std::ostream& os, const BpeVocab& v);
BpeVocab read_vocab(std::istream& is);

}  // namespace unitmt
