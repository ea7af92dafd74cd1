#include "unitmt/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace unitmt {

namespace {

constexpr const char* kVocabMagic = "UNITMT-BPE";
constexpr int kVocabVersion = 1;

const char* fixed_special_name(int id) {
  switch (id) {
    case kPad: return "<pad>";
    case kBos: return "<s>";
    case kEos: return "</s>";
    case kMask: return "<mask>";
    case kUnk: return "<unk>";
    default: return "";
  }
}

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Replaces every left-to-right occurrence of (left, right) with `result`.
bool apply_merge(std::vector<int>& symbols, const BpeMerge& m) {
  if (symbols.size() < 2) return false;
  std::size_t w = 0;
  bool changed = false;
  for (std::size_t r = 0; r < symbols.size();) {
    if (r + 1 < symbols.size() && symbols[r] == m.left && symbols[r + 1] == m.right) {
      symbols[w++] = m.result;
      r += 2;
      changed = true;
    } else {
      symbols[w++] = symbols[r++];
    }
  }
  symbols.resize(w);
  return changed;
}

}  // namespace

BpeVocab::BpeVocab(int vocab_size, std::vector<std::string> languages, std::vector<int> alphabet,
                   std::vector<BpeMerge> merges)
    : vocab_size_(vocab_size),
      languages_(std::move(languages)),
      alphabet_(std::move(alphabet)),
      merges_(std::move(merges)) {
  build_tables();
}

void BpeVocab::build_tables() {
  std::set<std::string> seen_langs;
  for (const auto& l : languages_) {
    if (l.empty() || l.find_first_of(" \t\n") != std::string::npos) {
      throw InputError("bpe vocab: invalid language tag '" + l + "'");
    }
    if (!seen_langs.insert(l).second) throw InputError("bpe vocab: duplicate language tag '" + l + "'");
  }
  unit_to_token_.clear();
  spellings_.assign(static_cast<std::size_t>(num_tokens()), {});
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    const int id = num_specials() + static_cast<int>(i);
    if (alphabet_[i] < 0) throw InputError("bpe vocab: negative unit in alphabet");
    if (!unit_to_token_.emplace(alphabet_[i], id).second) {
      throw InputError("bpe vocab: duplicate unit " + std::to_string(alphabet_[i]) + " in alphabet");
    }
    spellings_[static_cast<std::size_t>(id)] = {alphabet_[i]};
  }
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    auto& m = merges_[i];
    const int id = first_merge_id() + static_cast<int>(i);
    if (m.left < num_specials() || m.left >= id || m.right < num_specials() || m.right >= id) {
      throw InputError("bpe vocab: merge " + std::to_string(i) + " refers to an undefined token");
    }
    m.result = id;
    auto& sp = spellings_[static_cast<std::size_t>(id)];
    sp = spellings_[static_cast<std::size_t>(m.left)];
    const auto& right = spellings_[static_cast<std::size_t>(m.right)];
    sp.insert(sp.end(), right.begin(), right.end());
  }
  if (num_tokens() > vocab_size_) {
    throw InputError("bpe vocab: " + std::to_string(num_tokens()) + " tokens exceed vocab_size " +
                     std::to_string(vocab_size_));
  }
}

int BpeVocab::language_token(const std::string& language) const {
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    if (languages_[i] == language) return kNumFixedSpecials + static_cast<int>(i);
  }
  throw InputError("unknown language tag '" + language + "'");
}

const std::string& BpeVocab::language_of_token(int id) const {
  if (!is_language_token(id)) throw InputError("token " + std::to_string(id) + " is not a language tag");
  return languages_[static_cast<std::size_t>(id - kNumFixedSpecials)];
}

int BpeVocab::unit_token(int unit) const {
  auto it = unit_to_token_.find(unit);
  return it == unit_to_token_.end() ? kUnk : it->second;
}

const std::vector<int>& BpeVocab::spelling(int id) const {
  if (id < num_specials() || id >= num_tokens()) {
    throw InputError("token " + std::to_string(id) + " has no unit spelling");
  }
  return spellings_[static_cast<std::size_t>(id)];
}

BpeVocab train_bpe(const std::vector<UnitSequence>& corpus, int vocab_size, std::vector<std::string> languages) {
  if (corpus.empty()) throw InputError("train_bpe: empty corpus");
  if (languages.empty()) {
    for (const auto& s : corpus) {
      if (!s.language.empty() && std::find(languages.begin(), languages.end(), s.language) == languages.end()) {
        languages.push_back(s.language);
      }
    }
  }
  std::set<int> alphabet_set;
  for (const auto& s : corpus) alphabet_set.insert(s.units.begin(), s.units.end());
  std::vector<int> alphabet(alphabet_set.begin(), alphabet_set.end());
  const int specials = kNumFixedSpecials + static_cast<int>(languages.size());
  const int base = specials + static_cast<int>(alphabet.size());
  if (vocab_size < base) {
    throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) + " is smaller than alphabet (" +
                      std::to_string(alphabet.size()) + ") plus specials (" + std::to_string(specials) + ")");
  }

  BpeVocab seed_vocab(vocab_size, languages, alphabet, {});
  std::vector<std::vector<int>> words;
  words.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> w;
    w.reserve(s.units.size());
    for (int u : s.units) w.push_back(seed_vocab.unit_token(u));
    words.push_back(std::move(w));
  }

  std::vector<BpeMerge> merges;
  int next_id = base;
  while (next_id < vocab_size) {
    std::map<std::uint64_t, long> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[pair_key(w[i], w[i + 1])];
    }
    std::uint64_t best_key = 0;
    long best_count = 0;
    // std::map iterates keys ascending, so the first maximum is the smallest pair.
    for (const auto& [key, count] : counts) {
      if (count > best_count) {
        best_count = count;
        best_key = key;
      }
    }
    if (best_count < 2) break;
    BpeMerge m{static_cast<int>(best_key >> 32), static_cast<int>(best_key & 0xffffffffULL), next_id};
    for (auto& w : words) apply_merge(w, m);
    merges.push_back(m);
    ++next_id;
  }
  return BpeVocab(vocab_size, std::move(languages), std::move(alphabet), std::move(merges));
}

TokenSequence encode(const BpeVocab& v, const UnitSequence& s) {
  TokenSequence out;
  out.language = s.language;
  out.tokens.reserve(s.units.size());
  for (int u : s.units) out.tokens.push_back(v.unit_token(u));
  for (const auto& m : v.merges()) {
    if (out.tokens.size() < 2) break;
    apply_merge(out.tokens, m);
  }
  return out;
}

UnitSequence decode(const BpeVocab& v, const TokenSequence& t) {
  UnitSequence out;
  out.language = t.language;
  for (int id : t.tokens) {
    if (id < 0 || id >= v.num_tokens()) {
      throw InputError("decode: token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(v.num_tokens()) + ")");
    }
    if (v.is_special(id)) continue;
    const auto& sp = v.spelling(id);
    out.units.insert(out.units.end(), sp.begin(), sp.end());
  }
  return out;
}

void write_vocab(std::ostream& os, const BpeVocab& v) {
  os << kVocabMagic << ' ' << kVocabVersion << ' ' << v.vocab_size() << '\n';
  os << "specials " << v.num_specials() << '\n';
  for (int id = 0; id < kNumFixedSpecials; ++id) os << fixed_special_name(id) << ' ' << id << '\n';
  for (const auto& lang : v.languages()) os << "lang:" << lang << ' ' << v.language_token(lang) << '\n';
  os << "alphabet " << v.alphabet().size() << '\n';
  for (std::size_t i = 0; i < v.alphabet().size(); ++i) os << (i ? " " : "") << v.alphabet()[i];
  os << '\n';
  os << "merges " << v.merges().size() << '\n';
  for (const auto& m : v.merges()) os << m.left << ' ' << m.right << '\n';
}

BpeVocab read_vocab(std::istream& is) {
  std::string magic;
  int version = 0;
  int vocab_size = 0;
  if (!(is >> magic >> version >> vocab_size) || magic != kVocabMagic) {
    throw InputError("vocab: missing or malformed header");
  }
  if (version != kVocabVersion) throw InputError("vocab: unsupported version " + std::to_string(version));
  std::string key;
  int n_specials = 0;
  if (!(is >> key >> n_specials) || key != "specials" || n_specials < kNumFixedSpecials) {
    throw InputError("vocab: malformed specials table");
  }
  std::vector<std::string> languages;
  for (int i = 0; i < n_specials; ++i) {
    std::string name;
    int id = 0;
    if (!(is >> name >> id) || id != i) throw InputError("vocab: malformed special token entry " + std::to_string(i));
    if (i < kNumFixedSpecials) {
      if (name != fixed_special_name(i)) throw InputError("vocab: unexpected special token '" + name + "'");
    } else {
      if (name.rfind("lang:", 0) != 0) throw InputError("vocab: expected language tag, got '" + name + "'");
      languages.push_back(name.substr(5));
    }
  }
  std::size_t n_alphabet = 0;
  if (!(is >> key >> n_alphabet) || key != "alphabet") throw InputError("vocab: malformed alphabet section");
  std::vector<int> alphabet(n_alphabet);
  for (auto& u : alphabet) {
    if (!(is >> u)) throw InputError("vocab: truncated alphabet");
  }
  std::size_t n_merges = 0;
  if (!(is >> key >> n_merges) || key != "merges") throw InputError("vocab: malformed merges section");
  std::vector<BpeMerge> merges(n_merges);
  for (auto& m : merges) {
    if (!(is >> m.left >> m.right)) throw InputError("vocab: truncated merge list");
  }
  return BpeVocab(vocab_size, std::move(languages), std::move(alphabet), std::move(merges));
}

}  // namespace unitmt
