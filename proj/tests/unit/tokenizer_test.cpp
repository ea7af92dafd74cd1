#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "unitmt/tokenizer.hpp"

using namespace unitmt;

namespace {

UnitSequence seq(std::vector<int> u, std::string lang = "en") { return {std::move(u), std::move(lang), std::nullopt}; }

std::vector<UnitSequence> random_corpus(std::uint64_t seed, int n) {
  std::mt19937_64 g(seed);
  std::vector<UnitSequence> c;
  for (int i = 0; i < n; ++i) {
    std::vector<int> u;
    const int len = 1 + static_cast<int>(g() % 25);
    for (int t = 0; t < len; ++t) u.push_back(static_cast<int>(g() % 6) * 3);
    c.push_back(seq(u, i % 2 ? "en" : "es"));
  }
  return c;
}

// Plain re-implementation: count adjacent pairs over strings of unit-lists,
// merge the most frequent (smallest pair on ties), repeat.
std::vector<std::pair<std::vector<int>, std::vector<int>>> reference_merges(const std::vector<UnitSequence>& corpus,
                                                                             int max_merges) {
  using Sym = std::vector<int>;
  std::vector<std::vector<Sym>> words;
  for (const auto& s : corpus) {
    std::vector<Sym> w;
    for (int u : s.units) w.push_back({u});
    words.push_back(w);
  }
  std::vector<std::pair<Sym, Sym>> out;
  for (int m = 0; m < max_merges; ++m) {
    std::map<std::pair<Sym, Sym>, int> counts;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[{w[i], w[i + 1]}];
    int best = 0;
    std::pair<Sym, Sym> best_pair;
    for (const auto& [p, c] : counts) {
      if (c > best) {
        best = c;
        best_pair = p;
      }
    }
    // ties: smallest (left, right) by token id, and ids follow creation order
    std::vector<std::pair<Sym, Sym>> tied;
    for (const auto& [p, c] : counts)
      if (c == best) tied.push_back(p);
    if (best < 2) break;
    auto id_of = [&](const Sym& s) -> long {
      if (s.size() == 1) return s[0];  // base units ordered by value
      for (std::size_t k = 0; k < out.size(); ++k) {
        Sym joined = out[k].first;
        joined.insert(joined.end(), out[k].second.begin(), out[k].second.end());
        if (joined == s) return 1000000 + static_cast<long>(k);
      }
      return -1;
    };
    best_pair = tied.front();
    for (const auto& p : tied) {
      const auto a = std::make_pair(id_of(p.first), id_of(p.second));
      const auto b = std::make_pair(id_of(best_pair.first), id_of(best_pair.second));
      if (a < b) best_pair = p;
    }
    out.push_back(best_pair);
    Sym joined = best_pair.first;
    joined.insert(joined.end(), best_pair.second.begin(), best_pair.second.end());
    for (auto& w : words) {
      std::vector<Sym> nw;
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == best_pair.first && w[i + 1] == best_pair.second) {
          nw.push_back(joined);
          i += 2;
        } else {
          nw.push_back(w[i++]);
        }
      }
      w = nw;
    }
  }
  return out;
}

}  // namespace

TEST(Bpe, HandFixture) {
  // "a b a b c" twice: (a,b) x4; then (ab,ab) and (ab,c) tie at 2, c has the smaller id
  std::vector<UnitSequence> c{seq({10, 11, 10, 11, 12}), seq({10, 11, 10, 11, 12})};
  const auto v = train_bpe(c, 100, {"en"});
  ASSERT_EQ(v.num_specials(), 6);
  ASSERT_EQ(v.alphabet(), (std::vector<int>{10, 11, 12}));
  ASSERT_GE(v.merges().size(), 2u);
  EXPECT_EQ(v.spelling(v.merges()[0].result), (std::vector<int>{10, 11}));
  EXPECT_EQ(v.spelling(v.merges()[1].result), (std::vector<int>{10, 11, 12}));
  const auto t = encode(v, c[0]);
  EXPECT_EQ(t.tokens.size(), 1u);
  EXPECT_EQ(decode(v, t).units, c[0].units);
}

TEST(Bpe, SpecialLayout) {
  const auto v = train_bpe({seq({7, 8}, "en"), seq({8, 9}, "es")}, 20);
  EXPECT_EQ(v.language_token("en"), 5);
  EXPECT_EQ(v.language_token("es"), 6);
  EXPECT_EQ(v.unit_token(7), 7);
  EXPECT_EQ(v.unit_token(100), kUnk);
  EXPECT_TRUE(v.is_special(kEos));
  EXPECT_FALSE(v.is_special(7));
  EXPECT_THROW(v.language_token("fr"), InputError);
}

TEST(Bpe, MatchesReferenceMerges) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto corpus = random_corpus(s, 30);
    const auto v = train_bpe(corpus, 7 + 6 + 25, {"en", "es"});
    const auto ref = reference_merges(corpus, 25);
    ASSERT_EQ(v.merges().size(), ref.size()) << "seed " << s;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      EXPECT_EQ(v.spelling(v.merges()[k].left), ref[k].first) << "seed " << s << " merge " << k;
      EXPECT_EQ(v.spelling(v.merges()[k].right), ref[k].second) << "seed " << s << " merge " << k;
    }
  }
}

TEST(Bpe, EveryMergeOccursTwice) {
  const auto corpus = random_corpus(99, 40);
  const auto v = train_bpe(corpus, 400, {"en", "es"});
  EXPECT_LT(v.num_tokens(), 400);  // stops once no pair repeats
  std::vector<std::vector<int>> words;
  for (const auto& s : corpus) {
    std::vector<int> w;
    for (int u : s.units) w.push_back(v.unit_token(u));
    words.push_back(w);
  }
  for (const auto& m : v.merges()) {
    int count = 0;
    for (auto& w : words) {
      std::vector<int> nw;
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == m.left && w[i + 1] == m.right) {
          ++count;
          nw.push_back(m.result);
          i += 2;
        } else {
          nw.push_back(w[i++]);
        }
      }
      w = nw;
    }
    EXPECT_GE(count, 2);
  }
}

TEST(Bpe, RoundTrip) {
  const auto v = train_bpe(random_corpus(1, 200), 60, {"en", "es"});
  std::mt19937_64 g(2);
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> u;
    const int len = 1 + static_cast<int>(g() % 30);
    for (int t = 0; t < len; ++t) u.push_back(static_cast<int>(g() % 6) * 3);
    const auto s = seq(u);
    const auto t = encode(v, s);
    EXPECT_LE(t.tokens.size(), u.size());
    EXPECT_EQ(decode(v, t), s);
  }
}

TEST(Bpe, UnknownUnitsAndRange) {
  const auto v = train_bpe({seq({1, 2, 1, 2})}, 20, {"en"});
  const auto t = encode(v, seq({1, 50, 2}));
  EXPECT_EQ(t.tokens[1], kUnk);
  EXPECT_EQ(decode(v, t).units, (std::vector<int>{1, 2}));
  EXPECT_THROW(decode(v, {{999}, "en"}), InputError);
  EXPECT_THROW(train_bpe({seq({1, 2, 3})}, 5, {"en"}), ConfigError);
  EXPECT_THROW(train_bpe({}, 50), InputError);
}

TEST(Bpe, VocabFileRoundTrip) {
  const auto v = train_bpe(random_corpus(4, 50), 40, {"en", "es"});
  std::stringstream ss;
  write_vocab(ss, v);
  const auto back = read_vocab(ss);
  EXPECT_EQ(back.languages(), v.languages());
  EXPECT_EQ(back.alphabet(), v.alphabet());
  ASSERT_EQ(back.merges().size(), v.merges().size());
  const auto s = random_corpus(5, 1)[0];
  EXPECT_EQ(encode(back, s), encode(v, s));
  std::stringstream bad("UNITMT-BPE 1 40\nspecials 5\n<pad> 0\n");
  EXPECT_THROW(read_vocab(bad), InputError);
}
