#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "unitmt/decoding.hpp"

using namespace unitmt;

namespace {

// Hand-set next-token log-probabilities keyed by the generated prefix.
class TableModel : public StepModel {
 public:
  std::map<std::vector<int>, std::vector<double>> table;
  int vocab = 5;

  int vocab_size() const override { return vocab; }
  void reset(const std::vector<int>& roots) override { prefixes_.assign(roots.size(), {}); }
  Matrix advance(const std::vector<int>& parents, const std::vector<int>& tokens) override {
    std::vector<std::vector<int>> next;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      auto p = prefixes_[static_cast<std::size_t>(parents[i])];
      p.push_back(tokens[i]);
      next.push_back(p);
    }
    prefixes_ = next;
    Matrix out(static_cast<Eigen::Index>(next.size()), vocab);
    for (std::size_t i = 0; i < next.size(); ++i) {
      const std::vector<int> key(next[i].begin() + 1, next[i].end());  // drop the start tag
      const auto& row = table.at(key);
      for (int v = 0; v < vocab; ++v) out(static_cast<Eigen::Index>(i), v) = std::log(row[static_cast<std::size_t>(v)]);
    }
    return out;
  }
  static constexpr int kStart = 1;

 private:
  std::vector<std::vector<int>> prefixes_;
};

TableModel greedy_trap() {
  TableModel m;
  // ids: 0 pad, 1 start, 2 EOS, 3 and 4 content
  m.table[{}] = {1e-9, 1e-9, 0.1, 0.5, 0.4};
  m.table[{3}] = {1e-9, 1e-9, 0.2, 0.4, 0.4};
  m.table[{4}] = {1e-9, 1e-9, 0.9, 0.05, 0.05};
  return m;
}

ModelConfig small_config(int vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 24;
  c.max_positions = 24;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.dropout_rate = 0.1;
  return c;
}

BpeVocab small_vocab() {
  std::vector<int> alphabet;
  for (int u = 0; u < 12; ++u) alphabet.push_back(u);
  return BpeVocab(19, {"a", "b"}, alphabet, {});
}

// Argmax decoding by full teacher-forced recomputation at every step.
std::vector<int> reference_greedy(const Seq2SeqParams& p, const BpeVocab& v, const std::vector<int>& src, int start,
                                  int max_len) {
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    Example e;
    e.source = src;
    e.target = {start};
    e.target.insert(e.target.end(), out.begin(), out.end());
    e.target.push_back(kEos);
    const auto l = forward_logits(p, Batch::from_examples(std::span<const Example>(&e, 1)), Mode::kEval, 0);
    const auto row = l.at(0, static_cast<int>(out.size()));
    if (step + 1 == max_len) break;
    int best = -1;
    for (int t = 0; t < p.config.vocab_size; ++t) {
      if (v.is_special(t) && t != kEos) continue;
      if (best < 0 || row(t) > row(best)) best = t;
    }
    if (best == kEos) break;
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST(Decoding, IncrementalLogitsMatchTeacherForcing) {
  auto p = Seq2SeqParams::initialize(small_config(19), 4);
  const std::vector<int> src{5, 9, 10, 11, 2};
  const std::vector<int> tgt{6, 12, 7, 14, 18, 2};
  Example e{src, tgt, {"a", "b"}};
  const auto full = forward_logits(p, Batch::from_examples(std::span<const Example>(&e, 1)), Mode::kEval, 0);
  TransformerStepModel m(p, {src});
  m.reset({0});
  for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
    const Matrix row = m.advance({0}, {tgt[t]});
    EXPECT_LT((row.row(0) - full.at(0, static_cast<int>(t))).cwiseAbs().maxCoeff(), 1e-10) << t;
  }
}

TEST(Decoding, BeamFindsSequenceGreedyMisses) {
  auto m = greedy_trap();
  BeamOptions o;
  o.max_len = 2;
  // enumerate every sequence of length <= 2 ending in EOS
  double best = -1e9;
  std::vector<int> best_seq;
  for (int a = 2; a <= 4; ++a) {
    std::vector<int> seq{a};
    if (a != 2) seq.push_back(2);
    double lp = std::log(m.table[{}][static_cast<std::size_t>(a)]);
    if (a != 2) lp += std::log(m.table[{a}][2]);
    const double score = lp / static_cast<double>(seq.size());
    if (score > best) {
      best = score;
      best_seq = seq;
    }
  }
  ASSERT_EQ(best_seq, (std::vector<int>{4, 2}));
  o.beam_size = 1;
  const auto g = beam_search(m, TableModel::kStart, o);
  EXPECT_EQ(g.tokens, std::vector<int>{3});
  o.beam_size = 2;
  const auto b = beam_search(m, TableModel::kStart, o);
  EXPECT_EQ(b.tokens, std::vector<int>{4});
  EXPECT_NEAR(b.score, best, 1e-8);
  EXPECT_GT(b.score, g.score);
}

TEST(Decoding, BeamOneEqualsReferenceGreedy) {
  const auto v = small_vocab();
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto p = Seq2SeqParams::initialize(small_config(19), seed);
    const std::vector<int> src{5, static_cast<int>(7 + seed), 9, 12, 2};
    BeamOptions o;
    o.beam_size = 1;
    o.max_len = 12;
    TransformerStepModel m(p, {src});
    const auto banned = banned_generation_tokens(v);
    const auto h = beam_search(m, v.language_token("b"), o, banned);
    EXPECT_EQ(h.tokens, reference_greedy(p, v, src, v.language_token("b"), 12)) << seed;
    EXPECT_NEAR(h.log_prob, sequence_log_prob(p, src, v.language_token("b"), h.tokens), 1e-9);
  }
}

TEST(Decoding, WideBeamNeverScoresBelowGreedy) {
  const auto v = small_vocab();
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto p = Seq2SeqParams::initialize(small_config(19), 100 + seed);
    TokenSequence src{{5, 6, 7, static_cast<int>(8 + seed % 4)}, "a"};
    BeamOptions o1;
    o1.beam_size = 1;
    o1.max_len = 10;
    BeamOptions o10 = o1;
    o10.beam_size = 10;
    TransformerStepModel m(p, {model_sequence(v, src)});
    const auto banned = banned_generation_tokens(v);
    const auto h1 = beam_search(m, v.language_token("b"), o1, banned);
    const auto h10 = beam_search(m, v.language_token("b"), o10, banned);
    EXPECT_GE(h10.score, h1.score) << seed;
    for (int t : h10.tokens) EXPECT_FALSE(v.is_special(t));
    EXPECT_LE(h10.length, 10);
  }
}

TEST(Decoding, NucleusHandFixture) {
  const std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
  const auto [ids, kept] = nucleus(probs, 0.9);
  EXPECT_EQ(ids, (std::vector<int>{0, 1, 2}));
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_NEAR(kept[0], 0.5 / 0.95, 1e-12);
  EXPECT_NEAR(kept[1], 0.3 / 0.95, 1e-12);
  EXPECT_NEAR(kept[2], 0.15 / 0.95, 1e-12);
  const std::vector<double> tie{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(nucleus(tie, 0.3).first, (std::vector<int>{0, 1}));
  EXPECT_THROW(nucleus(probs, 0.0), ConfigError);
}

TEST(Decoding, TinyTopPEqualsGreedy) {
  const auto v = small_vocab();
  auto p = Seq2SeqParams::initialize(small_config(19), 21);
  std::vector<TokenSequence> srcs{{{5, 6, 7}, "a"}, {{9, 9, 1, 0}, "a"}};
  SamplingOptions so;
  so.top_p = 1e-9;
  so.temperature = 0.7;
  so.max_len = 9;
  so.seed = 3;
  const auto out = nucleus_translate(p, v, srcs, "b", so);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    BeamOptions o;
    o.beam_size = 1;
    o.max_len = 9;
    EXPECT_EQ(out[i].tokens, beam_decode(p, v, srcs[i], "b", o).tokens);
    EXPECT_EQ(out[i].language, "b");
  }
}

TEST(Decoding, SamplingDeterministicPerSequence) {
  const auto v = small_vocab();
  auto p = Seq2SeqParams::initialize(small_config(19), 22);
  std::vector<TokenSequence> srcs{{{5, 6, 7}, "a"}, {{9, 9, 1, 0}, "a"}, {{3}, "a"}};
  SamplingOptions so;
  so.temperature = 1.5;
  so.max_len = 12;
  so.seed = 8;
  const auto a = nucleus_translate(p, v, srcs, "b", so);
  const auto b = nucleus_translate(p, v, srcs, "b", so);
  EXPECT_EQ(a, b);
  // a sequence's sample does not depend on the rest of the batch
  std::vector<TokenSequence> first{srcs[0]};
  EXPECT_EQ(nucleus_translate(p, v, first, "b", so)[0], a[0]);
  so.seed = 9;
  const auto c = nucleus_translate(p, v, srcs, "b", so);
  EXPECT_NE(a, c);
  for (const auto& s : a) {
    EXPECT_LT(static_cast<int>(s.tokens.size()), 12);
    for (int t : s.tokens) EXPECT_FALSE(v.is_special(t));
  }
}

TEST(Decoding, RejectsBadOptions) {
  auto m = greedy_trap();
  BeamOptions o;
  o.beam_size = 0;
  EXPECT_THROW(beam_search(m, TableModel::kStart, o), ConfigError);
  SamplingOptions so;
  so.temperature = 0.0;
  EXPECT_THROW(nucleus_sample(m, {0}, {TableModel::kStart}, so), ConfigError);
}
