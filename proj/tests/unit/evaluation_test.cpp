#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "unitmt/common.hpp"
#include "unitmt/evaluation.hpp"

using namespace unitmt;

TEST(Bleu, IdentityIsHundred) {
  const std::vector<Sentence> refs{{1, 2, 3, 4, 5}, {6, 7, 8, 9}, {1, 1, 1, 1, 1, 1}};
  const auto s = corpus_bleu(refs, refs);
  EXPECT_NEAR(s.bleu, 100.0, 1e-12);
  EXPECT_DOUBLE_EQ(s.brevity_penalty, 1.0);
}

TEST(Bleu, OneWrongToken) {
  // a b c d e vs a b c d f: 4/5, 3/4, 2/3, 1/2
  const auto s = corpus_bleu({{1, 2, 3, 4, 5}}, {{1, 2, 3, 4, 6}});
  EXPECT_NEAR(s.precisions[0], 0.8, 1e-15);
  EXPECT_NEAR(s.precisions[3], 0.5, 1e-15);
  EXPECT_NEAR(s.bleu, 100.0 * std::pow(0.2, 0.25), 1e-9);
  EXPECT_NEAR(s.bleu, 66.87403049764221, 1e-9);
}

TEST(Bleu, BrevityPenalty) {
  const auto s = corpus_bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5}});
  EXPECT_NEAR(s.brevity_penalty, std::exp(1.0 - 5.0 / 4.0), 1e-15);
  EXPECT_NEAR(s.bleu, 100.0 * std::exp(-0.25), 1e-9);
}

TEST(Bleu, ClippedCounts) {
  // hypothesis repeats a unigram more often than the reference
  const auto st = sentence_stats({7, 7, 7, 7}, {7, 8, 9, 10});
  EXPECT_EQ(st.matches[0], 1);
  EXPECT_EQ(st.totals[0], 4);
  EXPECT_EQ(st.matches[1], 0);
}

TEST(Bleu, CorpusPoolsStatistics) {
  // corpus BLEU is not the mean of sentence BLEUs
  const std::vector<Sentence> h{{1, 2, 3, 4, 5}, {9, 9}};
  const std::vector<Sentence> r{{1, 2, 3, 4, 5}, {8, 8}};
  const auto s = corpus_bleu(h, r);
  // pooled: p1 5/7, p2 4/5, p3 3/3, p4 2/2
  EXPECT_NEAR(s.bleu, 100.0 * std::pow(5.0 / 7.0 * 4.0 / 5.0, 0.25), 1e-9);
}

TEST(Bleu, ZeroFourGramMatchesGiveZero) {
  EXPECT_EQ(corpus_bleu({{1, 2, 3, 4, 5}}, {{1, 2, 3, 9, 5}}).bleu, 0.0);
  EXPECT_EQ(corpus_bleu({{}}, {{1, 2}}).bleu, 0.0);
  EXPECT_THROW(corpus_bleu({{1}}, {}), InputError);
  EXPECT_THROW(corpus_bleu({}, {}), InputError);
}

TEST(Buckets, NearestRankPartition) {
  std::vector<Sentence> refs;
  for (int len = 9; len >= 1; --len) refs.push_back(Sentence(static_cast<std::size_t>(len), 1));
  const auto t = bucket_thresholds(refs);
  EXPECT_EQ(t.p33, 3);  // rank ceil(0.33 * 9) = 3
  EXPECT_EQ(t.p66, 6);  // rank ceil(0.66 * 9) = 6
  const auto b = length_buckets(refs);
  int counts[3] = {0, 0, 0};
  for (auto x : b) ++counts[static_cast<int>(x)];
  EXPECT_EQ(counts[0], 3);
  EXPECT_EQ(counts[1], 3);
  EXPECT_EQ(counts[2], 3);
  EXPECT_EQ(b.front(), LengthBucket::kLong);
  EXPECT_EQ(b.back(), LengthBucket::kShort);
  EXPECT_THROW(bucket_thresholds({{1}, {2}}), InputError);
}

TEST(Buckets, ReportCountsSumToCorpus) {
  std::vector<Sentence> refs, hyps;
  for (int i = 0; i < 30; ++i) {
    Sentence s;
    for (int t = 0; t < 3 + i % 11; ++t) s.push_back((t * 7 + i) % 13);
    refs.push_back(s);
    if (i % 4 == 0) s.back() = 99;
    hyps.push_back(s);
  }
  const auto r = evaluate_corpus(hyps, refs);
  long total = 0;
  for (const auto& b : r.buckets) total += b.count;
  EXPECT_EQ(total, 30);
  std::stringstream ss;
  write_eval_report_json(ss, r);
  const auto back = read_eval_report_json(ss);
  EXPECT_DOUBLE_EQ(back.corpus.bleu, r.corpus.bleu);
  EXPECT_EQ(back.buckets[2].count, r.buckets[2].count);
  std::stringstream csv;
  write_eval_report_csv(csv, r);
  EXPECT_EQ(csv.str().substr(0, 17), "subset,count,bleu");
}
