#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "unitmt/noising.hpp"

using namespace unitmt;

namespace {

constexpr int kSpecials = 7;

TokenSequence random_seq(std::mt19937_64& g) {
  TokenSequence s{{}, "en"};
  const int n = 1 + static_cast<int>(g() % 40);
  for (int i = 0; i < n; ++i) {
    // roughly one in six tokens is a special
    s.tokens.push_back(g() % 6 == 0 ? static_cast<int>(g() % kSpecials) : kSpecials + static_cast<int>(g() % 50));
  }
  if (s.tokens.back() < kSpecials) s.tokens.push_back(kSpecials + 3);
  return s;
}

}  // namespace

TEST(Noise, InvariantsOverSeeds) {
  std::mt19937_64 g(17);
  NoiseConfig cfg;
  for (int run = 0; run < 1000; ++run) {
    const auto s = random_seq(g);
    const auto r = noise(s, cfg, kSpecials, static_cast<std::uint64_t>(run));
    int maskable = 0;
    for (int t : s.tokens) maskable += t >= kSpecials ? 1 : 0;
    const int target = static_cast<int>(std::ceil(0.35 * maskable - 1e-9));
    const int covered = static_cast<int>(r.masked_positions.size());

    ASSERT_GE(covered, target) << "run " << run;
    ASSERT_LE(covered, maskable);
    int span_sum = 0;
    for (int l : r.span_lengths) span_sum += l;
    EXPECT_EQ(span_sum, covered);
    // the last span was needed, so coverage before it fell short
    EXPECT_LT(covered - r.span_lengths.back(), target);
    ASSERT_EQ(r.sampled_lengths.size(), r.span_lengths.size());
    for (std::size_t i = 0; i < r.span_lengths.size(); ++i) {
      EXPECT_GE(r.sampled_lengths[i], 1);
      EXPECT_GE(r.span_lengths[i], 1);
      EXPECT_LE(r.span_lengths[i], r.sampled_lengths[i]);
    }
    for (std::size_t i = 0; i < r.masked_positions.size(); ++i) {
      const int p = r.masked_positions[i];
      EXPECT_GE(s.tokens[static_cast<std::size_t>(p)], kSpecials);
      if (i) EXPECT_GT(p, r.masked_positions[i - 1]);
    }
    const int n = static_cast<int>(s.tokens.size());
    EXPECT_EQ(static_cast<int>(r.noised.tokens.size()), n - covered + static_cast<int>(r.span_lengths.size()));
    // unmasked tokens survive in order; each span leaves exactly one mask token
    std::vector<bool> m(s.tokens.size(), false);
    for (int p : r.masked_positions) m[static_cast<std::size_t>(p)] = true;
    std::vector<int> kept, kept_noised;
    for (int i = 0; i < n; ++i)
      if (!m[static_cast<std::size_t>(i)]) kept.push_back(s.tokens[static_cast<std::size_t>(i)]);
    int masks = 0;
    for (int t : r.noised.tokens) {
      if (t == kMask) {
        ++masks;
      } else {
        kept_noised.push_back(t);
      }
    }
    std::vector<int> kept_no_mask;
    for (int t : kept)
      if (t != kMask) kept_no_mask.push_back(t);
    EXPECT_EQ(kept_noised, kept_no_mask);
    EXPECT_EQ(masks, static_cast<int>(r.span_lengths.size() + kept.size() - kept_no_mask.size()));
    EXPECT_EQ(r.noised.language, "en");
  }
}

TEST(Noise, Deterministic) {
  std::mt19937_64 g(4);
  const auto s = random_seq(g);
  const auto a = noise(s, {}, kSpecials, 99);
  const auto b = noise(s, {}, kSpecials, 99);
  EXPECT_EQ(a.noised, b.noised);
  EXPECT_EQ(a.masked_positions, b.masked_positions);
  int differ = 0;
  TokenSequence longer{std::vector<int>(40, 20), "en"};
  for (int i = 0; i < 40; ++i) longer.tokens[static_cast<std::size_t>(i)] = 10 + i;
  const auto base = noise(longer, {}, kSpecials, 0);
  for (std::uint64_t seed = 1; seed < 20; ++seed) {
    differ += noise(longer, {}, kSpecials, seed).masked_positions != base.masked_positions ? 1 : 0;
  }
  EXPECT_GT(differ, 15);
}

TEST(Noise, SpanLengthMean) {
  // E[max(1, Poisson(2))] = 2 + e^-2
  TokenSequence s{std::vector<int>(400, 0), "en"};
  for (int i = 0; i < 400; ++i) s.tokens[static_cast<std::size_t>(i)] = 10 + i;
  double sum = 0.0;
  long n = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (int l : noise(s, {}, kSpecials, seed).sampled_lengths) {
      sum += l;
      ++n;
    }
  }
  EXPECT_NEAR(sum / static_cast<double>(n), 2.0 + std::exp(-2.0), 0.04);
}

TEST(Noise, Errors) {
  EXPECT_THROW(noise({{kEos, kPad, 5}, "en"}, {}, kSpecials, 0), InputError);
  NoiseConfig bad;
  bad.mask_ratio = 1.0;
  EXPECT_THROW(noise({{10}, "en"}, bad, kSpecials, 0), ConfigError);
  bad = {};
  bad.lambda = 0.0;
  EXPECT_THROW(noise({{10}, "en"}, bad, kSpecials, 0), ConfigError);
}

TEST(Noise, DenoisingPairTargetsOriginal) {
  TokenSequence s{{10, 11, 12, 13, 14, kEos}, "es"};
  const auto p = denoising_pair(s, {}, kSpecials, 5);
  EXPECT_EQ(p.target, s);
  EXPECT_EQ(p.source.tokens.back(), kEos);
  EXPECT_NE(p.source, s);
}
