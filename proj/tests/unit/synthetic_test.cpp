#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "unitmt/synthetic.hpp"

using namespace unitmt;

namespace {

CipherSpec small_spec(int v = 10) {
  CipherSpec s;
  s.vocab_size = v;
  s.successors_per_context = 4;
  s.seed = 21;
  s.finalize();
  return s;
}

}  // namespace

TEST(Oracle, HandTraced) {
  CipherSpec s;
  s.vocab_size = 8;
  s.permutation = {3, 1, 4, 0, 6, 2, 7, 5};
  s.reorder_window = 3;
  s.finalize();
  // substitute: 3 1 4 | 0 6 2 | 7 5
  // window sums 8, 8, 12 -> left rotations 2, 2, 0
  const auto out = translate_oracle(s, {{0, 1, 2, 3, 4, 5, 6, 7}, "l1", std::nullopt});
  EXPECT_EQ(out.units, (std::vector<int>{4, 3, 1, 2, 0, 6, 7, 5}));
  EXPECT_EQ(out.language, "l2");
  EXPECT_EQ(inverse_oracle(s, out).units, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(Oracle, InverseOverWindows) {
  for (int w = 1; w <= 5; ++w) {
    CipherSpec s = small_spec(30);
    s.reorder_window = w;
    const auto mono = generate_mono(s, 200, {1, 20}, 5);
    for (const auto& x : mono) {
      const auto y = translate_oracle(s, x);
      ASSERT_EQ(y.units.size(), x.units.size());
      EXPECT_EQ(inverse_oracle(s, y).units, x.units);
    }
  }
}

TEST(Oracle, LengthNoise) {
  CipherSpec s = small_spec(30);
  s.length_noise = 0.2;
  const auto mono = generate_mono(s, 500, {10, 20}, 6);
  long in = 0, out = 0, changed = 0;
  for (const auto& x : mono) {
    const auto y = translate_oracle(s, x);
    EXPECT_EQ(y, translate_oracle(s, x));
    EXPECT_FALSE(y.units.empty());
    in += static_cast<long>(x.units.size());
    out += static_cast<long>(y.units.size());
    changed += y.units.size() != x.units.size() ? 1 : 0;
  }
  // drops and duplicates are equally likely
  EXPECT_NEAR(static_cast<double>(out) / static_cast<double>(in), 1.0, 0.02);
  EXPECT_GT(changed, 300);
  EXPECT_THROW(inverse_oracle(s, mono[0]), ConfigError);
}

TEST(Markov, SuccessorTables) {
  const auto s = small_spec();
  MarkovSource m(s);
  for (int a = 0; a < s.vocab_size; ++a) {
    for (int b = 0; b < s.vocab_size; ++b) {
      const auto [units, probs] = m.successors(a, b);
      std::set<int> distinct(units, units + m.num_successors());
      EXPECT_EQ(static_cast<int>(distinct.size()), m.num_successors());
      EXPECT_NEAR(std::accumulate(probs, probs + m.num_successors(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Markov, StationaryIsFixedPoint) {
  const auto s = small_spec();
  MarkovSource m(s);
  const int v = s.vocab_size;
  const auto& pi = m.stationary_pairs();
  std::vector<double> next(pi.size(), 0.0);
  for (int a = 0; a < v; ++a) {
    for (int b = 0; b < v; ++b) {
      const auto [units, probs] = m.successors(a, b);
      for (int k = 0; k < m.num_successors(); ++k) next[static_cast<std::size_t>(b * v + units[k])] += pi[static_cast<std::size_t>(a * v + b)] * probs[k];
    }
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) diff += std::abs(next[i] - pi[i]);
  EXPECT_LT(diff, 1e-9);
  EXPECT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 1.0, 1e-9);
}

TEST(Markov, FirstTokenChiSquare) {
  const auto s = small_spec();
  MarkovSource m(s);
  const auto uni = m.stationary_unigram();
  const int n = 20000;
  const auto mono = generate_mono(s, n, {3, 8}, 8);
  std::vector<double> counts(uni.size(), 0.0);
  for (const auto& x : mono) counts[static_cast<std::size_t>(x.units[0])] += 1.0;
  double chi2 = 0.0;
  int dof = -1;
  for (std::size_t u = 0; u < uni.size(); ++u) {
    const double e = uni[u] * n;
    if (e < 5.0) continue;
    chi2 += (counts[u] - e) * (counts[u] - e) / e;
    ++dof;
  }
  ASSERT_GE(dof, 3);
  // 99.9th percentile of chi-square with 9 dof is 27.9
  EXPECT_LT(chi2, 27.9);
}

TEST(Generate, DeterministicAndBounded) {
  const auto s = small_spec(40);
  const auto a = generate_mono(s, 100, {6, 14}, 3);
  EXPECT_EQ(a, generate_mono(s, 100, {6, 14}, 3));
  EXPECT_NE(a, generate_mono(s, 100, {6, 14}, 4));
  for (const auto& x : a) {
    EXPECT_GE(x.units.size(), 6u);
    EXPECT_LE(x.units.size(), 14u);
    EXPECT_EQ(x.language, "l1");
  }
  const auto b = generate_mono(s, 10, {6, 14}, 3, Side::kSecond);
  EXPECT_EQ(b[0].language, "l2");
  EXPECT_THROW(generate_mono(s, 0, {6, 14}, 3), ConfigError);
  EXPECT_THROW(generate_mono(s, 5, {6, 2}, 3), ConfigError);
}

TEST(Generate, BenchmarkParallelIsOracle) {
  BenchmarkSpec bs;
  bs.cipher = small_spec(40);
  bs.cipher.permutation.clear();
  bs.mono_size = 50;
  bs.parallel_size = 20;
  bs.test_size = 10;
  bs.seed = 2;
  const auto b = make_benchmark(bs);
  ASSERT_EQ(b.train.first.size(), 20u);
  ASSERT_EQ(b.test.second.size(), 10u);
  for (std::size_t i = 0; i < b.train.first.size(); ++i) {
    EXPECT_EQ(b.train.second[i], translate_oracle(b.cipher, b.train.first[i]));
  }
  EXPECT_EQ(make_benchmark(bs).mono_second, b.mono_second);
}

TEST(Features, PhonesAndDurations) {
  CipherSpec s = small_spec(20);
  s.max_duration = 3;
  const UnitSequence x{{0, 5, 5, 19}, "l1", std::nullopt};
  const auto f = generate_features(s, x, 1);
  EXPECT_EQ(f.features.num_frames(), static_cast<Eigen::Index>(f.frame_units.units.size()));
  EXPECT_EQ(f.phones.phones.size(), f.frame_units.units.size());
  EXPECT_GE(f.frame_units.units.size(), 4u);
  EXPECT_LE(f.frame_units.units.size(), 12u);
  // zero spread: every frame sits on its unit center
  for (Eigen::Index t = 1; t < f.features.num_frames(); ++t) {
    const bool same = f.frame_units.units[static_cast<std::size_t>(t)] == f.frame_units.units[static_cast<std::size_t>(t - 1)];
    EXPECT_EQ(same, f.features.frames.row(t) == f.features.frames.row(t - 1));
  }
}

TEST(Features, PnmiTracksConfusion) {
  std::vector<UnitSequence> units;
  std::vector<PhoneAlignment> clean, noisy;
  CipherSpec s = small_spec(20);
  CipherSpec n = s;
  n.phone_confusion = 0.5;
  for (const auto& x : generate_mono(s, 50, {6, 14}, 1)) {
    const auto a = generate_features(s, x, 7);
    const auto b = generate_features(n, x, 7);
    units.push_back(a.frame_units);
    clean.push_back(a.phones);
    noisy.push_back(b.phones);
  }
  EXPECT_NEAR(pnmi(units, clean), 1.0, 1e-12);
  EXPECT_LT(pnmi(units, noisy), 0.8);
}

TEST(Spec, JsonRoundTripAndValidation) {
  CipherSpec s = small_spec(12);
  s.reorder_window = 2;
  std::stringstream ss;
  write_cipher_spec(ss, s);
  const auto back = read_cipher_spec(ss);
  EXPECT_EQ(back.permutation, s.permutation);
  EXPECT_EQ(back.reorder_window, 2);
  CipherSpec bad = s;
  bad.permutation[0] = bad.permutation[1];
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.reorder_window = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  std::stringstream junk("{not json");
  EXPECT_THROW(read_cipher_spec(junk), InputError);
}
