#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "unitmt/quantizer.hpp"

using namespace unitmt;

namespace {

FeatureMatrix rows(std::initializer_list<std::initializer_list<double>> values) {
  FeatureMatrix m;
  m.frames.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m.frames(r, c++) = v;
    ++r;
  }
  return m;
}

FeatureMatrix random_frames(std::mt19937_64& g, int n, int d) {
  std::normal_distribution<double> nd;
  FeatureMatrix m;
  m.frames.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m.frames(i, j) = nd(g) + (i % 3) * 2.0;
  return m;
}

}  // namespace

TEST(KMeans, TwoTriads) {
  auto m = rows({{0, 0}, {1, 0}, {0, 1}, {10, 10}, {11, 10}, {10, 11}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cb = train_kmeans({m}, {2, seed, 100, 1e-9});
    ASSERT_EQ(cb.k(), 2);
    Eigen::RowVector2d a(1.0 / 3, 1.0 / 3), b(31.0 / 3, 31.0 / 3);
    const bool order = (cb.centers.row(0) - a).norm() < 1e-12;
    EXPECT_LT((cb.centers.row(order ? 0 : 1) - a).norm(), 1e-12);
    EXPECT_LT((cb.centers.row(order ? 1 : 0) - b).norm(), 1e-12);
    // per triad 2/9 + 5/9 + 5/9 = 4/3, mean over 6 frames
    EXPECT_NEAR(cb.distortion, 2 * (4.0 / 3.0) / 6.0, 1e-12);
  }
}

TEST(KMeans, DistortionNonIncreasing) {
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20 + trial % 30, d = 1 + trial % 4, k = 2 + trial % 5;
    const auto res = train_kmeans_traced({random_frames(g, n, d)}, {k, static_cast<std::uint64_t>(trial), 50, 0.0});
    ASSERT_FALSE(res.distortion_history.empty());
    for (std::size_t i = 1; i < res.distortion_history.size(); ++i) {
      EXPECT_LE(res.distortion_history[i], res.distortion_history[i - 1] + 1e-12) << "trial " << trial;
    }
  }
}

TEST(KMeans, Deterministic) {
  std::mt19937_64 g(3);
  const auto data = random_frames(g, 60, 3);
  const auto a = train_kmeans({data}, {4, 11, 100, 1e-6});
  const auto b = train_kmeans({data}, {4, 11, 100, 1e-6});
  EXPECT_EQ(a.centers, b.centers);
}

TEST(KMeans, DegenerateInputs) {
  auto two = rows({{1, 1}, {1, 1}, {2, 2}});
  EXPECT_THROW(train_kmeans({two}, {3, 0, 10, 0}), DegenerateInputError);
  EXPECT_THROW(train_kmeans({rows({{0}})}, {2, 0, 10, 0}), DegenerateInputError);
  EXPECT_THROW(train_kmeans({}, {1, 0, 10, 0}), InputError);
  EXPECT_THROW(train_kmeans({two}, {0, 0, 10, 0}), ConfigError);
  auto bad = rows({{0, std::numeric_limits<double>::quiet_NaN()}});
  EXPECT_THROW(train_kmeans({bad}, {1, 0, 10, 0}), InputError);
  EXPECT_THROW(train_kmeans({two, rows({{1, 2, 3}})}, {1, 0, 10, 0}), InputError);
}

TEST(Assign, MatchesBruteForce) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto data = random_frames(g, 40, 3);
    const auto cb = train_kmeans({data}, {5, static_cast<std::uint64_t>(trial), 20, 1e-6});
    const auto u = assign_units(data, cb);
    ASSERT_EQ(u.units.size(), 40u);
    for (int t = 0; t < 40; ++t) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < cb.k(); ++c) {
        const double dd = (data.frames.row(t) - cb.centers.row(c)).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      EXPECT_EQ(u.units[static_cast<std::size_t>(t)], best);
    }
  }
}

TEST(Assign, TiesGoToLowestIndex) {
  Codebook cb;
  cb.centers = rows({{1.0}, {-1.0}}).frames;
  EXPECT_EQ(assign_units(rows({{0.0}}), cb).units, std::vector<int>{0});
  EXPECT_THROW(assign_units(rows({{0.0, 1.0}}), cb), InputError);
}

TEST(RunLength, Fixture) {
  UnitSequence raw{{5, 5, 5, 2, 2, 7, 5}, "x", std::nullopt};
  const auto e = run_length_encode(raw);
  EXPECT_EQ(e.units, (std::vector<int>{5, 2, 7, 5}));
  EXPECT_EQ(*e.durations, (std::vector<int>{3, 2, 1, 1}));
  EXPECT_EQ(e.language, "x");
  EXPECT_THROW(run_length_encode(UnitSequence{}), InputError);
}

TEST(RunLength, RoundTrip) {
  std::mt19937_64 g(9);
  for (int trial = 0; trial < 1000; ++trial) {
    UnitSequence raw;
    const int n = 1 + static_cast<int>(g() % 40);
    for (int i = 0; i < n; ++i) raw.units.push_back(static_cast<int>(g() % 4));
    const auto e = run_length_encode(raw);
    for (std::size_t i = 1; i < e.units.size(); ++i) ASSERT_NE(e.units[i], e.units[i - 1]);
    EXPECT_EQ(expand_runs(e).units, raw.units);
  }
}

TEST(Pnmi, HandComputed) {
  // phone 0 frames: unit 0 twice, unit 1 once; phone 1 frames: unit 0 once, unit 1 twice
  std::vector<UnitSequence> u{{{0, 0, 1, 0, 1, 1}, "", std::nullopt}};
  std::vector<PhoneAlignment> p{{{0, 0, 0, 1, 1, 1}}};
  EXPECT_NEAR(pnmi(u, p), 0.0817041659455104, 1e-12);
}

TEST(Pnmi, Limits) {
  std::vector<PhoneAlignment> p{{{0, 1, 2, 0, 1, 2}}};
  EXPECT_NEAR(pnmi({{{3, 4, 5, 3, 4, 5}, "", std::nullopt}}, p), 1.0, 1e-12);
  EXPECT_NEAR(pnmi({{{0, 0, 0, 0, 0, 0}, "", std::nullopt}}, p), 0.0, 1e-12);
  EXPECT_THROW(pnmi({{{1, 2}, "", std::nullopt}}, {{{0, 0}}}), UndefinedMetricError);
  EXPECT_THROW(pnmi({{{1, 2}, "", std::nullopt}}, {{{0}}}), InputError);
}

TEST(Sweep, RankingTieBreaks) {
  std::vector<SweepEntry> e{{{6, 100}, 0.5, 0}, {{3, 200}, 0.7, 0}, {{2, 100}, 0.5, 0}, {{1, 50}, 0.5, 0}};
  rank_sweep_entries(e);
  EXPECT_EQ(e[0].candidate.k, 200);
  EXPECT_EQ(e[1].candidate.k, 50);
  EXPECT_EQ(e[2].candidate.layer, 2);
  EXPECT_EQ(e[3].candidate.layer, 6);
}

TEST(Sweep, SelectsInformativeLayer) {
  // layer 1 separates the two phones, layer 2 is noise
  std::mt19937_64 g(1);
  std::normal_distribution<double> nd(0.0, 0.05);
  std::vector<PhoneAlignment> align;
  LayerFeatures good{1, {}}, noise{2, {}};
  for (int u = 0; u < 4; ++u) {
    PhoneAlignment a;
    FeatureMatrix fg, fn;
    fg.frames.resize(20, 2);
    fn.frames.resize(20, 2);
    for (int t = 0; t < 20; ++t) {
      const int ph = (t / 5) % 2;
      a.phones.push_back(ph);
      fg.frames.row(t) << ph * 5.0 + nd(g), nd(g);
      fn.frames.row(t) << nd(g) * 20, nd(g) * 20;
    }
    align.push_back(a);
    good.utterances.push_back(fg);
    noise.utterances.push_back(fn);
  }
  const auto rep = pnmi_sweep({{2, 2}, {1, 2}}, {good, noise}, align, 3);
  EXPECT_EQ(rep.selected.layer, 1);
  EXPECT_NEAR(rep.ranked.front().pnmi, 1.0, 1e-9);
}

TEST(Files, CodebookRoundTrip) {
  Codebook cb;
  cb.centers = rows({{0.125, -3.5}, {1e-3, 2.0}}).frames;
  std::stringstream ss;
  write_codebook(ss, cb);
  const auto back = read_codebook(ss);
  EXPECT_EQ(back.centers, cb.centers);
  std::stringstream bad("UNITMT-CODEBOOK 1 2 2\n0 0\n");
  EXPECT_THROW(read_codebook(bad), InputError);
}

TEST(Files, UnitCorpusRoundTrip) {
  std::vector<UnitSequence> c{{{1, 2, 3}, "a", std::nullopt}, {{4, 5}, "a", std::vector<int>{2, 1}}};
  std::stringstream ss;
  write_unit_corpus(ss, c);
  EXPECT_EQ(read_unit_corpus(ss, "a"), c);
  std::stringstream bad("1 2 | 1\n");
  EXPECT_THROW(read_unit_corpus(bad), InputError);
  std::stringstream neg("1 -2\n");
  EXPECT_THROW(read_unit_corpus(neg), InputError);
}

TEST(Files, FeaturesRoundTrip) {
  FeatureMatrix a = rows({{0.1, 1.0 / 3.0}, {-2.5, 1e-300}});
  a.source_id = "u0";
  a.layer_index = 6;
  FeatureMatrix b = rows({{7.0, 8.0}});
  std::stringstream ss;
  write_features(ss, {a, b});
  const auto back = read_features(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].frames, a.frames);
  EXPECT_EQ(back[0].source_id, "u0");
  EXPECT_EQ(back[0].layer_index, 6);
  EXPECT_EQ(back[1].frames, b.frames);
  std::stringstream bad("UNITMT-FEATURES 1 1 2\nutterance x 0 2\n1 2\n3\n");
  EXPECT_THROW(read_features(bad), InputError);

  std::stringstream ph;
  write_phone_alignments(ph, {{{0, 0, 3}}, {{1}}});
  const auto phones = read_phone_alignments(ph);
  ASSERT_EQ(phones.size(), 2u);
  EXPECT_EQ(phones[0].phones, (std::vector<int>{0, 0, 3}));
}
