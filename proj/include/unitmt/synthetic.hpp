#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "unitmt/quantizer.hpp"

namespace unitmt {

// Parameters of a pair of synthetic unit languages. The second language is
// the image of the first under `translate_oracle`.
struct CipherSpec {
  int vocab_size = 200;              // shared unit inventory of both languages
  std::vector<int> permutation;      // unit substitution; generated from `seed` when empty
  int reorder_window = 1;            // w >= 1; 1 disables reordering
  double length_noise = 0.0;         // per-token drop/duplicate probability
  int successors_per_context = 6;    // sparsity of the order-2 Markov source
  double zipf_exponent = 0.5;        // skew of the successor base distribution
  int phone_inventory = 40;          // for generate_features
  double phone_confusion = 0.0;      // per-frame probability of a random phone label
  int feature_dim = 16;
  double cluster_spread = 0.0;       // std-dev of frames around their unit center
  int max_duration = 1;              // frames per unit drawn uniformly from [1, max_duration]
  std::string first_language = "l1";
  std::string second_language = "l2";
  std::uint64_t seed = 0;

  // Fills the permutation if empty and checks every invariant.
  void finalize();
  void validate() const;
};

struct LengthRange {
  int min_len = 6;
  int max_len = 14;
};

// Order-2 Markov source over the shared unit inventory.
class MarkovSource {
 public:
  explicit MarkovSource(const CipherSpec& spec);

  int vocab_size() const { return vocab_size_; }
  std::vector<int> sample(Rng& rng, int length) const;

  // Successor distribution of context (a, b): parallel unit / probability lists.
  std::pair<const int*, const double*> successors(int a, int b) const;
  int num_successors() const { return succ_; }

  // Stationary distribution over (a, b) pairs (V*V, row-major) and its
  // unigram marginal, by power iteration.
  const std::vector<double>& stationary_pairs() const { return stationary_; }
  std::vector<double> stationary_unigram() const;

 private:
  int vocab_size_ = 0;
  int succ_ = 0;
  std::vector<int> next_units_;      // V*V*succ_
  std::vector<double> next_probs_;   // V*V*succ_
  std::vector<double> stationary_;   // V*V
  std::vector<double> stationary_cdf_;
};

enum class Side { kFirst, kSecond };

// n monolingual sequences. The second language is produced by translating
// fresh first-language samples, so both sides share the same source
// distribution up to the cipher.
std::vector<UnitSequence> generate_mono(const CipherSpec& spec, int n, LengthRange lengths, std::uint64_t seed,
                                        Side side = Side::kFirst);

// Substitution, then value-keyed rotation inside consecutive windows of
// `reorder_window`, then seeded drop/duplicate length noise.
UnitSequence translate_oracle(const CipherSpec& spec, const UnitSequence& s);

// Exact inverse of translate_oracle; only defined for length_noise == 0.
UnitSequence inverse_oracle(const CipherSpec& spec, const UnitSequence& s);

struct FeatureSample {
  FeatureMatrix features;
  PhoneAlignment phones;
  UnitSequence frame_units;  // ground-truth unit of every frame
};

FeatureSample generate_features(const CipherSpec& spec, const UnitSequence& s, std::uint64_t seed);

// Fixed-seed benchmark: two monolingual corpora, a small parallel training
// set and a held-out test set (first -> second language references).
struct BenchmarkSpec {
  CipherSpec cipher;
  int mono_size = 5000;
  int parallel_size = 200;
  int test_size = 200;
  LengthRange lengths;
  std::uint64_t seed = 0;
};

struct ParallelUnits {
  std::vector<UnitSequence> first;
  std::vector<UnitSequence> second;
};

struct Benchmark {
  CipherSpec cipher;
  std::vector<UnitSequence> mono_first;
  std::vector<UnitSequence> mono_second;
  ParallelUnits train;
  ParallelUnits test;
};

Benchmark make_benchmark(BenchmarkSpec spec);

void write_cipher_spec(std::ostream& os, const CipherSpec& spec);
CipherSpec read_cipher_spec(std::istream& is);

}  // namespace unitmt
