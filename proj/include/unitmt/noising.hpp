#pragma once

#include <cstdint>
#include <vector>

#include "unitmt/tokenizer.hpp"

namespace unitmt {

struct NoiseConfig {
  double lambda = 2.0;       // Poisson mean of the span length
  double mask_ratio = 0.35;  // fraction of maskable tokens to cover
  int mask_token = kMask;

  void validate() const;
};

struct NoiseResult {
  TokenSequence noised;
  std::vector<int> masked_positions;  // indices into the input, ascending
  std::vector<int> sampled_lengths;   // Poisson draws after the 0 -> 1 rule
  std::vector<int> span_lengths;      // lengths actually masked
};

// Span masking. Tokens with ids below `num_specials` (language tags, EOS,
// PAD, ...) are never covered; spans never overlap earlier spans.
NoiseResult noise(const TokenSequence& seq, const NoiseConfig& cfg, int num_specials, std::uint64_t seed);

struct DenoisingPair {
  TokenSequence source;  // g(X)
  TokenSequence target;  // X
};

DenoisingPair denoising_pair(const TokenSequence& seq, const NoiseConfig& cfg, int num_specials,
                             std::uint64_t seed);

}  // namespace unitmt
