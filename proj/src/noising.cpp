#include "unitmt/noising.hpp"

#include <cmath>
#include <random>
#include <string>

namespace unitmt {

void NoiseConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("noise.lambda must be > 0");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("noise.mask_ratio must be in (0, 1)");
}

NoiseResult noise(const TokenSequence& seq, const NoiseConfig& cfg, int num_specials, std::uint64_t seed) {
  cfg.validate();
  const auto& toks = seq.tokens;
  const int n = static_cast<int>(toks.size());
  std::vector<bool> maskable(toks.size());
  int n_maskable = 0;
  for (int i = 0; i < n; ++i) {
    maskable[static_cast<std::size_t>(i)] = toks[static_cast<std::size_t>(i)] >= num_specials;
    n_maskable += maskable[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  if (n_maskable == 0) throw InputError("noise: sequence has no maskable tokens");

  const int target = static_cast<int>(std::ceil(cfg.mask_ratio * n_maskable - 1e-9));
  Rng rng(derive_seed(seed, 0x6e6f697365ULL));
  std::poisson_distribution<int> poisson(cfg.lambda);
  std::vector<bool> masked(toks.size(), false);
  std::vector<int> span_start_flags(toks.size(), 0);
  NoiseResult result;
  int covered = 0;
  std::vector<int> starts;
  while (covered < target) {
    int l = poisson(rng);
    if (l == 0) l = 1;
    result.sampled_lengths.push_back(l);

    // Longest run of still-unmasked maskable tokens bounds the span.
    int longest = 0;
    for (int i = 0, run = 0; i < n; ++i) {
      const bool free = maskable[static_cast<std::size_t>(i)] && !masked[static_cast<std::size_t>(i)];
      run = free ? run + 1 : 0;
      longest = std::max(longest, run);
    }
    const int len = std::min(l, longest);
    starts.clear();
    for (int i = 0, run = 0; i < n; ++i) {
      const bool free = maskable[static_cast<std::size_t>(i)] && !masked[static_cast<std::size_t>(i)];
      run = free ? run + 1 : 0;
      if (run >= len) starts.push_back(i - len + 1);
    }
    const int start = starts[uniform_index(rng, starts.size())];
    for (int i = start; i < start + len; ++i) masked[static_cast<std::size_t>(i)] = true;
    span_start_flags[static_cast<std::size_t>(start)] = 1;
    result.span_lengths.push_back(len);
    covered += len;
  }

  result.noised.language = seq.language;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!masked[ui]) {
      result.noised.tokens.push_back(toks[ui]);
      continue;
    }
    result.masked_positions.push_back(i);
    if (span_start_flags[ui]) result.noised.tokens.push_back(cfg.mask_token);
  }
  return result;
}

DenoisingPair denoising_pair(const TokenSequence& seq, const NoiseConfig& cfg, int num_specials,
                             std::uint64_t seed) {
  return {noise(seq, cfg, num_specials, seed).noised, seq};
}

}  // namespace unitmt
