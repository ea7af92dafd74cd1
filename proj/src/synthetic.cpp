#include "unitmt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

namespace unitmt {

namespace {

std::uint64_t sequence_hash(const std::vector<int>& units) {
  return fnv1a(units.data(), units.size() * sizeof(int));
}

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(i) + 1));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

int window_rotation(const std::vector<int>& units, std::size_t begin, std::size_t size) {
  long sum = 0;
  for (std::size_t i = begin; i < begin + size; ++i) sum += units[i];
  return static_cast<int>(sum % static_cast<long>(size));
}

void rotate_windows(std::vector<int>& units, int window, bool inverse) {
  if (window <= 1) return;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t begin = 0; begin < units.size(); begin += w) {
    const std::size_t size = std::min(w, units.size() - begin);
    const auto r = static_cast<std::size_t>(window_rotation(units, begin, size));
    auto first = units.begin() + static_cast<std::ptrdiff_t>(begin);
    auto last = first + static_cast<std::ptrdiff_t>(size);
    const auto shift = static_cast<std::ptrdiff_t>(inverse ? (size - r) % size : r);
    std::rotate(first, first + shift, last);
  }
}

}  // namespace

void CipherSpec::finalize() {
  if (vocab_size < 2) throw ConfigError("cipher.vocab_size must be >= 2");
  if (permutation.empty()) {
    Rng rng(derive_seed(seed, 0x7065726dULL));
    permutation = random_permutation(vocab_size, rng);
  }
  validate();
}

void CipherSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("cipher.vocab_size must be >= 2");
  if (static_cast<int>(permutation.size()) != vocab_size) {
    throw ConfigError("cipher.permutation must have vocab_size entries");
  }
  std::vector<bool> seen(static_cast<std::size_t>(vocab_size), false);
  for (int p : permutation) {
    if (p < 0 || p >= vocab_size || seen[static_cast<std::size_t>(p)]) {
      throw ConfigError("cipher.permutation is not a bijection");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  if (reorder_window < 1) throw ConfigError("cipher.reorder_window must be >= 1");
  if (!(length_noise >= 0.0 && length_noise < 1.0)) throw ConfigError("cipher.length_noise must be in [0, 1)");
  if (!(phone_confusion >= 0.0 && phone_confusion < 1.0)) {
    throw ConfigError("cipher.phone_confusion must be in [0, 1)");
  }
  if (successors_per_context < 1 || successors_per_context > vocab_size) {
    throw ConfigError("cipher.successors_per_context must be in [1, vocab_size]");
  }
  if (phone_inventory < 1) throw ConfigError("cipher.phone_inventory must be >= 1");
  if (feature_dim < 1) throw ConfigError("cipher.feature_dim must be >= 1");
  if (!(cluster_spread >= 0.0)) throw ConfigError("cipher.cluster_spread must be >= 0");
  if (max_duration < 1) throw ConfigError("cipher.max_duration must be >= 1");
  if (first_language == second_language) throw ConfigError("cipher languages must differ");
}

MarkovSource::MarkovSource(const CipherSpec& spec)
    : vocab_size_(spec.vocab_size), succ_(spec.successors_per_context) {
  spec.validate();
  const int v = vocab_size_;
  Rng rng(derive_seed(spec.seed, 0x6d61726bULL));

  // Zipf-shaped base distribution over a random ranking of the units.
  const std::vector<int> ranking = random_permutation(v, rng);
  std::vector<double> base(static_cast<std::size_t>(v));
  for (int r = 0; r < v; ++r) {
    base[static_cast<std::size_t>(ranking[static_cast<std::size_t>(r)])] =
        1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
  }

  const std::size_t contexts = static_cast<std::size_t>(v) * static_cast<std::size_t>(v);
  next_units_.resize(contexts * static_cast<std::size_t>(succ_));
  next_probs_.resize(contexts * static_cast<std::size_t>(succ_));
  std::vector<double> weights(base.size());
  for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
    weights = base;
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double norm = 0.0;
    for (int s = 0; s < succ_; ++s) {
      // Weighted draw without replacement.
      double target = uniform01(rng) * total;
      int pick = -1;
      for (int u = 0; u < v; ++u) {
        const double w = weights[static_cast<std::size_t>(u)];
        if (w <= 0.0) continue;
        pick = u;
        target -= w;
        if (target < 0.0) break;
      }
      total -= weights[static_cast<std::size_t>(pick)];
      weights[static_cast<std::size_t>(pick)] = 0.0;
      const double p = 0.2 + uniform01(rng);
      next_units_[ctx * static_cast<std::size_t>(succ_) + static_cast<std::size_t>(s)] = pick;
      next_probs_[ctx * static_cast<std::size_t>(succ_) + static_cast<std::size_t>(s)] = p * p;
      norm += p * p;
    }
    for (int s = 0; s < succ_; ++s) next_probs_[ctx * static_cast<std::size_t>(succ_) + static_cast<std::size_t>(s)] /= norm;
  }

  stationary_.assign(contexts, 1.0 / static_cast<double>(contexts));
  std::vector<double> next(contexts);
  for (int iter = 0; iter < 5000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
      const double mass = stationary_[ctx];
      if (mass == 0.0) continue;
      const std::size_t b = ctx % static_cast<std::size_t>(v);
      for (int s = 0; s < succ_; ++s) {
        const std::size_t k = ctx * static_cast<std::size_t>(succ_) + static_cast<std::size_t>(s);
        next[b * static_cast<std::size_t>(v) + static_cast<std::size_t>(next_units_[k])] += mass * next_probs_[k];
      }
    }
    double diff = 0.0;
    for (std::size_t i = 0; i < contexts; ++i) diff += std::abs(next[i] - stationary_[i]);
    stationary_.swap(next);
    if (diff < 1e-13) break;
  }
  stationary_cdf_.resize(contexts);
  std::partial_sum(stationary_.begin(), stationary_.end(), stationary_cdf_.begin());
}

std::pair<const int*, const double*> MarkovSource::successors(int a, int b) const {
  const std::size_t ctx = static_cast<std::size_t>(a) * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(b);
  return {next_units_.data() + ctx * static_cast<std::size_t>(succ_),
          next_probs_.data() + ctx * static_cast<std::size_t>(succ_)};
}

std::vector<double> MarkovSource::stationary_unigram() const {
  std::vector<double> uni(static_cast<std::size_t>(vocab_size_), 0.0);
  for (std::size_t ctx = 0; ctx < stationary_.size(); ++ctx) {
    uni[ctx / static_cast<std::size_t>(vocab_size_)] += stationary_[ctx];
  }
  return uni;
}

std::vector<int> MarkovSource::sample(Rng& rng, int length) const {
  std::vector<int> out;
  if (length <= 0) return out;
  const double u = uniform01(rng) * stationary_cdf_.back();
  auto it = std::upper_bound(stationary_cdf_.begin(), stationary_cdf_.end(), u);
  auto ctx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - stationary_cdf_.begin(),
                                                               static_cast<std::ptrdiff_t>(stationary_cdf_.size()) - 1));
  int a = static_cast<int>(ctx / static_cast<std::size_t>(vocab_size_));
  int b = static_cast<int>(ctx % static_cast<std::size_t>(vocab_size_));
  out.push_back(a);
  if (length > 1) out.push_back(b);
  while (static_cast<int>(out.size()) < length) {
    const auto [units, probs] = successors(a, b);
    double r = uniform01(rng);
    int c = units[succ_ - 1];
    for (int s = 0; s < succ_; ++s) {
      r -= probs[s];
      if (r < 0.0) {
        c = units[s];
        break;
      }
    }
    out.push_back(c);
    a = b;
    b = c;
  }
  return out;
}

std::vector<UnitSequence> generate_mono(const CipherSpec& spec, int n, LengthRange lengths, std::uint64_t seed,
                                        Side side) {
  if (n < 1) throw ConfigError("generate_mono: n must be >= 1");
  if (lengths.min_len < 1 || lengths.max_len < lengths.min_len) {
    throw ConfigError("generate_mono: invalid length range");
  }
  const MarkovSource source(spec);
  Rng rng(derive_seed(seed, side == Side::kFirst ? 0x6d6f6e6f31ULL : 0x6d6f6e6f32ULL));
  std::vector<UnitSequence> out;
  out.reserve(static_cast<std::size_t>(n));
  const auto span = static_cast<std::uint64_t>(lengths.max_len - lengths.min_len + 1);
  for (int i = 0; i < n; ++i) {
    const int len = lengths.min_len + static_cast<int>(uniform_index(rng, span));
    UnitSequence s{source.sample(rng, len), spec.first_language, std::nullopt};
    out.push_back(side == Side::kFirst ? std::move(s) : translate_oracle(spec, s));
  }
  return out;
}

UnitSequence translate_oracle(const CipherSpec& spec, const UnitSequence& s) {
  UnitSequence out;
  out.language = spec.second_language;
  out.units.reserve(s.units.size());
  for (int u : s.units) {
    if (u < 0 || u >= spec.vocab_size) {
      throw InputError("translate_oracle: unit " + std::to_string(u) + " outside the vocabulary");
    }
    out.units.push_back(spec.permutation[static_cast<std::size_t>(u)]);
  }
  rotate_windows(out.units, spec.reorder_window, false);
  if (spec.length_noise > 0.0 && !out.units.empty()) {
    Rng rng(derive_seed(spec.seed, sequence_hash(s.units)));
    std::vector<int> noisy;
    noisy.reserve(out.units.size() + 4);
    for (int u : out.units) {
      const double r = uniform01(rng);
      if (r < 0.5 * spec.length_noise) continue;
      noisy.push_back(u);
      if (r < spec.length_noise) noisy.push_back(u);
    }
    if (noisy.empty()) noisy.push_back(out.units.front());
    out.units = std::move(noisy);
  }
  return out;
}

UnitSequence inverse_oracle(const CipherSpec& spec, const UnitSequence& s) {
  if (spec.length_noise != 0.0) throw ConfigError("inverse_oracle: undefined when length_noise > 0");
  std::vector<int> units = s.units;
  rotate_windows(units, spec.reorder_window, true);
  std::vector<int> inverse(spec.permutation.size());
  for (std::size_t i = 0; i < spec.permutation.size(); ++i) {
    inverse[static_cast<std::size_t>(spec.permutation[i])] = static_cast<int>(i);
  }
  UnitSequence out;
  out.language = spec.first_language;
  for (int u : units) {
    if (u < 0 || u >= spec.vocab_size) throw InputError("inverse_oracle: unit outside the vocabulary");
    out.units.push_back(inverse[static_cast<std::size_t>(u)]);
  }
  return out;
}

FeatureSample generate_features(const CipherSpec& spec, const UnitSequence& s, std::uint64_t seed) {
  spec.validate();
  // Unit centers and the unit -> phone map depend only on the spec.
  Rng phone_rng(derive_seed(spec.seed, 0x70686f6eULL));
  const std::vector<int> phone_perm = random_permutation(spec.vocab_size, phone_rng);

  Rng rng(derive_seed(seed, 0x66656174ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  FeatureSample out;
  std::vector<int> durations;
  int total = 0;
  for (std::size_t i = 0; i < s.units.size(); ++i) {
    const int d = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.max_duration)));
    durations.push_back(d);
    total += d;
  }
  out.features.frames.resize(total, spec.feature_dim);
  out.features.source_id = "synthetic";
  int row = 0;
  for (std::size_t i = 0; i < s.units.size(); ++i) {
    const int u = s.units[i];
    if (u < 0 || u >= spec.vocab_size) throw InputError("generate_features: unit outside the vocabulary");
    Rng center_rng(derive_seed(spec.seed, 0x63656e74ULL + static_cast<std::uint64_t>(u)));
    std::normal_distribution<double> center_gauss(0.0, 1.0);
    Eigen::RowVectorXd center(spec.feature_dim);
    for (int j = 0; j < spec.feature_dim; ++j) center(j) = center_gauss(center_rng);
    const int phone = phone_perm[static_cast<std::size_t>(u)] % spec.phone_inventory;
    for (int f = 0; f < durations[i]; ++f, ++row) {
      for (int j = 0; j < spec.feature_dim; ++j) {
        out.features.frames(row, j) = center(j) + spec.cluster_spread * gauss(rng);
      }
      int label = phone;
      if (spec.phone_confusion > 0.0 && uniform01(rng) < spec.phone_confusion) {
        label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.phone_inventory)));
      }
      out.phones.phones.push_back(label);
      out.frame_units.units.push_back(u);
    }
  }
  out.frame_units.language = s.language;
  return out;
}

Benchmark make_benchmark(BenchmarkSpec spec) {
  spec.cipher.finalize();
  if (spec.mono_size < 1 || spec.parallel_size < 1 || spec.test_size < 1) {
    throw ConfigError("benchmark sizes must be >= 1");
  }
  Benchmark b;
  b.cipher = spec.cipher;
  b.mono_first = generate_mono(spec.cipher, spec.mono_size, spec.lengths, derive_seed(spec.seed, 1), Side::kFirst);
  b.mono_second = generate_mono(spec.cipher, spec.mono_size, spec.lengths, derive_seed(spec.seed, 2), Side::kSecond);
  auto make_parallel = [&](int n, std::uint64_t stream) {
    ParallelUnits p;
    p.first = generate_mono(spec.cipher, n, spec.lengths, derive_seed(spec.seed, stream), Side::kFirst);
    for (const auto& s : p.first) p.second.push_back(translate_oracle(spec.cipher, s));
    return p;
  };
  b.train = make_parallel(spec.parallel_size, 3);
  b.test = make_parallel(spec.test_size, 4);
  return b;
}

void write_cipher_spec(std::ostream& os, const CipherSpec& spec) {
  nlohmann::json j;
  j["vocab_size"] = spec.vocab_size;
  j["permutation"] = spec.permutation;
  j["reorder_window"] = spec.reorder_window;
  j["length_noise"] = spec.length_noise;
  j["successors_per_context"] = spec.successors_per_context;
  j["zipf_exponent"] = spec.zipf_exponent;
  j["phone_inventory"] = spec.phone_inventory;
  j["phone_confusion"] = spec.phone_confusion;
  j["feature_dim"] = spec.feature_dim;
  j["cluster_spread"] = spec.cluster_spread;
  j["max_duration"] = spec.max_duration;
  j["first_language"] = spec.first_language;
  j["second_language"] = spec.second_language;
  j["seed"] = spec.seed;
  os << j.dump(2) << '\n';
}

CipherSpec read_cipher_spec(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("cipher spec: ") + e.what());
  }
  CipherSpec s;
  try {
    s.vocab_size = j.at("vocab_size").get<int>();
    s.permutation = j.value("permutation", std::vector<int>{});
    s.reorder_window = j.value("reorder_window", s.reorder_window);
    s.length_noise = j.value("length_noise", s.length_noise);
    s.successors_per_context = j.value("successors_per_context", s.successors_per_context);
    s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
    s.phone_inventory = j.value("phone_inventory", s.phone_inventory);
    s.phone_confusion = j.value("phone_confusion", s.phone_confusion);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.cluster_spread = j.value("cluster_spread", s.cluster_spread);
    s.max_duration = j.value("max_duration", s.max_duration);
    s.first_language = j.value("first_language", s.first_language);
    s.second_language = j.value("second_language", s.second_language);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("cipher spec: ") + e.what());
  }
  s.finalize();
  return s;
}

}  // namespace unitmt
