#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitmt/pipeline.hpp"

namespace unitmt {

struct SynthConfig {
  BenchmarkSpec benchmark;
  int feature_utterances = 200;  // mono sentences of the first language rendered as feature frames
  std::uint64_t feature_seed = 0;
};

struct QuantizeConfig {
  int k = 50;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool run_length = true;
};

struct SweepConfig {
  std::vector<int> ks{25, 50, 100};
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct AblationSettings {
  std::vector<SeedTriple> seeds{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
  double bt_only_fraction = 0.10;
  int required_wins = 2;
  int threads = 0;
};

// Every section of the structured config file.
struct RunConfig {
  SynthConfig synth;
  QuantizeConfig quantize;
  SweepConfig pnmi_sweep;
  int bpe_vocab_size = 260;
  ModelConfig model;  // vocab_size comes from the tokenizer
  std::uint64_t init_seed = 1;
  TrainingConfig pretrain;
  TrainingConfig finetune;
  TrainingConfig backtranslate;
  BeamOptions beam;
  AblationSettings ablation;

  void validate() const;
};

// Defaults match default_ablation_config().
RunConfig default_run_config();

AblationConfig ablation_config(const RunConfig& c);

nlohmann::json to_json(const RunConfig& c);

// Keys present in `j` replace the matching fields of `base`. Unknown keys and
// wrongly typed values throw ConfigError naming the offending key.
RunConfig merge_run_config(const RunConfig& base, const nlohmann::json& j);

// "section.key=value" with a JSON value (bare words are taken as strings).
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_run_config(const std::string& path, const RunConfig& base);

}  // namespace unitmt
