#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "unitmt/decoding.hpp"
#include "unitmt/evaluation.hpp"
#include "unitmt/synthetic.hpp"
#include "unitmt/training.hpp"

namespace unitmt {

// Model vocabulary size for a BPE vocab: every id the tokenizer can emit.
int model_vocab_size(const BpeVocab& vocab);

std::vector<TokenSequence> encode_corpus(const BpeVocab& vocab, const std::vector<UnitSequence>& units);
ParallelCorpus encode_parallel(const BpeVocab& vocab, const ParallelUnits& units);

std::vector<TokenSequence> translate_corpus(const Seq2SeqParams& p, const BpeVocab& vocab,
                                            const std::vector<TokenSequence>& sources,
                                            const std::string& target_language, const BeamOptions& beam);

// Beam-decodes both directions of `test` and scores the pooled hypotheses
// against the references with token BLEU.
EvalReport evaluate_parallel(const Seq2SeqParams& p, const BpeVocab& vocab, const ParallelCorpus& test,
                             const BeamOptions& beam);

struct SeedTriple {
  std::uint64_t data = 1;
  std::uint64_t init = 1;
  std::uint64_t train = 1;
};

struct AblationConfig {
  BenchmarkSpec benchmark;
  int bpe_vocab_size = 260;
  ModelConfig model;  // vocab_size is taken from the tokenizer
  TrainingConfig pretrain;
  TrainingConfig finetune;
  TrainingConfig backtranslate;
  BeamOptions beam{10, 40, 1.0};
  std::vector<SeedTriple> seeds{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}};
  double bt_only_fraction = 0.10;  // row j must stay below this fraction of row f
  int required_wins = 2;
  int threads = 0;  // seed triples run concurrently; 0: hardware concurrency
};

// Calibrated desk-scale settings used by the ablation suite.
AblationConfig default_ablation_config();

// Table 2 analogue rows.
struct AblationRun {
  SeedTriple seeds;
  double f = 0.0;  // pretrain + finetune
  double g = 0.0;  // pretrain + finetune + BT with replay
  double h = 0.0;  // finetune without pretraining
  double j = 0.0;  // pretrain + BT, no finetune
  double k = 0.0;  // pretrain + finetune + BT without replay
  double seconds = 0.0;
};

struct AblationReport {
  std::vector<AblationRun> runs;
  std::array<int, 4> wins{};  // orderings (a)..(d)
  int required = 2;
  double bt_only_fraction = 0.10;

  bool holds(int ordering) const { return wins[static_cast<std::size_t>(ordering)] >= required; }
};

// (a) g > f, (b) k < f, (c) j < fraction * f, (d) h < f.
std::array<bool, 4> ablation_orderings(const AblationRun& r, double bt_only_fraction);

using Logger = std::function<void(const std::string&)>;

AblationRun run_ablation_seed(const AblationConfig& cfg, const SeedTriple& seeds, const Logger& log = {});
AblationReport run_ablation(const AblationConfig& cfg, const Logger& log = {});

void write_ablation_csv(std::ostream& os, const AblationReport& r);

}  // namespace unitmt
