#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "unitmt/decoding.hpp"
#include "unitmt/model.hpp"
#include "unitmt/noising.hpp"
#include "unitmt/optimizer.hpp"

namespace unitmt {

// Linear warmup from `floor` to `peak`, then peak * exp(-c (step - warmup))
// clipped below at `final_lr`. Without an explicit decay constant, c is set
// so the rate reaches 2 * final_lr at `total_steps`.
struct LrSchedule {
  double floor = 1e-7;
  double peak = 1e-5;
  double final_lr = 1e-6;
  long warmup_steps = 100;
  long total_steps = 0;  // 0: length of the stage being trained
  std::optional<double> decay;

  double decay_constant() const;
  void validate() const;
};

double lr_at(long step, const LrSchedule& s);

enum class SyncPolicy { kOnline, kPerEpoch };

struct NoiseStage {
  NoiseConfig noise;
  long steps = 0;
};

struct TrainingConfig {
  long steps = 2000;  // pretrain steps when `curriculum` is empty
  int epochs = 40;    // finetune / backtranslate
  int tokens_per_batch = 1024;  // target tokens; per language when pretraining
  LrSchedule lr;
  AdamConfig adam;
  double label_smoothing = 0.2;
  double dropout = 0.2;
  NoiseConfig noise;
  std::vector<NoiseStage> curriculum;
  std::optional<int> trainable_last_layers;
  // backtranslation
  double replay_ratio = 0.5;
  SyncPolicy sync = SyncPolicy::kOnline;
  int bt_sentences = 32;        // monolingual sentences per language per step
  int bt_steps_per_epoch = 0;   // 0: one pass over the larger corpus
  SamplingOptions sampling{0.9, 0.5, 64, 0};
  std::uint64_t seed = 1;

  void validate() const;
  long pretrain_steps() const;
};

struct CurvePoint {
  std::string stage;
  long step = 0;
  int epoch = -1;
  double lr = 0.0;
  double loss = 0.0;
  long tokens = 0;
  double grad_norm = 0.0;
  double bleu = -1.0;  // < 0 when not evaluated
};

void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve, bool header = true);

struct ParallelPair {
  TokenSequence first;
  TokenSequence second;
};
using ParallelCorpus = std::vector<ParallelPair>;

// Both directions of every pair, first->second then second->first.
std::vector<Example> supervised_examples(const BpeVocab& vocab, const ParallelCorpus& corpus);

struct TrainHooks {
  std::function<void(const Batch&)> on_batch;
};

// Denoising pretraining on monolingual corpora, one per language. Resumes
// when `ckpt` already comes from this stage.
Checkpoint pretrain(Checkpoint ckpt, const BpeVocab& vocab, const std::vector<std::vector<TokenSequence>>& mono,
                    const TrainingConfig& cfg, std::vector<CurvePoint>* curve = nullptr,
                    const TrainHooks* hooks = nullptr);

Checkpoint finetune(Checkpoint ckpt, const BpeVocab& vocab, const ParallelCorpus& parallel, const TrainingConfig& cfg,
                    std::vector<CurvePoint>* curve = nullptr, const TrainHooks* hooks = nullptr);

struct BacktranslateState {
  Seq2SeqParams backward_model;  // M, trained
  Seq2SeqParams forward_model;   // M', translates
  Adam optimizer;
  SyncPolicy sync = SyncPolicy::kOnline;
  long step = 0;
  long replay_consumed = 0;
  long skipped_empty = 0;

  static BacktranslateState from(const Seq2SeqParams& init, const TrainingConfig& cfg);
};

struct BtStepStats {
  double loss = 0.0;
  double bt_loss = 0.0;
  double replay_loss = 0.0;
  int bt_examples = 0;
  int replay_examples = 0;
  int skipped_empty = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool updated = false;
};

struct BacktranslateHooks {
  // Replaces M' sampling (e.g. to force known translations).
  std::function<std::vector<TokenSequence>(const std::vector<TokenSequence>& batch, const std::string& target_language)>
      translate;
  std::function<void(const BacktranslateState&)> after_forward_translation;
  std::function<void(const Batch& bt, const Batch& replay)> on_batches;
  std::function<void(const BacktranslateState&, const BtStepStats&)> after_step;
};

// One online backtranslation step: M' samples translations of b1 and b2
// (no gradients), M is trained to reconstruct the originals, `replay`
// examples are added with weight replay_ratio, then one optimizer update.
BtStepStats backtranslate_step(BacktranslateState& state, const BpeVocab& vocab,
                               const std::vector<TokenSequence>& b1, const std::vector<TokenSequence>& b2,
                               const std::vector<Example>& replay, const TrainingConfig& cfg,
                               const TrainableMask& mask, const BacktranslateHooks* hooks = nullptr);

// Number of supervised examples mixed into a step with n backtranslated ones.
int replay_count(double ratio, int n);

using EpochEval = std::function<double(const Seq2SeqParams&, int epoch)>;

Checkpoint backtranslate(BacktranslateState& state, const BpeVocab& vocab,
                         const std::vector<std::vector<TokenSequence>>& mono, const ParallelCorpus& supervised,
                         const TrainingConfig& cfg, std::vector<CurvePoint>* curve = nullptr,
                         const BacktranslateHooks* hooks = nullptr, const EpochEval& eval = {});

}  // namespace unitmt
