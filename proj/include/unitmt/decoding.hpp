#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "unitmt/model.hpp"

namespace unitmt {

// Autoregressive scorer driven by the search routines. It holds one state per
// live hypothesis.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual int vocab_size() const = 0;
  // Starts `roots.size()` fresh hypotheses; roots[i] selects the conditioning
  // input (source sentence) of hypothesis i.
  virtual void reset(const std::vector<int>& roots) = 0;
  // New hypothesis i continues old hypothesis parents[i] with tokens[i].
  // Returns next-token logits, one row per new hypothesis.
  virtual Matrix advance(const std::vector<int>& parents, const std::vector<int>& tokens) = 0;
};

// Incremental transformer decoder with cached self-attention keys/values.
class TransformerStepModel : public StepModel {
 public:
  TransformerStepModel(const Seq2SeqParams& params, std::vector<std::vector<int>> sources);
  ~TransformerStepModel() override;

  int vocab_size() const override;
  void reset(const std::vector<int>& roots) override;
  Matrix advance(const std::vector<int>& parents, const std::vector<int>& tokens) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Eval-mode encoder output for one source sequence.
Matrix encode_source(const Seq2SeqParams& p, std::span<const int> source);

struct BeamOptions {
  int beam_size = 10;
  int max_len = 200;            // generated tokens, EOS included
  double length_penalty = 1.0;  // score = log p / length^alpha
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens without the start tag and EOS
  double log_prob = 0.0;
  int length = 0;           // scored length (tokens plus EOS when emitted)
  bool ended_with_eos = false;
  double score = 0.0;       // length-normalized log_prob
};

// Token ids that may never be generated (PAD, BOS, MASK, UNK, language tags).
std::vector<int> banned_generation_tokens(const BpeVocab& vocab);

// Beam search over `model` starting from `start_token` (root 0). Finished
// hypotheses leave the beam; the greedy path is always among the candidates,
// so the result never scores below beam size 1.
Hypothesis beam_search(StepModel& model, int start_token, const BeamOptions& opts,
                       std::span<const int> banned = {}, int root = 0);

Hypothesis greedy_search(StepModel& model, int start_token, int max_len, double length_penalty,
                         std::span<const int> banned = {}, int root = 0);

struct SamplingOptions {
  double top_p = 0.9;
  double temperature = 0.5;
  int max_len = 200;
  std::uint64_t seed = 0;
};

// Renormalized nucleus of a probability vector: the smallest prefix of the
// sorted (descending, ties by id) distribution whose mass reaches top_p.
// Returns (ids, probabilities).
std::pair<std::vector<int>, std::vector<double>> nucleus(std::span<const double> probs, double top_p);

// Samples one continuation per root in `roots`. Sequence i uses a random
// stream derived from (seed, i), so outputs do not depend on batch makeup.
std::vector<std::vector<int>> nucleus_sample(StepModel& model, const std::vector<int>& roots,
                                             const std::vector<int>& start_tokens, const SamplingOptions& opts,
                                             std::span<const int> banned = {});

// Log-probability of generating `output` followed by EOS (eval mode).
double sequence_log_prob(const Seq2SeqParams& p, std::span<const int> source, int start_token,
                         std::span<const int> output);

// Convenience wrappers over model-form sources.
TokenSequence beam_decode(const Seq2SeqParams& p, const BpeVocab& vocab, const TokenSequence& source,
                          const std::string& target_language, const BeamOptions& opts);

std::vector<TokenSequence> nucleus_translate(const Seq2SeqParams& p, const BpeVocab& vocab,
                                             const std::vector<TokenSequence>& sources,
                                             const std::string& target_language, const SamplingOptions& opts);

}  // namespace unitmt
