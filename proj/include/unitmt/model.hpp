#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "unitmt/common.hpp"
#include "unitmt/tokenizer.hpp"

namespace unitmt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int num_encoder_layers = 2;
  int num_decoder_layers = 2;
  int num_heads = 4;
  int ffn_dim = 256;
  int max_positions = 256;
  double dropout_rate = 0.2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Linear maps act on row vectors: y = x W + b with W of shape (in, out).
struct Linear {
  Matrix weight;
  Matrix bias;  // 1 x out
};

struct LayerNorm {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d
};

struct Attention {
  Linear query, key, value, output;
};

struct EncoderLayer {
  LayerNorm attn_norm;
  Attention self_attn;
  LayerNorm ffn_norm;
  Linear ffn_in, ffn_out;
};

struct DecoderLayer {
  LayerNorm self_norm;
  Attention self_attn;
  LayerNorm cross_norm;
  Attention cross_attn;
  LayerNorm ffn_norm;
  Linear ffn_in, ffn_out;
};

// All weights of the encoder-decoder. Token embeddings are shared by the
// encoder input, decoder input and output projection.
struct Seq2SeqParams {
  ModelConfig config;
  Matrix token_embedding;    // V x d
  Matrix encoder_positions;  // P x d
  Matrix decoder_positions;  // P x d
  std::vector<EncoderLayer> encoder;
  LayerNorm encoder_norm;
  std::vector<DecoderLayer> decoder;
  LayerNorm decoder_norm;
  Matrix output_bias;  // 1 x V

  static Seq2SeqParams zeros(const ModelConfig& config);
  static Seq2SeqParams initialize(const ModelConfig& config, std::uint64_t seed);

  // Visits every tensor with a stable dotted name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix&)>& f);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& f) const;

  std::size_t num_parameters() const;
  void set_zero();
  // Content hash over all tensor values.
  std::uint64_t hash() const;
  bool operator==(const Seq2SeqParams& other) const;
};

// Adds `scale * other` to `target` tensor-by-tensor.
void axpy(double scale, const Seq2SeqParams& other, Seq2SeqParams& target);

struct Direction {
  std::string source_language;
  std::string target_language;
};

// One training/inference example in model form: both sides are
// [language tag, tokens..., EOS].
struct Example {
  std::vector<int> source;
  std::vector<int> target;
  Direction direction;
};

Example make_example(const BpeVocab& vocab, const TokenSequence& source, const TokenSequence& target);
std::vector<int> model_sequence(const BpeVocab& vocab, const TokenSequence& seq);

// Padded batch: row-major (rows x width) token matrices plus lengths. Cells
// past a row's length hold the PAD id.
struct Batch {
  int rows = 0;
  int source_width = 0;
  int target_width = 0;
  std::vector<int> source;
  std::vector<int> target;
  std::vector<int> source_lengths;
  std::vector<int> target_lengths;
  std::vector<Direction> directions;

  static Batch from_examples(std::span<const Example> examples);
  // Widens the padding; contents are unchanged.
  void pad_to(int source_width, int target_width);

  std::span<const int> source_row(int i) const;
  std::span<const int> target_row(int i) const;
  long target_tokens() const;  // predicted (non-pad) target positions
};

class ForwardTape;

// Per-position logits of a batch. Row `offsets[i] + t` holds the logits for
// predicting target token t+1 of example i, t in [0, target_length_i - 1).
struct Logits {
  Matrix values;
  std::vector<int> offsets;
  std::vector<int> positions;
  std::vector<int> gold;  // next-token targets, packed like `values`

  Eigen::Ref<const Eigen::RowVectorXd> at(int example, int position) const;
};

enum class Mode { kTrain, kEval };

// Runs the model with teacher forcing. Dropout is active only in kTrain mode
// and is a pure function of `seed`. When `tape` is non-null it receives what
// backward() needs. A negative `dropout` uses the rate in the model config.
Logits forward_logits(const Seq2SeqParams& p, const Batch& b, Mode mode, std::uint64_t seed,
                      ForwardTape* tape = nullptr, double dropout = -1.0);

struct LossValue {
  double loss = 0.0;
  long tokens = 0;
  Matrix grad_logits;  // d loss / d logits
};

// Mean over non-pad positions of the cross-entropy against the smoothed
// target (1 - s on the gold id, s / (V - 1) on every other id).
LossValue loss_label_smoothed(const Matrix& logits, std::span<const int> targets, double smoothing, int pad_id);

// Accumulates d(loss)/d(theta) into `grads` given d(loss)/d(logits).
void backward(const Seq2SeqParams& p, const ForwardTape& tape, const Matrix& grad_logits, Seq2SeqParams& grads);

// Throws NumericError naming the first tensor with a non-finite entry.
void check_finite(const Seq2SeqParams& grads, const std::string& what);

struct LossOptions {
  double label_smoothing = 0.2;
  Mode mode = Mode::kTrain;
  std::uint64_t seed = 0;
  double weight = 1.0;  // scales the accumulated gradient
  double dropout = -1.0;  // < 0: model config rate
};

// Forward + loss + backward. A batch without target tokens contributes zero
// loss and zero gradient. `grads` may be null for loss-only evaluation.
double loss_and_gradients(const Seq2SeqParams& p, const Batch& b, const LossOptions& opts, Seq2SeqParams* grads,
                          long* tokens = nullptr);

class ForwardTape {
 public:
  ForwardTape();
  ~ForwardTape();
  ForwardTape(ForwardTape&&) noexcept;
  ForwardTape& operator=(ForwardTape&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace unitmt
