#include "unitmt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "nn_ops.hpp"

namespace unitmt {

namespace {

struct Segments {
  std::vector<int> offset;
  std::vector<int> length;
};

struct AttentionCache {
  Matrix query_input;
  Matrix kv_input;
  Matrix q, k, v;
  Matrix concat;
  std::vector<Matrix> probs;  // [segment * heads + head]
};

struct EncoderLayerCache {
  ops::LayerNormCache attn_norm;
  AttentionCache attn;
  Matrix attn_drop;
  ops::LayerNormCache ffn_norm;
  Matrix ffn_input;
  Matrix ffn_pre;
  Matrix ffn_act;
  Matrix ffn_drop;
};

struct DecoderLayerCache {
  ops::LayerNormCache self_norm;
  AttentionCache self_attn;
  Matrix self_drop;
  ops::LayerNormCache cross_norm;
  AttentionCache cross_attn;
  Matrix cross_drop;
  ops::LayerNormCache ffn_norm;
  Matrix ffn_input;
  Matrix ffn_pre;
  Matrix ffn_act;
  Matrix ffn_drop;
};

}  // namespace

struct ForwardTape::Impl {
  bool train = false;
  std::vector<int> source_tokens, source_positions;
  std::vector<int> decoder_tokens, decoder_positions;
  Segments source, target;
  Matrix source_embed_drop, target_embed_drop;
  std::vector<EncoderLayerCache> encoder;
  ops::LayerNormCache encoder_norm;
  Matrix encoder_out;
  std::vector<DecoderLayerCache> decoder;
  ops::LayerNormCache decoder_norm;
  Matrix decoder_out;
};

ForwardTape::ForwardTape() : impl_(std::make_unique<Impl>()) {}
ForwardTape::~ForwardTape() = default;
ForwardTape::ForwardTape(ForwardTape&&) noexcept = default;
ForwardTape& ForwardTape::operator=(ForwardTape&&) noexcept = default;

namespace {

Linear linear_zeros(int in, int out) { return {Matrix::Zero(in, out), Matrix::Zero(1, out)}; }
LayerNorm norm_zeros(int d) { return {Matrix::Zero(1, d), Matrix::Zero(1, d)}; }
Attention attention_zeros(int d) { return {linear_zeros(d, d), linear_zeros(d, d), linear_zeros(d, d), linear_zeros(d, d)}; }

template <class Params, class Tensor, class F>
void visit_params(Params& p, F&& f) {
  auto lin = [&](const std::string& name, auto& l) {
    f(name + ".weight", l.weight);
    f(name + ".bias", l.bias);
  };
  auto norm = [&](const std::string& name, auto& n) {
    f(name + ".gain", n.gain);
    f(name + ".bias", n.bias);
  };
  auto attn = [&](const std::string& name, auto& a) {
    lin(name + ".query", a.query);
    lin(name + ".key", a.key);
    lin(name + ".value", a.value);
    lin(name + ".output", a.output);
  };
  f(std::string("embed.tokens"), p.token_embedding);
  f(std::string("embed.encoder_positions"), p.encoder_positions);
  f(std::string("embed.decoder_positions"), p.decoder_positions);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string pre = "encoder." + std::to_string(l);
    auto& layer = p.encoder[l];
    norm(pre + ".attn_norm", layer.attn_norm);
    attn(pre + ".self_attn", layer.self_attn);
    norm(pre + ".ffn_norm", layer.ffn_norm);
    lin(pre + ".ffn_in", layer.ffn_in);
    lin(pre + ".ffn_out", layer.ffn_out);
  }
  norm("encoder.norm", p.encoder_norm);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string pre = "decoder." + std::to_string(l);
    auto& layer = p.decoder[l];
    norm(pre + ".self_norm", layer.self_norm);
    attn(pre + ".self_attn", layer.self_attn);
    norm(pre + ".cross_norm", layer.cross_norm);
    attn(pre + ".cross_attn", layer.cross_attn);
    norm(pre + ".ffn_norm", layer.ffn_norm);
    lin(pre + ".ffn_in", layer.ffn_in);
    lin(pre + ".ffn_out", layer.ffn_out);
  }
  norm("decoder.norm", p.decoder_norm);
  f(std::string("output.bias"), p.output_bias);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed, std::uint64_t site) {
  Matrix m(rows, cols);
  Rng rng(derive_seed(seed, site));
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < rate ? 0.0 : keep;
  return m;
}

Matrix attention_forward(const Matrix& xq, const Matrix& xkv, const Segments& sq, const Segments& sk, bool causal,
                         const Attention& p, int heads, AttentionCache* cache) {
  const auto d = p.query.weight.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix q = ops::linear(xq, p.query);
  Matrix k = ops::linear(xkv, p.key);
  Matrix v = ops::linear(xkv, p.value);
  Matrix concat(xq.rows(), d);
  if (cache) cache->probs.resize(sq.offset.size() * static_cast<std::size_t>(heads));
  for (std::size_t s = 0; s < sq.offset.size(); ++s) {
    const int qo = sq.offset[s];
    const int lq = sq.length[s];
    const int ko = sk.offset[s];
    const int lk = sk.length[s];
    for (int h = 0; h < heads; ++h) {
      Matrix a(lq, lk);
      a.noalias() = q.block(qo, h * dh, lq, dh) * k.block(ko, h * dh, lk, dh).transpose();
      a *= scale;
      for (int i = 0; i < lq; ++i) ops::softmax_prefix(a.row(i), causal ? std::min(i + 1, lk) : lk);
      concat.block(qo, h * dh, lq, dh).noalias() = a * v.block(ko, h * dh, lk, dh);
      if (cache) cache->probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(a);
    }
  }
  Matrix out = ops::linear(concat, p.output);
  if (cache) {
    cache->query_input = xq;
    cache->kv_input = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
  }
  return out;
}

// Returns (d query_input, d kv_input).
std::pair<Matrix, Matrix> attention_backward(const Matrix& dout, const AttentionCache& c, const Segments& sq,
                                             const Segments& sk, const Attention& p, int heads, Attention& g) {
  const auto d = p.query.weight.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix dconcat = ops::linear_backward(c.concat, dout, p.output, g.output);
  Matrix dq = Matrix::Zero(c.q.rows(), d);
  Matrix dk = Matrix::Zero(c.k.rows(), d);
  Matrix dv = Matrix::Zero(c.v.rows(), d);
  for (std::size_t s = 0; s < sq.offset.size(); ++s) {
    const int qo = sq.offset[s];
    const int lq = sq.length[s];
    const int ko = sk.offset[s];
    const int lk = sk.length[s];
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      const auto dout_h = dconcat.block(qo, h * dh, lq, dh);
      Matrix da(lq, lk);
      da.noalias() = dout_h * c.v.block(ko, h * dh, lk, dh).transpose();
      dv.block(ko, h * dh, lk, dh).noalias() += a.transpose() * dout_h;
      // Softmax backward: dS = A o (dA - rowsum(dA o A)).
      const Eigen::VectorXd row_dot = da.cwiseProduct(a).rowwise().sum();
      Matrix ds = a.cwiseProduct((da.colwise() - row_dot)) * scale;
      dq.block(qo, h * dh, lq, dh).noalias() += ds * c.k.block(ko, h * dh, lk, dh);
      dk.block(ko, h * dh, lk, dh).noalias() += ds.transpose() * c.q.block(qo, h * dh, lq, dh);
    }
  }
  Matrix dxq = ops::linear_backward(c.query_input, dq, p.query, g.query);
  Matrix dxkv = ops::linear_backward(c.kv_input, dk, p.key, g.key);
  dxkv += ops::linear_backward(c.kv_input, dv, p.value, g.value);
  return {std::move(dxq), std::move(dxkv)};
}

void check_tokens(std::span<const int> row, int vocab, int max_positions, const char* side, int index) {
  if (static_cast<int>(row.size()) > max_positions) {
    throw InputError(std::string("forward: ") + side + " " + std::to_string(index) + " has length " +
                     std::to_string(row.size()) + " > max_positions " + std::to_string(max_positions));
  }
  for (int t : row) {
    if (t < 0 || t >= vocab) {
      throw InputError(std::string("forward: ") + side + " token id " + std::to_string(t) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

Matrix embed(const Matrix& table, const Matrix& positions, const std::vector<int>& tokens,
             const std::vector<int>& pos) {
  Matrix x(static_cast<Eigen::Index>(tokens.size()), table.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = table.row(tokens[i]) + positions.row(pos[i]);
  }
  return x;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
  if (embed_dim < 1 || num_heads < 1 || ffn_dim < 1 || max_positions < 2) {
    throw ConfigError("model dimensions must be >= 1");
  }
  if (num_encoder_layers < 1 || num_decoder_layers < 1) throw ConfigError("model layer counts must be >= 1");
  if (embed_dim % num_heads != 0) throw ConfigError("model.embed_dim must be divisible by model.num_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model.dropout_rate must be in [0, 1)");
}

Seq2SeqParams Seq2SeqParams::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.embed_dim;
  Seq2SeqParams p;
  p.config = config;
  p.token_embedding = Matrix::Zero(config.vocab_size, d);
  p.encoder_positions = Matrix::Zero(config.max_positions, d);
  p.decoder_positions = Matrix::Zero(config.max_positions, d);
  for (int l = 0; l < config.num_encoder_layers; ++l) {
    p.encoder.push_back({norm_zeros(d), attention_zeros(d), norm_zeros(d), linear_zeros(d, config.ffn_dim),
                         linear_zeros(config.ffn_dim, d)});
  }
  p.encoder_norm = norm_zeros(d);
  for (int l = 0; l < config.num_decoder_layers; ++l) {
    p.decoder.push_back({norm_zeros(d), attention_zeros(d), norm_zeros(d), attention_zeros(d), norm_zeros(d),
                         linear_zeros(d, config.ffn_dim), linear_zeros(config.ffn_dim, d)});
  }
  p.decoder_norm = norm_zeros(d);
  p.output_bias = Matrix::Zero(1, config.vocab_size);
  return p;
}

Seq2SeqParams Seq2SeqParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  Seq2SeqParams p = zeros(config);
  Rng rng(derive_seed(seed, 0x696e6974ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double embed_std = 0.02;
  p.for_each([&](const std::string& name, Matrix& t) {
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (name.rfind("embed.", 0) == 0) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = embed_std * gauss(rng);
    } else if (ends_with(".gain")) {
      t.setOnes();
    } else if (ends_with(".weight")) {
      // Xavier-uniform.
      const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = limit * (2.0 * uniform01(rng) - 1.0);
    }
  });
  return p;
}

void Seq2SeqParams::for_each(const std::function<void(const std::string&, Matrix&)>& f) {
  visit_params<Seq2SeqParams, Matrix>(*this, f);
}

void Seq2SeqParams::for_each(const std::function<void(const std::string&, const Matrix&)>& f) const {
  visit_params<const Seq2SeqParams, const Matrix>(*this, f);
}

std::size_t Seq2SeqParams::num_parameters() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

void Seq2SeqParams::set_zero() {
  for_each([](const std::string&, Matrix& t) { t.setZero(); });
}

std::uint64_t Seq2SeqParams::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each([&](const std::string& name, const Matrix& t) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double), h);
  });
  return h;
}

bool Seq2SeqParams::operator==(const Seq2SeqParams& other) const {
  if (!(config == other.config)) return false;
  std::vector<const Matrix*> mine;
  std::vector<const Matrix*> theirs;
  for_each([&](const std::string&, const Matrix& t) { mine.push_back(&t); });
  other.for_each([&](const std::string&, const Matrix& t) { theirs.push_back(&t); });
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->rows() != theirs[i]->rows() || mine[i]->cols() != theirs[i]->cols()) return false;
    if (std::memcmp(mine[i]->data(), theirs[i]->data(), static_cast<std::size_t>(mine[i]->size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void axpy(double scale, const Seq2SeqParams& other, Seq2SeqParams& target) {
  std::vector<const Matrix*> src;
  other.for_each([&](const std::string&, const Matrix& t) { src.push_back(&t); });
  std::size_t i = 0;
  target.for_each([&](const std::string&, Matrix& t) { t += scale * *src[i++]; });
}

std::vector<int> model_sequence(const BpeVocab& vocab, const TokenSequence& seq) {
  std::vector<int> out;
  out.reserve(seq.tokens.size() + 2);
  out.push_back(vocab.language_token(seq.language));
  out.insert(out.end(), seq.tokens.begin(), seq.tokens.end());
  out.push_back(kEos);
  return out;
}

Example make_example(const BpeVocab& vocab, const TokenSequence& source, const TokenSequence& target) {
  return {model_sequence(vocab, source), model_sequence(vocab, target), {source.language, target.language}};
}

Batch Batch::from_examples(std::span<const Example> examples) {
  Batch b;
  b.rows = static_cast<int>(examples.size());
  for (const auto& e : examples) {
    b.source_width = std::max(b.source_width, static_cast<int>(e.source.size()));
    b.target_width = std::max(b.target_width, static_cast<int>(e.target.size()));
  }
  b.source.assign(static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(b.source_width), kPad);
  b.target.assign(static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(b.target_width), kPad);
  for (int i = 0; i < b.rows; ++i) {
    const auto& e = examples[static_cast<std::size_t>(i)];
    std::copy(e.source.begin(), e.source.end(), b.source.begin() + static_cast<std::ptrdiff_t>(i) * b.source_width);
    std::copy(e.target.begin(), e.target.end(), b.target.begin() + static_cast<std::ptrdiff_t>(i) * b.target_width);
    b.source_lengths.push_back(static_cast<int>(e.source.size()));
    b.target_lengths.push_back(static_cast<int>(e.target.size()));
    b.directions.push_back(e.direction);
  }
  return b;
}

void Batch::pad_to(int new_source_width, int new_target_width) {
  if (new_source_width < source_width || new_target_width < target_width) {
    throw InputError("Batch::pad_to: cannot shrink padding");
  }
  auto widen = [&](std::vector<int>& data, int old_w, int new_w) {
    std::vector<int> out(static_cast<std::size_t>(rows) * static_cast<std::size_t>(new_w), kPad);
    for (int i = 0; i < rows; ++i) {
      std::copy(data.begin() + static_cast<std::ptrdiff_t>(i) * old_w,
                data.begin() + static_cast<std::ptrdiff_t>(i + 1) * old_w,
                out.begin() + static_cast<std::ptrdiff_t>(i) * new_w);
    }
    data = std::move(out);
  };
  widen(source, source_width, new_source_width);
  widen(target, target_width, new_target_width);
  source_width = new_source_width;
  target_width = new_target_width;
}

std::span<const int> Batch::source_row(int i) const {
  return {source.data() + static_cast<std::ptrdiff_t>(i) * source_width,
          static_cast<std::size_t>(source_lengths[static_cast<std::size_t>(i)])};
}

std::span<const int> Batch::target_row(int i) const {
  return {target.data() + static_cast<std::ptrdiff_t>(i) * target_width,
          static_cast<std::size_t>(target_lengths[static_cast<std::size_t>(i)])};
}

long Batch::target_tokens() const {
  long n = 0;
  for (int i = 0; i < rows; ++i) {
    const auto row = target_row(i);
    for (std::size_t t = 1; t < row.size(); ++t) n += row[t] != kPad ? 1 : 0;
  }
  return n;
}

Eigen::Ref<const Eigen::RowVectorXd> Logits::at(int example, int position) const {
  return values.row(offsets[static_cast<std::size_t>(example)] + position);
}

Logits forward_logits(const Seq2SeqParams& p, const Batch& b, Mode mode, std::uint64_t seed, ForwardTape* tape,
                      double dropout) {
  const ModelConfig& cfg = p.config;
  const double rate = dropout < 0.0 ? cfg.dropout_rate : dropout;
  if (!(rate < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  const bool train = mode == Mode::kTrain && rate > 0.0;
  ForwardTape local;
  ForwardTape::Impl& t = tape ? tape->impl() : local.impl();
  t = ForwardTape::Impl{};
  t.train = train;

  Logits out;
  for (int i = 0; i < b.rows; ++i) {
    const auto src = b.source_row(i);
    const auto tgt = b.target_row(i);
    check_tokens(src, cfg.vocab_size, cfg.max_positions, "source", i);
    check_tokens(tgt, cfg.vocab_size, cfg.max_positions, "target", i);
    if (src.empty()) throw InputError("forward: empty source " + std::to_string(i));
    if (tgt.size() < 2) throw InputError("forward: target " + std::to_string(i) + " shorter than 2 tokens");
    t.source.offset.push_back(static_cast<int>(t.source_tokens.size()));
    t.source.length.push_back(static_cast<int>(src.size()));
    for (std::size_t j = 0; j < src.size(); ++j) {
      t.source_tokens.push_back(src[j]);
      t.source_positions.push_back(static_cast<int>(j));
    }
    t.target.offset.push_back(static_cast<int>(t.decoder_tokens.size()));
    t.target.length.push_back(static_cast<int>(tgt.size()) - 1);
    out.offsets.push_back(static_cast<int>(t.decoder_tokens.size()));
    for (std::size_t j = 0; j + 1 < tgt.size(); ++j) {
      t.decoder_tokens.push_back(tgt[j]);
      t.decoder_positions.push_back(static_cast<int>(j));
      out.positions.push_back(static_cast<int>(j));
      out.gold.push_back(tgt[j + 1]);
    }
  }

  const int heads = cfg.num_heads;
  std::uint64_t site = 0;
  auto drop = [&](Matrix& x, Matrix& mask) {
    ++site;
    if (!train) return;
    mask = dropout_mask(x.rows(), x.cols(), rate, seed, site);
    x.array() *= mask.array();
  };

  // Encoder.
  Matrix x = embed(p.token_embedding, p.encoder_positions, t.source_tokens, t.source_positions);
  drop(x, t.source_embed_drop);
  t.encoder.resize(p.encoder.size());
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& layer = p.encoder[l];
    auto& c = t.encoder[l];
    const Matrix h = ops::layer_norm(x, layer.attn_norm, &c.attn_norm);
    Matrix a = attention_forward(h, h, t.source, t.source, false, layer.self_attn, heads, &c.attn);
    drop(a, c.attn_drop);
    x += a;
    c.ffn_input = ops::layer_norm(x, layer.ffn_norm, &c.ffn_norm);
    c.ffn_pre = ops::linear(c.ffn_input, layer.ffn_in);
    c.ffn_act = ops::gelu(c.ffn_pre);
    Matrix f = ops::linear(c.ffn_act, layer.ffn_out);
    drop(f, c.ffn_drop);
    x += f;
  }
  t.encoder_out = ops::layer_norm(x, p.encoder_norm, &t.encoder_norm);

  // Decoder.
  Matrix y = embed(p.token_embedding, p.decoder_positions, t.decoder_tokens, t.decoder_positions);
  drop(y, t.target_embed_drop);
  t.decoder.resize(p.decoder.size());
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& layer = p.decoder[l];
    auto& c = t.decoder[l];
    const Matrix h1 = ops::layer_norm(y, layer.self_norm, &c.self_norm);
    Matrix a = attention_forward(h1, h1, t.target, t.target, true, layer.self_attn, heads, &c.self_attn);
    drop(a, c.self_drop);
    y += a;
    const Matrix h2 = ops::layer_norm(y, layer.cross_norm, &c.cross_norm);
    Matrix ca = attention_forward(h2, t.encoder_out, t.target, t.source, false, layer.cross_attn, heads, &c.cross_attn);
    drop(ca, c.cross_drop);
    y += ca;
    c.ffn_input = ops::layer_norm(y, layer.ffn_norm, &c.ffn_norm);
    c.ffn_pre = ops::linear(c.ffn_input, layer.ffn_in);
    c.ffn_act = ops::gelu(c.ffn_pre);
    Matrix f = ops::linear(c.ffn_act, layer.ffn_out);
    drop(f, c.ffn_drop);
    y += f;
  }
  t.decoder_out = ops::layer_norm(y, p.decoder_norm, &t.decoder_norm);
  out.values.resize(t.decoder_out.rows(), cfg.vocab_size);
  out.values.noalias() = t.decoder_out * p.token_embedding.transpose();
  out.values.rowwise() += p.output_bias.row(0);
  return out;
}

LossValue loss_label_smoothed(const Matrix& logits, std::span<const int> targets, double smoothing, int pad_id) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw InputError("loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(logits.rows()) +
                     " logit rows");
  }
  const auto vocab = logits.cols();
  if (vocab < 2) throw InputError("loss: vocabulary must have at least 2 entries");
  long n = 0;
  for (int g : targets) n += g != pad_id ? 1 : 0;
  if (n == 0) throw InputError("loss: every target position is padding");

  const double off = smoothing / static_cast<double>(vocab - 1);
  const double on = 1.0 - smoothing;
  LossValue lv;
  lv.tokens = n;
  lv.grad_logits = Matrix::Zero(logits.rows(), vocab);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int gold = targets[static_cast<std::size_t>(r)];
    if (gold == pad_id) continue;
    if (gold < 0 || gold >= vocab) throw InputError("loss: target id " + std::to_string(gold) + " out of range");
    const auto row = logits.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    const double expected = on * row(gold) + off * (row.sum() - row(gold));
    total += lse - expected;
    auto g = lv.grad_logits.row(r);
    g = ((row.array() - lse).exp() - off).matrix() * inv_n;
    g(gold) -= (on - off) * inv_n;
  }
  lv.loss = total * inv_n;
  return lv;
}

void backward(const Seq2SeqParams& p, const ForwardTape& tape, const Matrix& grad_logits, Seq2SeqParams& grads) {
  const ForwardTape::Impl& t = tape.impl();
  const int heads = p.config.num_heads;
  auto undrop = [&](Matrix& dx, const Matrix& mask) {
    if (t.train) dx.array() *= mask.array();
  };

  // Output projection (tied to the token embedding).
  grads.output_bias += grad_logits.colwise().sum();
  grads.token_embedding.noalias() += grad_logits.transpose() * t.decoder_out;
  Matrix dy(grad_logits.rows(), p.config.embed_dim);
  dy.noalias() = grad_logits * p.token_embedding;
  dy = ops::layer_norm_backward(dy, p.decoder_norm, t.decoder_norm, grads.decoder_norm);

  Matrix denc = Matrix::Zero(t.encoder_out.rows(), t.encoder_out.cols());
  for (std::size_t li = p.decoder.size(); li-- > 0;) {
    const auto& layer = p.decoder[li];
    auto& g = grads.decoder[li];
    const auto& c = t.decoder[li];

    Matrix df = dy;
    undrop(df, c.ffn_drop);
    Matrix dact = ops::linear_backward(c.ffn_act, df, layer.ffn_out, g.ffn_out);
    for (Eigen::Index i = 0; i < dact.size(); ++i) dact.data()[i] *= ops::gelu_grad(c.ffn_pre.data()[i]);
    Matrix dh = ops::linear_backward(c.ffn_input, dact, layer.ffn_in, g.ffn_in);
    dy += ops::layer_norm_backward(dh, layer.ffn_norm, c.ffn_norm, g.ffn_norm);

    Matrix dc = dy;
    undrop(dc, c.cross_drop);
    auto [dq_cross, dkv_cross] =
        attention_backward(dc, c.cross_attn, t.target, t.source, layer.cross_attn, heads, g.cross_attn);
    denc += dkv_cross;
    dy += ops::layer_norm_backward(dq_cross, layer.cross_norm, c.cross_norm, g.cross_norm);

    Matrix ds = dy;
    undrop(ds, c.self_drop);
    auto [dq_self, dkv_self] =
        attention_backward(ds, c.self_attn, t.target, t.target, layer.self_attn, heads, g.self_attn);
    dq_self += dkv_self;
    dy += ops::layer_norm_backward(dq_self, layer.self_norm, c.self_norm, g.self_norm);
  }
  undrop(dy, t.target_embed_drop);
  for (std::size_t i = 0; i < t.decoder_tokens.size(); ++i) {
    grads.token_embedding.row(t.decoder_tokens[i]) += dy.row(static_cast<Eigen::Index>(i));
    grads.decoder_positions.row(t.decoder_positions[i]) += dy.row(static_cast<Eigen::Index>(i));
  }

  Matrix dx = ops::layer_norm_backward(denc, p.encoder_norm, t.encoder_norm, grads.encoder_norm);
  for (std::size_t li = p.encoder.size(); li-- > 0;) {
    const auto& layer = p.encoder[li];
    auto& g = grads.encoder[li];
    const auto& c = t.encoder[li];

    Matrix df = dx;
    undrop(df, c.ffn_drop);
    Matrix dact = ops::linear_backward(c.ffn_act, df, layer.ffn_out, g.ffn_out);
    for (Eigen::Index i = 0; i < dact.size(); ++i) dact.data()[i] *= ops::gelu_grad(c.ffn_pre.data()[i]);
    Matrix dh = ops::linear_backward(c.ffn_input, dact, layer.ffn_in, g.ffn_in);
    dx += ops::layer_norm_backward(dh, layer.ffn_norm, c.ffn_norm, g.ffn_norm);

    Matrix da = dx;
    undrop(da, c.attn_drop);
    auto [dq, dkv] = attention_backward(da, c.attn, t.source, t.source, layer.self_attn, heads, g.self_attn);
    dq += dkv;
    dx += ops::layer_norm_backward(dq, layer.attn_norm, c.attn_norm, g.attn_norm);
  }
  undrop(dx, t.source_embed_drop);
  for (std::size_t i = 0; i < t.source_tokens.size(); ++i) {
    grads.token_embedding.row(t.source_tokens[i]) += dx.row(static_cast<Eigen::Index>(i));
    grads.encoder_positions.row(t.source_positions[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
}

void check_finite(const Seq2SeqParams& grads, const std::string& what) {
  grads.for_each([&](const std::string& name, const Matrix& t) {
    if (!t.allFinite()) throw NumericError(what + ": non-finite value in tensor '" + name + "'");
  });
}

double loss_and_gradients(const Seq2SeqParams& p, const Batch& b, const LossOptions& opts, Seq2SeqParams* grads,
                          long* tokens) {
  if (tokens) *tokens = 0;
  if (b.rows == 0 || b.target_tokens() == 0) return 0.0;
  ForwardTape tape;
  const Logits logits = forward_logits(p, b, opts.mode, opts.seed, grads ? &tape : nullptr, opts.dropout);
  LossValue lv = loss_label_smoothed(logits.values, logits.gold, opts.label_smoothing, kPad);
  if (!std::isfinite(lv.loss)) throw NumericError("loss is not finite");
  if (tokens) *tokens = lv.tokens;
  if (grads) {
    if (opts.weight != 1.0) lv.grad_logits *= opts.weight;
    backward(p, tape, lv.grad_logits, *grads);
  }
  return lv.loss;
}

}  // namespace unitmt
