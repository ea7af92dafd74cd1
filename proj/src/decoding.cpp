#include "unitmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nn_ops.hpp"

namespace unitmt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Single-query attention of `q` (1 x d) against key/value rows [0, len).
void attend_one(const Eigen::Ref<const Eigen::RowVectorXd>& q, const Matrix& k, const Matrix& v, Eigen::Index len,
                int heads, Eigen::Ref<Eigen::RowVectorXd> out) {
  const auto d = q.size();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Eigen::RowVectorXd scores(len);
  for (int h = 0; h < heads; ++h) {
    scores.noalias() = q.segment(h * dh, dh) * k.block(0, h * dh, len, dh).transpose();
    scores *= scale;
    ops::softmax_prefix(scores, len);
    out.segment(h * dh, dh).noalias() = scores * v.block(0, h * dh, len, dh);
  }
}

std::vector<double> log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& row, std::span<const int> banned) {
  const double m = row.maxCoeff();
  const double lse = m + std::log((row.array() - m).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index j = 0; j < row.size(); ++j) out[static_cast<std::size_t>(j)] = row(j) - lse;
  for (int b : banned) {
    if (b >= 0 && b < row.size()) out[static_cast<std::size_t>(b)] = kNegInf;
  }
  return out;
}

double normalized(double log_prob, int length, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max(length, 1)), alpha);
}

}  // namespace

Matrix encode_source(const Seq2SeqParams& p, std::span<const int> source) {
  const auto& cfg = p.config;
  if (source.empty()) throw InputError("encode_source: empty source");
  if (static_cast<int>(source.size()) > cfg.max_positions) throw InputError("encode_source: source too long");
  const auto n = static_cast<Eigen::Index>(source.size());
  Matrix x(n, cfg.embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int tok = source[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= cfg.vocab_size) throw InputError("encode_source: token id out of range");
    x.row(i) = p.token_embedding.row(tok) + p.encoder_positions.row(i);
  }
  for (const auto& layer : p.encoder) {
    const Matrix h = ops::layer_norm(x, layer.attn_norm);
    const Matrix q = ops::linear(h, layer.self_attn.query);
    const Matrix k = ops::linear(h, layer.self_attn.key);
    const Matrix v = ops::linear(h, layer.self_attn.value);
    Matrix concat(n, cfg.embed_dim);
    for (Eigen::Index i = 0; i < n; ++i) attend_one(q.row(i), k, v, n, cfg.num_heads, concat.row(i));
    x += ops::linear(concat, layer.self_attn.output);
    x += ops::feed_forward(ops::layer_norm(x, layer.ffn_norm), layer);
  }
  return ops::layer_norm(x, p.encoder_norm);
}

struct TransformerStepModel::Impl {
  struct State {
    int root = 0;
    Eigen::Index length = 0;
    std::vector<Matrix> keys, values;  // per decoder layer, `length` rows
  };

  const Seq2SeqParams& p;
  std::vector<std::vector<int>> sources;
  std::vector<bool> encoded;
  std::vector<std::vector<Matrix>> cross_keys, cross_values;  // [source][layer]
  std::vector<State> states;

  void ensure_encoded(int s) {
    const auto us = static_cast<std::size_t>(s);
    if (encoded[us]) return;
    const Matrix memory = encode_source(p, sources[us]);
    cross_keys[us].clear();
    cross_values[us].clear();
    for (const auto& layer : p.decoder) {
      cross_keys[us].push_back(ops::linear(memory, layer.cross_attn.key));
      cross_values[us].push_back(ops::linear(memory, layer.cross_attn.value));
    }
    encoded[us] = true;
  }
};

TransformerStepModel::TransformerStepModel(const Seq2SeqParams& params, std::vector<std::vector<int>> sources)
    : impl_(std::make_unique<Impl>(Impl{params, std::move(sources), {}, {}, {}, {}})) {
  impl_->encoded.assign(impl_->sources.size(), false);
  impl_->cross_keys.resize(impl_->sources.size());
  impl_->cross_values.resize(impl_->sources.size());
}

TransformerStepModel::~TransformerStepModel() = default;

int TransformerStepModel::vocab_size() const { return impl_->p.config.vocab_size; }

void TransformerStepModel::reset(const std::vector<int>& roots) {
  auto& im = *impl_;
  im.states.clear();
  for (int r : roots) {
    if (r < 0 || r >= static_cast<int>(im.sources.size())) throw InputError("decoder: root out of range");
    im.ensure_encoded(r);
    Impl::State s;
    s.root = r;
    s.keys.assign(im.p.decoder.size(), Matrix(0, im.p.config.embed_dim));
    s.values.assign(im.p.decoder.size(), Matrix(0, im.p.config.embed_dim));
    im.states.push_back(std::move(s));
  }
}

Matrix TransformerStepModel::advance(const std::vector<int>& parents, const std::vector<int>& tokens) {
  auto& im = *impl_;
  const auto& p = im.p;
  const auto& cfg = p.config;
  const auto h = static_cast<Eigen::Index>(parents.size());

  std::vector<int> uses(im.states.size(), 0);
  for (int par : parents) ++uses[static_cast<std::size_t>(par)];
  std::vector<Impl::State> next;
  next.reserve(parents.size());
  for (int par : parents) {
    auto& old = im.states[static_cast<std::size_t>(par)];
    if (--uses[static_cast<std::size_t>(par)] == 0) {
      next.push_back(std::move(old));
    } else {
      next.push_back(old);
    }
  }
  im.states = std::move(next);

  Matrix x(h, cfg.embed_dim);
  for (Eigen::Index i = 0; i < h; ++i) {
    const auto& s = im.states[static_cast<std::size_t>(i)];
    const int tok = tokens[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= cfg.vocab_size) throw InputError("decoder: token id out of range");
    if (s.length >= cfg.max_positions) throw InputError("decoder: output exceeds max_positions");
    x.row(i) = p.token_embedding.row(tok) + p.decoder_positions.row(s.length);
  }
  Matrix concat(h, cfg.embed_dim);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& layer = p.decoder[l];
    const Matrix h1 = ops::layer_norm(x, layer.self_norm);
    const Matrix q = ops::linear(h1, layer.self_attn.query);
    const Matrix k = ops::linear(h1, layer.self_attn.key);
    const Matrix v = ops::linear(h1, layer.self_attn.value);
    for (Eigen::Index i = 0; i < h; ++i) {
      auto& s = im.states[static_cast<std::size_t>(i)];
      auto& kc = s.keys[l];
      auto& vc = s.values[l];
      kc.conservativeResize(s.length + 1, Eigen::NoChange);
      vc.conservativeResize(s.length + 1, Eigen::NoChange);
      kc.row(s.length) = k.row(i);
      vc.row(s.length) = v.row(i);
      attend_one(q.row(i), kc, vc, s.length + 1, cfg.num_heads, concat.row(i));
    }
    x += ops::linear(concat, layer.self_attn.output);

    const Matrix q2 = ops::linear(ops::layer_norm(x, layer.cross_norm), layer.cross_attn.query);
    for (Eigen::Index i = 0; i < h; ++i) {
      const auto root = static_cast<std::size_t>(im.states[static_cast<std::size_t>(i)].root);
      const Matrix& ck = im.cross_keys[root][l];
      const Matrix& cv = im.cross_values[root][l];
      attend_one(q2.row(i), ck, cv, ck.rows(), cfg.num_heads, concat.row(i));
    }
    x += ops::linear(concat, layer.cross_attn.output);
    x += ops::feed_forward(ops::layer_norm(x, layer.ffn_norm), layer);
  }
  for (auto& s : im.states) ++s.length;
  const Matrix y = ops::layer_norm(x, p.decoder_norm);
  Matrix logits(h, cfg.vocab_size);
  logits.noalias() = y * p.token_embedding.transpose();
  logits.rowwise() += p.output_bias.row(0);
  return logits;
}

std::vector<int> banned_generation_tokens(const BpeVocab& vocab) {
  std::vector<int> banned;
  for (int id = 0; id < vocab.num_specials(); ++id) {
    if (id != kEos) banned.push_back(id);
  }
  return banned;
}

Hypothesis beam_search(StepModel& model, int start_token, const BeamOptions& opts, std::span<const int> banned,
                       int root) {
  if (opts.beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (opts.max_len < 1) throw ConfigError("max_len must be >= 1");
  struct Live {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  struct Candidate {
    double log_prob;
    int parent;
    int token;
  };

  model.reset({root});
  std::vector<Live> live(1);
  std::vector<Hypothesis> finished;
  Matrix logits = model.advance({0}, {start_token});
  const int vocab = model.vocab_size();
  std::vector<Candidate> cands;
  for (int step = 0;; ++step) {
    const bool last = step + 1 >= opts.max_len;
    cands.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto lp = log_softmax(logits.row(static_cast<Eigen::Index>(i)), banned);
      for (int v = 0; v < vocab; ++v) {
        if (last && v != kEos) continue;
        const double s = lp[static_cast<std::size_t>(v)];
        if (s == kNegInf) continue;
        cands.push_back({live[i].log_prob + s, static_cast<int>(i), v});
      }
    }
    const auto k = std::min(cands.size(), static_cast<std::size_t>(opts.beam_size) - finished.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    std::vector<int> parents;
    std::vector<int> feed;
    for (std::size_t c = 0; c < k; ++c) {
      const auto& cand = cands[c];
      const auto& parent = live[static_cast<std::size_t>(cand.parent)];
      if (cand.token == kEos) {
        Hypothesis hyp;
        hyp.tokens = parent.tokens;
        hyp.log_prob = cand.log_prob;
        hyp.length = static_cast<int>(parent.tokens.size()) + 1;
        hyp.ended_with_eos = true;
        hyp.score = normalized(hyp.log_prob, hyp.length, opts.length_penalty);
        finished.push_back(std::move(hyp));
        continue;
      }
      Live l{parent.tokens, cand.log_prob};
      l.tokens.push_back(cand.token);
      next.push_back(std::move(l));
      parents.push_back(cand.parent);
      feed.push_back(cand.token);
    }
    if (next.empty() || finished.size() >= static_cast<std::size_t>(opts.beam_size)) break;
    live = std::move(next);
    logits = model.advance(parents, feed);
  }

  if (finished.empty()) throw NumericError("beam_search: no hypothesis with finite score");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].score > finished[best].score) best = i;
  }
  Hypothesis result = std::move(finished[best]);
  if (opts.beam_size > 1) {
    Hypothesis greedy = greedy_search(model, start_token, opts.max_len, opts.length_penalty, banned, root);
    if (greedy.score > result.score) result = std::move(greedy);
  }
  return result;
}

Hypothesis greedy_search(StepModel& model, int start_token, int max_len, double length_penalty,
                         std::span<const int> banned, int root) {
  BeamOptions opts;
  opts.beam_size = 1;
  opts.max_len = max_len;
  opts.length_penalty = length_penalty;
  return beam_search(model, start_token, opts, banned, root);
}

std::pair<std::vector<int>, std::vector<double>> nucleus(std::span<const double> probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::vector<int> ids;
  std::vector<double> kept;
  double mass = 0.0;
  for (int id : order) {
    const double pr = probs[static_cast<std::size_t>(id)];
    if (pr <= 0.0) break;
    ids.push_back(id);
    kept.push_back(pr);
    mass += pr;
    if (mass >= top_p) break;
  }
  for (auto& v : kept) v /= mass;
  return {std::move(ids), std::move(kept)};
}

std::vector<std::vector<int>> nucleus_sample(StepModel& model, const std::vector<int>& roots,
                                             const std::vector<int>& start_tokens, const SamplingOptions& opts,
                                             std::span<const int> banned) {
  if (!(opts.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(opts.top_p > 0.0 && opts.top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
  if (opts.max_len < 1) throw ConfigError("max_len must be >= 1");
  if (roots.size() != start_tokens.size()) throw InputError("nucleus_sample: roots/start token count mismatch");
  const std::size_t n = roots.size();
  std::vector<std::vector<int>> outputs(n);
  if (n == 0) return outputs;
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rngs.emplace_back(derive_seed(opts.seed, i));

  model.reset(roots);
  std::vector<int> alive(n);
  std::iota(alive.begin(), alive.end(), 0);
  std::vector<int> identity(n);
  std::iota(identity.begin(), identity.end(), 0);
  Matrix logits = model.advance(identity, start_tokens);
  const int vocab = model.vocab_size();
  std::vector<double> probs(static_cast<std::size_t>(vocab));
  std::vector<bool> is_banned(static_cast<std::size_t>(vocab), false);
  for (int b : banned) {
    if (b >= 0 && b < vocab) is_banned[static_cast<std::size_t>(b)] = true;
  }

  for (int step = 0; !alive.empty(); ++step) {
    const bool last = step + 1 >= opts.max_len;
    std::vector<int> parents;
    std::vector<int> feed;
    std::vector<int> still;
    for (std::size_t r = 0; r < alive.size(); ++r) {
      const auto seq = static_cast<std::size_t>(alive[r]);
      int token = kEos;
      if (!last) {
        const auto row = logits.row(static_cast<Eigen::Index>(r));
        double m = kNegInf;
        for (int v = 0; v < vocab; ++v) {
          if (!is_banned[static_cast<std::size_t>(v)]) m = std::max(m, row(v) / opts.temperature);
        }
        double z = 0.0;
        for (int v = 0; v < vocab; ++v) {
          const auto uv = static_cast<std::size_t>(v);
          probs[uv] = is_banned[uv] ? 0.0 : std::exp(row(v) / opts.temperature - m);
          z += probs[uv];
        }
        for (auto& pr : probs) pr /= z;
        const auto [ids, kept] = nucleus(probs, opts.top_p);
        double u = uniform01(rngs[seq]);
        token = ids.back();
        for (std::size_t j = 0; j < ids.size(); ++j) {
          u -= kept[j];
          if (u < 0.0) {
            token = ids[j];
            break;
          }
        }
      }
      if (token == kEos) continue;
      outputs[seq].push_back(token);
      parents.push_back(static_cast<int>(r));
      feed.push_back(token);
      still.push_back(alive[r]);
    }
    alive = std::move(still);
    if (alive.empty()) break;
    logits = model.advance(parents, feed);
  }
  return outputs;
}

double sequence_log_prob(const Seq2SeqParams& p, std::span<const int> source, int start_token,
                         std::span<const int> output) {
  Example e;
  e.source.assign(source.begin(), source.end());
  e.target.push_back(start_token);
  e.target.insert(e.target.end(), output.begin(), output.end());
  e.target.push_back(kEos);
  const Batch b = Batch::from_examples(std::span<const Example>(&e, 1));
  const Logits logits = forward_logits(p, b, Mode::kEval, 0);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.values.rows(); ++r) {
    const auto row = logits.values.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += row(logits.gold[static_cast<std::size_t>(r)]) - lse;
  }
  return total;
}

TokenSequence beam_decode(const Seq2SeqParams& p, const BpeVocab& vocab, const TokenSequence& source,
                          const std::string& target_language, const BeamOptions& opts) {
  TransformerStepModel model(p, {model_sequence(vocab, source)});
  BeamOptions o = opts;
  o.max_len = std::min(o.max_len, p.config.max_positions - 1);
  const auto banned = banned_generation_tokens(vocab);
  const Hypothesis h = beam_search(model, vocab.language_token(target_language), o, banned);
  return {h.tokens, target_language};
}

std::vector<TokenSequence> nucleus_translate(const Seq2SeqParams& p, const BpeVocab& vocab,
                                             const std::vector<TokenSequence>& sources,
                                             const std::string& target_language, const SamplingOptions& opts) {
  std::vector<std::vector<int>> model_sources;
  std::vector<int> roots;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    model_sources.push_back(model_sequence(vocab, sources[i]));
    roots.push_back(static_cast<int>(i));
  }
  TransformerStepModel model(p, std::move(model_sources));
  SamplingOptions o = opts;
  o.max_len = std::min(o.max_len, p.config.max_positions - 1);
  const std::vector<int> starts(sources.size(), vocab.language_token(target_language));
  const auto outs = nucleus_sample(model, roots, starts, o, banned_generation_tokens(vocab));
  std::vector<TokenSequence> result;
  result.reserve(outs.size());
  for (const auto& o2 : outs) result.push_back({o2, target_language});
  return result;
}

}  // namespace unitmt
