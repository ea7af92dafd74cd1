#include "unitmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace unitmt {

namespace {

enum Stream : std::uint64_t {
  kPretrainDraw = 11,
  kPretrainNoise = 12,
  kPretrainDropout = 13,
  kFinetuneOrder = 21,
  kFinetuneDropout = 22,
  kBtOrder = 31,
  kBtSample = 32,
  kBtDropout = 33,
  kReplayOrder = 34,
};

std::uint64_t stream(std::uint64_t seed, Stream tag, std::uint64_t index) {
  return derive_seed(derive_seed(seed, tag), index);
}

// Fisher-Yates on top of uniform_index so orders do not depend on the
// standard library's distributions.
std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  return idx;
}

long predicted(const Example& e) { return static_cast<long>(e.target.size()) - 1; }

void check_budget(long tokens, int budget) {
  if (tokens > budget) {
    throw ConfigError("tokens_per_batch (" + std::to_string(budget) + ") is smaller than a " + std::to_string(tokens) +
                      "-token sequence");
  }
}

// Consecutive chunks of `order` whose predicted-token count fits `budget`.
std::vector<std::vector<std::size_t>> chunk(const std::vector<Example>& ex, const std::vector<std::size_t>& order,
                                            int budget) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  long used = 0;
  for (std::size_t i : order) {
    const long t = predicted(ex[i]);
    check_budget(t, budget);
    if (!cur.empty() && used + t > budget) {
      out.push_back(std::move(cur));
      cur.clear();
      used = 0;
    }
    cur.push_back(i);
    used += t;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

LrSchedule stage_schedule(const LrSchedule& s, long total) {
  LrSchedule out = s;
  if (out.total_steps == 0) out.total_steps = std::max(total, out.warmup_steps + 1);
  out.validate();
  return out;
}

struct StageState {
  Adam adam;
  long start = 0;
};

StageState begin_stage(const Checkpoint& ckpt, const std::string& stage, const TrainingConfig& cfg) {
  StageState s;
  if (ckpt.stage == stage && ckpt.optimizer) {
    s.adam = *ckpt.optimizer;
    s.start = ckpt.step;
  } else {
    s.adam = Adam(ckpt.params.config, cfg.adam);
    s.start = ckpt.stage == stage ? ckpt.step : 0;
  }
  return s;
}

TrainableMask stage_mask(const ModelConfig& mc, const TrainingConfig& cfg) {
  return cfg.trainable_last_layers ? last_layers_trainable(mc, *cfg.trainable_last_layers) : all_trainable(mc);
}

LossOptions loss_options(const TrainingConfig& cfg, std::uint64_t seed) {
  LossOptions o;
  o.label_smoothing = cfg.label_smoothing;
  o.mode = Mode::kTrain;
  o.seed = seed;
  o.dropout = cfg.dropout;
  return o;
}

std::string other_language(const BpeVocab& vocab, const std::string& lang) {
  for (const auto& l : vocab.languages()) {
    if (l != lang) return l;
  }
  throw ConfigError("backtranslation needs two languages in the vocabulary");
}

}  // namespace

double LrSchedule::decay_constant() const {
  if (decay) return *decay;
  if (total_steps <= warmup_steps) return 0.0;
  return std::log(peak / (2.0 * final_lr)) / static_cast<double>(total_steps - warmup_steps);
}

void LrSchedule::validate() const {
  if (!(floor > 0.0 && peak > 0.0 && final_lr > 0.0)) throw ConfigError("lr endpoints must be > 0");
  if (!(final_lr <= peak && floor <= peak)) throw ConfigError("lr peak must be >= floor and final");
  if (warmup_steps < 0) throw ConfigError("lr warmup_steps must be >= 0");
  if (total_steps < 0) throw ConfigError("lr total_steps must be >= 0");
  if (decay && !(*decay >= 0.0)) throw ConfigError("lr decay must be >= 0");
}

double lr_at(long step, const LrSchedule& s) {
  if (step < 0) throw ConfigError("lr_at: negative step");
  if (step < s.warmup_steps) {
    return s.floor + (s.peak - s.floor) * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const double v = s.peak * std::exp(-s.decay_constant() * static_cast<double>(step - s.warmup_steps));
  return std::max(v, s.final_lr);
}

void TrainingConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (tokens_per_batch < 1) throw ConfigError("tokens_per_batch must be >= 1");
  lr.validate();
  adam.validate();
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  noise.validate();
  for (const auto& st : curriculum) {
    st.noise.validate();
    if (st.steps < 0) throw ConfigError("curriculum steps must be >= 0");
  }
  if (trainable_last_layers && *trainable_last_layers < 1) {
    throw ConfigError("trainable_last_layers must be >= 1 (0 leaves nothing to train)");
  }
  if (!(replay_ratio >= 0.0 && replay_ratio <= 1.0)) throw ConfigError("replay_ratio must be in [0, 1]");
  if (bt_sentences < 1) throw ConfigError("bt_sentences must be >= 1");
  if (bt_steps_per_epoch < 0) throw ConfigError("bt_steps_per_epoch must be >= 0");
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
  if (!(sampling.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (sampling.max_len < 1) throw ConfigError("sampling max_len must be >= 1");
}

long TrainingConfig::pretrain_steps() const {
  if (curriculum.empty()) return steps;
  long n = 0;
  for (const auto& s : curriculum) n += s.steps;
  return n;
}

void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve, bool header) {
  if (header) os << "stage,step,epoch,lr,loss,tokens,grad_norm,bleu\n";
  for (const auto& p : curve) {
    os << p.stage << ',' << p.step << ',' << p.epoch << ',' << p.lr << ',' << p.loss << ',' << p.tokens << ','
       << p.grad_norm << ',';
    if (p.bleu >= 0.0) os << p.bleu;
    os << '\n';
  }
}

std::vector<Example> supervised_examples(const BpeVocab& vocab, const ParallelCorpus& corpus) {
  std::vector<Example> out;
  out.reserve(corpus.size() * 2);
  for (const auto& p : corpus) {
    if (p.first.language == p.second.language) {
      throw InputError("parallel pair with both sides in language '" + p.first.language + "'");
    }
    out.push_back(make_example(vocab, p.first, p.second));
  }
  for (const auto& p : corpus) out.push_back(make_example(vocab, p.second, p.first));
  return out;
}

Checkpoint pretrain(Checkpoint ckpt, const BpeVocab& vocab, const std::vector<std::vector<TokenSequence>>& mono,
                    const TrainingConfig& cfg, std::vector<CurvePoint>* curve, const TrainHooks* hooks) {
  cfg.validate();
  const long total = cfg.pretrain_steps();
  if (total == 0) return ckpt;
  if (mono.empty()) throw InputError("pretrain: no monolingual corpora");
  for (const auto& m : mono) {
    if (m.empty()) throw InputError("pretrain: empty monolingual corpus");
  }
  auto st = begin_stage(ckpt, "pretrain", cfg);
  if (st.start >= total) return ckpt;
  const auto sched = stage_schedule(cfg.lr, total);
  const auto mask = stage_mask(ckpt.params.config, cfg);
  const int specials = vocab.num_specials();
  auto grads = Seq2SeqParams::zeros(ckpt.params.config);

  auto noise_at = [&](long step) -> const NoiseConfig& {
    long acc = 0;
    for (const auto& s : cfg.curriculum) {
      acc += s.steps;
      if (step < acc) return s.noise;
    }
    return cfg.curriculum.empty() ? cfg.noise : cfg.curriculum.back().noise;
  };

  for (long step = st.start; step < total; ++step) {
    const NoiseConfig& nc = noise_at(step);
    Rng rng(stream(cfg.seed, kPretrainDraw, static_cast<std::uint64_t>(step)));
    std::vector<Example> ex;
    std::uint64_t k = 0;
    for (const auto& corpus : mono) {
      long used = 0;
      while (true) {
        const auto& seq = corpus[uniform_index(rng, corpus.size())];
        const long t = static_cast<long>(seq.tokens.size()) + 1;
        check_budget(t, cfg.tokens_per_batch);
        if (used > 0 && used + t > cfg.tokens_per_batch) break;
        const auto pair =
            denoising_pair(seq, nc, specials, derive_seed(stream(cfg.seed, kPretrainNoise, static_cast<std::uint64_t>(step)), k++));
        ex.push_back(make_example(vocab, pair.source, pair.target));
        used += t;
      }
    }
    const Batch b = Batch::from_examples(ex);
    if (hooks && hooks->on_batch) hooks->on_batch(b);
    grads.set_zero();
    long tokens = 0;
    const double loss = loss_and_gradients(
        ckpt.params, b, loss_options(cfg, stream(cfg.seed, kPretrainDropout, static_cast<std::uint64_t>(step))), &grads,
        &tokens);
    if (!std::isfinite(loss)) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    check_finite(grads, "pretrain step " + std::to_string(step));
    const double lr = lr_at(step, sched);
    const double gn = st.adam.step(ckpt.params, grads, lr, mask);
    if (curve) curve->push_back({"pretrain", step, -1, lr, loss, tokens, gn, -1.0});
  }
  ckpt.stage = "pretrain";
  ckpt.step = total;
  ckpt.optimizer = std::move(st.adam);
  return ckpt;
}

Checkpoint finetune(Checkpoint ckpt, const BpeVocab& vocab, const ParallelCorpus& parallel, const TrainingConfig& cfg,
                    std::vector<CurvePoint>* curve, const TrainHooks* hooks) {
  cfg.validate();
  if (parallel.empty()) throw InputError("finetune: empty parallel corpus");
  const auto mask = stage_mask(ckpt.params.config, cfg);
  const auto ex = supervised_examples(vocab, parallel);
  std::vector<std::vector<std::vector<std::size_t>>> plan;
  long total = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.push_back(chunk(ex, shuffled(ex.size(), stream(cfg.seed, kFinetuneOrder, static_cast<std::uint64_t>(e))),
                         cfg.tokens_per_batch));
    total += static_cast<long>(plan.back().size());
  }
  if (total == 0) return ckpt;
  auto st = begin_stage(ckpt, "finetune", cfg);
  if (st.start >= total) return ckpt;
  const auto sched = stage_schedule(cfg.lr, total);
  auto grads = Seq2SeqParams::zeros(ckpt.params.config);
  long step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    double sum = 0.0;
    long sum_tokens = 0;
    for (const auto& idx : plan[static_cast<std::size_t>(e)]) {
      if (step < st.start) {
        ++step;
        continue;
      }
      std::vector<Example> batch_ex;
      for (std::size_t i : idx) batch_ex.push_back(ex[i]);
      const Batch b = Batch::from_examples(batch_ex);
      if (hooks && hooks->on_batch) hooks->on_batch(b);
      grads.set_zero();
      long tokens = 0;
      const double loss = loss_and_gradients(
          ckpt.params, b, loss_options(cfg, stream(cfg.seed, kFinetuneDropout, static_cast<std::uint64_t>(step))),
          &grads, &tokens);
      if (!std::isfinite(loss)) throw NumericError("finetune: non-finite loss at step " + std::to_string(step));
      check_finite(grads, "finetune step " + std::to_string(step));
      const double lr = lr_at(step, sched);
      const double gn = st.adam.step(ckpt.params, grads, lr, mask);
      if (curve) curve->push_back({"finetune", step, e, lr, loss, tokens, gn, -1.0});
      sum += loss * static_cast<double>(tokens);
      sum_tokens += tokens;
      ++step;
    }
    if (curve && sum_tokens > 0) {
      curve->push_back({"finetune-epoch", step, e, lr_at(step - 1, sched), sum / static_cast<double>(sum_tokens),
                        sum_tokens, 0.0, -1.0});
    }
  }
  ckpt.stage = "finetune";
  ckpt.step = total;
  ckpt.optimizer = std::move(st.adam);
  return ckpt;
}

BacktranslateState BacktranslateState::from(const Seq2SeqParams& init, const TrainingConfig& cfg) {
  BacktranslateState s;
  s.backward_model = init;
  s.forward_model = init;
  s.optimizer = Adam(init.config, cfg.adam);
  s.sync = cfg.sync;
  return s;
}

int replay_count(double ratio, int n) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("replay_ratio must be in [0, 1]");
  return static_cast<int>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

BtStepStats backtranslate_step(BacktranslateState& state, const BpeVocab& vocab,
                               const std::vector<TokenSequence>& b1, const std::vector<TokenSequence>& b2,
                               const std::vector<Example>& replay, const TrainingConfig& cfg,
                               const TrainableMask& mask, const BacktranslateHooks* hooks) {
  BtStepStats stats;
  const auto step = static_cast<std::uint64_t>(state.step);
  std::vector<Example> bt;
  int side = 0;
  for (const auto* batch : {&b1, &b2}) {
    ++side;
    if (batch->empty()) continue;
    const std::string& lang = batch->front().language;
    for (const auto& s : *batch) {
      if (s.language != lang) throw InputError("backtranslate: mixed languages in a monolingual batch");
    }
    const std::string target = other_language(vocab, lang);
    std::vector<TokenSequence> translated;
    if (hooks && hooks->translate) {
      translated = hooks->translate(*batch, target);
    } else {
      SamplingOptions so = cfg.sampling;
      so.seed = stream(cfg.seed, kBtSample, step * 2 + static_cast<std::uint64_t>(side));
      translated = nucleus_translate(state.forward_model, vocab, *batch, target, so);
    }
    if (translated.size() != batch->size()) throw InputError("backtranslate: translation count mismatch");
    for (std::size_t i = 0; i < batch->size(); ++i) {
      if (translated[i].tokens.empty()) {
        ++stats.skipped_empty;
        continue;
      }
      bt.push_back(make_example(vocab, translated[i], (*batch)[i]));
    }
  }
  if (!b1.empty() && !b2.empty() && b1.front().language == b2.front().language) {
    throw InputError("backtranslate: both batches are in language '" + b1.front().language + "'");
  }
  if (hooks && hooks->after_forward_translation) hooks->after_forward_translation(state);

  stats.bt_examples = static_cast<int>(bt.size());
  stats.replay_examples = static_cast<int>(replay.size());
  const Batch bt_batch = Batch::from_examples(bt);
  const Batch replay_batch = Batch::from_examples(replay);
  if (hooks && hooks->on_batches) hooks->on_batches(bt_batch, replay_batch);

  auto grads = Seq2SeqParams::zeros(state.backward_model.config);
  auto opts = loss_options(cfg, stream(cfg.seed, kBtDropout, step * 2));
  long bt_tokens = 0, replay_tokens = 0;
  stats.bt_loss = loss_and_gradients(state.backward_model, bt_batch, opts, &grads, &bt_tokens);
  if (!replay.empty() && cfg.replay_ratio > 0.0) {
    opts.seed = stream(cfg.seed, kBtDropout, step * 2 + 1);
    opts.weight = cfg.replay_ratio;
    stats.replay_loss = loss_and_gradients(state.backward_model, replay_batch, opts, &grads, &replay_tokens);
  }
  stats.loss = stats.bt_loss + cfg.replay_ratio * stats.replay_loss;
  if (!std::isfinite(stats.loss)) throw NumericError("backtranslate: non-finite loss at step " + std::to_string(step));
  check_finite(grads, "backtranslate step " + std::to_string(step));

  LrSchedule sched = cfg.lr;
  if (sched.total_steps == 0) sched.total_steps = std::max(state.step + 1, sched.warmup_steps + 1);
  stats.lr = lr_at(state.step, sched);
  if (bt_tokens + replay_tokens > 0) {
    stats.grad_norm = state.optimizer.step(state.backward_model, grads, stats.lr, mask);
    stats.updated = true;
  }
  state.skipped_empty += stats.skipped_empty;
  state.replay_consumed += stats.replay_examples;
  ++state.step;
  if (state.sync == SyncPolicy::kOnline) state.forward_model = state.backward_model;
  if (hooks && hooks->after_step) hooks->after_step(state, stats);
  return stats;
}

Checkpoint backtranslate(BacktranslateState& state, const BpeVocab& vocab,
                         const std::vector<std::vector<TokenSequence>>& mono, const ParallelCorpus& supervised,
                         const TrainingConfig& cfg, std::vector<CurvePoint>* curve, const BacktranslateHooks* hooks,
                         const EpochEval& eval) {
  cfg.validate();
  if (mono.size() != 2) throw InputError("backtranslate: expected monolingual corpora for exactly two languages");
  for (const auto& m : mono) {
    if (m.empty()) throw InputError("backtranslate: empty monolingual corpus");
  }
  const auto sup = supervised_examples(vocab, supervised);
  const int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.bt_sentences), mono[0].size()) +
                                 std::min<std::size_t>(static_cast<std::size_t>(cfg.bt_sentences), mono[1].size()));
  const int per_step_replay = replay_count(cfg.replay_ratio, n);
  if (per_step_replay > 0 && sup.empty()) throw ConfigError("replay_ratio > 0 needs a supervised corpus");
  const auto replay_order = shuffled(sup.size(), stream(cfg.seed, kReplayOrder, 0));
  const long spe = cfg.bt_steps_per_epoch > 0
                       ? cfg.bt_steps_per_epoch
                       : static_cast<long>((std::max(mono[0].size(), mono[1].size()) +
                                            static_cast<std::size_t>(cfg.bt_sentences) - 1) /
                                           static_cast<std::size_t>(cfg.bt_sentences));
  const long total = spe * cfg.epochs;
  TrainingConfig local = cfg;
  local.lr = stage_schedule(cfg.lr, total);
  const auto mask = stage_mask(state.backward_model.config, cfg);
  state.sync = cfg.sync;

  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<std::vector<std::size_t>> orders;
    for (std::size_t l = 0; l < 2; ++l) {
      orders.push_back(
          shuffled(mono[l].size(), stream(cfg.seed, kBtOrder, static_cast<std::uint64_t>(e) * 2 + l)));
    }
    for (long k = 0; k < spe; ++k) {
      const long global = static_cast<long>(e) * spe + k;
      if (global < state.step) continue;
      std::vector<TokenSequence> batches[2];
      for (std::size_t l = 0; l < 2; ++l) {
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.bt_sentences), mono[l].size());
        for (std::size_t j = 0; j < take; ++j) {
          const std::size_t pos = (static_cast<std::size_t>(k) * take + j) % mono[l].size();
          batches[l].push_back(mono[l][orders[l][pos]]);
        }
      }
      std::vector<Example> replay;
      for (int j = 0; j < per_step_replay; ++j) {
        replay.push_back(sup[replay_order[static_cast<std::size_t>(state.replay_consumed + j) % sup.size()]]);
      }
      const auto stats = backtranslate_step(state, vocab, batches[0], batches[1], replay, local, mask, hooks);
      if (curve) {
        curve->push_back({"backtranslate", global, e, stats.lr, stats.loss,
                          static_cast<long>(stats.bt_examples + stats.replay_examples), stats.grad_norm, -1.0});
      }
    }
    if (state.sync == SyncPolicy::kPerEpoch) state.forward_model = state.backward_model;
    if (eval) {
      const double bleu = eval(state.backward_model, e);
      if (curve) curve->push_back({"backtranslate-epoch", state.step, e, 0.0, 0.0, 0, 0.0, bleu});
    }
  }
  Checkpoint out;
  out.params = state.backward_model;
  out.stage = "backtranslate";
  out.step = state.step;
  out.optimizer = state.optimizer;
  return out;
}

}  // namespace unitmt
