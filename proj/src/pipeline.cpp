#include "unitmt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace unitmt {

int model_vocab_size(const BpeVocab& vocab) { return vocab.num_tokens(); }

std::vector<TokenSequence> encode_corpus(const BpeVocab& vocab, const std::vector<UnitSequence>& units) {
  std::vector<TokenSequence> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(encode(vocab, u));
  return out;
}

ParallelCorpus encode_parallel(const BpeVocab& vocab, const ParallelUnits& units) {
  if (units.first.size() != units.second.size()) throw InputError("parallel corpus sides differ in length");
  ParallelCorpus out;
  for (std::size_t i = 0; i < units.first.size(); ++i) {
    out.push_back({encode(vocab, units.first[i]), encode(vocab, units.second[i])});
  }
  return out;
}

std::vector<TokenSequence> translate_corpus(const Seq2SeqParams& p, const BpeVocab& vocab,
                                            const std::vector<TokenSequence>& sources,
                                            const std::string& target_language, const BeamOptions& beam) {
  std::vector<TokenSequence> out;
  out.reserve(sources.size());
  for (const auto& s : sources) out.push_back(beam_decode(p, vocab, s, target_language, beam));
  return out;
}

EvalReport evaluate_parallel(const Seq2SeqParams& p, const BpeVocab& vocab, const ParallelCorpus& test,
                             const BeamOptions& beam) {
  std::vector<Sentence> hyps, refs;
  for (int dir = 0; dir < 2; ++dir) {
    for (const auto& pair : test) {
      const auto& src = dir == 0 ? pair.first : pair.second;
      const auto& ref = dir == 0 ? pair.second : pair.first;
      hyps.push_back(beam_decode(p, vocab, src, ref.language, beam).tokens);
      refs.push_back(ref.tokens);
    }
  }
  return evaluate_corpus(hyps, refs);
}

std::array<bool, 4> ablation_orderings(const AblationRun& r, double bt_only_fraction) {
  return {r.g > r.f, r.k < r.f, r.j < bt_only_fraction * r.f, r.h < r.f};
}

AblationRun run_ablation_seed(const AblationConfig& cfg, const SeedTriple& seeds, const Logger& log) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (!log) return;
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "[%7.1fs] ", el);
    log(buf + s);
  };
  AblationRun run;
  run.seeds = seeds;

  BenchmarkSpec bs = cfg.benchmark;
  bs.seed = seeds.data;
  bs.cipher.seed = seeds.data;
  const Benchmark bench = make_benchmark(bs);
  std::vector<UnitSequence> all = bench.mono_first;
  all.insert(all.end(), bench.mono_second.begin(), bench.mono_second.end());
  const BpeVocab vocab =
      train_bpe(all, cfg.bpe_vocab_size, {bench.cipher.first_language, bench.cipher.second_language});
  const std::vector<std::vector<TokenSequence>> mono{encode_corpus(vocab, bench.mono_first),
                                                     encode_corpus(vocab, bench.mono_second)};
  const ParallelCorpus train = encode_parallel(vocab, bench.train);
  const ParallelCorpus test = encode_parallel(vocab, bench.test);
  say("data ready: vocab " + std::to_string(vocab.num_tokens()) + " tokens");

  ModelConfig mc = cfg.model;
  mc.vocab_size = model_vocab_size(vocab);
  Checkpoint init;
  init.params = Seq2SeqParams::initialize(mc, seeds.init);

  auto with_seed = [&](TrainingConfig c, std::uint64_t salt) {
    c.seed = derive_seed(seeds.train, salt);
    return c;
  };
  auto score = [&](const Seq2SeqParams& p) { return evaluate_parallel(p, vocab, test, cfg.beam).corpus.bleu; };

  const Checkpoint pre = pretrain(init, vocab, mono, with_seed(cfg.pretrain, 1));
  say("pretrained");
  const Checkpoint fin = finetune(pre, vocab, train, with_seed(cfg.finetune, 2));
  run.f = score(fin.params);
  say("row f (pretrain+finetune) BLEU " + std::to_string(run.f));

  const Checkpoint scratch = finetune(init, vocab, train, with_seed(cfg.finetune, 2));
  run.h = score(scratch.params);
  say("row h (finetune, no pretrain) BLEU " + std::to_string(run.h));

  auto bt = [&](const Checkpoint& from, double ratio, const ParallelCorpus& sup) {
    TrainingConfig c = with_seed(cfg.backtranslate, 3);
    c.replay_ratio = ratio;
    auto state = BacktranslateState::from(from.params, c);
    return backtranslate(state, vocab, mono, sup, c).params;
  };
  run.g = score(bt(fin, cfg.backtranslate.replay_ratio, train));
  say("row g (+BT with replay) BLEU " + std::to_string(run.g));
  run.k = score(bt(fin, 0.0, train));
  say("row k (+BT without replay) BLEU " + std::to_string(run.k));
  run.j = score(bt(pre, 0.0, {}));
  say("row j (pretrain+BT only) BLEU " + std::to_string(run.j));
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

AblationConfig default_ablation_config() {
  AblationConfig c;
  c.benchmark.mono_size = 5000;
  c.benchmark.parallel_size = 200;
  c.benchmark.test_size = 200;
  c.benchmark.cipher.length_noise = 0.05;
  c.bpe_vocab_size = 260;

  c.model.embed_dim = 64;
  c.model.ffn_dim = 128;
  c.model.num_heads = 4;
  c.model.num_encoder_layers = 2;
  c.model.num_decoder_layers = 2;
  c.model.max_positions = 64;
  c.model.dropout_rate = 0.1;

  LrSchedule lr;
  lr.floor = 1e-5;
  lr.peak = 3e-3;
  lr.final_lr = 3e-4;
  lr.warmup_steps = 100;

  c.pretrain.lr = lr;
  c.pretrain.steps = 2000;
  c.pretrain.tokens_per_batch = 512;
  c.pretrain.dropout = 0.1;

  c.finetune.lr = lr;
  c.finetune.epochs = 40;
  c.finetune.tokens_per_batch = 256;
  c.finetune.dropout = 0.1;

  c.backtranslate.lr = lr;
  c.backtranslate.lr.peak = 1e-3;
  c.backtranslate.lr.final_lr = 1e-4;
  c.backtranslate.lr.warmup_steps = 10;
  c.backtranslate.epochs = 3;
  c.backtranslate.bt_steps_per_epoch = 100;
  c.backtranslate.bt_sentences = 32;
  c.backtranslate.replay_ratio = 0.5;
  c.backtranslate.dropout = 0.1;
  c.backtranslate.sampling = {0.9, 0.5, 40, 0};

  c.beam = {10, 40, 1.0};
  return c;
}

AblationReport run_ablation(const AblationConfig& cfg, const Logger& log) {
  AblationReport rep;
  rep.required = cfg.required_wins;
  rep.bt_only_fraction = cfg.bt_only_fraction;
  rep.runs.resize(cfg.seeds.size());
  std::size_t threads = cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cfg.seeds.size());
  std::mutex mu;
  Logger safe_log;
  if (log) {
    safe_log = [&](const std::string& m) {
      std::lock_guard<std::mutex> lock(mu);
      log(m);
    };
  }
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < cfg.seeds.size(); i += threads) {
      const auto& s = cfg.seeds[i];
      const std::string tag =
          "seeds " + std::to_string(s.data) + "/" + std::to_string(s.init) + "/" + std::to_string(s.train) + " ";
      try {
        rep.runs[i] = run_ablation_seed(cfg, s, safe_log ? Logger([&, tag](const std::string& m) { safe_log(tag + m); })
                                                         : Logger{});
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const auto& run : rep.runs) {
    const auto ok = ablation_orderings(run, cfg.bt_only_fraction);
    for (std::size_t i = 0; i < 4; ++i) rep.wins[i] += ok[i] ? 1 : 0;
  }
  return rep;
}

void write_ablation_csv(std::ostream& os, const AblationReport& r) {
  os << "data_seed,init_seed,train_seed,f,g,h,j,k,a_g_gt_f,b_k_lt_f,c_j_small,d_h_lt_f,seconds\n";
  for (const auto& run : r.runs) {
    const auto ok = ablation_orderings(run, r.bt_only_fraction);
    os << run.seeds.data << ',' << run.seeds.init << ',' << run.seeds.train << ',' << run.f << ',' << run.g << ','
       << run.h << ',' << run.j << ',' << run.k << ',' << ok[0] << ',' << ok[1] << ',' << ok[2] << ',' << ok[3] << ','
       << run.seconds << '\n';
  }
}

}  // namespace unitmt
