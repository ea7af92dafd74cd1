#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>

#include "manifest.hpp"
#include "unitmt/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unitmt;
using unitmt::cli::Manifest;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string manifest_path;
};

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open input '" + path + "'");
  return is;
}

void require_inputs(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (!fs::is_regular_file(p)) throw InputError("input file '" + p + "' does not exist");
  }
}

// Writes through a temporary file so a failed run never leaves half an output.
void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw InputError("cannot write '" + path + "'");
    body(os);
    os.flush();
    if (!os) throw InputError("write failed for '" + path + "'");
  }
  fs::rename(tmp, path);
}

std::pair<std::string, std::string> lang_path(const std::string& s, const std::string& flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw ConfigError("--" + flag + " expects LANG=PATH, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<UnitSequence> read_units(const std::string& path, const std::string& language) {
  auto is = open_in(path);
  return read_unit_corpus(is, language);
}

BpeVocab read_vocab_file(const std::string& path) {
  auto is = open_in(path);
  return read_vocab(is);
}

Checkpoint read_ckpt(const std::string& path, const BpeVocab& vocab) {
  Checkpoint c = load_checkpoint(path);
  if (c.params.config.vocab_size != model_vocab_size(vocab)) {
    throw InputError("checkpoint '" + path + "' has vocab size " + std::to_string(c.params.config.vocab_size) +
                     " but the vocabulary has " + std::to_string(model_vocab_size(vocab)) + " tokens");
  }
  return c;
}

void write_ckpt(const std::string& path, const Checkpoint& c) {
  write_file(path, [&](std::ostream& os) { write_checkpoint(os, c); });
}

void write_curve(const std::string& path, const std::vector<CurvePoint>& curve) {
  if (path.empty()) return;
  write_file(path, [&](std::ostream& os) { write_curve_csv(os, curve); });
}

class Runner {
 public:
  Runner(std::string command, std::vector<std::string> argv, const Common& common)
      : common_(common) {
    man_.command = std::move(command);
    man_.argv = std::move(argv);
    man_.started_at = cli::utc_now();
  }

  // defaults < config file < --set < dedicated flags
  void configure(const std::vector<std::string>& sugar) {
    std::string path = common_.config_path;
    if (path.empty()) {
      if (const char* dir = std::getenv("UNITMT_CONFIG_DIR")) {
        const fs::path p = fs::path(dir) / "default.json";
        if (fs::exists(p)) path = p.string();
      }
    }
    json j = json::object();
    if (!path.empty()) {
      auto is = open_in(path);
      try {
        is >> j;
      } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
      }
      man_.config_path = path;
      man_.inputs.push_back(path);
    }
    for (const auto& s : common_.sets) apply_override(j, s);
    for (const auto& s : sugar) apply_override(j, s);
    cfg_ = merge_run_config(default_run_config(), j);
    man_.config = to_json(cfg_);
  }

  const RunConfig& cfg() const { return cfg_; }
  Manifest& manifest() { return man_; }

  void inputs(const std::vector<std::string>& paths) {
    require_inputs(paths);
    man_.inputs.insert(man_.inputs.end(), paths.begin(), paths.end());
  }
  void output(const std::string& path) { man_.outputs.push_back(path); }

  void finish(const std::string& default_manifest) {
    const std::string path = common_.manifest_path.empty() ? default_manifest : common_.manifest_path;
    man_.write(path);
    std::cerr << man_.command << ": wrote " << man_.outputs.size() << " output(s), manifest " << path << '\n';
  }

 private:
  Common common_;
  RunConfig cfg_;
  Manifest man_;
};

template <typename T>
void sugar(std::vector<std::string>& out, const std::optional<T>& v, const std::string& key) {
  if (v) out.push_back(key + "=" + json(*v).dump());
}

json seeds_of(const TrainingConfig& t) { return t.seed; }

struct Corpora {
  std::vector<std::string> languages;
  std::vector<std::vector<UnitSequence>> units;
  std::vector<std::string> paths;
};

Corpora load_corpora(Runner& r, const std::vector<std::string>& specs, const std::string& flag) {
  Corpora c;
  for (const auto& s : specs) {
    auto [lang, path] = lang_path(s, flag);
    c.languages.push_back(lang);
    c.paths.push_back(path);
  }
  r.inputs(c.paths);
  for (std::size_t i = 0; i < c.paths.size(); ++i) c.units.push_back(read_units(c.paths[i], c.languages[i]));
  return c;
}

ParallelCorpus load_parallel(Runner& r, const BpeVocab& vocab, const std::vector<std::string>& specs) {
  if (specs.empty()) return {};
  if (specs.size() != 2) throw ConfigError("--parallel needs exactly two LANG=PATH values");
  auto c = load_corpora(r, specs, "parallel");
  if (c.units[0].size() != c.units[1].size()) {
    throw InputError("parallel files '" + c.paths[0] + "' and '" + c.paths[1] + "' differ in line count");
  }
  return encode_parallel(vocab, ParallelUnits{c.units[0], c.units[1]});
}

std::vector<std::vector<TokenSequence>> load_mono(Runner& r, const BpeVocab& vocab,
                                                  const std::vector<std::string>& specs) {
  auto c = load_corpora(r, specs, "mono");
  std::vector<std::vector<TokenSequence>> out;
  for (const auto& u : c.units) out.push_back(encode_corpus(vocab, u));
  return out;
}

// ---- subcommands ----

struct SynthArgs {
  std::string out = "corpus";
  std::optional<std::uint64_t> seed;
};

void cmd_synth(Runner& r, const SynthArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.seed, "synth.seed");
  r.configure(s);
  const auto& sc = r.cfg().synth;
  const Benchmark b = make_benchmark(sc.benchmark);
  const std::string l1 = b.cipher.first_language, l2 = b.cipher.second_language;
  const fs::path dir(a.out);
  auto put = [&](const std::string& name, const std::function<void(std::ostream&)>& body) {
    const std::string p = (dir / name).string();
    write_file(p, body);
    r.output(p);
  };
  auto units = [&](const std::vector<UnitSequence>& u) { return [&u](std::ostream& os) { write_unit_corpus(os, u); }; };
  put("cipher.json", [&](std::ostream& os) { write_cipher_spec(os, b.cipher); });
  put("mono." + l1 + ".units", units(b.mono_first));
  put("mono." + l2 + ".units", units(b.mono_second));
  put("train." + l1 + ".units", units(b.train.first));
  put("train." + l2 + ".units", units(b.train.second));
  put("test." + l1 + ".units", units(b.test.first));
  put("test." + l2 + ".units", units(b.test.second));

  std::vector<FeatureMatrix> feats;
  std::vector<PhoneAlignment> phones;
  const int n = std::min<int>(sc.feature_utterances, static_cast<int>(b.mono_first.size()));
  for (int i = 0; i < n; ++i) {
    auto f = generate_features(b.cipher, b.mono_first[static_cast<std::size_t>(i)],
                               derive_seed(sc.feature_seed, static_cast<std::uint64_t>(i)));
    f.features.source_id = "mono." + l1 + "." + std::to_string(i);
    feats.push_back(std::move(f.features));
    phones.push_back(std::move(f.phones));
  }
  put("features.txt", [&](std::ostream& os) { write_features(os, feats); });
  put("phones.txt", [&](std::ostream& os) { write_phone_alignments(os, phones); });
  r.manifest().seeds = {{"synth", sc.benchmark.seed}, {"cipher", sc.benchmark.cipher.seed},
                        {"features", sc.feature_seed}};
  r.finish((dir / "manifest.json").string());
}

struct QuantizeArgs {
  std::string features, phones, codebook_out, units_out, language;
  std::optional<int> k;
  std::optional<std::uint64_t> seed;
};

void cmd_quantize(Runner& r, const QuantizeArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.k, "quantize.k");
  sugar(s, a.seed, "quantize.seed");
  r.configure(s);
  r.inputs({a.features});
  if (!a.phones.empty()) r.inputs({a.phones});
  const auto& q = r.cfg().quantize;
  auto fis = open_in(a.features);
  const auto feats = read_features(fis);
  const Codebook cb = train_kmeans(feats, {q.k, q.seed, q.max_iters, q.tol});
  std::vector<UnitSequence> raw, units;
  for (const auto& f : feats) {
    auto u = assign_units(f, cb);
    u.language = a.language;
    raw.push_back(u);
    units.push_back(q.run_length ? run_length_encode(u) : u);
  }
  write_file(a.codebook_out, [&](std::ostream& os) { write_codebook(os, cb); });
  write_file(a.units_out, [&](std::ostream& os) { write_unit_corpus(os, units); });
  r.output(a.codebook_out);
  r.output(a.units_out);
  r.manifest().metrics["distortion"] = cb.distortion;
  if (!a.phones.empty()) {
    auto pis = open_in(a.phones);
    const double v = pnmi(raw, read_phone_alignments(pis));
    r.manifest().metrics["pnmi"] = v;
    std::cout << "pnmi " << v << '\n';
  }
  r.manifest().seeds = {{"quantize", q.seed}};
  r.finish(a.codebook_out + ".manifest.json");
}

struct SweepArgs {
  std::vector<std::string> features;
  std::string phones, out;
  std::optional<std::uint64_t> seed;
};

void cmd_sweep(Runner& r, const SweepArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.seed, "pnmi_sweep.seed");
  r.configure(s);
  r.inputs(a.features);
  r.inputs({a.phones});
  const auto& sw = r.cfg().pnmi_sweep;
  std::vector<LayerFeatures> layers;
  std::set<int> seen;
  for (const auto& path : a.features) {
    auto is = open_in(path);
    LayerFeatures lf;
    lf.utterances = read_features(is);
    if (lf.utterances.empty()) throw InputError("features file '" + path + "' is empty");
    lf.layer = lf.utterances.front().layer_index;
    if (!seen.insert(lf.layer).second) throw InputError("two feature files carry layer " + std::to_string(lf.layer));
    layers.push_back(std::move(lf));
  }
  auto pis = open_in(a.phones);
  const auto phones = read_phone_alignments(pis);
  std::vector<SweepCandidate> cands;
  for (const auto& lf : layers) {
    for (int k : sw.ks) cands.push_back({lf.layer, k});
  }
  const auto rep = pnmi_sweep(cands, layers, phones, sw.seed, sw.max_iters, sw.tol);
  json ranked = json::array();
  for (const auto& e : rep.ranked) {
    ranked.push_back({{"layer", e.candidate.layer}, {"k", e.candidate.k}, {"pnmi", e.pnmi}, {"distortion", e.distortion}});
  }
  const json out = {{"ranked", ranked}, {"selected", {{"layer", rep.selected.layer}, {"k", rep.selected.k}}}};
  write_file(a.out, [&](std::ostream& os) { os << out.dump(2) << '\n'; });
  r.output(a.out);
  r.manifest().metrics["selected"] = out["selected"];
  r.manifest().seeds = {{"pnmi_sweep", sw.seed}};
  r.finish(a.out + ".manifest.json");
}

struct BpeArgs {
  std::vector<std::string> corpus;
  std::string out;
  std::optional<int> vocab_size;
};

void cmd_bpe(Runner& r, const BpeArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.vocab_size, "bpe.vocab_size");
  r.configure(s);
  auto c = load_corpora(r, a.corpus, "corpus");
  std::vector<std::string> langs;
  std::vector<UnitSequence> all;
  for (std::size_t i = 0; i < c.units.size(); ++i) {
    if (std::find(langs.begin(), langs.end(), c.languages[i]) == langs.end()) langs.push_back(c.languages[i]);
    all.insert(all.end(), c.units[i].begin(), c.units[i].end());
  }
  const BpeVocab v = train_bpe(all, r.cfg().bpe_vocab_size, langs);
  write_file(a.out, [&](std::ostream& os) { write_vocab(os, v); });
  r.output(a.out);
  r.manifest().metrics["num_tokens"] = v.num_tokens();
  r.finish(a.out + ".manifest.json");
}

struct TrainArgs {
  std::string vocab, init, out, curve;
  std::vector<std::string> mono, parallel;
  std::optional<long> steps;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
};

Checkpoint initial_checkpoint(Runner& r, const TrainArgs& a, const BpeVocab& vocab) {
  if (!a.init.empty()) return read_ckpt(a.init, vocab);
  ModelConfig mc = r.cfg().model;
  mc.vocab_size = model_vocab_size(vocab);
  Checkpoint c;
  c.params = Seq2SeqParams::initialize(mc, r.cfg().init_seed);
  r.manifest().seeds["init"] = r.cfg().init_seed;
  return c;
}

void cmd_pretrain(Runner& r, const TrainArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.steps, "pretrain.steps");
  sugar(s, a.seed, "pretrain.seed");
  r.configure(s);
  r.inputs({a.vocab});
  if (!a.init.empty()) r.inputs({a.init});
  const BpeVocab vocab = read_vocab_file(a.vocab);
  const auto mono = load_mono(r, vocab, a.mono);
  Checkpoint c = initial_checkpoint(r, a, vocab);
  std::vector<CurvePoint> curve;
  c = pretrain(std::move(c), vocab, mono, r.cfg().pretrain, &curve);
  write_ckpt(a.out, c);
  r.output(a.out);
  write_curve(a.curve, curve);
  if (!a.curve.empty()) r.output(a.curve);
  if (!curve.empty()) r.manifest().metrics["final_loss"] = curve.back().loss;
  r.manifest().seeds["train"] = seeds_of(r.cfg().pretrain);
  r.finish(a.out + ".manifest.json");
}

void cmd_finetune(Runner& r, const TrainArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.epochs, "finetune.epochs");
  sugar(s, a.seed, "finetune.seed");
  r.configure(s);
  r.inputs({a.vocab, a.init});
  const BpeVocab vocab = read_vocab_file(a.vocab);
  if (a.parallel.size() != 2) throw ConfigError("--parallel needs exactly two LANG=PATH values");
  const auto par = load_parallel(r, vocab, a.parallel);
  std::vector<CurvePoint> curve;
  const Checkpoint c = finetune(read_ckpt(a.init, vocab), vocab, par, r.cfg().finetune, &curve);
  write_ckpt(a.out, c);
  r.output(a.out);
  write_curve(a.curve, curve);
  if (!a.curve.empty()) r.output(a.curve);
  if (!curve.empty()) r.manifest().metrics["final_loss"] = curve.back().loss;
  r.manifest().seeds["train"] = seeds_of(r.cfg().finetune);
  r.finish(a.out + ".manifest.json");
}

void cmd_backtranslate(Runner& r, const TrainArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.epochs, "backtranslate.epochs");
  sugar(s, a.seed, "backtranslate.seed");
  r.configure(s);
  r.inputs({a.vocab, a.init});
  const BpeVocab vocab = read_vocab_file(a.vocab);
  const auto mono = load_mono(r, vocab, a.mono);
  if (mono.size() != 2) throw ConfigError("--mono needs exactly two LANG=PATH values");
  const auto par = load_parallel(r, vocab, a.parallel);
  const auto& cfg = r.cfg().backtranslate;
  const Checkpoint init = read_ckpt(a.init, vocab);
  auto state = BacktranslateState::from(init.params, cfg);
  if (init.stage == "backtranslate" && init.optimizer) {
    // resume: replay consumption is a fixed number per step
    state.optimizer = *init.optimizer;
    state.step = init.step;
    const int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.bt_sentences), mono[0].size()) +
                                   std::min<std::size_t>(static_cast<std::size_t>(cfg.bt_sentences), mono[1].size()));
    state.replay_consumed = init.step * replay_count(cfg.replay_ratio, n);
  }
  std::vector<CurvePoint> curve;
  const Checkpoint c = backtranslate(state, vocab, mono, par, cfg, &curve);
  write_ckpt(a.out, c);
  r.output(a.out);
  write_curve(a.curve, curve);
  if (!a.curve.empty()) r.output(a.curve);
  r.manifest().metrics["skipped_empty"] = state.skipped_empty;
  r.manifest().metrics["replay_consumed"] = state.replay_consumed;
  r.manifest().seeds["train"] = seeds_of(cfg);
  r.finish(a.out + ".manifest.json");
}

struct TranslateArgs {
  std::string vocab, checkpoint, input, source_lang, target_lang, out;
};

void cmd_translate(Runner& r, const TranslateArgs& a) {
  r.configure({});
  r.inputs({a.vocab, a.checkpoint, a.input});
  const BpeVocab vocab = read_vocab_file(a.vocab);
  vocab.language_token(a.target_lang);
  const Checkpoint c = read_ckpt(a.checkpoint, vocab);
  const auto src = encode_corpus(vocab, read_units(a.input, a.source_lang));
  std::vector<UnitSequence> out;
  for (const auto& t : translate_corpus(c.params, vocab, src, a.target_lang, r.cfg().beam)) {
    out.push_back(decode(vocab, t));
  }
  write_file(a.out, [&](std::ostream& os) { write_unit_corpus(os, out); });
  r.output(a.out);
  r.finish(a.out + ".manifest.json");
}

struct EvaluateArgs {
  std::string hyp, ref, vocab, checkpoint, out, csv;
  std::vector<std::string> test;
};

void cmd_evaluate(Runner& r, const EvaluateArgs& a) {
  r.configure({});
  EvalReport rep;
  if (!a.hyp.empty() || !a.ref.empty()) {
    if (a.hyp.empty() || a.ref.empty()) throw ConfigError("--hyp and --ref go together");
    if (!a.checkpoint.empty()) throw ConfigError("use either --hyp/--ref or --checkpoint, not both");
    r.inputs({a.hyp, a.ref});
    std::vector<Sentence> hyps, refs;
    for (auto& u : read_units(a.hyp, "")) hyps.push_back(std::move(u.units));
    for (auto& u : read_units(a.ref, "")) refs.push_back(std::move(u.units));
    rep = evaluate_corpus(hyps, refs);
  } else {
    if (a.checkpoint.empty() || a.vocab.empty() || a.test.size() != 2) {
      throw ConfigError("evaluate needs --hyp/--ref or --checkpoint, --vocab and two --test LANG=PATH values");
    }
    r.inputs({a.vocab, a.checkpoint});
    const BpeVocab vocab = read_vocab_file(a.vocab);
    const auto test = load_parallel(r, vocab, a.test);
    rep = evaluate_parallel(read_ckpt(a.checkpoint, vocab).params, vocab, test, r.cfg().beam);
  }
  write_file(a.out, [&](std::ostream& os) { write_eval_report_json(os, rep); });
  r.output(a.out);
  if (!a.csv.empty()) {
    write_file(a.csv, [&](std::ostream& os) { write_eval_report_csv(os, rep); });
    r.output(a.csv);
  }
  r.manifest().metrics["bleu"] = rep.corpus.bleu;
  std::cout << "BLEU " << rep.corpus.bleu << '\n';
  r.finish(a.out + ".manifest.json");
}

struct AblationArgs {
  std::string out = "ablation";
  std::optional<int> threads;
};

void cmd_ablation(Runner& r, const AblationArgs& a) {
  std::vector<std::string> s;
  sugar(s, a.threads, "ablation.threads");
  r.configure(s);
  const auto rep = run_ablation(ablation_config(r.cfg()), [](const std::string& m) { std::cerr << m << '\n'; });
  const fs::path dir(a.out);
  const std::string csv = (dir / "ablation.csv").string();
  const std::string js = (dir / "ablation.json").string();
  write_file(csv, [&](std::ostream& os) { write_ablation_csv(os, rep); });
  json runs = json::array();
  json seeds = json::array();
  for (const auto& x : rep.runs) {
    runs.push_back({{"seeds", {x.seeds.data, x.seeds.init, x.seeds.train}},
                    {"f", x.f}, {"g", x.g}, {"h", x.h}, {"j", x.j}, {"k", x.k}, {"seconds", x.seconds}});
    seeds.push_back({x.seeds.data, x.seeds.init, x.seeds.train});
  }
  json orderings = json::object();
  const char* names[4] = {"a", "b", "c", "d"};
  for (int i = 0; i < 4; ++i) {
    orderings[names[i]] = {{"wins", rep.wins[static_cast<std::size_t>(i)]}, {"holds", rep.holds(i)}};
  }
  const json out = {{"runs", runs}, {"orderings", orderings}, {"required_wins", rep.required},
                    {"bt_only_fraction", rep.bt_only_fraction}};
  write_file(js, [&](std::ostream& os) { os << out.dump(2) << '\n'; });
  r.output(csv);
  r.output(js);
  r.manifest().metrics = out["orderings"];
  r.manifest().seeds = seeds;
  r.finish((dir / "manifest.json").string());
}

int run(const std::vector<std::string>& args);

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"unitmt: textless unit-to-unit translation pipeline"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Common common;
  std::string resume;
  app.add_option("--config", common.config_path, "JSON config file (default: $UNITMT_CONFIG_DIR/default.json)");
  app.add_option("--set", common.sets, "Override a config key, e.g. --set pretrain.lr.peak=1e-3")->take_all();
  app.add_option("--manifest", common.manifest_path, "Manifest output path");
  app.add_option("--resume", resume, "Verify a manifest's input hashes and rerun its command");
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the effective config (defaults, file, --set) and exit");

  std::function<void(Runner&)> action;
  auto sub = [&](const std::string& name, const std::string& help) { return app.add_subcommand(name, help); };

  SynthArgs synth;
  auto* c = sub("synth-corpus", "Generate the synthetic cipher benchmark, features and phone labels");
  c->add_option("--out", synth.out, "Output directory");
  c->add_option("--seed", synth.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_synth(r, synth); }; });

  QuantizeArgs quant;
  c = sub("quantize", "Fit a k-means codebook and write unit sequences");
  c->add_option("--features", quant.features)->required();
  c->add_option("--phones", quant.phones, "Phone labels; reports PNMI when given");
  c->add_option("--codebook-out", quant.codebook_out)->required();
  c->add_option("--units-out", quant.units_out)->required();
  c->add_option("--language", quant.language);
  c->add_option("--k", quant.k);
  c->add_option("--seed", quant.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_quantize(r, quant); }; });

  SweepArgs sweep;
  c = sub("pnmi-sweep", "Rank (layer, k) candidates by PNMI");
  c->add_option("--features", sweep.features, "One features file per layer")->required();
  c->add_option("--phones", sweep.phones)->required();
  c->add_option("--out", sweep.out)->required();
  c->add_option("--seed", sweep.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_sweep(r, sweep); }; });

  BpeArgs bpe;
  c = sub("train-bpe", "Learn a joint BPE vocabulary over unit corpora");
  c->add_option("--corpus", bpe.corpus, "LANG=PATH, repeatable")->required();
  c->add_option("--out", bpe.out)->required();
  c->add_option("--vocab-size", bpe.vocab_size);
  c->callback([&] { action = [&](Runner& r) { cmd_bpe(r, bpe); }; });

  TrainArgs pre;
  c = sub("pretrain", "Denoising pretraining on monolingual units");
  c->add_option("--vocab", pre.vocab)->required();
  c->add_option("--mono", pre.mono, "LANG=PATH, repeatable")->required();
  c->add_option("--init", pre.init, "Start or resume from this checkpoint");
  c->add_option("--out", pre.out)->required();
  c->add_option("--curve", pre.curve, "Loss curve CSV");
  c->add_option("--steps", pre.steps);
  c->add_option("--seed", pre.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_pretrain(r, pre); }; });

  TrainArgs fin;
  c = sub("finetune", "Supervised finetuning in both directions");
  c->add_option("--vocab", fin.vocab)->required();
  c->add_option("--parallel", fin.parallel, "Two LANG=PATH values, line-aligned")->required();
  c->add_option("--init", fin.init)->required();
  c->add_option("--out", fin.out)->required();
  c->add_option("--curve", fin.curve);
  c->add_option("--epochs", fin.epochs);
  c->add_option("--seed", fin.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_finetune(r, fin); }; });

  TrainArgs bt;
  c = sub("backtranslate", "Online backtranslation with supervised replay");
  c->add_option("--vocab", bt.vocab)->required();
  c->add_option("--mono", bt.mono, "Two LANG=PATH values")->required();
  c->add_option("--parallel", bt.parallel, "Two LANG=PATH values for replay");
  c->add_option("--init", bt.init, "Finetuned checkpoint, or a backtranslate checkpoint to resume")->required();
  c->add_option("--out", bt.out)->required();
  c->add_option("--curve", bt.curve);
  c->add_option("--epochs", bt.epochs);
  c->add_option("--seed", bt.seed);
  c->callback([&] { action = [&](Runner& r) { cmd_backtranslate(r, bt); }; });

  TranslateArgs tr;
  c = sub("translate", "Beam-search translation of a unit file");
  c->add_option("--vocab", tr.vocab)->required();
  c->add_option("--checkpoint", tr.checkpoint)->required();
  c->add_option("--input", tr.input)->required();
  c->add_option("--source-lang", tr.source_lang)->required();
  c->add_option("--target-lang", tr.target_lang)->required();
  c->add_option("--out", tr.out)->required();
  c->callback([&] { action = [&](Runner& r) { cmd_translate(r, tr); }; });

  EvaluateArgs ev;
  c = sub("evaluate", "Corpus BLEU with length buckets");
  c->add_option("--hyp", ev.hyp, "Hypothesis unit file");
  c->add_option("--ref", ev.ref, "Reference unit file");
  c->add_option("--checkpoint", ev.checkpoint, "Decode the test set with this checkpoint instead");
  c->add_option("--vocab", ev.vocab);
  c->add_option("--test", ev.test, "Two LANG=PATH values");
  c->add_option("--out", ev.out)->required();
  c->add_option("--csv", ev.csv);
  c->callback([&] { action = [&](Runner& r) { cmd_evaluate(r, ev); }; });

  AblationArgs ab;
  c = sub("ablation-suite", "Rows f, g, h, j, k over the configured seed triples");
  c->add_option("--out", ab.out, "Output directory");
  c->add_option("--threads", ab.threads);
  c->callback([&] { action = [&](Runner& r) { cmd_ablation(r, ab); }; });

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (!resume.empty()) {
    if (action) throw ConfigError("--resume takes no subcommand");
    const json m = cli::verify_manifest(resume);
    std::vector<std::string> again{args.front()};
    const auto recorded = m["argv"].get<std::vector<std::string>>();
    again.insert(again.end(), recorded.begin() + 1, recorded.end());
    std::cerr << "resume: inputs verified, rerunning " << m.value("command", std::string("?")) << '\n';
    return run(again);
  }
  if (print_config) {
    Runner r("print-config", args, common);
    r.configure({});
    std::cout << to_json(r.cfg()).dump(2) << '\n';
    return 0;
  }
  if (!action) {
    std::cout << app.help();
    return 2;
  }
  Runner runner(app.get_subcommands().front()->get_name(), args, common);
  action(runner);
  return 0;
}

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kConfig: return 2;
      case ErrorKind::kInput: return 3;
      case ErrorKind::kNumeric: return 4;
    }
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }
