#include "unitmt/config.hpp"

#include <fstream>
#include <set>

namespace unitmt {

using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    T v{};
    try {
      v = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
    out = v;
  }

  // Calls f(sub-section) when the key is present.
  template <typename F>
  void sub(const char* key, F&& f) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, name(key));
    f(s);
    s.finish();
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + name(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json noise_json(const NoiseConfig& n) { return {{"lambda", n.lambda}, {"mask_ratio", n.mask_ratio}}; }

void read_noise(Section& s, NoiseConfig& n) {
  s.get("lambda", n.lambda);
  s.get("mask_ratio", n.mask_ratio);
}

json training_json(const TrainingConfig& t) {
  json lr = {{"floor", t.lr.floor},
             {"peak", t.lr.peak},
             {"final", t.lr.final_lr},
             {"warmup_steps", t.lr.warmup_steps},
             {"total_steps", t.lr.total_steps},
             {"decay", t.lr.decay ? json(*t.lr.decay) : json(nullptr)}};
  json curriculum = json::array();
  for (const auto& st : t.curriculum) {
    curriculum.push_back({{"lambda", st.noise.lambda}, {"mask_ratio", st.noise.mask_ratio}, {"steps", st.steps}});
  }
  return {{"steps", t.steps},
          {"epochs", t.epochs},
          {"tokens_per_batch", t.tokens_per_batch},
          {"lr", lr},
          {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}, {"clip_norm", t.adam.clip_norm}}},
          {"label_smoothing", t.label_smoothing},
          {"dropout", t.dropout},
          {"noise", noise_json(t.noise)},
          {"curriculum", curriculum},
          {"trainable_last_layers", t.trainable_last_layers ? json(*t.trainable_last_layers) : json(nullptr)},
          {"replay_ratio", t.replay_ratio},
          {"sync", t.sync == SyncPolicy::kOnline ? "online" : "per-epoch"},
          {"bt_sentences", t.bt_sentences},
          {"bt_steps_per_epoch", t.bt_steps_per_epoch},
          {"sampling", {{"top_p", t.sampling.top_p}, {"temperature", t.sampling.temperature}, {"max_len", t.sampling.max_len}}},
          {"seed", t.seed}};
}

void read_training(Section& s, TrainingConfig& t) {
  s.get("steps", t.steps);
  s.get("epochs", t.epochs);
  s.get("tokens_per_batch", t.tokens_per_batch);
  s.sub("lr", [&](Section& l) {
    l.get("floor", t.lr.floor);
    l.get("peak", t.lr.peak);
    l.get("final", t.lr.final_lr);
    l.get("warmup_steps", t.lr.warmup_steps);
    l.get("total_steps", t.lr.total_steps);
    l.get_optional("decay", t.lr.decay);
  });
  s.sub("adam", [&](Section& a) {
    a.get("beta1", t.adam.beta1);
    a.get("beta2", t.adam.beta2);
    a.get("eps", t.adam.eps);
    a.get("clip_norm", t.adam.clip_norm);
  });
  s.get("label_smoothing", t.label_smoothing);
  s.get("dropout", t.dropout);
  s.sub("noise", [&](Section& n) { read_noise(n, t.noise); });
  if (const json* c = s.raw("curriculum")) {
    if (!c->is_array()) throw ConfigError("config key '" + s.name("curriculum") + "' must be an array");
    t.curriculum.clear();
    for (std::size_t i = 0; i < c->size(); ++i) {
      Section st((*c)[i], s.name("curriculum") + "[" + std::to_string(i) + "]");
      NoiseStage stage;
      stage.noise = t.noise;
      read_noise(st, stage.noise);
      st.get("steps", stage.steps);
      st.finish();
      t.curriculum.push_back(stage);
    }
  }
  s.get_optional("trainable_last_layers", t.trainable_last_layers);
  s.get("replay_ratio", t.replay_ratio);
  if (const json* sync = s.raw("sync")) {
    const std::string v = sync->is_string() ? sync->get<std::string>() : "";
    if (v == "online") {
      t.sync = SyncPolicy::kOnline;
    } else if (v == "per-epoch") {
      t.sync = SyncPolicy::kPerEpoch;
    } else {
      throw ConfigError("config key '" + s.name("sync") + "' must be \"online\" or \"per-epoch\"");
    }
  }
  s.get("bt_sentences", t.bt_sentences);
  s.get("bt_steps_per_epoch", t.bt_steps_per_epoch);
  s.sub("sampling", [&](Section& p) {
    p.get("top_p", t.sampling.top_p);
    p.get("temperature", t.sampling.temperature);
    p.get("max_len", t.sampling.max_len);
  });
  s.get("seed", t.seed);
}

json cipher_json(const CipherSpec& c) {
  json j = {{"vocab_size", c.vocab_size},
            {"reorder_window", c.reorder_window},
            {"length_noise", c.length_noise},
            {"successors_per_context", c.successors_per_context},
            {"zipf_exponent", c.zipf_exponent},
            {"phone_inventory", c.phone_inventory},
            {"phone_confusion", c.phone_confusion},
            {"feature_dim", c.feature_dim},
            {"cluster_spread", c.cluster_spread},
            {"max_duration", c.max_duration},
            {"first_language", c.first_language},
            {"second_language", c.second_language},
            {"seed", c.seed}};
  if (!c.permutation.empty()) j["permutation"] = c.permutation;
  return j;
}

void read_cipher(Section& s, CipherSpec& c) {
  s.get("vocab_size", c.vocab_size);
  s.get("permutation", c.permutation);
  s.get("reorder_window", c.reorder_window);
  s.get("length_noise", c.length_noise);
  s.get("successors_per_context", c.successors_per_context);
  s.get("zipf_exponent", c.zipf_exponent);
  s.get("phone_inventory", c.phone_inventory);
  s.get("phone_confusion", c.phone_confusion);
  s.get("feature_dim", c.feature_dim);
  s.get("cluster_spread", c.cluster_spread);
  s.get("max_duration", c.max_duration);
  s.get("first_language", c.first_language);
  s.get("second_language", c.second_language);
  s.get("seed", c.seed);
}

}  // namespace

void RunConfig::validate() const {
  CipherSpec cipher = synth.benchmark.cipher;
  cipher.finalize();
  if (synth.benchmark.mono_size < 1 || synth.benchmark.parallel_size < 1 || synth.benchmark.test_size < 1) {
    throw ConfigError("synth sizes must be >= 1");
  }
  if (synth.benchmark.lengths.min_len < 1 || synth.benchmark.lengths.max_len < synth.benchmark.lengths.min_len) {
    throw ConfigError("synth length range is invalid");
  }
  if (synth.feature_utterances < 0) throw ConfigError("synth.feature_utterances must be >= 0");
  if (quantize.k < 1) throw ConfigError("quantize.k must be >= 1");
  if (quantize.max_iters < 0 || pnmi_sweep.max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (pnmi_sweep.ks.empty()) throw ConfigError("pnmi_sweep.ks must not be empty");
  for (int k : pnmi_sweep.ks) {
    if (k < 1) throw ConfigError("pnmi_sweep.ks entries must be >= 1");
  }
  if (bpe_vocab_size < 1) throw ConfigError("bpe.vocab_size must be >= 1");
  ModelConfig m = model;
  m.vocab_size = std::max(m.vocab_size, 8);
  m.validate();
  pretrain.validate();
  finetune.validate();
  backtranslate.validate();
  if (beam.beam_size < 1 || beam.max_len < 1) throw ConfigError("beam.beam_size and beam.max_len must be >= 1");
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds must not be empty");
  if (!(ablation.bt_only_fraction > 0.0)) throw ConfigError("ablation.bt_only_fraction must be > 0");
  if (ablation.required_wins < 1 || ablation.required_wins > static_cast<int>(ablation.seeds.size())) {
    throw ConfigError("ablation.required_wins must be in [1, number of seed triples]");
  }
  if (ablation.threads < 0) throw ConfigError("ablation.threads must be >= 0");
}

RunConfig default_run_config() {
  const AblationConfig a = default_ablation_config();
  RunConfig c;
  c.synth.benchmark = a.benchmark;
  c.bpe_vocab_size = a.bpe_vocab_size;
  c.model = a.model;
  c.pretrain = a.pretrain;
  c.finetune = a.finetune;
  c.backtranslate = a.backtranslate;
  c.beam = a.beam;
  c.ablation.seeds = a.seeds;
  c.ablation.bt_only_fraction = a.bt_only_fraction;
  c.ablation.required_wins = a.required_wins;
  c.ablation.threads = a.threads;
  return c;
}

AblationConfig ablation_config(const RunConfig& c) {
  AblationConfig a;
  a.benchmark = c.synth.benchmark;
  a.bpe_vocab_size = c.bpe_vocab_size;
  a.model = c.model;
  a.pretrain = c.pretrain;
  a.finetune = c.finetune;
  a.backtranslate = c.backtranslate;
  a.beam = c.beam;
  a.seeds = c.ablation.seeds;
  a.bt_only_fraction = c.ablation.bt_only_fraction;
  a.required_wins = c.ablation.required_wins;
  a.threads = c.ablation.threads;
  return a;
}

json to_json(const RunConfig& c) {
  const auto& b = c.synth.benchmark;
  json seeds = json::array();
  for (const auto& s : c.ablation.seeds) seeds.push_back({s.data, s.init, s.train});
  return {
      {"synth",
       {{"cipher", cipher_json(b.cipher)},
        {"mono_size", b.mono_size},
        {"parallel_size", b.parallel_size},
        {"test_size", b.test_size},
        {"min_len", b.lengths.min_len},
        {"max_len", b.lengths.max_len},
        {"seed", b.seed},
        {"feature_utterances", c.synth.feature_utterances},
        {"feature_seed", c.synth.feature_seed}}},
      {"quantize",
       {{"k", c.quantize.k},
        {"max_iters", c.quantize.max_iters},
        {"tol", c.quantize.tol},
        {"seed", c.quantize.seed},
        {"run_length", c.quantize.run_length}}},
      {"pnmi_sweep",
       {{"ks", c.pnmi_sweep.ks},
        {"max_iters", c.pnmi_sweep.max_iters},
        {"tol", c.pnmi_sweep.tol},
        {"seed", c.pnmi_sweep.seed}}},
      {"bpe", {{"vocab_size", c.bpe_vocab_size}}},
      {"model",
       {{"embed_dim", c.model.embed_dim},
        {"encoder_layers", c.model.num_encoder_layers},
        {"decoder_layers", c.model.num_decoder_layers},
        {"heads", c.model.num_heads},
        {"ffn_dim", c.model.ffn_dim},
        {"max_positions", c.model.max_positions},
        {"dropout", c.model.dropout_rate},
        {"seed", c.init_seed}}},
      {"pretrain", training_json(c.pretrain)},
      {"finetune", training_json(c.finetune)},
      {"backtranslate", training_json(c.backtranslate)},
      {"beam", {{"beam_size", c.beam.beam_size}, {"max_len", c.beam.max_len}, {"length_penalty", c.beam.length_penalty}}},
      {"ablation",
       {{"seeds", seeds},
        {"bt_only_fraction", c.ablation.bt_only_fraction},
        {"required_wins", c.ablation.required_wins},
        {"threads", c.ablation.threads}}},
  };
}

RunConfig merge_run_config(const RunConfig& base, const json& j) {
  RunConfig c = base;
  Section root(j, "");
  root.sub("synth", [&](Section& s) {
    auto& b = c.synth.benchmark;
    s.sub("cipher", [&](Section& x) { read_cipher(x, b.cipher); });
    s.get("mono_size", b.mono_size);
    s.get("parallel_size", b.parallel_size);
    s.get("test_size", b.test_size);
    s.get("min_len", b.lengths.min_len);
    s.get("max_len", b.lengths.max_len);
    s.get("seed", b.seed);
    s.get("feature_utterances", c.synth.feature_utterances);
    s.get("feature_seed", c.synth.feature_seed);
  });
  root.sub("quantize", [&](Section& s) {
    s.get("k", c.quantize.k);
    s.get("max_iters", c.quantize.max_iters);
    s.get("tol", c.quantize.tol);
    s.get("seed", c.quantize.seed);
    s.get("run_length", c.quantize.run_length);
  });
  root.sub("pnmi_sweep", [&](Section& s) {
    s.get("ks", c.pnmi_sweep.ks);
    s.get("max_iters", c.pnmi_sweep.max_iters);
    s.get("tol", c.pnmi_sweep.tol);
    s.get("seed", c.pnmi_sweep.seed);
  });
  root.sub("bpe", [&](Section& s) { s.get("vocab_size", c.bpe_vocab_size); });
  root.sub("model", [&](Section& s) {
    s.get("embed_dim", c.model.embed_dim);
    s.get("encoder_layers", c.model.num_encoder_layers);
    s.get("decoder_layers", c.model.num_decoder_layers);
    s.get("heads", c.model.num_heads);
    s.get("ffn_dim", c.model.ffn_dim);
    s.get("max_positions", c.model.max_positions);
    s.get("dropout", c.model.dropout_rate);
    s.get("seed", c.init_seed);
  });
  root.sub("pretrain", [&](Section& s) { read_training(s, c.pretrain); });
  root.sub("finetune", [&](Section& s) { read_training(s, c.finetune); });
  root.sub("backtranslate", [&](Section& s) { read_training(s, c.backtranslate); });
  root.sub("beam", [&](Section& s) {
    s.get("beam_size", c.beam.beam_size);
    s.get("max_len", c.beam.max_len);
    s.get("length_penalty", c.beam.length_penalty);
  });
  root.sub("ablation", [&](Section& s) {
    if (const json* seeds = s.raw("seeds")) {
      std::vector<std::array<std::uint64_t, 3>> triples;
      try {
        triples = seeds->get<std::vector<std::array<std::uint64_t, 3>>>();
      } catch (const json::exception&) {
        throw ConfigError("config key 'ablation.seeds' must be a list of [data, init, train] triples");
      }
      c.ablation.seeds.clear();
      for (const auto& t : triples) c.ablation.seeds.push_back({t[0], t[1], t[2]});
    }
    s.get("bt_only_fraction", c.ablation.bt_only_fraction);
    s.get("required_wins", c.ablation.required_wins);
    s.get("threads", c.ablation.threads);
  });
  root.finish();
  c.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config file '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return merge_run_config(base, j);
}

}  // namespace unitmt
