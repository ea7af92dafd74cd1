#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "unitmt/config.hpp"

namespace py = pybind11;
using namespace unitmt;

namespace {

RunConfig parse_config(const std::string& text) {
  if (text.empty()) return default_run_config();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return merge_run_config(default_run_config(), j);
}

std::vector<UnitSequence> as_units(const std::vector<std::vector<int>>& seqs, const std::string& language) {
  std::vector<UnitSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back({s, language, std::nullopt});
  return out;
}

std::vector<std::vector<int>> plain(const std::vector<UnitSequence>& units) {
  std::vector<std::vector<int>> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(u.units);
  return out;
}

using LangCorpus = std::pair<std::string, std::vector<std::vector<int>>>;

std::vector<std::vector<TokenSequence>> encode_mono(const BpeVocab& v, const std::vector<LangCorpus>& mono) {
  std::vector<std::vector<TokenSequence>> out;
  for (const auto& [lang, seqs] : mono) out.push_back(encode_corpus(v, as_units(seqs, lang)));
  return out;
}

ParallelCorpus encode_pairs(const BpeVocab& v, const std::vector<LangCorpus>& parallel) {
  if (parallel.empty()) return {};
  if (parallel.size() != 2) throw ConfigError("parallel data needs exactly two (language, sequences) entries");
  return encode_parallel(v, {as_units(parallel[0].second, parallel[0].first),
                             as_units(parallel[1].second, parallel[1].first)});
}

py::list curve_rows(const std::vector<CurvePoint>& curve) {
  py::list out;
  for (const auto& c : curve) {
    py::dict d;
    d["stage"] = c.stage;
    d["step"] = c.step;
    d["epoch"] = c.epoch;
    d["lr"] = c.lr;
    d["loss"] = c.loss;
    d["tokens"] = c.tokens;
    d["grad_norm"] = c.grad_norm;
    if (c.bleu >= 0) d["bleu"] = c.bleu;
    out.append(d);
  }
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["bleu"] = r.corpus.bleu;
  d["brevity_penalty"] = r.corpus.brevity_penalty;
  d["precisions"] = std::vector<double>(r.corpus.precisions.begin(), r.corpus.precisions.end());
  d["p33"] = r.thresholds.p33;
  d["p66"] = r.thresholds.p66;
  py::dict buckets;
  for (const auto& b : r.buckets) {
    py::dict x;
    x["count"] = b.count;
    x["bleu"] = b.bleu;
    buckets[bucket_name(b.bucket)] = x;
  }
  d["buckets"] = buckets;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Textless unit-to-unit translation: quantizer, BPE, seq2seq training and evaluation";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("default_config", [] { return to_json(default_run_config()).dump(); },
        "Default run config as a JSON string.");
  m.def("resolve_config", [](const std::string& text) { return to_json(parse_config(text)).dump(); },
        py::arg("config_json") = "", "Validate a partial config and return the full config as JSON.");

  // quantizer
  m.def(
      "kmeans",
      [](const std::vector<FrameMatrix>& utterances, int k, std::uint64_t seed, int max_iters, double tol) {
        std::vector<FeatureMatrix> data;
        for (const auto& u : utterances) data.push_back({u, "", 0});
        KMeansResult r;
        {
          py::gil_scoped_release nogil;
          r = train_kmeans_traced(data, {k, seed, max_iters, tol});
        }
        return py::make_tuple(r.codebook.centers, r.codebook.distortion, r.distortion_history);
      },
      py::arg("utterances"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 100, py::arg("tol") = 1e-6,
      "Lloyd k-means over T x D frame matrices. Returns (centers, distortion, distortion_history).");
  m.def(
      "assign_units",
      [](const FrameMatrix& frames, const FrameMatrix& centers) {
        Codebook c;
        c.centers = centers;
        return assign_units({frames, "", 0}, c).units;
      },
      py::arg("frames"), py::arg("centers"));
  m.def(
      "run_length_encode",
      [](const std::vector<int>& units) {
        const auto e = run_length_encode({units, "", std::nullopt});
        return py::make_tuple(e.units, *e.durations);
      },
      py::arg("units"), "Returns (units, durations).");
  m.def(
      "expand_runs",
      [](const std::vector<int>& units, const std::vector<int>& durations) {
        return expand_runs({units, "", durations}).units;
      },
      py::arg("units"), py::arg("durations"));
  m.def(
      "pnmi",
      [](const std::vector<std::vector<int>>& units, const std::vector<std::vector<int>>& phones) {
        std::vector<PhoneAlignment> p;
        for (const auto& x : phones) p.push_back({x});
        return pnmi(as_units(units, ""), p);
      },
      py::arg("units"), py::arg("phones"));

  // tokenizer
  py::class_<BpeVocab>(m, "Vocab")
      .def_property_readonly("num_tokens", &BpeVocab::num_tokens)
      .def_property_readonly("num_specials", &BpeVocab::num_specials)
      .def_property_readonly("languages", &BpeVocab::languages)
      .def_property_readonly("num_merges", [](const BpeVocab& v) { return v.merges().size(); })
      .def("language_token", &BpeVocab::language_token)
      .def("spelling", &BpeVocab::spelling)
      .def("encode", [](const BpeVocab& v, const std::vector<int>& units,
                        const std::string& language) { return encode(v, {units, language, std::nullopt}).tokens; },
           py::arg("units"), py::arg("language"))
      .def("decode", [](const BpeVocab& v, const std::vector<int>& tokens) { return decode(v, {tokens, ""}).units; })
      .def("save",
           [](const BpeVocab& v, const std::string& path) {
             std::ofstream os(path);
             if (!os) throw InputError("cannot write '" + path + "'");
             write_vocab(os, v);
           })
      .def_static("load", [](const std::string& path) {
        std::ifstream is(path);
        if (!is) throw InputError("cannot open '" + path + "'");
        return read_vocab(is);
      });
  m.def(
      "train_bpe",
      [](const std::vector<LangCorpus>& corpora, int vocab_size) {
        std::vector<UnitSequence> all;
        std::vector<std::string> langs;
        for (const auto& [lang, seqs] : corpora) {
          langs.push_back(lang);
          auto u = as_units(seqs, lang);
          all.insert(all.end(), u.begin(), u.end());
        }
        return train_bpe(all, vocab_size, langs);
      },
      py::arg("corpora"), py::arg("vocab_size"), "corpora: list of (language, list of unit sequences).");

  // noising
  m.def(
      "noise",
      [](const std::vector<int>& tokens, int num_specials, double lam, double mask_ratio, std::uint64_t seed) {
        NoiseConfig c;
        c.lambda = lam;
        c.mask_ratio = mask_ratio;
        const auto r = noise({tokens, ""}, c, num_specials, seed);
        py::dict d;
        d["noised"] = r.noised.tokens;
        d["masked_positions"] = r.masked_positions;
        d["span_lengths"] = r.span_lengths;
        return d;
      },
      py::arg("tokens"), py::arg("num_specials"), py::arg("lam") = 2.0, py::arg("mask_ratio") = 0.35,
      py::arg("seed") = 0);

  // synthetic benchmark
  m.def(
      "make_benchmark",
      [](const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const Benchmark b = make_benchmark(cfg.synth.benchmark);
        py::dict d;
        d["first_language"] = b.cipher.first_language;
        d["second_language"] = b.cipher.second_language;
        d["mono_first"] = plain(b.mono_first);
        d["mono_second"] = plain(b.mono_second);
        d["train_first"] = plain(b.train.first);
        d["train_second"] = plain(b.train.second);
        d["test_first"] = plain(b.test.first);
        d["test_second"] = plain(b.test.second);
        return d;
      },
      py::arg("config_json") = "");

  // training
  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("stage", &Checkpoint::stage)
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("num_parameters", [](const Checkpoint& c) { return c.params.num_parameters(); })
      .def_property_readonly("hash", [](const Checkpoint& c) { return c.params.hash(); })
      .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(path, c); })
      .def_static("load", &load_checkpoint);
  m.def(
      "init_model",
      [](const BpeVocab& v, const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        ModelConfig mc = cfg.model;
        mc.vocab_size = model_vocab_size(v);
        Checkpoint c;
        c.params = Seq2SeqParams::initialize(mc, cfg.init_seed);
        return c;
      },
      py::arg("vocab"), py::arg("config_json") = "");
  m.def(
      "pretrain",
      [](const Checkpoint& c, const BpeVocab& v, const std::vector<LangCorpus>& mono, const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const auto data = encode_mono(v, mono);
        std::vector<CurvePoint> curve;
        Checkpoint out;
        {
          py::gil_scoped_release nogil;
          out = pretrain(c, v, data, cfg.pretrain, &curve);
        }
        return py::make_tuple(out, curve_rows(curve));
      },
      py::arg("checkpoint"), py::arg("vocab"), py::arg("mono"), py::arg("config_json") = "");
  m.def(
      "finetune",
      [](const Checkpoint& c, const BpeVocab& v, const std::vector<LangCorpus>& parallel,
         const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const auto data = encode_pairs(v, parallel);
        std::vector<CurvePoint> curve;
        Checkpoint out;
        {
          py::gil_scoped_release nogil;
          out = finetune(c, v, data, cfg.finetune, &curve);
        }
        return py::make_tuple(out, curve_rows(curve));
      },
      py::arg("checkpoint"), py::arg("vocab"), py::arg("parallel"), py::arg("config_json") = "");
  m.def(
      "backtranslate",
      [](const Checkpoint& c, const BpeVocab& v, const std::vector<LangCorpus>& mono,
         const std::vector<LangCorpus>& parallel, const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const auto m1 = encode_mono(v, mono);
        const auto p = encode_pairs(v, parallel);
        std::vector<CurvePoint> curve;
        Checkpoint out;
        {
          py::gil_scoped_release nogil;
          auto state = BacktranslateState::from(c.params, cfg.backtranslate);
          out = backtranslate(state, v, m1, p, cfg.backtranslate, &curve);
        }
        return py::make_tuple(out, curve_rows(curve));
      },
      py::arg("checkpoint"), py::arg("vocab"), py::arg("mono"), py::arg("parallel"), py::arg("config_json") = "");
  m.def(
      "translate",
      [](const Checkpoint& c, const BpeVocab& v, const std::vector<std::vector<int>>& sources,
         const std::string& source_language, const std::string& target_language, const std::string& config_json) {
        const RunConfig cfg = parse_config(config_json);
        const auto src = encode_corpus(v, as_units(sources, source_language));
        std::vector<std::vector<int>> out;
        py::gil_scoped_release nogil;
        for (const auto& t : translate_corpus(c.params, v, src, target_language, cfg.beam)) {
          out.push_back(decode(v, t).units);
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("vocab"), py::arg("sources"), py::arg("source_language"),
      py::arg("target_language"), py::arg("config_json") = "");
  m.def(
      "lr_at",
      [](long step, double floor, double peak, double final_lr, long warmup_steps, long total_steps,
         std::optional<double> decay) {
        LrSchedule s{floor, peak, final_lr, warmup_steps, total_steps, decay};
        s.validate();
        return lr_at(step, s);
      },
      py::arg("step"), py::arg("floor") = 1e-7, py::arg("peak") = 1e-5, py::arg("final") = 1e-6,
      py::arg("warmup_steps") = 100, py::arg("total_steps") = 0, py::arg("decay") = py::none());

  // evaluation
  m.def(
      "corpus_bleu",
      [](const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
        return corpus_bleu(hyps, refs).bleu;
      },
      py::arg("hypotheses"), py::arg("references"));
  m.def(
      "evaluate",
      [](const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
        return report_dict(evaluate_corpus(hyps, refs));
      },
      py::arg("hypotheses"), py::arg("references"), "Corpus BLEU plus short/medium/long buckets.");
  m.def(
      "run_ablation",
      [](const std::string& config_json, std::function<void(const std::string&)> log) {
        const RunConfig cfg = parse_config(config_json);
        AblationReport rep;
        {
          py::gil_scoped_release nogil;
          rep = run_ablation(ablation_config(cfg), log ? Logger([&log](const std::string& s) {
            py::gil_scoped_acquire gil;
            log(s);
          })
                                                       : Logger{});
        }
        py::list runs;
        for (const auto& r : rep.runs) {
          py::dict d;
          d["seeds"] = std::vector<std::uint64_t>{r.seeds.data, r.seeds.init, r.seeds.train};
          d["f"] = r.f;
          d["g"] = r.g;
          d["h"] = r.h;
          d["j"] = r.j;
          d["k"] = r.k;
          d["seconds"] = r.seconds;
          runs.append(d);
        }
        py::dict out;
        out["runs"] = runs;
        out["wins"] = std::vector<int>(rep.wins.begin(), rep.wins.end());
        out["holds"] = std::vector<bool>{rep.holds(0), rep.holds(1), rep.holds(2), rep.holds(3)};
        return out;
      },
      py::arg("config_json") = "", py::arg("log") = nullptr);
}
