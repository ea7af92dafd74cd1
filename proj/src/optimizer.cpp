#include "unitmt/optimizer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace unitmt {

namespace {

constexpr const char* kCheckpointMagic = "UNITMT-CHECKPOINT";
constexpr int kCheckpointVersion = 1;

std::vector<std::string> tensor_names(const ModelConfig& config) {
  std::vector<std::string> names;
  Seq2SeqParams::zeros(config).for_each([&](const std::string& n, const Matrix&) { names.push_back(n); });
  return names;
}

std::vector<Matrix*> tensors(Seq2SeqParams& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> tensors(const Seq2SeqParams& p) {
  std::vector<const Matrix*> out;
  p.for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

void write_double(std::ostream& os, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  os.write(buf, r.ptr - buf);
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InputError(where + ": bad number '" + s + "'");
  return v;
}

void write_tensors(std::ostream& os, const std::string& prefix, const Seq2SeqParams& p) {
  p.for_each([&](const std::string& name, const Matrix& m) {
    os << "tensor " << prefix << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c) os << ' ';
        write_double(os, m(r, c));
      }
      os << '\n';
    }
  });
}

void read_tensors(std::istream& is, const std::string& prefix, Seq2SeqParams& p) {
  p.for_each([&](const std::string& name, Matrix& m) {
    std::string kw, got;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> kw >> got >> rows >> cols) || kw != "tensor") {
      throw InputError("checkpoint: expected tensor header for '" + prefix + name + "'");
    }
    if (got != prefix + name) throw InputError("checkpoint: expected tensor '" + prefix + name + "', found '" + got + "'");
    if (rows != m.rows() || cols != m.cols()) {
      throw InputError("checkpoint: tensor '" + got + "' has shape " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", config expects " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()));
    }
    std::string tok;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!(is >> tok)) throw InputError("checkpoint: truncated tensor '" + got + "'");
      const double v = parse_double(tok, "checkpoint tensor '" + got + "'");
      if (!std::isfinite(v)) throw InputError("checkpoint: non-finite value in tensor '" + got + "'");
      m.data()[i] = v;
    }
  });
}

}  // namespace

void AdamConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("adam clip_norm must be >= 0");
}

TrainableMask all_trainable(const ModelConfig& config) { return TrainableMask(tensor_names(config).size(), true); }

TrainableMask last_layers_trainable(const ModelConfig& config, int layers) {
  if (layers <= 0) throw ConfigError("trainable_last_layers must be >= 1 (0 leaves nothing to train)");
  TrainableMask mask;
  auto in_tail = [&](const std::string& name, const std::string& stack, int depth) {
    if (name.rfind(stack + ".", 0) != 0) return false;
    const auto rest = name.substr(stack.size() + 1);
    if (rest.rfind("norm.", 0) == 0) return true;
    const int idx = std::stoi(rest.substr(0, rest.find('.')));
    return idx >= depth - layers;
  };
  for (const auto& n : tensor_names(config)) {
    mask.push_back(in_tail(n, "encoder", config.num_encoder_layers) ||
                   in_tail(n, "decoder", config.num_decoder_layers));
  }
  return mask;
}

Adam::Adam(const ModelConfig& config, AdamConfig opts)
    : opts_(opts), m_(Seq2SeqParams::zeros(config)), v_(Seq2SeqParams::zeros(config)) {
  opts_.validate();
}

double Adam::step(Seq2SeqParams& params, const Seq2SeqParams& grads, double lr, const TrainableMask& mask) {
  auto ps = tensors(params);
  const auto gs = tensors(grads);
  auto ms = tensors(m_);
  auto vs = tensors(v_);
  if (mask.size() != ps.size()) throw ConfigError("trainable mask does not match the model");
  double sq = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (mask[i]) sq += gs[i]->squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  const double scale = opts_.clip_norm > 0.0 && norm > opts_.clip_norm ? opts_.clip_norm / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  const double b1 = opts_.beta1, b2 = opts_.beta2, eps = opts_.eps;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!mask[i]) continue;
    auto g = gs[i]->array() * scale;
    auto m = ms[i]->array();
    auto v = vs[i]->array();
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.square();
    ps[i]->array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
  return norm;
}

std::uint64_t Adam::hash() const {
  std::uint64_t h = fnv1a(&steps_, sizeof(steps_));
  const std::uint64_t hm = m_.hash(), hv = v_.hash();
  h = fnv1a(&hm, sizeof(hm), h);
  return fnv1a(&hv, sizeof(hv), h);
}

void Adam::restore(long steps, Seq2SeqParams m, Seq2SeqParams v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const auto& c = ckpt.params.config;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "config vocab_size " << c.vocab_size << " embed_dim " << c.embed_dim << " encoder_layers "
     << c.num_encoder_layers << " decoder_layers " << c.num_decoder_layers << " heads " << c.num_heads << " ffn_dim "
     << c.ffn_dim << " max_positions " << c.max_positions << " dropout ";
  write_double(os, c.dropout_rate);
  os << '\n';
  os << "stage " << ckpt.stage << '\n';
  os << "step " << ckpt.step << '\n';
  os << "optimizer " << (ckpt.optimizer ? 1 : 0) << '\n';
  write_tensors(os, "", ckpt.params);
  if (ckpt.optimizer) {
    const auto& a = ckpt.optimizer->options();
    os << "adam steps " << ckpt.optimizer->steps() << " beta1 ";
    write_double(os, a.beta1);
    os << " beta2 ";
    write_double(os, a.beta2);
    os << " eps ";
    write_double(os, a.eps);
    os << " clip_norm ";
    write_double(os, a.clip_norm);
    os << '\n';
    write_tensors(os, "adam.m.", ckpt.optimizer->first_moment());
    write_tensors(os, "adam.v.", ckpt.optimizer->second_moment());
  }
  os << "end\n";
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) throw InputError("checkpoint: bad header");
  if (version != kCheckpointVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  auto expect = [&](const std::string& key) {
    std::string got;
    if (!(is >> got) || got != key) throw InputError("checkpoint: expected '" + key + "', found '" + got + "'");
  };
  ModelConfig c;
  std::string tok;
  expect("config");
  expect("vocab_size");
  is >> c.vocab_size;
  expect("embed_dim");
  is >> c.embed_dim;
  expect("encoder_layers");
  is >> c.num_encoder_layers;
  expect("decoder_layers");
  is >> c.num_decoder_layers;
  expect("heads");
  is >> c.num_heads;
  expect("ffn_dim");
  is >> c.ffn_dim;
  expect("max_positions");
  is >> c.max_positions;
  expect("dropout");
  is >> tok;
  c.dropout_rate = parse_double(tok, "checkpoint dropout");
  if (!is) throw InputError("checkpoint: malformed config record");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
  Checkpoint ck;
  ck.params = Seq2SeqParams::zeros(c);
  expect("stage");
  is >> ck.stage;
  expect("step");
  is >> ck.step;
  expect("optimizer");
  int has_opt = 0;
  is >> has_opt;
  if (!is) throw InputError("checkpoint: malformed header");
  read_tensors(is, "", ck.params);
  if (has_opt) {
    AdamConfig a;
    long steps = 0;
    expect("adam");
    expect("steps");
    is >> steps;
    expect("beta1");
    is >> tok;
    a.beta1 = parse_double(tok, "checkpoint adam");
    expect("beta2");
    is >> tok;
    a.beta2 = parse_double(tok, "checkpoint adam");
    expect("eps");
    is >> tok;
    a.eps = parse_double(tok, "checkpoint adam");
    expect("clip_norm");
    is >> tok;
    a.clip_norm = parse_double(tok, "checkpoint adam");
    auto m = Seq2SeqParams::zeros(c), v = Seq2SeqParams::zeros(c);
    read_tensors(is, "adam.m.", m);
    read_tensors(is, "adam.v.", v);
    Adam opt(c, a);
    opt.restore(steps, std::move(m), std::move(v));
    ck.optimizer = std::move(opt);
  }
  expect("end");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, ckpt);
  if (!os) throw InputError("error writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace unitmt
