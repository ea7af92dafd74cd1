#include "unitmt/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <utility>

namespace unitmt {

namespace {

constexpr const char* kCodebookMagic = "UNITMT-CODEBOOK";
constexpr int kCodebookVersion = 1;
constexpr const char* kFeaturesMagic = "UNITMT-FEATURES";
constexpr int kFeaturesVersion = 1;

double squared_distance(const double* a, const double* b, Eigen::Index dim) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

// Nearest center (lowest index on ties) and its squared distance.
std::pair<int, double> nearest_center(const double* frame, const FrameMatrix& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = squared_distance(frame, centers.row(c).data(), centers.cols());
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

FrameMatrix pool_frames(const std::vector<FeatureMatrix>& data) {
  if (data.empty()) throw InputError("train_kmeans: no feature matrices given");
  const Eigen::Index dim = data.front().dim();
  Eigen::Index total = 0;
  for (const auto& m : data) {
    m.validate();
    if (m.dim() != dim) {
      throw InputError("train_kmeans: feature dimension mismatch in '" + m.source_id + "' (" +
                       std::to_string(m.dim()) + " vs " + std::to_string(dim) + ")");
    }
    total += m.num_frames();
  }
  FrameMatrix pooled(total, dim);
  Eigen::Index row = 0;
  for (const auto& m : data) {
    pooled.middleRows(row, m.num_frames()) = m.frames;
    row += m.num_frames();
  }
  return pooled;
}

Eigen::Index count_distinct_rows(const FrameMatrix& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    return std::lexicographical_compare(x.row(a).data(), x.row(a).data() + x.cols(), x.row(b).data(),
                                        x.row(b).data() + x.cols());
  };
  std::sort(order.begin(), order.end(), row_less);
  Eigen::Index distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (row_less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

// Distance-weighted seeding: first center uniform, the rest proportional to
// the squared distance to the nearest already-chosen center.
FrameMatrix seed_centers(const FrameMatrix& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  FrameMatrix centers(k, x.cols());
  const auto first = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
  centers.row(0) = x.row(first);
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    d2[static_cast<std::size_t>(i)] = squared_distance(x.row(i).data(), centers.row(0).data(), x.cols());
  }
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double target = uniform01(rng) * total;
    Eigen::Index pick = -1;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = d2[static_cast<std::size_t>(i)];
      if (w <= 0.0) continue;
      acc += w;
      pick = i;
      if (acc > target) break;
    }
    centers.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = squared_distance(x.row(i).data(), centers.row(c).data(), x.cols());
      auto& slot = d2[static_cast<std::size_t>(i)];
      slot = std::min(slot, d);
    }
  }
  return centers;
}

double assign_all(const FrameMatrix& x, const FrameMatrix& centers, std::vector<int>& labels,
                  std::vector<double>& dists) {
  const Eigen::Index n = x.rows();
  labels.resize(static_cast<std::size_t>(n));
  dists.resize(static_cast<std::size_t>(n));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [c, d] = nearest_center(x.row(i).data(), centers);
    labels[static_cast<std::size_t>(i)] = c;
    dists[static_cast<std::size_t>(i)] = d;
    total += d;
  }
  return total / static_cast<double>(n);
}

FrameMatrix update_centers(const FrameMatrix& x, const FrameMatrix& old_centers, const std::vector<int>& labels,
                           const std::vector<double>& dists) {
  const Eigen::Index k = old_centers.rows();
  FrameMatrix sums = FrameMatrix::Zero(k, x.cols());
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    sums.row(c) += x.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  FrameMatrix centers = old_centers;
  std::vector<bool> taken(static_cast<std::size_t>(x.rows()), false);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto cnt = counts[static_cast<std::size_t>(c)];
    if (cnt > 0) {
      centers.row(c) = sums.row(c) / static_cast<double>(cnt);
      continue;
    }
    // Empty cluster: move it onto the frame farthest from its current center.
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (dists[static_cast<std::size_t>(i)] > far_d) {
        far_d = dists[static_cast<std::size_t>(i)];
        far = i;
      }
    }
    taken[static_cast<std::size_t>(far)] = true;
    centers.row(c) = x.row(far);
  }
  return centers;
}

}  // namespace

void FeatureMatrix::validate() const {
  if (frames.rows() < 1) throw InputError("feature matrix '" + source_id + "' has no frames");
  if (frames.cols() < 1) throw InputError("feature matrix '" + source_id + "' has zero dimension");
  if (!frames.allFinite()) throw InputError("feature matrix '" + source_id + "' contains non-finite values");
}

KMeansResult train_kmeans_traced(const std::vector<FeatureMatrix>& data, const KMeansOptions& options) {
  if (options.k < 1) throw ConfigError("train_kmeans: k must be >= 1");
  if (options.tol < 0.0) throw ConfigError("train_kmeans: tol must be >= 0");
  if (options.max_iters < 0) throw ConfigError("train_kmeans: max_iters must be >= 0");
  const FrameMatrix x = pool_frames(data);
  if (x.rows() < options.k) {
    throw DegenerateInputError("train_kmeans: " + std::to_string(x.rows()) + " frames for k=" +
                               std::to_string(options.k));
  }
  const Eigen::Index distinct = count_distinct_rows(x);
  if (distinct < options.k) {
    throw DegenerateInputError("train_kmeans: only " + std::to_string(distinct) + " distinct frames for k=" +
                               std::to_string(options.k));
  }

  Rng rng(derive_seed(options.seed, 0x6b6d65616e73ULL));
  KMeansResult result;
  FrameMatrix centers = seed_centers(x, options.k, rng);
  std::vector<int> labels;
  std::vector<double> dists;
  double distortion = assign_all(x, centers, labels, dists);
  result.distortion_history.push_back(distortion);

  for (int it = 0; it < options.max_iters; ++it) {
    FrameMatrix next = update_centers(x, centers, labels, dists);
    const double next_distortion = assign_all(x, next, labels, dists);
    centers = std::move(next);
    result.distortion_history.push_back(next_distortion);
    result.iterations = it + 1;
    const double improvement = distortion - next_distortion;
    distortion = next_distortion;
    if (improvement < options.tol) break;
  }
  result.codebook.centers = std::move(centers);
  result.codebook.distortion = distortion;
  return result;
}

UnitSequence assign_units(const FeatureMatrix& m, const Codebook& c) {
  m.validate();
  if (m.dim() != c.dim()) {
    throw InputError("assign_units: feature dimension " + std::to_string(m.dim()) + " does not match codebook " +
                     std::to_string(c.dim()));
  }
  UnitSequence out;
  out.units.reserve(static_cast<std::size_t>(m.num_frames()));
  for (Eigen::Index t = 0; t < m.num_frames(); ++t) {
    out.units.push_back(nearest_center(m.frames.row(t).data(), c.centers).first);
  }
  return out;
}

UnitSequence run_length_encode(const UnitSequence& raw) {
  if (raw.units.empty()) throw InputError("run_length_encode: empty unit sequence");
  UnitSequence out;
  out.language = raw.language;
  std::vector<int> durations;
  for (int u : raw.units) {
    if (!out.units.empty() && out.units.back() == u) {
      ++durations.back();
    } else {
      out.units.push_back(u);
      durations.push_back(1);
    }
  }
  out.durations = std::move(durations);
  return out;
}

UnitSequence expand_runs(const UnitSequence& encoded) {
  UnitSequence out;
  out.language = encoded.language;
  if (!encoded.durations) {
    out.units = encoded.units;
    return out;
  }
  const auto& durations = *encoded.durations;
  if (durations.size() != encoded.units.size()) throw InputError("expand_runs: durations/units length mismatch");
  for (std::size_t i = 0; i < encoded.units.size(); ++i) {
    if (durations[i] < 1) throw InputError("expand_runs: non-positive duration");
    out.units.insert(out.units.end(), static_cast<std::size_t>(durations[i]), encoded.units[i]);
  }
  return out;
}

double pnmi(const std::vector<UnitSequence>& units, const std::vector<PhoneAlignment>& phones) {
  if (units.size() != phones.size()) throw InputError("pnmi: unit and phone collections differ in size");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> phone_counts;
  std::map<int, double> unit_counts;
  double total = 0.0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i].units;
    const auto& p = phones[i].phones;
    if (u.size() != p.size()) {
      throw InputError("pnmi: item " + std::to_string(i) + " has " + std::to_string(u.size()) + " units but " +
                       std::to_string(p.size()) + " phone labels");
    }
    for (std::size_t t = 0; t < u.size(); ++t) {
      joint[{p[t], u[t]}] += 1.0;
      phone_counts[p[t]] += 1.0;
      unit_counts[u[t]] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw InputError("pnmi: no frames");

  double h_phone = 0.0;
  for (const auto& [label, count] : phone_counts) {
    const double pr = count / total;
    h_phone -= pr * std::log(pr);
  }
  if (phone_counts.size() < 2 || h_phone <= 0.0) {
    throw UndefinedMetricError("pnmi: phone entropy is zero (single phone label)");
  }
  double h_phone_given_unit = 0.0;
  for (const auto& [key, count] : joint) {
    const double p_joint = count / total;
    const double p_cond = count / unit_counts[key.second];
    h_phone_given_unit -= p_joint * std::log(p_cond);
  }
  const double value = (h_phone - h_phone_given_unit) / h_phone;
  return std::clamp(value, 0.0, 1.0);
}

void rank_sweep_entries(std::vector<SweepEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
    if (a.pnmi != b.pnmi) return a.pnmi > b.pnmi;
    if (a.candidate.k != b.candidate.k) return a.candidate.k < b.candidate.k;
    return a.candidate.layer < b.candidate.layer;
  });
}

SweepReport pnmi_sweep(const std::vector<SweepCandidate>& candidates,
                       const std::vector<LayerFeatures>& features_by_layer,
                       const std::vector<PhoneAlignment>& alignments, std::uint64_t seed, int max_iters,
                       double tol) {
  if (candidates.empty()) throw ConfigError("pnmi_sweep: no candidates");
  std::vector<SweepEntry> entries;
  for (const auto& cand : candidates) {
    auto it = std::find_if(features_by_layer.begin(), features_by_layer.end(),
                           [&](const LayerFeatures& lf) { return lf.layer == cand.layer; });
    if (it == features_by_layer.end()) {
      throw InputError("pnmi_sweep: no features for layer " + std::to_string(cand.layer));
    }
    KMeansOptions opts;
    opts.k = cand.k;
    opts.seed = seed;
    opts.max_iters = max_iters;
    opts.tol = tol;
    const Codebook cb = train_kmeans(it->utterances, opts);
    std::vector<UnitSequence> assigned;
    assigned.reserve(it->utterances.size());
    for (const auto& m : it->utterances) assigned.push_back(assign_units(m, cb));
    entries.push_back({cand, pnmi(assigned, alignments), cb.distortion});
  }
  rank_sweep_entries(entries);
  SweepReport report;
  report.selected = entries.front().candidate;
  report.ranked = std::move(entries);
  return report;
}

void write_codebook(std::ostream& os, const Codebook& c) {
  os << kCodebookMagic << ' ' << kCodebookVersion << ' ' << c.k() << ' ' << c.dim() << '\n';
  os << std::fixed << std::setprecision(9);
  for (Eigen::Index r = 0; r < c.centers.rows(); ++r) {
    for (Eigen::Index j = 0; j < c.centers.cols(); ++j) {
      if (j) os << ' ';
      os << c.centers(r, j);
    }
    os << '\n';
  }
}

Codebook read_codebook(std::istream& is) {
  std::string magic;
  int version = 0;
  long k = 0;
  long d = 0;
  if (!(is >> magic >> version >> k >> d) || magic != kCodebookMagic) {
    throw InputError("codebook: missing or malformed header");
  }
  if (version != kCodebookVersion) throw InputError("codebook: unsupported version " + std::to_string(version));
  if (k < 1 || d < 1) throw InputError("codebook: invalid shape in header");
  Codebook c;
  c.centers.resize(k, d);
  for (long r = 0; r < k; ++r) {
    for (long j = 0; j < d; ++j) {
      if (!(is >> c.centers(r, j))) {
        throw InputError("codebook: truncated at center " + std::to_string(r));
      }
    }
  }
  if (!c.centers.allFinite()) throw InputError("codebook: non-finite center value");
  return c;
}

void write_unit_corpus(std::ostream& os, const std::vector<UnitSequence>& corpus) {
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.units.size(); ++i) {
      if (i) os << ' ';
      os << s.units[i];
    }
    if (s.durations) {
      os << " |";
      for (int d : *s.durations) os << ' ' << d;
    }
    os << '\n';
  }
}

std::vector<UnitSequence> read_unit_corpus(std::istream& is, const std::string& language) {
  std::vector<UnitSequence> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    UnitSequence s;
    s.language = language;
    const auto bar = line.find('|');
    auto parse_ints = [&](const std::string& text, std::vector<int>& out) {
      std::istringstream ss(text);
      std::string tok;
      while (ss >> tok) {
        std::size_t used = 0;
        int v = 0;
        try {
          v = std::stoi(tok, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != tok.size() || v < 0) {
          throw InputError("unit corpus line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
        }
        out.push_back(v);
      }
    };
    parse_ints(line.substr(0, bar), s.units);
    if (bar != std::string::npos) {
      std::vector<int> durations;
      parse_ints(line.substr(bar + 1), durations);
      if (durations.size() != s.units.size()) {
        throw InputError("unit corpus line " + std::to_string(line_no) + ": durations/units length mismatch");
      }
      for (int d : durations) {
        if (d < 1) throw InputError("unit corpus line " + std::to_string(line_no) + ": duration < 1");
      }
      s.durations = std::move(durations);
    }
    corpus.push_back(std::move(s));
  }
  return corpus;
}

void write_features(std::ostream& os, const std::vector<FeatureMatrix>& data) {
  const long d = data.empty() ? 0 : static_cast<long>(data.front().dim());
  os << kFeaturesMagic << ' ' << kFeaturesVersion << ' ' << data.size() << ' ' << d << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& m : data) {
    if (m.dim() != d) throw InputError("features: utterances differ in dimension");
    os << "utterance " << (m.source_id.empty() ? "-" : m.source_id) << ' ' << m.layer_index << ' ' << m.num_frames()
       << '\n';
    for (Eigen::Index r = 0; r < m.frames.rows(); ++r) {
      for (Eigen::Index j = 0; j < m.frames.cols(); ++j) {
        if (j) os << ' ';
        os << m.frames(r, j);
      }
      os << '\n';
    }
  }
}

std::vector<FeatureMatrix> read_features(std::istream& is) {
  std::string magic;
  int version = 0;
  long n = 0;
  long d = 0;
  if (!(is >> magic >> version >> n >> d) || magic != kFeaturesMagic) {
    throw InputError("features: missing or malformed header");
  }
  if (version != kFeaturesVersion) throw InputError("features: unsupported version " + std::to_string(version));
  if (n < 0 || d < 0 || (n > 0 && d < 1)) throw InputError("features: invalid shape in header");
  std::vector<FeatureMatrix> out(static_cast<std::size_t>(n));
  for (long u = 0; u < n; ++u) {
    auto& m = out[static_cast<std::size_t>(u)];
    std::string tag;
    long t = 0;
    if (!(is >> tag >> m.source_id >> m.layer_index >> t) || tag != "utterance" || t < 1) {
      throw InputError("features: bad header for utterance " + std::to_string(u));
    }
    if (m.source_id == "-") m.source_id.clear();
    m.frames.resize(t, d);
    for (long r = 0; r < t; ++r) {
      for (long j = 0; j < d; ++j) {
        if (!(is >> m.frames(r, j))) throw InputError("features: truncated in utterance " + std::to_string(u));
      }
    }
    m.validate();
  }
  return out;
}

void write_phone_alignments(std::ostream& os, const std::vector<PhoneAlignment>& phones) {
  for (const auto& a : phones) {
    for (std::size_t i = 0; i < a.phones.size(); ++i) {
      if (i) os << ' ';
      os << a.phones[i];
    }
    os << '\n';
  }
}

std::vector<PhoneAlignment> read_phone_alignments(std::istream& is) {
  std::vector<PhoneAlignment> out;
  for (const auto& s : read_unit_corpus(is)) {
    if (s.durations) throw InputError("phone alignment: unexpected durations");
    out.push_back({s.units});
  }
  return out;
}

}  // namespace unitmt
