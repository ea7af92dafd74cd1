#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "unitmt/common.hpp"

namespace unitmt {

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// T x D frames standing in for intermediate encoder-layer embeddings.
struct FeatureMatrix {
  FrameMatrix frames;
  std::string source_id;
  int layer_index = 0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }

  // Throws InputError unless T >= 1, D >= 1 and every entry is finite.
  void validate() const;
};

struct Codebook {
  FrameMatrix centers;  // K x D
  double distortion = 0.0;

  int k() const { return static_cast<int>(centers.rows()); }
  int dim() const { return static_cast<int>(centers.cols()); }
};

struct UnitSequence {
  std::vector<int> units;
  std::string language;
  std::optional<std::vector<int>> durations;

  bool operator==(const UnitSequence&) const = default;
};

struct PhoneAlignment {
  std::vector<int> phones;  // one label per frame
};

struct KMeansOptions {
  int k = 200;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
};

struct KMeansResult {
  Codebook codebook;
  // Distortion after seeding followed by the distortion after each Lloyd
  // iteration; non-increasing.
  std::vector<double> distortion_history;
  int iterations = 0;
};

KMeansResult train_kmeans_traced(const std::vector<FeatureMatrix>& data, const KMeansOptions& options);

inline Codebook train_kmeans(const std::vector<FeatureMatrix>& data, const KMeansOptions& options) {
  return train_kmeans_traced(data, options).codebook;
}

// Nearest center per frame, ties to the lowest index. The result keeps every
// frame (no run-length encoding).
UnitSequence assign_units(const FeatureMatrix& m, const Codebook& c);

UnitSequence run_length_encode(const UnitSequence& raw);

// Inverse of run_length_encode: repeats each unit by its duration.
UnitSequence expand_runs(const UnitSequence& encoded);

// I(phone; unit) / H(phone) over frame-level joint counts.
double pnmi(const std::vector<UnitSequence>& units, const std::vector<PhoneAlignment>& phones);

struct SweepCandidate {
  int layer = 0;
  int k = 0;
};

struct SweepEntry {
  SweepCandidate candidate;
  double pnmi = 0.0;
  double distortion = 0.0;
};

struct SweepReport {
  std::vector<SweepEntry> ranked;  // descending PNMI
  SweepCandidate selected;
};

// `features_by_layer[i]` holds the features of every utterance for one layer
// tag; alignments are shared across layers and index-aligned with the
// utterances.
struct LayerFeatures {
  int layer = 0;
  std::vector<FeatureMatrix> utterances;
};

SweepReport pnmi_sweep(const std::vector<SweepCandidate>& candidates,
                       const std::vector<LayerFeatures>& features_by_layer,
                       const std::vector<PhoneAlignment>& alignments, std::uint64_t seed, int max_iters = 100,
                       double tol = 1e-6);

// Ranks pre-scored candidates: descending PNMI, then smaller k, then lower layer.
void rank_sweep_entries(std::vector<SweepEntry>& entries);

// Codebook file: "UNITMT-CODEBOOK <version> <K> <D>" header followed by one
// center per line, fixed 9-decimal precision.
void write_codebook(std::ostream& os, const Codebook& c);
Codebook read_codebook(std::istream& is);

// Unit corpus file: one utterance per line, space-separated units, optionally
// followed by " | " and the run durations.
void write_unit_corpus(std::ostream& os, const std::vector<UnitSequence>& corpus);
std::vector<UnitSequence> read_unit_corpus(std::istream& is, const std::string& language = "");

// Feature file: "UNITMT-FEATURES <version> <N> <D>", then per utterance
// "utterance <id> <layer> <T>" and T rows at full double precision.
void write_features(std::ostream& os, const std::vector<FeatureMatrix>& data);
std::vector<FeatureMatrix> read_features(std::istream& is);

// One utterance per line, one phone label per frame.
void write_phone_alignments(std::ostream& os, const std::vector<PhoneAlignment>& phones);
std::vector<PhoneAlignment> read_phone_alignments(std::istream& is);

}  // namespace unitmt
