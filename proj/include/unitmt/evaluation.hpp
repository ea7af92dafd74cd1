#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace unitmt {

using Sentence = std::vector<int>;

struct BleuStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& other);
};

struct BleuScore {
  double bleu = 0.0;                   // [0, 100]
  std::array<double, 4> precisions{};  // [0, 1]
  double brevity_penalty = 0.0;
  long hyp_len = 0;
  long ref_len = 0;
};

BleuStats sentence_stats(const Sentence& hyp, const Sentence& ref);
BleuScore bleu_from_stats(const BleuStats& stats);

// Corpus BLEU over unit tokens: clipped 1..4-gram precisions, no smoothing,
// brevity penalty exp(1 - r/c) when c < r.
BleuScore corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references);

enum class LengthBucket { kShort, kMedium, kLong };
const char* bucket_name(LengthBucket b);

struct BucketThresholds {
  long p33 = 0;
  long p66 = 0;
};

// Nearest-rank percentiles of the reference lengths.
BucketThresholds bucket_thresholds(const std::vector<Sentence>& references);

// length <= p33 -> short, length > p66 -> long, otherwise medium.
std::vector<LengthBucket> length_buckets(const std::vector<Sentence>& references);

struct BucketReport {
  LengthBucket bucket = LengthBucket::kShort;
  long count = 0;
  double bleu = 0.0;
};

struct EvalReport {
  BleuScore corpus;
  BucketThresholds thresholds;
  std::array<BucketReport, 3> buckets;
};

EvalReport evaluate_corpus(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references);

// Structured text (JSON) and a one-row-per-section CSV.
void write_eval_report_json(std::ostream& os, const EvalReport& r);
void write_eval_report_csv(std::ostream& os, const EvalReport& r);
EvalReport read_eval_report_json(std::istream& is);

}  // namespace unitmt
