#include "unitmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>

#include <json.hpp>

#include "unitmt/common.hpp"

namespace unitmt {

namespace {

using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts count_ngrams(const Sentence& s, std::size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<int>(s.begin() + static_cast<std::ptrdiff_t>(i),
                              s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

BleuStats sentence_stats(const Sentence& hyp, const Sentence& ref) {
  BleuStats st;
  st.hyp_len = static_cast<long>(hyp.size());
  st.ref_len = static_cast<long>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts h = count_ngrams(hyp, n);
    const NgramCounts r = count_ngrams(ref, n);
    long total = 0;
    long match = 0;
    for (const auto& [gram, count] : h) {
      total += count;
      auto it = r.find(gram);
      if (it != r.end()) match += std::min(count, it->second);
    }
    st.totals[n - 1] = total;
    st.matches[n - 1] = match;
  }
  return st;
}

BleuScore bleu_from_stats(const BleuStats& st) {
  BleuScore s;
  s.hyp_len = st.hyp_len;
  s.ref_len = st.ref_len;
  if (st.hyp_len == 0) return s;
  double log_sum = 0.0;
  int orders = 0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (st.totals[n] == 0) continue;  // no n-grams of this order anywhere
    s.precisions[n] = static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
    if (st.matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(s.precisions[n]);
    }
    ++orders;
  }
  s.brevity_penalty = st.hyp_len < st.ref_len
                          ? std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len))
                          : 1.0;
  if (zero || orders == 0) return s;
  s.bleu = 100.0 * s.brevity_penalty * std::exp(log_sum / orders);
  return s;
}

BleuScore corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references) {
  if (hypotheses.size() != references.size()) {
    throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw InputError("corpus_bleu: no references");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += sentence_stats(hypotheses[i], references[i]);
  return bleu_from_stats(total);
}

const char* bucket_name(LengthBucket b) {
  switch (b) {
    case LengthBucket::kShort: return "short";
    case LengthBucket::kMedium: return "medium";
    case LengthBucket::kLong: return "long";
  }
  return "?";
}

BucketThresholds bucket_thresholds(const std::vector<Sentence>& references) {
  if (references.size() < 3) throw InputError("length_buckets: need at least 3 references");
  std::vector<long> lengths;
  lengths.reserve(references.size());
  for (const auto& r : references) lengths.push_back(static_cast<long>(r.size()));
  std::sort(lengths.begin(), lengths.end());
  const auto n = static_cast<double>(lengths.size());
  auto nearest_rank = [&](int percent) {
    // ceil(p/100 * N) in exact integer arithmetic.
    const auto rank = static_cast<std::size_t>((percent * static_cast<long>(n) + 99) / 100);
    return lengths[std::max<std::size_t>(rank, 1) - 1];
  };
  return {nearest_rank(33), nearest_rank(66)};
}

std::vector<LengthBucket> length_buckets(const std::vector<Sentence>& references) {
  const BucketThresholds t = bucket_thresholds(references);
  std::vector<LengthBucket> out;
  out.reserve(references.size());
  for (const auto& r : references) {
    const auto len = static_cast<long>(r.size());
    out.push_back(len <= t.p33 ? LengthBucket::kShort : (len > t.p66 ? LengthBucket::kLong : LengthBucket::kMedium));
  }
  return out;
}

EvalReport evaluate_corpus(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references) {
  EvalReport report;
  report.corpus = corpus_bleu(hypotheses, references);
  if (references.size() < 3) return report;
  report.thresholds = bucket_thresholds(references);
  const auto labels = length_buckets(references);
  std::array<BleuStats, 3> stats{};
  for (std::size_t b = 0; b < 3; ++b) report.buckets[b].bucket = static_cast<LengthBucket>(b);
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto b = static_cast<std::size_t>(labels[i]);
    stats[b] += sentence_stats(hypotheses[i], references[i]);
    ++report.buckets[b].count;
  }
  for (std::size_t b = 0; b < 3; ++b) {
    if (report.buckets[b].count > 0) report.buckets[b].bleu = bleu_from_stats(stats[b]).bleu;
  }
  return report;
}

void write_eval_report_json(std::ostream& os, const EvalReport& r) {
  nlohmann::json j;
  j["bleu"] = r.corpus.bleu;
  j["precisions"] = r.corpus.precisions;
  j["brevity_penalty"] = r.corpus.brevity_penalty;
  j["hyp_len"] = r.corpus.hyp_len;
  j["ref_len"] = r.corpus.ref_len;
  j["thresholds"] = {{"p33", r.thresholds.p33}, {"p66", r.thresholds.p66}};
  for (const auto& b : r.buckets) {
    j["buckets"][bucket_name(b.bucket)] = {{"count", b.count}, {"bleu", b.bleu}};
  }
  os << j.dump(2) << '\n';
}

void write_eval_report_csv(std::ostream& os, const EvalReport& r) {
  os << "subset,count,bleu\n";
  os << std::fixed << std::setprecision(4);
  long total = 0;
  for (const auto& b : r.buckets) total += b.count;
  os << "all," << total << ',' << r.corpus.bleu << '\n';
  for (const auto& b : r.buckets) os << bucket_name(b.bucket) << ',' << b.count << ',' << b.bleu << '\n';
}

EvalReport read_eval_report_json(std::istream& is) {
  EvalReport r;
  try {
    nlohmann::json j;
    is >> j;
    r.corpus.bleu = j.at("bleu").get<double>();
    r.corpus.precisions = j.at("precisions").get<std::array<double, 4>>();
    r.corpus.brevity_penalty = j.at("brevity_penalty").get<double>();
    r.corpus.hyp_len = j.at("hyp_len").get<long>();
    r.corpus.ref_len = j.at("ref_len").get<long>();
    r.thresholds.p33 = j.at("thresholds").at("p33").get<long>();
    r.thresholds.p66 = j.at("thresholds").at("p66").get<long>();
    for (std::size_t b = 0; b < 3; ++b) {
      const auto& e = j.at("buckets").at(bucket_name(static_cast<LengthBucket>(b)));
      r.buckets[b] = {static_cast<LengthBucket>(b), e.at("count").get<long>(), e.at("bleu").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("eval report: ") + e.what());
  }
  return r;
}

}  // namespace unitmt
