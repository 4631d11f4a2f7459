#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "surt/datagen.h"
#include "surt/tensor.h"

namespace surt::metrics {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t total() const { return substitutions + deletions + insertions; }
  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    return *this;
  }
  bool operator==(const EditCounts&) const = default;
};

// Unit-cost Levenshtein alignment. On equal cost the backtrace prefers a
// substitution (or match), then an insertion, then a deletion.
EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);

struct TerReport {
  EditCounts errors;
  std::size_t ref_tokens = 0;
  double ter() const { return ref_tokens ? double(errors.total()) / double(ref_tokens) : 0.0; }
};

struct WerReport {
  TerReport heat;
  TerReport best_perm;
  std::size_t swapped = 0;  // samples where best-perm swapped the channels
};

// refs and hyps per sample, eos already stripped. refs[i][0] is the
// first-spoken reference.
using ChannelPairTokens = std::array<std::vector<int>, 2>;
WerReport score_recognition(const std::vector<ChannelPairTokens>& refs,
                            const std::vector<ChannelPairTokens>& hyps);

struct EpObservation {
  int channel = 1;  // 1 or 2
  int t_eos = 0;
  std::optional<int> t_hat;
};

struct RecallRow {
  int threshold = 0;
  int channel = 0;  // 0 = both channels pooled
  double recall = 0;
};

struct ChannelEpSummary {
  std::size_t utterances = 0;
  std::size_t delayed = 0, premature = 0, exact = 0, no_ep = 0;
  std::optional<double> median_mu;
  std::optional<double> mean_mu;
};

struct EpReport {
  std::vector<int> mu;  // detected endpoints only, observation order
  std::vector<int> mu_channel;
  std::map<int, ChannelEpSummary> per_channel;  // 0 = pooled
  std::vector<RecallRow> recall;
  std::map<int, std::size_t> histogram;  // mu -> count, detected only

  double recall_at(int threshold, int channel) const;
};

// mu = t_hat - t_eos; recall@theta counts no-EP utterances as misses.
EpReport ep_statistics(const std::vector<EpObservation>& obs, const std::vector<int>& thresholds);

// Recall over an explicit mu list plus a number of undetected utterances.
double recall_at(const std::vector<int>& mu, std::size_t misses, int threshold);

// sqrt(sum |H_c|^2 / sum |Xbar|^2) over frames where only the other speaker
// is active. Channel 1 is compared against speaker 2's exclusive frames and
// vice versa; nullopt when no such frame exists.
std::array<std::optional<double>, 2> leakage_probe(const Tensor& h1, const Tensor& h2,
                                                   const data::Interval& speech1,
                                                   const data::Interval& speech2);

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> correlation(const std::vector<double>& a, const std::vector<double>& b);

// Fraction of samples whose channel-1 hypothesis is closer (edit distance) to
// the first-spoken reference than to the second. Ties count as failures.
double channel_binding_rate(const std::vector<ChannelPairTokens>& refs,
                            const std::vector<ChannelPairTokens>& hyps);

// Fraction of samples whose two channel hypotheses differ.
double distinct_channel_rate(const std::vector<ChannelPairTokens>& hyps);

// CSV / JSON emitters.
std::string recall_csv(const EpReport& r);
std::string histogram_csv(const EpReport& r);
std::string wer_csv(const WerReport& r);

}  // namespace surt::metrics
