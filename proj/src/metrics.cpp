#include "surt/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace surt::metrics {

EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0u : 1u),
                           at(i, j - 1) + 1, at(i - 1, j) + 1});
  EditCounts c;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (match ? 0u : 1u)) {
        if (!match) ++c.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++c.insertions;
      --j;
    } else {
      ++c.deletions;
      --i;
    }
  }
  return c;
}

WerReport score_recognition(const std::vector<ChannelPairTokens>& refs,
                            const std::vector<ChannelPairTokens>& hyps) {
  if (refs.size() != hyps.size()) throw ArgumentError("score_recognition: refs/hyps count differ");
  WerReport r;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::size_t n = refs[i][0].size() + refs[i][1].size();
    auto keep = edit_distance(refs[i][0], hyps[i][0]);
    keep += edit_distance(refs[i][1], hyps[i][1]);
    auto swap = edit_distance(refs[i][0], hyps[i][1]);
    swap += edit_distance(refs[i][1], hyps[i][0]);
    r.heat.errors += keep;
    r.heat.ref_tokens += n;
    const bool swapped = swap.total() < keep.total();
    r.best_perm.errors += swapped ? swap : keep;
    r.best_perm.ref_tokens += n;
    r.swapped += swapped;
  }
  return r;
}

double recall_at(const std::vector<int>& mu, std::size_t misses, int threshold) {
  const std::size_t total = mu.size() + misses;
  if (total == 0) return 0.0;
  std::size_t hit = 0;
  for (int m : mu) hit += std::abs(m) <= threshold;
  return double(hit) / double(total);
}

namespace {

std::optional<double> median(std::vector<int> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? double(v[n / 2]) : 0.5 * (double(v[n / 2 - 1]) + double(v[n / 2]));
}

}  // namespace

double EpReport::recall_at(int threshold, int channel) const {
  for (const auto& row : recall)
    if (row.threshold == threshold && row.channel == channel) return row.recall;
  throw ArgumentError("no recall row for threshold " + std::to_string(threshold));
}

EpReport ep_statistics(const std::vector<EpObservation>& obs, const std::vector<int>& thresholds) {
  EpReport r;
  std::map<int, std::vector<int>> mus;
  std::map<int, std::size_t> misses;
  for (int c : {0, 1, 2}) {
    r.per_channel[c];
    mus[c];
    misses[c] = 0;
  }
  for (const auto& o : obs) {
    if (o.channel != 1 && o.channel != 2) throw ArgumentError("channel must be 1 or 2");
    for (int c : {0, o.channel}) {
      auto& s = r.per_channel[c];
      ++s.utterances;
      if (!o.t_hat) {
        ++s.no_ep;
        ++misses[c];
        continue;
      }
      const int mu = *o.t_hat - o.t_eos;
      mus[c].push_back(mu);
      if (mu > 0) ++s.delayed;
      else if (mu < 0) ++s.premature;
      else ++s.exact;
    }
    if (o.t_hat) {
      r.mu.push_back(*o.t_hat - o.t_eos);
      r.mu_channel.push_back(o.channel);
      ++r.histogram[r.mu.back()];
    }
  }
  for (int c : {0, 1, 2}) {
    auto& s = r.per_channel[c];
    s.median_mu = median(mus[c]);
    if (!mus[c].empty()) {
      double sum = 0;
      for (int m : mus[c]) sum += m;
      s.mean_mu = sum / double(mus[c].size());
    }
  }
  auto sorted = thresholds;
  std::sort(sorted.begin(), sorted.end());
  for (int th : sorted)
    for (int c : {1, 2, 0}) r.recall.push_back({th, c, metrics::recall_at(mus[c], misses[c], th)});
  return r;
}

std::array<std::optional<double>, 2> leakage_probe(const Tensor& h1, const Tensor& h2,
                                                   const data::Interval& speech1,
                                                   const data::Interval& speech2) {
  if (h1.shape() != h2.shape()) throw DimensionError("leakage_probe: channel shapes differ");
  std::array<double, 2> num{0, 0}, den{0, 0};
  std::array<bool, 2> seen{false, false};
  for (std::size_t t = 0; t < h1.dim(0); ++t) {
    const int frame = int(t) + 1;
    const bool a1 = speech1.contains(frame), a2 = speech2.contains(frame);
    if (a1 == a2) continue;
    // Channel 1 leaks where only speaker 2 speaks, channel 2 where only speaker 1 does.
    const std::size_t c = a2 ? 0 : 1;
    const auto& h = c == 0 ? h1 : h2;
    seen[c] = true;
    for (std::size_t i = 0; i < h1.row_size(); ++i) {
      const double xbar = double(h1.at(t, i)) + double(h2.at(t, i));
      const double v = h.at(t, i);
      num[c] += v * v;
      den[c] += xbar * xbar;
    }
  }
  std::array<std::optional<double>, 2> out;
  for (std::size_t c = 0; c < 2; ++c)
    if (seen[c]) out[c] = den[c] > 0 ? std::sqrt(num[c] / den[c]) : 0.0;
  return out;
}

std::optional<double> correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ArgumentError("correlation: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(n);
  mb /= double(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

double channel_binding_rate(const std::vector<ChannelPairTokens>& refs,
                            const std::vector<ChannelPairTokens>& hyps) {
  if (refs.size() != hyps.size()) throw ArgumentError("channel_binding_rate: count mismatch");
  if (refs.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < refs.size(); ++i)
    ok += edit_distance(refs[i][0], hyps[i][0]).total() <
          edit_distance(refs[i][1], hyps[i][0]).total();
  return double(ok) / double(refs.size());
}

double distinct_channel_rate(const std::vector<ChannelPairTokens>& hyps) {
  if (hyps.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& h : hyps) n += h[0] != h[1];
  return double(n) / double(hyps.size());
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string recall_csv(const EpReport& r) {
  std::string out = "threshold,channel,recall\n";
  for (const auto& row : r.recall)
    out += std::to_string(row.threshold) + "," + (row.channel ? std::to_string(row.channel) : "all") +
           "," + fixed(row.recall) + "\n";
  return out;
}

std::string histogram_csv(const EpReport& r) {
  std::string out = "mu,count\n";
  for (const auto& [mu, count] : r.histogram)
    out += std::to_string(mu) + "," + std::to_string(count) + "\n";
  return out;
}

std::string wer_csv(const WerReport& r) {
  std::string out = "rule,substitutions,deletions,insertions,ref_tokens,ter\n";
  auto row = [&](const char* name, const TerReport& t) {
    out += std::string(name) + "," + std::to_string(t.errors.substitutions) + "," +
           std::to_string(t.errors.deletions) + "," + std::to_string(t.errors.insertions) + "," +
           std::to_string(t.ref_tokens) + "," + fixed(t.ter()) + "\n";
  };
  row("heat", r.heat);
  row("best_perm", r.best_perm);
  return out;
}

}  // namespace surt::metrics
