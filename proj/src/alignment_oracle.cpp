#include "surt/alignment_oracle.h"

#include <algorithm>
#include <cmath>
#include <vector>

namespace surt::oracle {

namespace {

struct Walker {
  const rnnt::BasicLattice<double>& lp;
  std::span<const int> Y;
  std::size_t blank;
  std::vector<double> path_log_probs;

  // Extends a partial path sitting at node (t, u) with accumulated score.
  void walk(std::size_t t, std::size_t u, double score) {
    const std::size_t last = lp.frames - 1;
    if (t == last && u == lp.labels) {
      path_log_probs.push_back(score + lp.at(t, u, blank));
      return;
    }
    if (t < last) walk(t + 1, u, score + lp.at(t, u, blank));
    if (u < lp.labels) walk(t, u + 1, score + lp.at(t, u, std::size_t(Y[u])));
  }
};

}  // namespace

EnumerationResult enumerate_alignments(const rnnt::BasicLattice<double>& lp,
                                       std::span<const int> Y, int blank) {
  if (lp.frames + lp.labels > kMaxEnumerableSize) {
    throw ArgumentError("enumerate_alignments: T + U = " +
                        std::to_string(lp.frames + lp.labels) + " exceeds " +
                        std::to_string(kMaxEnumerableSize));
  }
  if (lp.frames == 0) throw ArgumentError("enumerate_alignments: no frames");
  if (Y.size() != lp.labels) throw ArgumentError("enumerate_alignments: |Y| != U");
  Walker w{lp, Y, std::size_t(blank), {}};
  w.walk(0, 0, 0.0);

  EnumerationResult r;
  r.path_count = w.path_log_probs.size();
  const double top = *std::max_element(w.path_log_probs.begin(), w.path_log_probs.end());
  double scaled = 0;
  for (double s : w.path_log_probs) {
    scaled += std::exp(s - top);
    r.total += std::exp(s);
  }
  r.log_total = top + std::log(scaled);
  return r;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace surt::oracle
