#pragma once

// Brute-force reference for the transducer likelihood: walks every monotonic
// alignment path explicitly. Deliberately shares no code with the dynamic
// programming in lattice.cpp.

#include <cstdint>
#include <span>

#include "surt/lattice.h"

namespace surt::oracle {

inline constexpr std::size_t kMaxEnumerableSize = 16;  // T + U

struct EnumerationResult {
  double log_total = 0;       // log of the summed path probability
  double total = 0;           // summed path probability
  std::uint64_t path_count = 0;
};

// Sums P(path) over all alignments of Y to the lattice. Refuses (ArgumentError)
// when T + U exceeds kMaxEnumerableSize.
EnumerationResult enumerate_alignments(const rnnt::BasicLattice<double>& lp,
                                       std::span<const int> Y, int blank);

// C(n, k) by the multiplicative formula.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

}  // namespace surt::oracle
