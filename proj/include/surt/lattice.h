#pragma once

// The transducer alignment lattice: joint network, forward-backward loss and
// the eos latency penalty.
//
// Lattice rows are indexed 0-based (row i holds frame i + 1). Timestamps that
// cross module boundaries (t_eos, decoded endpoints, penalty arguments) are
// 1-based frame numbers.

#include <cmath>
#include <span>
#include <vector>

#include "surt/autodiff.h"
#include "surt/kernels.h"
#include "surt/vocab.h"

namespace surt::rnnt {

// log P(v | z_{t,u}) over a frames x (labels + 1) grid.
template <typename T>
struct BasicLattice {
  std::size_t frames = 0;
  std::size_t labels = 0;  // U, reference length
  std::size_t vocab = 0;
  std::vector<T> values;

  BasicLattice() = default;
  BasicLattice(std::size_t t, std::size_t u, std::size_t v)
      : frames(t), labels(u), vocab(v), values(t * (u + 1) * v, T{0}) {}

  std::size_t index(std::size_t t, std::size_t u, std::size_t v) const {
    return (t * (labels + 1) + u) * vocab + v;
  }
  T& at(std::size_t t, std::size_t u, std::size_t v) { return values[index(t, u, v)]; }
  T at(std::size_t t, std::size_t u, std::size_t v) const { return values[index(t, u, v)]; }
  std::span<T> node(std::size_t t, std::size_t u) {
    return std::span<T>(values).subspan(index(t, u, 0), vocab);
  }
  std::span<const T> node(std::size_t t, std::size_t u) const {
    return std::span<const T>(values).subspan(index(t, u, 0), vocab);
  }

  BasicTensor<T> to_tensor() const { return BasicTensor<T>({frames, labels + 1, vocab}, values); }
  static BasicLattice from_tensor(const BasicTensor<T>& t) {
    if (t.rank() != 3 || t.dim(1) == 0) {
      throw DimensionError("lattice tensor must be [T x (U+1) x V], got " +
                           shape_string(t.shape()));
    }
    BasicLattice l;
    l.frames = t.dim(0);
    l.labels = t.dim(1) - 1;
    l.vocab = t.dim(2);
    l.values.assign(t.values().begin(), t.values().end());
    return l;
  }
};

using Lattice = BasicLattice<float>;

struct PenaltyConfig {
  double alpha = 2.0;  // per frame
  int t_buffer = 3;    // frames
  bool enabled = false;
};

// max(0, alpha (frame - t_buffer - t_eos)); zero when disabled. `frame` and
// `t_eos` are 1-based.
inline double penalty_amount(int frame, int t_eos, const PenaltyConfig& cfg) {
  if (!cfg.enabled) return 0.0;
  return std::max(0.0, cfg.alpha * double(frame - cfg.t_buffer - t_eos));
}

// Validates cfg and t_eos against a lattice of `frames` rows.
void check_penalty_args(std::size_t frames, int t_eos, const PenaltyConfig& cfg);

// Subtracts the penalty from every eos entry, at all label positions. The
// other tokens are untouched and nothing is renormalized.
template <typename T>
BasicLattice<T> apply_latency_penalty(const BasicLattice<T>& lp, int t_eos, int eos_id,
                                      const PenaltyConfig& cfg);

template <typename T>
struct LossResult {
  double loss = 0;             // -log P(Y | X)
  BasicLattice<T> grad;        // d loss / d log-probs
};

// Forward-backward over the lattice in 64-bit log space. Y excludes blank;
// its length must equal lp.labels.
template <typename T>
LossResult<T> rnnt_loss(const BasicLattice<T>& lp, std::span<const int> Y, int blank);

// -log P(Y | X) only.
template <typename T>
double rnnt_loss_value(const BasicLattice<T>& lp, std::span<const int> Y, int blank);

// One lattice node of the joint network:
//   z = tanh(pf + pg); out = log_softmax(z W + b).
// z receives the hidden activation.
template <typename T>
inline void joint_node(std::span<const T> pf, std::span<const T> pg, const T* W,
                       std::span<const T> b, std::span<T> z, std::span<T> out) {
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = std::tanh(pf[j] + pg[j]);
  kernels::affine_row<T>(z, W, b, out);
  kernels::log_softmax_row<T>(out, out);
}

// --- Recorded forms ----------------------------------------------------------

// pf [T x J], pg [(U+1) x J], W [J x V], b [V] -> log-probs [T x (U+1) x V].
template <typename T>
nn::Var<T> joint_lattice(nn::Var<T> pf, nn::Var<T> pg, nn::Var<T> W, nn::Var<T> b);

template <typename T>
nn::Var<T> latency_penalty(nn::Var<T> lattice, int t_eos, int eos_id,
                           const PenaltyConfig& cfg);

// Scalar transducer loss of a [T x (U+1) x V] log-prob tensor.
template <typename T>
nn::Var<T> transducer_loss(nn::Var<T> lattice, const std::vector<int>& Y, int blank);

}  // namespace surt::rnnt
