#include "surt/lattice.h"

#include <algorithm>
#include <limits>
#include <memory>

namespace surt::rnnt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

template <typename T>
void check_reference(const BasicLattice<T>& lp, std::span<const int> Y, int blank) {
  if (lp.frames == 0) throw ArgumentError("rnnt_loss: lattice has no frames");
  if (Y.size() != lp.labels) {
    throw ArgumentError("rnnt_loss: reference of length " + std::to_string(Y.size()) +
                        " does not fit a lattice with label budget " +
                        std::to_string(lp.labels));
  }
  if (blank < 0 || std::size_t(blank) >= lp.vocab) {
    throw ArgumentError("rnnt_loss: blank id outside vocabulary");
  }
  for (int y : Y) {
    if (y < 0 || std::size_t(y) >= lp.vocab) {
      throw ArgumentError("rnnt_loss: token id " + std::to_string(y) +
                          " outside vocabulary of " + std::to_string(lp.vocab));
    }
    if (y == blank) throw ArgumentError("rnnt_loss: reference contains blank");
  }
}

// alpha(t, u): log prob of reaching node (t, u) having emitted Y[0..u).
template <typename T>
std::vector<double> forward_variables(const BasicLattice<T>& lp, std::span<const int> Y,
                                      int blank) {
  const std::size_t Tn = lp.frames, U1 = lp.labels + 1;
  std::vector<double> alpha(Tn * U1, kNegInf);
  alpha[0] = 0.0;
  for (std::size_t t = 0; t < Tn; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha[(t - 1) * U1 + u] + double(lp.at(t - 1, u, std::size_t(blank)));
      if (u > 0) {
        a = log_add(a, alpha[t * U1 + u - 1] +
                           double(lp.at(t, u - 1, std::size_t(Y[u - 1]))));
      }
      alpha[t * U1 + u] = a;
    }
  }
  return alpha;
}

}  // namespace

void check_penalty_args(std::size_t frames, int t_eos, const PenaltyConfig& cfg) {
  if (cfg.alpha < 0) throw ArgumentError("latency penalty alpha must be >= 0");
  if (cfg.t_buffer < 0) throw ArgumentError("latency penalty t_buffer must be >= 0");
  if (t_eos < 1 || std::size_t(t_eos) > frames) {
    throw ArgumentError("t_eos " + std::to_string(t_eos) + " outside frames 1.." +
                        std::to_string(frames));
  }
}

template <typename T>
BasicLattice<T> apply_latency_penalty(const BasicLattice<T>& lp, int t_eos, int eos_id,
                                      const PenaltyConfig& cfg) {
  if (!cfg.enabled) return lp;
  check_penalty_args(lp.frames, t_eos, cfg);
  if (eos_id < 0 || std::size_t(eos_id) >= lp.vocab) {
    throw ArgumentError("eos id outside vocabulary");
  }
  BasicLattice<T> out = lp;
  for (std::size_t t = 0; t < lp.frames; ++t) {
    const T cut = T(penalty_amount(int(t) + 1, t_eos, cfg));
    for (std::size_t u = 0; u <= lp.labels; ++u) out.at(t, u, std::size_t(eos_id)) -= cut;
  }
  return out;
}

template <typename T>
double rnnt_loss_value(const BasicLattice<T>& lp, std::span<const int> Y, int blank) {
  check_reference(lp, Y, blank);
  const auto alpha = forward_variables(lp, Y, blank);
  const std::size_t U1 = lp.labels + 1;
  return -(alpha[(lp.frames - 1) * U1 + lp.labels] +
           double(lp.at(lp.frames - 1, lp.labels, std::size_t(blank))));
}

template <typename T>
LossResult<T> rnnt_loss(const BasicLattice<T>& lp, std::span<const int> Y, int blank) {
  check_reference(lp, Y, blank);
  const std::size_t Tn = lp.frames, U = lp.labels, U1 = U + 1;
  const std::size_t b = std::size_t(blank);
  const auto alpha = forward_variables(lp, Y, blank);

  // beta(t, u): log prob of finishing from node (t, u), final blank included.
  std::vector<double> beta(Tn * U1, kNegInf);
  for (std::size_t t = Tn; t-- > 0;) {
    for (std::size_t u = U1; u-- > 0;) {
      if (t == Tn - 1 && u == U) {
        beta[t * U1 + u] = double(lp.at(t, u, b));
        continue;
      }
      double v = kNegInf;
      if (t + 1 < Tn) v = double(lp.at(t, u, b)) + beta[(t + 1) * U1 + u];
      if (u < U) {
        v = log_add(v, double(lp.at(t, u, std::size_t(Y[u]))) + beta[t * U1 + u + 1]);
      }
      beta[t * U1 + u] = v;
    }
  }

  const double log_p = alpha[(Tn - 1) * U1 + U] + double(lp.at(Tn - 1, U, b));
  LossResult<T> res;
  res.loss = -log_p;
  res.grad = BasicLattice<T>(Tn, U, lp.vocab);
  for (std::size_t t = 0; t < Tn; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      const double a = alpha[t * U1 + u];
      if (a == kNegInf) continue;
      double next_blank = kNegInf;
      if (t + 1 < Tn) {
        next_blank = beta[(t + 1) * U1 + u];
      } else if (u == U) {
        next_blank = 0.0;
      }
      if (next_blank != kNegInf) {
        res.grad.at(t, u, b) = T(-std::exp(a + double(lp.at(t, u, b)) + next_blank - log_p));
      }
      if (u < U) {
        const std::size_t y = std::size_t(Y[u]);
        const double nb = beta[t * U1 + u + 1];
        if (nb != kNegInf) {
          res.grad.at(t, u, y) = T(-std::exp(a + double(lp.at(t, u, y)) + nb - log_p));
        }
      }
    }
  }
  return res;
}

// --- Recorded forms ----------------------------------------------------------

template <typename T>
nn::Var<T> joint_lattice(nn::Var<T> pf, nn::Var<T> pg, nn::Var<T> W, nn::Var<T> b) {
  for (const auto* v : {&pf, &pg, &W, &b}) {
    if (!v->graph || v->graph != pf.graph) throw UsageError("joint_lattice: operands on different graphs");
  }
  nn::Graph<T>& g = *pf.graph;
  const auto& F = pf.value();
  const auto& P = pg.value();
  const auto& Wt = W.value();
  const auto& Bt = b.value();
  if (F.rank() != 2 || P.rank() != 2 || F.dim(1) != P.dim(1)) {
    throw DimensionError("joint: encoder projection " + shape_string(F.shape()) +
                         " and prediction projection " + shape_string(P.shape()) +
                         " must share the joint dimension");
  }
  if (Wt.rank() != 2 || Wt.dim(0) != F.dim(1) || Bt.rank() != 1 || Bt.dim(0) != Wt.dim(1)) {
    throw DimensionError("joint: output layer " + shape_string(Wt.shape()) + " / " +
                         shape_string(Bt.shape()) + " incompatible with joint dim " +
                         std::to_string(F.dim(1)));
  }
  const std::size_t Tn = F.dim(0), U1 = P.dim(0), J = F.dim(1), V = Wt.dim(1);
  BasicTensor<T> out({Tn, U1, V});
  auto hidden = std::make_shared<std::vector<T>>(Tn * U1 * J);
  for (std::size_t t = 0; t < Tn; ++t) {
    for (std::size_t u = 0; u < U1; ++u) {
      const std::size_t node = t * U1 + u;
      joint_node<T>(F.row(t), P.row(u), Wt.data(), Bt.values(),
                    std::span<T>(hidden->data() + node * J, J),
                    out.values().subspan(node * V, V));
    }
  }
  return g.record(
      std::move(out), {pf.id, pg.id, W.id, b.id},
      [fi = pf.id, gi = pg.id, wi = W.id, bi = b.id, Tn, U1, J, V, hidden](
          nn::Graph<T>& g, std::size_t self) {
        const auto& G = *g.grad_if_any(self);
        const auto& Y = g.value(self);
        const auto& Wt = g.value(wi);
        auto* dF = g.requires_grad(fi) ? &g.grad(fi) : nullptr;
        auto* dP = g.requires_grad(gi) ? &g.grad(gi) : nullptr;
        auto* dW = g.requires_grad(wi) ? &g.grad(wi) : nullptr;
        auto* dB = g.requires_grad(bi) ? &g.grad(bi) : nullptr;
        std::vector<T> dlogit(V), dpre(J);
        for (std::size_t node = 0; node < Tn * U1; ++node) {
          const T* gn = G.data() + node * V;
          T total = 0;
          bool any = false;
          for (std::size_t v = 0; v < V; ++v) {
            total += gn[v];
            any = any || gn[v] != T{0};
          }
          if (!any) continue;
          const T* yn = Y.data() + node * V;
          for (std::size_t v = 0; v < V; ++v) dlogit[v] = gn[v] - std::exp(yn[v]) * total;
          const T* z = hidden->data() + node * J;
          for (std::size_t j = 0; j < J; ++j) {
            const T* w = Wt.data() + j * V;
            T acc = 0;
            for (std::size_t v = 0; v < V; ++v) acc += dlogit[v] * w[v];
            dpre[j] = acc * (T{1} - z[j] * z[j]);
            if (dW) {
              T* dw = dW->data() + j * V;
              for (std::size_t v = 0; v < V; ++v) dw[v] += z[j] * dlogit[v];
            }
          }
          if (dB)
            for (std::size_t v = 0; v < V; ++v) (*dB)[v] += dlogit[v];
          const std::size_t t = node / U1, u = node % U1;
          if (dF)
            for (std::size_t j = 0; j < J; ++j) (*dF)[t * J + j] += dpre[j];
          if (dP)
            for (std::size_t j = 0; j < J; ++j) (*dP)[u * J + j] += dpre[j];
        }
      });
}

template <typename T>
nn::Var<T> latency_penalty(nn::Var<T> lattice, int t_eos, int eos_id,
                           const PenaltyConfig& cfg) {
  if (!cfg.enabled) return lattice;
  const auto& L = lattice.value();
  if (L.rank() != 3) throw DimensionError("latency_penalty: expected a lattice tensor");
  check_penalty_args(L.dim(0), t_eos, cfg);
  if (eos_id < 0 || std::size_t(eos_id) >= L.dim(2)) {
    throw ArgumentError("eos id outside vocabulary");
  }
  BasicTensor<T> offset(L.shape());
  const std::size_t U1 = L.dim(1), V = L.dim(2);
  for (std::size_t t = 0; t < L.dim(0); ++t) {
    const T cut = T(penalty_amount(int(t) + 1, t_eos, cfg));
    for (std::size_t u = 0; u < U1; ++u) offset[(t * U1 + u) * V + std::size_t(eos_id)] = -cut;
  }
  return nn::add_constant(lattice, offset);
}

template <typename T>
nn::Var<T> transducer_loss(nn::Var<T> lattice, const std::vector<int>& Y, int blank) {
  if (!lattice.graph) throw UsageError("transducer_loss on an unbound Var");
  auto lp = BasicLattice<T>::from_tensor(lattice.value());
  auto res = std::make_shared<LossResult<T>>(rnnt_loss<T>(lp, Y, blank));
  return lattice.graph->record(
      BasicTensor<T>::scalar(T(res->loss)), {lattice.id},
      [li = lattice.id, res](nn::Graph<T>& g, std::size_t self) {
        const T gs = (*g.grad_if_any(self))[0];
        auto& dL = g.grad(li);
        for (std::size_t i = 0; i < dL.size(); ++i) dL[i] += gs * res->grad.values[i];
      });
}

#define SURT_INSTANTIATE_LATTICE(T)                                              \
  template BasicLattice<T> apply_latency_penalty<T>(const BasicLattice<T>&, int, \
                                                    int, const PenaltyConfig&);  \
  template LossResult<T> rnnt_loss<T>(const BasicLattice<T>&, std::span<const int>, int); \
  template double rnnt_loss_value<T>(const BasicLattice<T>&, std::span<const int>, int); \
  template nn::Var<T> joint_lattice<T>(nn::Var<T>, nn::Var<T>, nn::Var<T>, nn::Var<T>); \
  template nn::Var<T> latency_penalty<T>(nn::Var<T>, int, int, const PenaltyConfig&); \
  template nn::Var<T> transducer_loss<T>(nn::Var<T>, const std::vector<int>&, int);

SURT_INSTANTIATE_LATTICE(float)
SURT_INSTANTIATE_LATTICE(double)

}  // namespace surt::rnnt
