#include "surt/checks.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "surt/alignment_oracle.h"
#include "surt/kernels.h"
#include "surt/model.h"

namespace surt::checks {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

double max_param_grad_error(nn::BasicParamStore<double>& store, const LossBuilder& build,
                            double eps, std::string* worst_name) {
  store.clear_grads();
  {
    nn::Graph<double> g;
    auto loss = build(g, store);
    g.backward(loss);
    g.accumulate_into(store);
  }
  auto eval = [&] {
    nn::Graph<double> g;
    return build(g, store).value().item();
  };
  double worst = 0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& value = store.value(p);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      auto at = [&](double k) {
        value[i] = saved + k * eps;
        return eval();
      };
      // Five-point central stencil: truncation error O(eps^4) rather than O(eps^2).
      const double numeric = (8 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12 * eps);
      value[i] = saved;
      const double analytic = store.entry(p).grad ? (*store.entry(p).grad)[i] : 0.0;
      const double err = relative_error(analytic, numeric);
      if (err > worst) {
        worst = err;
        if (worst_name) *worst_name = store.name(p);
      }
    }
  }
  return worst;
}

OracleReport lattice_oracle_check(std::uint64_t seed, std::size_t lattices) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.5);
  OracleReport r;
  for (std::size_t n = 0; n < lattices; ++n) {
    const std::size_t T = 1 + rng() % 6, U = rng() % 5, V = 2 + rng() % 4;
    rnnt::BasicLattice<double> lp(T, U, V);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u <= U; ++u) {
        auto node = lp.node(t, u);
        for (auto& v : node) v = dist(rng);
        kernels::log_softmax_row<double>(node, node);
      }
    std::vector<int> y(U);
    for (auto& v : y) v = 1 + int(rng() % (V - 1));
    const double dp = rnnt::rnnt_loss_value(lp, y, 0);
    const auto en = oracle::enumerate_alignments(lp, y, 0);
    r.max_dev = std::max(r.max_dev, std::abs(dp + en.log_total));
    r.path_mismatches += en.path_count != oracle::binomial(T + U - 1, U);
    ++r.lattices;
  }
  return r;
}

namespace {

ChannelTarget random_target(std::mt19937_64& rng, const TokenVocab& vocab, int frames) {
  ChannelTarget t;
  const int n = 1 + int(rng() % 2);
  for (int i = 0; i < n; ++i) t.labels.push_back(vocab.symbols[rng() % vocab.symbols.size()]);
  t.labels.push_back(vocab.eos);
  t.t_eos = 1 + int(rng() % std::uint64_t(frames));
  return t;
}

double assignment_gap(const SurtModel<double>& model, const BasicTensor<double>& X,
                      const ChannelTarget& r1, const ChannelTarget& r2) {
  double worst = 1e300;
  for (bool penalized : {false, true}) {
    const rnnt::PenaltyConfig pen{2.0, 0, penalized};
    nn::Graph<double> g;
    const double keep = heat_loss(g, model, g.constant(X), r1, r2, pen, true).total.value().item();
    const double swap = heat_loss(g, model, g.constant(X), r2, r1, pen, true).total.value().item();
    worst = std::min(worst, std::abs(keep - swap));
  }
  return worst;
}

}  // namespace

GradcheckReport model_gradcheck(std::uint64_t seed, std::size_t models, double eps) {
  GradcheckReport r;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t m = 0; m < models; ++m) {
    ModelConfig mc;
    mc.unmix_dim = 3;
    mc.unmix_kernel = 2;
    mc.enc_dim = 4;
    mc.pred_dim = 3;
    mc.joint_dim = 4;
    mc.mask_bias_spread = 3.0;  // keeps the two channels apart
    if (m % 2) {
      mc.encoder = "tt";
      mc.chunk = 2;
    }
    const std::size_t D = 3;
    const int frames = 5;
    const auto vocab = TokenVocab::with_symbols(2);
    SurtModel<double> model(mc, D, vocab, rng());
    BasicTensor<double> X({std::size_t(frames), D});
    for (auto& v : X.values()) v = dist(rng);
    const bool pit = m % 4 >= 2;
    auto r1 = random_target(rng, vocab, frames);
    auto r2 = random_target(rng, vocab, frames);
    // The PIT minimum has a kink where both assignments score alike; keep the
    // finite-difference stencil well away from it.
    for (int attempt = 0; pit && assignment_gap(model, X, r1, r2) < 0.05; ++attempt) {
      if (attempt == 1000) throw UsageError("model_gradcheck: no PIT instance away from the tie");
      for (auto& v : X.values()) v = dist(rng);
      r1 = random_target(rng, vocab, frames);
      r2 = random_target(rng, vocab, frames);
    }
    for (bool penalized : {false, true}) {
      // t_buffer 0 so the penalty is active inside a five-frame lattice.
      const rnnt::PenaltyConfig pen{2.0, 0, penalized};
      auto build = [&](nn::Graph<double>& g, const nn::BasicParamStore<double>&) {
        auto x = g.constant(X);
        return pit ? pit_loss(g, model, x, r1, r2, pen, true).total
                   : heat_loss(g, model, x, r1, r2, pen, true).total;
      };
      std::string name;
      const double err = max_param_grad_error(model.params(), build, eps, &name);
      if (err > std::max(r.max_rel_err, r.max_rel_err_penalized))
        r.worst = "model " + std::to_string(m) + " " + mc.encoder + "/" + (pit ? "pit " : "heat ") +
                  (penalized ? "penalized " : "") + name;
      auto& slot = penalized ? r.max_rel_err_penalized : r.max_rel_err;
      slot = std::max(slot, err);
      r.entries += model.parameter_count();
    }
    ++r.models;
  }
  return r;
}

}  // namespace surt::checks
