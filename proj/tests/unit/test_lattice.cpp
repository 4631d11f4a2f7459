#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_check.h"
#include "surt/alignment_oracle.h"
#include "surt/lattice.h"

using namespace surt;
using namespace surt::rnnt;

namespace {

BasicLattice<double> random_lattice(std::size_t T, std::size_t U, std::size_t V,
                                    std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.5);
  BasicLattice<double> lp(T, U, V);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      auto node = lp.node(t, u);
      for (auto& v : node) v = dist(rng);
      kernels::log_softmax_row<double>(node, node);
    }
  return lp;
}

std::vector<int> random_reference(std::size_t U, std::size_t V, std::mt19937_64& rng) {
  std::vector<int> y(U);
  for (auto& v : y) v = 1 + int(rng() % (V - 1));
  return y;
}

}  // namespace

TEST_CASE("single-node lattice loss is -log p_blank") {
  BasicLattice<double> lp(1, 0, 3);
  lp.at(0, 0, 0) = std::log(0.2);
  lp.at(0, 0, 1) = std::log(0.5);
  lp.at(0, 0, 2) = std::log(0.3);
  CHECK(rnnt_loss_value(lp, std::vector<int>{}, 0) == doctest::Approx(-std::log(0.2)));
}

TEST_CASE("two-frame one-label lattice equals its two explicit paths") {
  std::mt19937_64 rng(1);
  auto lp = random_lattice(2, 1, 3, rng);
  const int y = 2;
  auto p = [&](std::size_t t, std::size_t u, int v) { return std::exp(lp.at(t, u, std::size_t(v))); };
  // Frames are rows 0 and 1 here.
  const double want = -std::log(p(0, 0, y) * p(0, 1, 0) * p(1, 1, 0) +
                                p(0, 0, 0) * p(1, 0, y) * p(1, 1, 0));
  CHECK(rnnt_loss_value(lp, std::vector<int>{y}, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("DP loss matches alignment enumeration on random lattices") {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t T = 1 + rng() % 6, U = rng() % 5, V = 2 + rng() % 4;
    auto lp = random_lattice(T, U, V, rng);
    auto y = random_reference(U, V, rng);
    const double dp = rnnt_loss_value(lp, y, 0);
    const auto en = oracle::enumerate_alignments(lp, y, 0);
    worst = std::max(worst, std::abs(dp + en.log_total));
    CHECK(en.path_count == oracle::binomial(T + U - 1, U));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("oracle path counts") {
  std::mt19937_64 rng(3);
  auto count = [&](std::size_t T, std::size_t U) {
    auto lp = random_lattice(T, U, 3, rng);
    return oracle::enumerate_alignments(lp, random_reference(U, 3, rng), 0).path_count;
  };
  CHECK(count(2, 1) == 2);
  CHECK(count(3, 2) == 6);
  CHECK(count(5, 0) == 1);
  auto big = random_lattice(12, 5, 3, rng);
  CHECK_THROWS_AS(oracle::enumerate_alignments(big, random_reference(5, 3, rng), 0),
                  ArgumentError);
}

TEST_CASE("latency penalty constants") {
  PenaltyConfig cfg{2.0, 3, true};
  CHECK(penalty_amount(14, 10, cfg) == 2.0);
  CHECK(penalty_amount(13, 10, cfg) == 0.0);
  for (int k = -4; k <= 6; ++k) {
    CHECK(penalty_amount(10 + 3 + k, 10, cfg) == (k > 0 ? 2.0 * k : 0.0));
  }
  std::mt19937_64 rng(4);
  auto lp = random_lattice(20, 2, 5, rng);
  const int eos = 4;
  auto pen = apply_latency_penalty(lp, 10, eos, cfg);
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t u = 0; u <= 2; ++u)
      for (std::size_t v = 0; v < 5; ++v) {
        const double cut = v == std::size_t(eos) ? penalty_amount(int(t) + 1, 10, cfg) : 0.0;
        CHECK(lp.at(t, u, v) - pen.at(t, u, v) == doctest::Approx(cut));
      }
}

TEST_CASE("zero alpha and disabled penalty are identities") {
  std::mt19937_64 rng(5);
  auto lp = random_lattice(8, 3, 5, rng);
  std::vector<int> y = {1, 2, 4};
  const double base = rnnt_loss_value(lp, y, 0);
  auto zero = apply_latency_penalty(lp, 3, 4, PenaltyConfig{0.0, 3, true});
  CHECK(rnnt_loss_value(zero, y, 0) == base);
  auto off = apply_latency_penalty(lp, 3, 4, PenaltyConfig{2.0, 3, false});
  CHECK(off.values == lp.values);
}

TEST_CASE("penalty arguments are validated") {
  BasicLattice<double> lp(5, 1, 3);
  CHECK_THROWS_AS(apply_latency_penalty(lp, 0, 2, PenaltyConfig{2, 3, true}), ArgumentError);
  CHECK_THROWS_AS(apply_latency_penalty(lp, 6, 2, PenaltyConfig{2, 3, true}), ArgumentError);
  CHECK_THROWS_AS(apply_latency_penalty(lp, 2, 2, PenaltyConfig{-1, 3, true}), ArgumentError);
}

TEST_CASE("penalized loss never drops below the unpenalized loss") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 2 + rng() % 10, U = 1 + rng() % 4, V = 4;
    const int eos = 3;
    auto lp = random_lattice(T, U, V, rng);
    auto y = random_reference(U, V - 1, rng);
    y.back() = eos;
    const int t_eos = 1 + int(rng() % T);
    const double base = rnnt_loss_value(lp, y, 0);
    const double pen = rnnt_loss_value(
        apply_latency_penalty(lp, t_eos, eos, PenaltyConfig{2.0, int(rng() % 4), true}), y, 0);
    CHECK(pen >= base);
  }
}

TEST_CASE("penalty equality when no eos emission lies beyond the grace period") {
  std::mt19937_64 rng(7);
  auto lp = random_lattice(6, 2, 4, rng);
  std::vector<int> y = {1, 3};
  // t_eos = T: no frame exceeds t_eos + t_buffer.
  auto pen = apply_latency_penalty(lp, 6, 3, PenaltyConfig{2.0, 0, true});
  CHECK(rnnt_loss_value(pen, y, 0) == rnnt_loss_value(lp, y, 0));
}

TEST_CASE("loss is invariant to shifting a node's logits") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> dist;
  const std::size_t T = 4, U = 2, V = 5;
  BasicLattice<double> logits(T, U, V);
  for (auto& v : logits.values) v = dist(rng);
  auto normalize = [&](BasicLattice<double> l) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u <= U; ++u) kernels::log_softmax_row<double>(l.node(t, u), l.node(t, u));
    return l;
  };
  std::vector<int> y = {2, 4};
  const double base = rnnt_loss_value(normalize(logits), y, 0);
  auto shifted = logits;
  for (auto& v : shifted.node(2, 1)) v += 7.25;
  CHECK(rnnt_loss_value(normalize(shifted), y, 0) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("gradient is zero off the valid transitions") {
  std::mt19937_64 rng(9);
  auto lp = random_lattice(5, 3, 6, rng);
  std::vector<int> y = {2, 5, 1};
  auto res = rnnt_loss(lp, y, 0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t u = 0; u <= 3; ++u)
      for (std::size_t v = 0; v < 6; ++v) {
        const bool blank_ok = v == 0 && (t + 1 < 5 || u == 3);
        const bool label_ok = u < 3 && int(v) == y[u];
        if (!blank_ok && !label_ok) CHECK(res.grad.at(t, u, v) == 0.0);
      }
}

TEST_CASE("loss gradient wrt log-probs matches finite differences") {
  std::mt19937_64 rng(10);
  for (bool penalized : {false, true}) {
    auto lp = random_lattice(3, 2, 4, rng);
    std::vector<int> y = {1, 3};
    PenaltyConfig cfg{2.0, 0, penalized};
    auto eval = [&](const BasicLattice<double>& l) {
      return rnnt_loss_value(apply_latency_penalty(l, 1, 3, cfg), y, 0);
    };
    auto res = rnnt_loss(apply_latency_penalty(lp, 1, 3, cfg), y, 0);
    double worst = 0;
    for (std::size_t i = 0; i < lp.values.size(); ++i) {
      auto up = lp, down = lp;
      up.values[i] += 1e-3;
      down.values[i] -= 1e-3;
      const double numeric = (eval(up) - eval(down)) / 2e-3;
      worst = std::max(worst, testing::relative_error(res.grad.values[i], numeric));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("loss is non-negative on normalized lattices") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng() % 8, U = rng() % 4, V = 3 + rng() % 3;
    CHECK(rnnt_loss_value(random_lattice(T, U, V, rng), random_reference(U, V, rng), 0) >= 0.0);
  }
}

TEST_CASE("rnnt_loss rejects bad references") {
  BasicLattice<double> lp(3, 2, 4);
  CHECK_THROWS_AS(rnnt_loss_value(lp, std::vector<int>{1, 2, 3}, 0), ArgumentError);
  CHECK_THROWS_AS(rnnt_loss_value(lp, std::vector<int>{1, 7}, 0), ArgumentError);
  CHECK_THROWS_AS(rnnt_loss_value(lp, std::vector<int>{0, 1}, 0), ArgumentError);
}

TEST_CASE("joint network output is a normalized grid") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> dist;
  auto rnd = [&](Shape s) {
    BasicTensor<double> t(s);
    for (auto& v : t.values()) v = dist(rng);
    return t;
  };
  nn::Graph<double> g;
  auto W = g.constant(rnd({4, 6}));
  auto b = g.constant(rnd({6}));
  {
    auto lat = joint_lattice(g.constant(rnd({1, 4})), g.constant(rnd({1, 4})), W, b);
    CHECK(lat.value().shape() == Shape{1, 1, 6});
  }
  {
    auto lat = joint_lattice(g.constant(BasicTensor<double>({3, 4})),
                             g.constant(BasicTensor<double>({2, 4})), W, b);
    const auto l = BasicLattice<double>::from_tensor(lat.value());
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t u = 0; u < 2; ++u)
        for (std::size_t v = 0; v < 6; ++v) CHECK(l.at(t, u, v) == l.at(0, 0, v));
  }
  for (int trial = 0; trial < 20; ++trial) {
    auto lat = joint_lattice(g.constant(rnd({5, 4})), g.constant(rnd({3, 4})), W, b);
    const auto l = BasicLattice<double>::from_tensor(lat.value());
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t u = 0; u < 3; ++u) {
        double total = 0;
        for (double v : l.node(t, u)) total += std::exp(v);
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
  }
  CHECK_THROWS_AS(joint_lattice(g.constant(rnd({2, 4})), g.constant(rnd({2, 3})), W, b),
                  DimensionError);
}
