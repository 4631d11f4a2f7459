#include <cmath>
#include <random>

#include "doctest.h"
#include "surt/checks.h"
#include "surt/datagen.h"
#include "surt/model.h"
#include "surt/trainer.h"

using namespace surt;

namespace {

ModelConfig small_config(const std::string& encoder = "rnnt") {
  ModelConfig c;
  c.unmix_dim = 8;
  c.enc_dim = 8;
  c.pred_dim = 6;
  c.joint_dim = 8;
  if (encoder == "tt") {
    c.encoder = "tt";
    c.chunk = 3;
  }
  return c;
}

template <typename T>
BasicTensor<T> random_input(std::size_t frames, std::size_t dim, std::mt19937_64& rng,
                            double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  BasicTensor<T> x({frames, dim});
  for (auto& v : x.values()) v = T(dist(rng));
  return x;
}

const TokenVocab kVocab = TokenVocab::with_symbols(4);

ChannelTarget target(std::vector<int> labels, int t_eos) { return {std::move(labels), t_eos}; }

double value(const nn::Var<double>& v) { return v.value().item(); }

}  // namespace

TEST_CASE("channel outputs sum to the encoded mixture bit for bit") {
  std::mt19937_64 rng(1);
  for (const char* enc : {"rnnt", "tt"}) {
    for (int trial = 0; trial < 20; ++trial) {
      SurtModel<float> m(small_config(enc), 5, kVocab, rng());
      nn::Graph<float> g;
      auto u = m.unmix(g, g.constant(random_input<float>(4 + trial, 5, rng, 3.0)));
      const auto& h1 = u.h1.value();
      const auto& h2 = u.h2.value();
      const auto& xbar = u.encoded.value();
      for (std::size_t i = 0; i < xbar.size(); ++i) CHECK(h1[i] + h2[i] == xbar[i]);
    }
  }
}

TEST_CASE("mask entries lie strictly inside (0, 1) on random inputs") {
  std::mt19937_64 rng(2);
  SurtModel<float> m(small_config(), 5, kVocab, 3);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Graph<float> g;
    auto u = m.unmix(g, g.constant(random_input<float>(12, 5, rng)));
    for (float v : u.mask.value().values()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("a saturated mask routes everything to channel 1") {
  std::mt19937_64 rng(3);
  SurtModel<double> m(small_config(), 5, kVocab, 4);
  auto& store = m.params();
  const auto& last = m.layers().mask_convs.back();
  for (auto& v : store.value(last.weight).values()) v = 0.0;
  for (auto& v : store.value(last.bias).values()) v = 40.0;
  nn::Graph<double> g;
  auto u = m.unmix(g, g.constant(random_input<double>(9, 5, rng)));
  const auto& xbar = u.encoded.value();
  for (std::size_t i = 0; i < xbar.size(); ++i) {
    CHECK(u.h1.value()[i] == doctest::Approx(xbar[i]).epsilon(1e-12));
    CHECK(std::abs(u.h2.value()[i]) <= 1e-12 * (1 + std::abs(xbar[i])));
  }
}

TEST_CASE("identical channel inputs give identical lattices") {
  std::mt19937_64 rng(4);
  for (const char* enc : {"rnnt", "tt"}) {
    SurtModel<float> m(small_config(enc), 5, kVocab, 5);
    nn::Graph<float> g;
    auto h = g.constant(random_input<float>(10, 8, rng));
    auto a = m.channel_lattice(g, h, {1, 2, kVocab.eos});
    auto b = m.channel_lattice(g, h, {1, 2, kVocab.eos});
    CHECK(std::ranges::equal(a.value().values(), b.value().values()));
  }
}

TEST_CASE("recognition parameters exist once and are shared by both channels") {
  SurtModel<float> m(small_config(), 5, kVocab, 6);
  std::size_t recog = 0, unmix = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& name = m.params().name(i);
    CHECK(name.find("ch1") == std::string::npos);
    CHECK(name.find("ch2") == std::string::npos);
    (name.rfind("recog.", 0) == 0 ? recog : unmix) += m.params().value(i).size();
  }
  CHECK(recog == m.recognition_parameter_count());
  CHECK(recog + unmix == m.parameter_count());
  CHECK(m.params().find("unmix.mask.0.weight").has_value());
  CHECK(m.params().find("recog.joint.out.weight").has_value());
}

TEST_CASE("perturbing a recognition weight changes both channel losses") {
  std::mt19937_64 rng(7);
  SurtModel<double> m(small_config(), 5, kVocab, 8);
  const auto X = random_input<double>(10, 5, rng);
  const auto r1 = target({1, 2, kVocab.eos}, 5), r2 = target({3, kVocab.eos}, 9);
  const rnnt::PenaltyConfig off{};
  auto losses = [&] {
    nn::Graph<double> g;
    auto l = heat_loss(g, m, g.constant(X), r1, r2, off, true);
    return std::pair{l.ch1, l.ch2};
  };
  const auto before = losses();
  auto& w = m.params().value(m.params().index_of("recog.joint.out.weight"));
  w[0] += 0.05;
  const auto after = losses();
  CHECK(after.first != before.first);
  CHECK(after.second != before.second);
}

TEST_CASE("HEAT is the sum of the two channel losses and depends on the order") {
  std::mt19937_64 rng(9);
  SurtModel<double> m(small_config(), 5, kVocab, 10);
  const auto X = random_input<double>(12, 5, rng);
  const auto r1 = target({1, 2, kVocab.eos}, 6), r2 = target({3, 4, 1, kVocab.eos}, 11);
  const rnnt::PenaltyConfig pen{2.0, 3, true};
  nn::Graph<double> g;
  auto x = g.constant(X);
  auto heat = heat_loss(g, m, x, r1, r2, pen, true);
  auto u = m.unmix(g, x);
  const double l1 = value(channel_loss(m, m.channel_lattice(g, u.h1, r1.labels), r1, pen));
  const double l2 = value(channel_loss(m, m.channel_lattice(g, u.h2, r2.labels), r2, pen));
  CHECK(value(heat.total) == doctest::Approx(l1 + l2).epsilon(1e-14));
  CHECK(heat.ch1 == doctest::Approx(l1).epsilon(1e-14));
  CHECK(heat.ch2 == doctest::Approx(l2).epsilon(1e-14));
  auto swapped = heat_loss(g, m, x, r2, r1, pen, true);
  CHECK(value(swapped.total) != value(heat.total));
}

TEST_CASE("zero alpha leaves the HEAT loss bit-identical") {
  std::mt19937_64 rng(11);
  SurtModel<float> m(small_config("tt"), 5, kVocab, 12);
  const auto X = random_input<float>(14, 5, rng);
  const auto r1 = target({2, 3, kVocab.eos}, 4), r2 = target({1, kVocab.eos}, 13);
  nn::Graph<float> g;
  auto x = g.constant(X);
  const float plain = heat_loss(g, m, x, r1, r2, {2.0, 3, false}, true).total.value().item();
  const float zero = heat_loss(g, m, x, r1, r2, {0.0, 3, true}, true).total.value().item();
  CHECK(plain == zero);
  const float on = heat_loss(g, m, x, r1, r2, {2.0, 3, true}, true).total.value().item();
  CHECK(on >= plain);
}

TEST_CASE("references must end in eos when required") {
  std::mt19937_64 rng(13);
  SurtModel<double> m(small_config(), 5, kVocab, 14);
  nn::Graph<double> g;
  auto x = g.constant(random_input<double>(8, 5, rng));
  CHECK_THROWS_AS(heat_loss(g, m, x, target({1, 2}, 4), target({3, kVocab.eos}, 6), {}, true),
                  ArgumentError);
  CHECK_THROWS_AS(pit_loss(g, m, x, target({1, kVocab.eos}, 4), target({3}, 6), {}, true),
                  ArgumentError);
  CHECK_THROWS_AS(heat_loss(g, m, x, target({1, kVocab.eos, 2}, 4), target({3}, 6), {}, false),
                  ArgumentError);
  CHECK_NOTHROW(heat_loss(g, m, x, target({1, 2}, 4), target({3}, 6), {}, false));
}

TEST_CASE("PIT is the minimum over both assignments and never exceeds HEAT") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 40; ++trial) {
    SurtModel<double> m(small_config(trial % 2 ? "tt" : "rnnt"), 5, kVocab, rng());
    const auto X = random_input<double>(9, 5, rng);
    const auto r1 = target({1 + int(rng() % 4), kVocab.eos}, 1 + int(rng() % 9));
    const auto r2 = target({1 + int(rng() % 4), 1 + int(rng() % 4), kVocab.eos}, 1 + int(rng() % 9));
    const rnnt::PenaltyConfig pen{2.0, 1, trial % 3 == 0};
    nn::Graph<double> g;
    auto x = g.constant(X);
    const double heat = value(heat_loss(g, m, x, r1, r2, pen, true).total);
    const double swap = value(heat_loss(g, m, x, r2, r1, pen, true).total);
    auto pit = pit_loss(g, m, x, r1, r2, pen, true);
    CHECK(value(pit.total) <= heat);
    CHECK(value(pit.total) == doctest::Approx(std::min(heat, swap)).epsilon(1e-13));
    CHECK(pit.swapped == (swap < heat));
  }
}

TEST_CASE("PIT equals HEAT on symmetric instances") {
  std::mt19937_64 rng(16);
  SurtModel<double> m(small_config(), 5, kVocab, 17);
  nn::Graph<double> g;
  auto x = g.constant(random_input<double>(9, 5, rng));
  const auto r = target({2, 4, kVocab.eos}, 6);
  const rnnt::PenaltyConfig pen{2.0, 3, true};
  CHECK(value(pit_loss(g, m, x, r, r, pen, true).total) ==
        value(heat_loss(g, m, x, r, r, pen, true).total));
}

TEST_CASE("HEAT ordering rule") {
  const std::vector<int> a = {1, 2}, b = {1, 3};
  CHECK(heat_first(2, 5, 10, 30, b, a));
  CHECK_FALSE(heat_first(5, 2, 30, 10, a, b));
  CHECK(heat_first(3, 3, 20, 10, b, a));
  CHECK_FALSE(heat_first(3, 3, 10, 20, a, b));
  CHECK(heat_first(3, 3, 10, 10, a, b));
  CHECK_FALSE(heat_first(3, 3, 10, 10, b, a));
}

TEST_CASE("model gradients match finite differences with and without the penalty") {
  const auto r = checks::model_gradcheck(31, 4);
  CHECK(r.models == 4);
  CHECK(r.max_rel_err < 1e-3);
  CHECK(r.max_rel_err_penalized < 1e-3);
}

namespace {

std::vector<data::MixtureSample> tiny_train_set(std::size_t n) {
  DataConfig d;
  d.feature_dim = 5;
  d.vocab = 4;
  const auto protos = data::make_prototypes(d, 3);
  return data::generate_split(d, 3, data::Split::train, n, protos);
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.data.feature_dim = 5;
  c.data.vocab = 4;
  c.model = small_config();
  c.train.steps = 4;
  c.train.batch = 3;
  return c;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto train = tiny_train_set(6);
  auto cfg = tiny_experiment();
  cfg.train.lr = 0.0;
  SurtModel<float> m(cfg.model, 5, kVocab, 1);
  std::vector<std::vector<float>> snapshot;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto v = m.params().value(i).values();
    snapshot.emplace_back(v.begin(), v.end());
  }
  const auto log = train_model(m, train, cfg);
  REQUIRE(log.size() == 4);
  CHECK(std::isfinite(log.back().loss));
  CHECK(log.back().loss > 0);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    CHECK(std::ranges::equal(m.params().value(i).values(), snapshot[i]));
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto train = tiny_train_set(8);
  const auto cfg = tiny_experiment();
  SurtModel<float> a(cfg.model, 5, kVocab, 2), b(cfg.model, 5, kVocab, 2);
  const auto la = train_model(a, train, cfg);
  const auto lb = train_model(b, train, cfg);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].loss == lb[i].loss);
    CHECK(la[i].loss_ch1 == lb[i].loss_ch1);
  }

  SurtModel<float> c(cfg.model, 5, kVocab, 2), d(cfg.model, 5, kVocab, 2);
  std::vector<const data::MixtureSample*> batch = {&train[0], &train[1], &train[2], &train[3]};
  TrainOptions one{cfg.loss, cfg.adam(), 5.0, 1}, many{cfg.loss, cfg.adam(), 5.0, 3};
  const auto rc = training_step(c, batch, one);
  const auto rd = training_step(d, batch, many);
  CHECK(rc.loss == rd.loss);
  CHECK(rc.grad_norm == rd.grad_norm);
  for (std::size_t i = 0; i < c.params().size(); ++i)
    CHECK(std::ranges::equal(c.params().value(i).values(), d.params().value(i).values()));
}

TEST_CASE("the mask encoder receives gradient") {
  const auto train = tiny_train_set(4);
  const auto cfg = tiny_experiment();
  SurtModel<float> m(cfg.model, 5, kVocab, 3);
  nn::Graph<float> g;
  auto l = sample_loss(g, m, train[0], cfg.loss);
  g.backward(l.total);
  m.params().clear_grads();
  g.accumulate_into(m.params());
  double norm = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().name(i).rfind("unmix.mask.", 0) != 0) continue;
    REQUIRE(m.params().entry(i).grad.has_value());
    for (float v : m.params().entry(i).grad->values()) norm += double(v) * v;
  }
  CHECK(std::sqrt(norm) > 1e-6);
}

TEST_CASE("warm steps train without eos before switching it on") {
  const auto train = tiny_train_set(6);
  auto cfg = tiny_experiment();
  cfg.train.warm_steps = 2;
  SurtModel<float> m(cfg.model, 5, kVocab, 4);
  const auto log = train_model(m, train, cfg);
  REQUIRE(log.size() == 4);

  // The first step must match a run configured without eos.
  auto plain = tiny_experiment();
  plain.loss.eos = false;
  plain.train.steps = 1;
  SurtModel<float> ref(plain.model, 5, kVocab, 4);
  CHECK(train_model(ref, train, plain)[0].loss == log[0].loss);
}

TEST_CASE("non-finite input aborts the step") {
  auto train = tiny_train_set(2);
  train[0].X.values()[0] = std::nanf("");
  const auto cfg = tiny_experiment();
  SurtModel<float> m(cfg.model, 5, kVocab, 5);
  std::vector<const data::MixtureSample*> batch = {&train[0], &train[1]};
  CHECK_THROWS_AS(training_step(m, batch, {cfg.loss, cfg.adam(), 5.0, 1}), DivergenceError);
}
