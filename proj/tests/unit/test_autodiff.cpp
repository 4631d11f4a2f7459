#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "fd_check.h"
#include "surt/autodiff.h"
#include "surt/checkpoint.h"
#include "surt/layers.h"

using namespace surt;
using namespace surt::nn;

namespace {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(dist(rng));
  return t;
}

}  // namespace

TEST_CASE("linear selects a weight row for a unit input") {
  Graph<float> g;
  auto x = g.constant(Tensor({1, 2}, {1, 0}));
  auto W = g.constant(Tensor({2, 2}, {2, 3, 4, 5}));
  auto b = g.constant(Tensor({2}, {0, 0}));
  auto y = linear(x, W, b);
  CHECK(y.value() == Tensor({1, 2}, {2, 3}));
}

TEST_CASE("linear with identity weights is the identity") {
  std::mt19937_64 rng(3);
  Graph<float> g;
  auto xv = random_tensor<float>({4, 3}, rng);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  auto y = linear(g.constant(xv), g.constant(eye), g.constant(Tensor({3})));
  CHECK(y.value() == xv);
}

TEST_CASE("linear agrees with a naive triple loop") {
  std::mt19937_64 rng(11);
  auto xv = random_tensor<double>({3, 4}, rng);
  auto Wv = random_tensor<double>({4, 2}, rng);
  auto bv = random_tensor<double>({2}, rng);
  Graph<double> g;
  auto y = linear(g.constant(xv), g.constant(Wv), g.constant(bv));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      double ref = bv[c];
      for (std::size_t k = 0; k < 4; ++k) ref += xv.at(r, k) * Wv.at(k, c);
      CHECK(y.value().at(r, c) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("linear rejects mismatched inner dimensions and names both shapes") {
  Graph<float> g;
  auto x = g.constant(Tensor({2, 3}));
  auto W = g.constant(Tensor({4, 2}));
  auto b = g.constant(Tensor({2}));
  try {
    linear(x, W, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("sigmoid: midpoint, saturation and symmetry") {
  std::mt19937_64 rng(5);
  Graph<double> g;
  auto xv = random_tensor<double>({16}, rng, 3.0);
  BasicTensor<double> neg(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) neg[i] = -xv[i];
  auto a = sigmoid(g.constant(xv));
  auto b = sigmoid(g.constant(neg));
  for (std::size_t i = 0; i < xv.size(); ++i) {
    CHECK(a.value()[i] + b.value()[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.value()[i] > 0.0);
    CHECK(a.value()[i] < 1.0);
  }
  auto mid = sigmoid(g.constant(BasicTensor<double>({2}, {0.0, 50.0})));
  CHECK(mid.value()[0] == 0.5);
  CHECK(std::abs(mid.value()[1] - 1.0) < 1e-9);
}

TEST_CASE("log_softmax: uniform, shift invariance, stability") {
  Graph<float> g;
  auto u = log_softmax(g.constant(Tensor({4}, {0.3f, 0.3f, 0.3f, 0.3f})));
  for (float v : u.value().values()) CHECK(v == doctest::Approx(std::log(0.25f)));

  std::mt19937_64 rng(8);
  auto xv = random_tensor<float>({5, 7}, rng, 2.0);
  Tensor shifted = xv;
  for (auto& v : shifted.values()) v += 3.5f;
  auto a = log_softmax(g.constant(xv));
  auto b = log_softmax(g.constant(shifted));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(a.value().at(r, c) == doctest::Approx(b.value().at(r, c)).epsilon(1e-5));
      total += std::exp(double(a.value().at(r, c)));
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }

  auto s = log_softmax(g.constant(Tensor({2}, {1000.f, 0.f})));
  CHECK(std::isfinite(s.value()[0]));
  CHECK(s.value()[0] == doctest::Approx(0.0));
  CHECK(s.value()[1] == doctest::Approx(-1000.0));
}

TEST_CASE("recurrent_encode: single step and zero weights") {
  std::mt19937_64 rng(2);
  ParamStore store;
  auto layer = RecurrentLayer::create(store, "rec", 3, 4, rng);
  auto xv = random_tensor<float>({1, 3}, rng);
  auto h0 = random_tensor<float>({4}, rng);
  {
    Graph<float> g;
    auto y = recurrent_encode(g, store, layer, g.constant(xv), g.constant(h0));
    REQUIRE(y.value().shape() == Shape{1, 4});
    // One step of the cell equation by hand.
    const auto& Wx = store.value(layer.input_weight);
    const auto& Uh = store.value(layer.hidden_weight);
    for (std::size_t j = 0; j < 4; ++j) {
      double zp = 0, cp = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        zp += xv[i] * Wx.at(i, j);
        cp += xv[i] * Wx.at(i, 4 + j);
      }
      for (std::size_t i = 0; i < 4; ++i) {
        zp += h0[i] * Uh.at(i, j);
        cp += h0[i] * Uh.at(i, 4 + j);
      }
      const double z = 1 / (1 + std::exp(-zp));
      const double want = (1 - z) * h0[j] + z * std::tanh(cp);
      CHECK(y.value()[j] == doctest::Approx(want).epsilon(1e-5));
    }
  }
  // Zero weights: z = 0.5 and c = tanh(bias) at every step from a zero state.
  for (std::size_t p = 0; p < store.size(); ++p) store.value(p).fill(0.f);
  auto& bias = store.value(layer.bias);
  for (std::size_t j = 0; j < 8; ++j) bias[j] = 0.25f * float(j);
  Graph<float> g;
  auto y = recurrent_encode(g, store, layer, g.constant(random_tensor<float>({5, 3}, rng)),
                            g.constant(Tensor({4})));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 4; ++j) {
      double h = 0;
      const double z = 1 / (1 + std::exp(-double(bias[j])));
      for (std::size_t s = 0; s <= t; ++s) h = (1 - z) * h + z * std::tanh(double(bias[4 + j]));
      CHECK(y.value().at(t, j) == doctest::Approx(h).epsilon(1e-5));
    }
}

TEST_CASE("recurrent_encode is causal") {
  std::mt19937_64 rng(9);
  ParamStore store;
  auto layer = RecurrentLayer::create(store, "rec", 3, 5, rng);
  auto xv = random_tensor<float>({7, 3}, rng);
  Graph<float> g;
  auto base = recurrent_encode(g, store, layer, g.constant(xv), g.constant(Tensor({5})));
  for (std::size_t t = 0; t + 1 < 7; ++t) {
    Tensor perturbed = xv;
    for (std::size_t c = 0; c < 3; ++c) perturbed.at(t + 1, c) += 1.7f;
    auto y = recurrent_encode(g, store, layer, g.constant(perturbed), g.constant(Tensor({5})));
    for (std::size_t s = 0; s <= t; ++s)
      for (std::size_t c = 0; c < 5; ++c) CHECK(y.value().at(s, c) == base.value().at(s, c));
    bool changed = false;
    for (std::size_t c = 0; c < 5; ++c) changed |= y.value().at(t + 1, c) != base.value().at(t + 1, c);
    CHECK(changed);
  }
}

TEST_CASE("chunked attention with a chunk covering the sequence is full attention") {
  std::mt19937_64 rng(4);
  const std::size_t T = 6, d = 3;
  auto q = random_tensor<double>({T, d}, rng);
  auto k = random_tensor<double>({T, d}, rng);
  auto v = random_tensor<double>({T, d}, rng);
  Graph<double> g;
  auto out = chunked_attention(g.constant(q), g.constant(k), g.constant(v), 10, true);
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<double> w(T);
    double total = 0;
    for (std::size_t j = 0; j < T; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
      w[j] = std::exp(s / std::sqrt(double(d)));
      total += w[j];
    }
    for (std::size_t c = 0; c < d; ++c) {
      double ref = 0;
      for (std::size_t j = 0; j < T; ++j) ref += w[j] / total * v.at(j, c);
      CHECK(out.value().at(i, c) == doctest::Approx(ref).epsilon(1e-10));
    }
  }
}

TEST_CASE("chunk of one frame without history reduces to the value projection") {
  std::mt19937_64 rng(6);
  ParamStore store;
  auto layer = ChunkedAttentionLayer::create(store, "att", 4, 1, false, rng);
  auto xv = random_tensor<float>({5, 4}, rng);
  Graph<float> g;
  auto x = g.constant(xv);
  auto out = chunked_self_attention(g, store, layer, x);
  auto values = layer.value.forward(g, store, x);
  CHECK(out.value() == values.value());
}

TEST_CASE("chunk-causal attention ignores later chunks") {
  std::mt19937_64 rng(12);
  ParamStore store;
  auto layer = ChunkedAttentionLayer::create(store, "att", 4, 3, true, rng);
  auto xv = random_tensor<float>({10, 4}, rng);
  Graph<float> g;
  auto base = chunked_self_attention(g, store, layer, g.constant(xv));
  for (std::size_t frame : {3u, 6u, 9u}) {
    Tensor perturbed = xv;
    perturbed.at(frame, 0) += 2.f;
    auto y = chunked_self_attention(g, store, layer, g.constant(perturbed));
    const std::size_t chunk_start = frame / 3 * 3;
    for (std::size_t s = 0; s < chunk_start; ++s)
      for (std::size_t c = 0; c < 4; ++c) CHECK(y.value().at(s, c) == base.value().at(s, c));
    // Frames earlier in the same chunk do see it.
    CHECK(y.value().at(chunk_start, 0) != base.value().at(chunk_start, 0));
  }
}

TEST_CASE("backward: sum of weights gives all-ones gradient") {
  ParamStore store;
  store.add("W", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Graph<float> g;
  auto loss = sum(g.parameter(store, 0));
  g.backward(loss);
  g.accumulate_into(store);
  for (float v : store.entry(0).grad->values()) CHECK(v == 1.f);
}

TEST_CASE("backward: zero-scaled loss gives zero gradient") {
  std::mt19937_64 rng(1);
  ParamStore store;
  auto l = LinearLayer::create(store, "l", 3, 2, rng);
  Graph<float> g;
  auto y = tanh(l.forward(g, store, g.constant(random_tensor<float>({4, 3}, rng))));
  auto loss = scale(sum(y), 0.f);
  g.backward(loss);
  g.accumulate_into(store);
  for (std::size_t p = 0; p < store.size(); ++p)
    for (float v : store.entry(p).grad->values()) CHECK(v == 0.f);
}

TEST_CASE("backward before any forward is a usage error") {
  Graph<float> g;
  CHECK_THROWS_AS(g.backward(Var<float>{}), UsageError);
  Graph<float> other;
  auto x = other.constant(Tensor::scalar(1.f));
  CHECK_THROWS_AS(g.backward(x), UsageError);
  auto v = other.constant(Tensor({2}));
  CHECK_THROWS_AS(other.backward(v), UsageError);
}

TEST_CASE("two-layer network matches finite differences") {
  std::mt19937_64 rng(21);
  BasicParamStore<double> store;
  auto l1 = LinearLayer::create(store, "l1", 4, 6, rng);
  auto l2 = LinearLayer::create(store, "l2", 6, 3, rng);
  for (auto* t : {&store.value(l1.bias), &store.value(l2.bias)})
    for (auto& v : t->values()) v = 0.1;
  auto xv = random_tensor<double>({5, 4}, rng);
  double err = testing::max_param_grad_error(store, [&](Graph<double>& g, const auto& s) {
    auto h = tanh(l1.forward(g, s, g.constant(xv)));
    return sum(log_softmax(l2.forward(g, s, h)));
  });
  CHECK(err < 1e-3);
}

TEST_CASE("every layer type matches finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(100 + seed);
    BasicParamStore<double> store;
    auto conv = ConvLayer::create(store, "conv", 3, 4, 5, rng);
    auto rec = RecurrentLayer::create(store, "rec", 5, 6, rng);
    auto att = AttentionBlock::create(store, "blk", 6, 8, 2, rng);
    auto mask = LinearLayer::create(store, "mask", 6, 6, rng);
    auto emb = store.add("emb", random_tensor<double>({5, 6}, rng, 0.5));
    for (std::size_t p = 0; p < store.size(); ++p)
      for (auto& v : store.value(p).values()) v += 0.05;  // non-zero biases
    auto xv = random_tensor<double>({7, 4}, rng);
    const std::vector<int> ids = {0, 3, 1, 4, 2, 2, 0};
    double err = testing::max_param_grad_error(store, [&](Graph<double>& g, const auto& s) {
      auto h = relu(conv.forward(g, s, g.constant(xv)));
      auto r = rec.forward(g, s, h, g.constant(BasicTensor<double>({6})));
      auto a = att.forward(g, s, r);
      auto m = sigmoid(mask.forward(g, s, a));
      auto e = embedding(g.parameter(s, emb), ids);
      auto split = mask_product(add(a, e), m);
      auto mixed = mul(sub(a, split), tanh(split));
      auto q = matmul(mixed, g.parameter(s, mask.weight));
      return sum(log_softmax(q));
    });
    CHECK(err < 1e-3);
  }
}

TEST_CASE("mask_product keeps the split exact") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> val(-5.f, 5.f), m(0.f, 1.f);
  Graph<float> g;
  Tensor xbar({5000}), mask({5000});
  for (std::size_t i = 0; i < 5000; ++i) {
    xbar[i] = val(rng);
    mask[i] = m(rng);
  }
  auto xb = g.constant(xbar);
  auto h1 = mask_product(xb, g.constant(mask));
  auto h2 = sub(xb, h1);
  for (std::size_t i = 0; i < 5000; ++i) {
    CHECK(h1.value()[i] + h2.value()[i] == xbar[i]);
    CHECK(double(h1.value()[i]) == doctest::Approx(double(xbar[i]) * mask[i]).epsilon(1e-6));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  store.add("w", Tensor({3}, {1, -2, 3}));
  store.zero_grads();
  adam_step(store, AdamConfig{});
  CHECK(store.value(0) == Tensor({3}, {1, -2, 3}));
}

TEST_CASE("adam: first step moves by lr against the gradient sign") {
  ParamStore store;
  store.add("w", Tensor({2}, {0.5f, 0.5f}));
  store.zero_grads();
  store.accumulate_grad(0, std::vector<float>{0.3f, -4.f});
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(store, cfg);
  CHECK(store.value(0)[0] == doctest::Approx(0.49).epsilon(1e-5));
  CHECK(store.value(0)[1] == doctest::Approx(0.51).epsilon(1e-5));
}

TEST_CASE("adam: missing gradient is a usage error") {
  ParamStore store;
  store.add("a", Tensor({1}));
  store.add("b", Tensor({1}));
  store.accumulate_grad(0, std::vector<float>{1.f});
  CHECK_THROWS_AS(adam_step(store, AdamConfig{}), UsageError);
}

TEST_CASE("identical seeds give bit-identical forward values and updates") {
  auto run = [] {
    std::mt19937_64 rng(42);
    ParamStore store;
    auto l = LinearLayer::create(store, "l", 4, 3, rng);
    auto rec = RecurrentLayer::create(store, "r", 3, 3, rng);
    auto xv = random_tensor<float>({6, 4}, rng);
    for (int step = 0; step < 5; ++step) {
      store.clear_grads();
      Graph<float> g;
      auto loss = sum(rec.forward(g, store, l.forward(g, store, g.constant(xv)),
                                  g.constant(Tensor({3}))));
      g.backward(loss);
      g.accumulate_into(store);
      adam_step(store, AdamConfig{});
    }
    return encode_checkpoint(store);
  };
  CHECK(run() == run());
}

TEST_CASE("param store rejects duplicate names and keeps insertion order") {
  ParamStore store;
  store.add("z", Tensor({1}));
  store.add("a", Tensor({2}));
  CHECK_THROWS_AS(store.add("z", Tensor({1})), ArgumentError);
  CHECK(store.name(0) == "z");
  CHECK(store.name(1) == "a");
  CHECK(store.entry(1).first_moment.shape() == Shape{2});
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    ParamStore store;
    const int n = 1 + int(rng() % 4);
    for (int p = 0; p < n; ++p) {
      Shape shape;
      const std::size_t rank = rng() % 4;
      for (std::size_t r = 0; r < rank; ++r) shape.push_back(1 + rng() % 4);
      auto t = random_tensor<float>(shape, rng);
      if (!t.empty()) t[0] = -0.f;
      store.add("layer" + std::to_string(p) + ".\xc3\xa9", t);
    }
    const auto bytes = encode_checkpoint(store);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "SURTCKPT");
    auto back = decode_checkpoint(bytes);
    REQUIRE(back.size() == store.size());
    for (std::size_t p = 0; p < store.size(); ++p) {
      CHECK(back.name(p) == store.name(p));
      CHECK(back.value(p).shape() == store.value(p).shape());
      CHECK(std::memcmp(back.value(p).data(), store.value(p).data(),
                        store.value(p).size() * sizeof(float)) == 0);
    }
    CHECK(encode_checkpoint(back) == bytes);
  }
  CHECK_THROWS_AS(decode_checkpoint({'n', 'o', 'p', 'e'}), IoError);
}
