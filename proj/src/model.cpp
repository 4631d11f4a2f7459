#include "surt/model.h"

#include <random>

namespace surt {

using namespace nn;

template <typename T>
SurtModel<T>::SurtModel(const ModelConfig& cfg, std::size_t feature_dim, TokenVocab vocab,
                        std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)), feature_dim_(feature_dim) {
  if (cfg.encoder != "rnnt" && cfg.encoder != "tt")
    throw ArgumentError("unknown encoder mode '" + cfg.encoder + "'");
  if (cfg.encoder == "tt" && cfg.chunk == 0) throw ArgumentError("tt encoder needs chunk >= 1");
  if (cfg.unmix_layers == 0) throw ArgumentError("unmix needs at least one conv layer");
  std::mt19937_64 rng(seed);
  auto& L = layers_;
  for (const char* which : {"mask", "enc"}) {
    auto& convs = std::string(which) == "mask" ? L.mask_convs : L.enc_convs;
    std::size_t in = feature_dim;
    for (std::size_t i = 0; i < cfg.unmix_layers; ++i) {
      convs.push_back(ConvLayer::create(store_, "unmix." + std::string(which) + "." +
                                                    std::to_string(i),
                                        cfg.unmix_kernel, in, cfg.unmix_dim, rng));
      in = cfg.unmix_dim;
    }
  }
  if (cfg.mask_bias_spread > 0) {
    // Channels start out symmetric (mask = 0.5 everywhere); random per-unit
    // offsets on the mask output give each channel a distinct starting code.
    std::uniform_real_distribution<double> spread(-cfg.mask_bias_spread, cfg.mask_bias_spread);
    for (auto& v : store_.value(L.mask_convs.back().bias).values()) v = T(spread(rng));
  }
  if (is_tt()) {
    L.input_conv = ConvLayer::create(store_, "recog.enc.input", 3, cfg.unmix_dim, cfg.enc_dim, rng);
    for (std::size_t i = 0; i < cfg.enc_layers; ++i)
      L.attention.push_back(AttentionBlock::create(store_, "recog.enc." + std::to_string(i),
                                                   cfg.enc_dim, 2 * cfg.enc_dim, cfg.chunk, rng));
  } else {
    std::size_t in = cfg.unmix_dim;
    for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
      L.rnn.push_back(RecurrentLayer::create(store_, "recog.enc." + std::to_string(i), in,
                                             cfg.enc_dim, rng));
      in = cfg.enc_dim;
    }
  }
  L.joint_f = LinearLayer::create(store_, "recog.joint.f", cfg.enc_dim, cfg.joint_dim, rng);
  {
    std::normal_distribution<double> dist(0.0, 1.0);
    BasicTensor<T> table({std::size_t(vocab_.size), cfg.pred_dim});
    for (auto& v : table.values()) v = T(dist(rng));
    L.embedding = store_.add("recog.pred.embedding", std::move(table));
  }
  L.pred_rnn = RecurrentLayer::create(store_, "recog.pred.rnn", cfg.pred_dim, cfg.pred_dim, rng);
  L.joint_g = LinearLayer::create(store_, "recog.joint.g", cfg.pred_dim, cfg.joint_dim, rng);
  L.joint_out = LinearLayer::create(store_, "recog.joint.out", cfg.joint_dim,
                                    std::size_t(vocab_.size), rng);
}

template <typename T>
typename SurtModel<T>::Unmixed SurtModel<T>::unmix(G& g, V x) const {
  if (x.value().rank() != 2 || x.value().dim(1) != feature_dim_)
    throw DimensionError("unmix expects [T x " + std::to_string(feature_dim_) + "], got " +
                         shape_string(x.value().shape()));
  auto stack = [&](const std::vector<ConvLayer>& convs) {
    V h = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = convs[i].forward(g, store_, h);
      if (i + 1 < convs.size()) h = tanh(h);
    }
    return h;
  };
  Unmixed u;
  u.mask = sigmoid(stack(layers_.mask_convs));
  u.encoded = stack(layers_.enc_convs);
  u.h1 = mask_product(u.encoded, u.mask);
  u.h2 = sub(u.encoded, u.h1);
  return u;
}

template <typename T>
typename SurtModel<T>::V SurtModel<T>::encode(G& g, V h) const {
  if (is_tt()) {
    h = layers_.input_conv.forward(g, store_, h);
    for (const auto& block : layers_.attention) h = block.forward(g, store_, h);
  } else {
    for (const auto& layer : layers_.rnn)
      h = layer.forward(g, store_, h, g.constant(BasicTensor<T>({layer.hidden})));
  }
  return layers_.joint_f.forward(g, store_, h);
}

template <typename T>
typename SurtModel<T>::V SurtModel<T>::predict(G& g, const std::vector<int>& labels) const {
  std::vector<int> ids;
  ids.reserve(labels.size() + 1);
  ids.push_back(vocab_.blank);
  ids.insert(ids.end(), labels.begin(), labels.end());
  for (int id : ids)
    if (!vocab_.contains(id)) throw ArgumentError("label " + std::to_string(id) + " outside vocabulary");
  V e = embedding(g.parameter(store_, layers_.embedding), ids);
  V h = layers_.pred_rnn.forward(g, store_, e, g.constant(BasicTensor<T>({cfg_.pred_dim})));
  return layers_.joint_g.forward(g, store_, h);
}

template <typename T>
typename SurtModel<T>::V SurtModel<T>::joint(G& g, V pf, V pg) const {
  return rnnt::joint_lattice(pf, pg, g.parameter(store_, layers_.joint_out.weight),
                             g.parameter(store_, layers_.joint_out.bias));
}

template <typename T>
std::size_t SurtModel<T>::recognition_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < store_.size(); ++i)
    if (store_.name(i).rfind("recog.", 0) == 0) n += store_.value(i).size();
  return n;
}

template <typename T>
template <typename U>
SurtModel<U> SurtModel<T>::cast() const {
  SurtModel<U> out;
  out.cfg_ = cfg_;
  out.vocab_ = vocab_;
  out.feature_dim_ = feature_dim_;
  out.layers_.mask_convs = layers_.mask_convs;
  out.layers_.enc_convs = layers_.enc_convs;
  out.layers_.rnn = layers_.rnn;
  out.layers_.input_conv = layers_.input_conv;
  out.layers_.attention = layers_.attention;
  out.layers_.joint_f = layers_.joint_f;
  out.layers_.embedding = layers_.embedding;
  out.layers_.pred_rnn = layers_.pred_rnn;
  out.layers_.joint_g = layers_.joint_g;
  out.layers_.joint_out = layers_.joint_out;
  out.store_ = store_.template cast<U>();
  return out;
}

// --- losses ----------------------------------------------------------------

template <typename T>
Var<T> channel_loss(const SurtModel<T>& model, Var<T> lattice, const ChannelTarget& target,
                    const rnnt::PenaltyConfig& penalty) {
  if (penalty.enabled)
    lattice = rnnt::latency_penalty(lattice, target.t_eos, model.vocab().eos, penalty);
  return rnnt::transducer_loss(lattice, target.labels, model.vocab().blank);
}

namespace {

template <typename T>
void check_targets(const SurtModel<T>& model, const ChannelTarget& r1, const ChannelTarget& r2,
                   bool require_eos) {
  model.vocab().validate_reference(r1.labels, require_eos);
  model.vocab().validate_reference(r2.labels, require_eos);
}

}  // namespace

template <typename T>
SurtLoss<T> heat_loss(Graph<T>& g, const SurtModel<T>& model, Var<T> x, const ChannelTarget& r1,
                      const ChannelTarget& r2, const rnnt::PenaltyConfig& penalty,
                      bool require_eos) {
  check_targets(model, r1, r2, require_eos);
  auto u = model.unmix(g, x);
  auto l1 = channel_loss(model, model.channel_lattice(g, u.h1, r1.labels), r1, penalty);
  auto l2 = channel_loss(model, model.channel_lattice(g, u.h2, r2.labels), r2, penalty);
  SurtLoss<T> out;
  out.total = add(l1, l2);
  out.ch1 = double(l1.value().item());
  out.ch2 = double(l2.value().item());
  return out;
}

template <typename T>
SurtLoss<T> pit_loss(Graph<T>& g, const SurtModel<T>& model, Var<T> x, const ChannelTarget& r1,
                     const ChannelTarget& r2, const rnnt::PenaltyConfig& penalty,
                     bool require_eos) {
  check_targets(model, r1, r2, require_eos);
  auto u = model.unmix(g, x);
  auto f1 = model.encode(g, u.h1);
  auto f2 = model.encode(g, u.h2);
  auto g1 = model.predict(g, r1.labels);
  auto g2 = model.predict(g, r2.labels);
  auto a1 = channel_loss(model, model.joint(g, f1, g1), r1, penalty);
  auto a2 = channel_loss(model, model.joint(g, f2, g2), r2, penalty);
  auto b1 = channel_loss(model, model.joint(g, f1, g2), r2, penalty);
  auto b2 = channel_loss(model, model.joint(g, f2, g1), r1, penalty);
  auto keep = add(a1, a2);
  auto swap = add(b1, b2);
  SurtLoss<T> out;
  out.total = minimum(keep, swap);
  out.swapped = swap.value().item() < keep.value().item();
  out.ch1 = double((out.swapped ? b1 : a1).value().item());
  out.ch2 = double((out.swapped ? b2 : a2).value().item());
  return out;
}

bool heat_first(int start1, int start2, int length1, int length2, const std::vector<int>& r1,
                const std::vector<int>& r2) {
  if (start1 != start2) return start1 < start2;
  if (length1 != length2) return length1 > length2;
  return !(r2 < r1);
}

#define SURT_INSTANTIATE_MODEL(T)                                                           \
  template class SurtModel<T>;                                                              \
  template Var<T> channel_loss<T>(const SurtModel<T>&, Var<T>, const ChannelTarget&,        \
                                  const rnnt::PenaltyConfig&);                              \
  template SurtLoss<T> heat_loss<T>(Graph<T>&, const SurtModel<T>&, Var<T>,                 \
                                    const ChannelTarget&, const ChannelTarget&,             \
                                    const rnnt::PenaltyConfig&, bool);                      \
  template SurtLoss<T> pit_loss<T>(Graph<T>&, const SurtModel<T>&, Var<T>,                  \
                                   const ChannelTarget&, const ChannelTarget&,              \
                                   const rnnt::PenaltyConfig&, bool);

SURT_INSTANTIATE_MODEL(float)
SURT_INSTANTIATE_MODEL(double)

template SurtModel<double> SurtModel<float>::cast<double>() const;
template SurtModel<float> SurtModel<double>::cast<float>() const;

}  // namespace surt
