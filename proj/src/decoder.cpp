#include "surt/decoder.h"

#include <cmath>
#include <deque>
#include <fstream>

#include "json.hpp"
#include "surt/kernels.h"
#include "surt/metrics.h"

namespace surt::decode {

using kernels::affine_row;

namespace {

std::span<const float> row_of(const Tensor& t, std::size_t r) {
  return std::span<const float>(t.data() + r * t.row_size(), t.row_size());
}

template <typename Layer>
std::span<const float> bias_of(const SurtModel<float>& m, const Layer& l) {
  return m.params().value(l.bias).values();
}

const float* weight_of(const SurtModel<float>& m, std::size_t index) {
  return m.params().value(index).data();
}

}  // namespace

ChannelHypothesis greedy_decode_lattice(const rnnt::Lattice& lp, const TokenVocab& vocab,
                                        int max_symbols) {
  GreedyChannel ch(vocab.blank, vocab.eos, max_symbols);
  std::size_t u = 0;
  for (std::size_t t = 0; t < lp.frames; ++t) {
    ch.frame(
        int(t) + 1,
        [&] { return lp.node(t, std::min(u, lp.labels)); },
        [&](int) { ++u; });
  }
  return ch.hypothesis();
}

PredictorState::PredictorState(const SurtModel<float>& model) : model_(&model) {
  const std::size_t P = model.config().pred_dim;
  hidden_.assign(P, 0.0f);
  next_.resize(P);
  pre_.resize(2 * P);
  gate_.resize(P);
  cand_.resize(P);
  proj_.resize(model.config().joint_dim);
  step(model.vocab().blank);
}

void PredictorState::emit(int token) { step(token); }

void PredictorState::step(int token) {
  const auto& m = *model_;
  const auto& L = m.layers();
  const auto& table = m.params().value(L.embedding);
  kernels::gated_step<float>(row_of(table, std::size_t(token)), hidden_,
                             weight_of(m, L.pred_rnn.input_weight),
                             weight_of(m, L.pred_rnn.hidden_weight),
                             m.params().value(L.pred_rnn.bias).values(), pre_, gate_, cand_,
                             next_);
  hidden_.swap(next_);
  affine_row<float>(hidden_, weight_of(m, L.joint_g.weight), bias_of(m, L.joint_g), proj_);
}

JointScorer::JointScorer(const SurtModel<float>& model)
    : model_(&model), z_(model.config().joint_dim), out_(std::size_t(model.vocab().size)) {}

std::span<const float> JointScorer::operator()(std::span<const float> pf,
                                               std::span<const float> pg) {
  const auto& L = model_->layers();
  rnnt::joint_node<float>(pf, pg, weight_of(*model_, L.joint_out.weight),
                          bias_of(*model_, L.joint_out), z_, out_);
  return out_;
}

namespace {

ChannelHypothesis search(const SurtModel<float>& model, const Tensor& pf) {
  GreedyChannel ch(model.vocab().blank, model.vocab().eos);
  PredictorState pred(model);
  JointScorer joint(model);
  for (std::size_t t = 0; t < pf.dim(0); ++t) {
    ch.frame(
        int(t) + 1, [&] { return joint(row_of(pf, t), pred.projection()); },
        [&](int token) { pred.emit(token); });
    if (ch.frozen()) break;
  }
  return ch.hypothesis();
}

}  // namespace

std::array<ChannelHypothesis, 2> greedy_decode(const SurtModel<float>& model, const Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != model.feature_dim())
    throw DimensionError("decode input " + shape_string(X.shape()) + " does not match feature dim " +
                         std::to_string(model.feature_dim()));
  if (X.dim(0) == 0) return {};
  nn::Graph<float> g;
  auto u = model.unmix(g, g.constant(X));
  return {search(model, model.encode(g, u.h1).value()),
          search(model, model.encode(g, u.h2).value())};
}

SampleDecode decode_sample(const SurtModel<float>& model, const data::MixtureSample& s) {
  SampleDecode d;
  d.id = s.id;
  nn::Graph<float> g;
  auto u = model.unmix(g, g.constant(s.X));
  d.channels = {search(model, model.encode(g, u.h1).value()),
                search(model, model.encode(g, u.h2).value())};
  d.leakage = metrics::leakage_probe(u.h1.value(), u.h2.value(), s.speech1, s.speech2);
  return d;
}

// --- streaming -------------------------------------------------------------

namespace {

// Causal convolution over a stream of rows.
struct StreamConv {
  const nn::ConvLayer* layer;
  std::deque<std::vector<float>> history;  // last K-1 inputs

  std::vector<float> push(const SurtModel<float>& m, std::span<const float> x) {
    const std::size_t K = layer->kernel;
    std::vector<const float*> taps(K, nullptr);
    // taps[K-1] is the current frame, taps[K-1-j] the j-th previous one.
    taps[K - 1] = x.data();
    for (std::size_t j = 1; j < K; ++j)
      if (j <= history.size()) taps[K - 1 - j] = history[history.size() - j].data();
    std::vector<float> out(layer->out_dim);
    kernels::conv_row<float>(taps, layer->in_dim, weight_of(m, layer->weight),
                             bias_of(m, *layer), out);
    if (K > 1) {
      history.emplace_back(x.begin(), x.end());
      if (history.size() > K - 1) history.pop_front();
    }
    return out;
  }
};

std::vector<float> run_stack(const SurtModel<float>& m, std::vector<StreamConv>& convs,
                             std::span<const float> x) {
  std::vector<float> h(x.begin(), x.end());
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].push(m, h);
    if (i + 1 < convs.size())
      for (auto& v : h) v = std::tanh(v);
  }
  return h;
}

struct BlockState {
  std::vector<float> keys, values;  // all frames so far, row-major
};

struct ChannelState {
  GreedyChannel greedy;
  PredictorState pred;
  JointScorer joint;
  int frame = 0;
  // rnnt
  std::vector<std::vector<float>> hidden;
  // tt
  std::optional<StreamConv> input_conv;
  std::vector<std::vector<float>> pending;
  std::vector<BlockState> blocks;

  explicit ChannelState(const SurtModel<float>& m)
      : greedy(m.vocab().blank, m.vocab().eos), pred(m), joint(m) {}

  void decode_row(const SurtModel<float>& m, std::span<const float> enc) {
    const auto& L = m.layers();
    std::vector<float> pf(L.joint_f.out_dim);
    affine_row<float>(enc, weight_of(m, L.joint_f.weight), bias_of(m, L.joint_f), pf);
    ++frame;
    greedy.frame(
        frame, [&] { return joint(pf, pred.projection()); },
        [&](int token) { pred.emit(token); });
  }
};

}  // namespace

struct StreamingDecoder::Impl {
  const SurtModel<float>& model;
  std::vector<StreamConv> mask_convs, enc_convs;
  std::vector<ChannelState> channels;

  explicit Impl(const SurtModel<float>& m) : model(m) {
    for (const auto& c : m.layers().mask_convs) mask_convs.push_back({&c, {}});
    for (const auto& c : m.layers().enc_convs) enc_convs.push_back({&c, {}});
    for (int c = 0; c < 2; ++c) {
      channels.emplace_back(m);
      auto& ch = channels.back();
      if (m.is_tt()) {
        ch.input_conv = StreamConv{&m.layers().input_conv, {}};
        ch.blocks.resize(m.layers().attention.size());
      } else {
        for (const auto& layer : m.layers().rnn) ch.hidden.emplace_back(layer.hidden, 0.0f);
      }
    }
  }

  // Returns frames decoded.
  std::size_t push(std::span<const float> x) {
    const auto mask_logits = run_stack(model, mask_convs, x);
    const auto xbar = run_stack(model, enc_convs, x);
    std::vector<float> h1(xbar.size()), h2(xbar.size());
    for (std::size_t i = 0; i < xbar.size(); ++i) {
      h1[i] = kernels::masked_part(xbar[i], kernels::sigmoid(mask_logits[i]));
      h2[i] = xbar[i] - h1[i];
    }
    std::size_t decoded = 0;
    for (int c = 0; c < 2; ++c) {
      auto& ch = channels[std::size_t(c)];
      const auto& h = c == 0 ? h1 : h2;
      if (model.is_tt()) {
        ch.pending.push_back(ch.input_conv->push(model, h));
        if (ch.pending.size() == model.config().chunk) decoded = flush_chunk(ch);
      } else {
        step_recurrent(ch, h);
        decoded = 1;
      }
    }
    return decoded;
  }

  std::size_t finish() {
    std::size_t decoded = 0;
    for (auto& ch : channels)
      if (!ch.pending.empty()) decoded = flush_chunk(ch);
    return decoded;
  }

  void step_recurrent(ChannelState& ch, std::span<const float> x) {
    const auto& rnn = model.layers().rnn;
    std::vector<float> in(x.begin(), x.end());
    for (std::size_t l = 0; l < rnn.size(); ++l) {
      const std::size_t H = rnn[l].hidden;
      std::vector<float> pre(2 * H), gate(H), cand(H), next(H);
      kernels::gated_step<float>(in, ch.hidden[l], weight_of(model, rnn[l].input_weight),
                                 weight_of(model, rnn[l].hidden_weight),
                                 model.params().value(rnn[l].bias).values(), pre, gate, cand,
                                 next);
      ch.hidden[l] = next;
      in = std::move(next);
    }
    ch.decode_row(model, in);
  }

  std::size_t flush_chunk(ChannelState& ch) {
    const auto& blocks = model.layers().attention;
    auto rows = std::move(ch.pending);
    ch.pending.clear();
    const std::size_t n = rows.size();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& blk = blocks[b];
      auto& state = ch.blocks[b];
      const std::size_t d = blk.attention.query.out_dim;
      const std::size_t start = state.keys.size() / d;
      std::vector<std::vector<float>> q(n, std::vector<float>(d));
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> k(d), v(d);
        affine_row<float>(rows[i], weight_of(model, blk.attention.query.weight),
                          bias_of(model, blk.attention.query), q[i]);
        affine_row<float>(rows[i], weight_of(model, blk.attention.key.weight),
                          bias_of(model, blk.attention.key), k);
        affine_row<float>(rows[i], weight_of(model, blk.attention.value.weight),
                          bias_of(model, blk.attention.value), v);
        state.keys.insert(state.keys.end(), k.begin(), k.end());
        state.values.insert(state.values.end(), v.begin(), v.end());
      }
      const float scale = 1.0f / std::sqrt(float(d));
      const std::size_t hi = start + n;
      std::vector<float> weights(hi), a(d), o(d), f(blk.ff_in.out_dim), g(d);
      for (std::size_t i = 0; i < n; ++i) {
        kernels::attention_row<float>(q[i], state.keys.data(), state.values.data(), d, 0, hi,
                                      scale, weights, a);
        affine_row<float>(a, weight_of(model, blk.output.weight), bias_of(model, blk.output), o);
        std::vector<float> y(d);
        for (std::size_t j = 0; j < d; ++j) y[j] = rows[i][j] + o[j];
        affine_row<float>(y, weight_of(model, blk.ff_in.weight), bias_of(model, blk.ff_in), f);
        for (auto& v : f) v = std::tanh(v);
        affine_row<float>(f, weight_of(model, blk.ff_out.weight), bias_of(model, blk.ff_out), g);
        for (std::size_t j = 0; j < d; ++j) rows[i][j] = y[j] + g[j];
      }
    }
    for (const auto& r : rows) ch.decode_row(model, r);
    return n;
  }
};

StreamingDecoder::StreamingDecoder(const SurtModel<float>& model)
    : impl_(std::make_unique<Impl>(model)) {}

StreamingDecoder::~StreamingDecoder() = default;

std::size_t StreamingDecoder::push(std::span<const float> frame) {
  if (finished_) throw UsageError("push after finish");
  if (frame.size() != impl_->model.feature_dim())
    throw DimensionError("frame has " + std::to_string(frame.size()) + " features, model expects " +
                         std::to_string(impl_->model.feature_dim()));
  ++pushed_;
  const std::size_t n = impl_->push(frame);
  decoded_ += n;
  return n;
}

std::size_t StreamingDecoder::finish() {
  if (finished_) return 0;
  finished_ = true;
  const std::size_t n = impl_->finish();
  decoded_ += n;
  return n;
}

std::array<ChannelHypothesis, 2> StreamingDecoder::hypotheses() const {
  return {impl_->channels[0].greedy.hypothesis(), impl_->channels[1].greedy.hypothesis()};
}

std::array<ChannelHypothesis, 2> stream_decode(const SurtModel<float>& model, const Tensor& X) {
  StreamingDecoder dec(model);
  for (std::size_t t = 0; t < X.dim(0); ++t) dec.push(row_of(X, t));
  dec.finish();
  return dec.hypotheses();
}

// --- records ---------------------------------------------------------------

std::string decode_records(const SampleDecode& d) {
  std::string out;
  for (int c = 0; c < 2; ++c) {
    const auto& h = d.channels[std::size_t(c)];
    nlohmann::json j;
    j["id"] = d.id;
    j["channel"] = c + 1;
    j["tokens"] = h.tokens;
    j["emission_frames"] = h.emission_frames;
    j["t_hat_eos"] = h.t_hat_eos ? nlohmann::json(*h.t_hat_eos) : nlohmann::json(nullptr);
    j["no_ep_flag"] = h.no_ep();
    const auto& leak = d.leakage[std::size_t(c)];
    j["leakage"] = leak ? nlohmann::json(*leak) : nlohmann::json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<SampleDecode> read_decodes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open decode file " + path);
  std::vector<SampleDecode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string id = j.at("id").get<std::string>();
      const int channel = j.at("channel").get<int>();
      if (channel != 1 && channel != 2) throw IoError("channel must be 1 or 2");
      if (out.empty() || out.back().id != id) {
        out.emplace_back();
        out.back().id = id;
      }
      auto& h = out.back().channels[std::size_t(channel - 1)];
      h.tokens = j.at("tokens").get<std::vector<int>>();
      h.emission_frames = j.at("emission_frames").get<std::vector<int>>();
      if (!j.at("t_hat_eos").is_null()) h.t_hat_eos = j.at("t_hat_eos").get<int>();
      if (!j.at("leakage").is_null())
        out.back().leakage[std::size_t(channel - 1)] = j.at("leakage").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed decode record: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace surt::decode
