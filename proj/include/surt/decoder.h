#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surt/datagen.h"
#include "surt/lattice.h"
#include "surt/model.h"

namespace surt::decode {

inline constexpr int kMaxSymbolsPerFrame = 8;

struct ChannelHypothesis {
  std::vector<int> tokens;           // eos included when emitted
  std::vector<int> emission_frames;  // 1-based, one per token
  std::optional<int> t_hat_eos;

  bool no_ep() const { return !t_hat_eos.has_value(); }
  bool operator==(const ChannelHypothesis&) const = default;
};

// Frame-synchronous greedy search for one channel. Callers feed frames in
// order; `score` returns the log-probs at the current frame for the current
// prediction state and `emit(token)` advances that state.
class GreedyChannel {
 public:
  GreedyChannel(int blank, int eos, int max_symbols = kMaxSymbolsPerFrame)
      : blank_(blank), eos_(eos), max_symbols_(max_symbols) {}

  template <typename Score, typename Emit>
  void frame(int t, Score&& score, Emit&& emit) {
    if (frozen_) return;
    for (int n = 0; n < max_symbols_; ++n) {
      const std::span<const float> lp = score();
      int best = 0;
      for (int v = 1; v < int(lp.size()); ++v)
        if (lp[std::size_t(v)] > lp[std::size_t(best)]) best = v;
      if (best == blank_) return;
      hyp_.tokens.push_back(best);
      hyp_.emission_frames.push_back(t);
      if (best == eos_) {
        hyp_.t_hat_eos = t;
        frozen_ = true;
        return;
      }
      emit(best);
    }
  }

  const ChannelHypothesis& hypothesis() const { return hyp_; }
  bool frozen() const { return frozen_; }

 private:
  int blank_, eos_, max_symbols_;
  bool frozen_ = false;
  ChannelHypothesis hyp_;
};

// Greedy decoding of a fixed lattice, reading node (t, min(u, U)).
ChannelHypothesis greedy_decode_lattice(const rnnt::Lattice& lp, const TokenVocab& vocab,
                                        int max_symbols = kMaxSymbolsPerFrame);

// Prediction network state for decoding: hidden vector and its joint projection.
class PredictorState {
 public:
  explicit PredictorState(const SurtModel<float>& model);
  void emit(int token);
  std::span<const float> projection() const { return proj_; }

 private:
  void step(int token);
  const SurtModel<float>* model_;
  std::vector<float> hidden_, proj_, pre_, gate_, cand_, next_;
};

// Joint output at one node for a given encoder projection row.
class JointScorer {
 public:
  explicit JointScorer(const SurtModel<float>& model);
  std::span<const float> operator()(std::span<const float> pf, std::span<const float> pg);

 private:
  const SurtModel<float>* model_;
  std::vector<float> z_, out_;
};

struct SampleDecode {
  std::string id;
  std::array<ChannelHypothesis, 2> channels;
  std::array<std::optional<double>, 2> leakage;
};

// Whole-utterance forward pass, then frame-synchronous greedy search.
std::array<ChannelHypothesis, 2> greedy_decode(const SurtModel<float>& model, const Tensor& X);
SampleDecode decode_sample(const SurtModel<float>& model, const data::MixtureSample& s);

// Frame-at-a-time decoding. In rnnt mode every pushed frame is decoded
// immediately; in tt mode a chunk's frames become available once the chunk is
// complete (or at finish()).
class StreamingDecoder {
 public:
  explicit StreamingDecoder(const SurtModel<float>& model);
  ~StreamingDecoder();
  StreamingDecoder(const StreamingDecoder&) = delete;
  StreamingDecoder& operator=(const StreamingDecoder&) = delete;

  // Returns the number of frames decoded by this call.
  std::size_t push(std::span<const float> frame);
  std::size_t finish();

  std::size_t frames_pushed() const { return pushed_; }
  std::size_t frames_decoded() const { return decoded_; }
  std::array<ChannelHypothesis, 2> hypotheses() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t pushed_ = 0;
  std::size_t decoded_ = 0;
  bool finished_ = false;
};

std::array<ChannelHypothesis, 2> stream_decode(const SurtModel<float>& model, const Tensor& X);

// One JSON object per channel.
std::string decode_records(const SampleDecode& d);
std::vector<SampleDecode> read_decodes(const std::string& path);

}  // namespace surt::decode
