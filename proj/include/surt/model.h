#pragma once

#include <cstdint>
#include <vector>

#include "surt/config.h"
#include "surt/layers.h"
#include "surt/lattice.h"
#include "surt/vocab.h"

namespace surt {

// Mask-based unmixing front end followed by one recognition transducer that
// both channels share. Parameters prefixed "unmix." belong to the front end,
// "recog." to the shared transducer.
template <typename T>
class SurtModel {
 public:
  using Store = nn::BasicParamStore<T>;
  using V = nn::Var<T>;
  using G = nn::Graph<T>;

  struct Unmixed {
    V mask;     // (0, 1)
    V encoded;  // Xbar
    V h1;       // Xbar * mask
    V h2;       // Xbar - h1
  };

  struct Layers {
    std::vector<nn::ConvLayer> mask_convs;
    std::vector<nn::ConvLayer> enc_convs;
    std::vector<nn::RecurrentLayer> rnn;         // rnnt encoder
    nn::ConvLayer input_conv;                    // tt encoder: local order
    std::vector<nn::AttentionBlock> attention;   // tt encoder
    nn::LinearLayer joint_f;
    std::size_t embedding = 0;
    nn::RecurrentLayer pred_rnn;
    nn::LinearLayer joint_g;
    nn::LinearLayer joint_out;
  };

  SurtModel(const ModelConfig& cfg, std::size_t feature_dim, TokenVocab vocab,
            std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const TokenVocab& vocab() const { return vocab_; }
  std::size_t feature_dim() const { return feature_dim_; }
  const Layers& layers() const { return layers_; }
  Store& params() { return store_; }
  const Store& params() const { return store_; }
  bool is_tt() const { return cfg_.encoder == "tt"; }

  Unmixed unmix(G& g, V x) const;
  // Recognition encoder output projected to the joint dimension [T x J].
  V encode(G& g, V h) const;
  // Prediction network over [blank, labels...], projected: [(U+1) x J].
  V predict(G& g, const std::vector<int>& labels) const;
  // [T x (U+1) x V] log-probabilities.
  V joint(G& g, V pf, V pg) const;
  V channel_lattice(G& g, V h, const std::vector<int>& labels) const {
    return joint(g, encode(g, h), predict(g, labels));
  }

  std::size_t parameter_count() const { return store_.parameter_count(); }
  std::size_t recognition_parameter_count() const;

  template <typename U>
  SurtModel<U> cast() const;

 private:
  template <typename U>
  friend class SurtModel;
  SurtModel() = default;

  ModelConfig cfg_;
  TokenVocab vocab_;
  std::size_t feature_dim_ = 0;
  Layers layers_;
  Store store_;
};

// One channel's reference and ground-truth endpoint.
struct ChannelTarget {
  std::vector<int> labels;
  int t_eos = 0;
};

template <typename T>
struct SurtLoss {
  nn::Var<T> total;
  double ch1 = 0;  // loss on channel 1 under the chosen assignment
  double ch2 = 0;
  bool swapped = false;  // PIT picked (r2 -> H1, r1 -> H2)
};

// Per-channel transducer loss with optional latency penalty at t_eos.
template <typename T>
nn::Var<T> channel_loss(const SurtModel<T>& model, nn::Var<T> lattice,
                        const ChannelTarget& target, const rnnt::PenaltyConfig& penalty);

// Channel 1 bound to r1 (the first-starting utterance). `require_eos` demands
// a terminal eos on both references.
template <typename T>
SurtLoss<T> heat_loss(nn::Graph<T>& g, const SurtModel<T>& model, nn::Var<T> x,
                      const ChannelTarget& r1, const ChannelTarget& r2,
                      const rnnt::PenaltyConfig& penalty, bool require_eos);

// Minimum over both channel assignments; each assignment keeps its own t_eos.
template <typename T>
SurtLoss<T> pit_loss(nn::Graph<T>& g, const SurtModel<T>& model, nn::Var<T> x,
                     const ChannelTarget& r1, const ChannelTarget& r2,
                     const rnnt::PenaltyConfig& penalty, bool require_eos);

// Which reference HEAT binds to channel 1: earlier start, then longer
// utterance, then lexicographically smaller reference. True means r1 first.
bool heat_first(int start1, int start2, int length1, int length2,
                const std::vector<int>& r1, const std::vector<int>& r2);

}  // namespace surt
