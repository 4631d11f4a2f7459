#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "surt/autodiff.h"

namespace surt::nn {

// Xavier-uniform weights, zero biases.
template <typename T>
BasicTensor<T> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);

// Affine map x W + b.
struct LinearLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  template <typename T>
  static LinearLayer create(BasicParamStore<T>& store, const std::string& name,
                            std::size_t in_dim, std::size_t out_dim,
                            std::mt19937_64& rng);
  template <typename T>
  Var<T> forward(Graph<T>& g, const BasicParamStore<T>& store, Var<T> x) const;
};

// Causal temporal convolution (stride 1, left zero padding).
struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t kernel = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  template <typename T>
  static ConvLayer create(BasicParamStore<T>& store, const std::string& name,
                          std::size_t kernel, std::size_t in_dim,
                          std::size_t out_dim, std::mt19937_64& rng);
  template <typename T>
  Var<T> forward(Graph<T>& g, const BasicParamStore<T>& store, Var<T> x) const;
};

// Single gated recurrent cell (update gate + candidate).
struct RecurrentLayer {
  std::size_t input_weight = 0;
  std::size_t hidden_weight = 0;
  std::size_t bias = 0;
  std::size_t in_dim = 0;
  std::size_t hidden = 0;

  template <typename T>
  static RecurrentLayer create(BasicParamStore<T>& store, const std::string& name,
                               std::size_t in_dim, std::size_t hidden,
                               std::mt19937_64& rng);
  // x [T x in_dim], state0 [hidden] -> [T x hidden]; causal.
  template <typename T>
  Var<T> forward(Graph<T>& g, const BasicParamStore<T>& store, Var<T> x,
                 Var<T> state0) const;
};

// Single-head self-attention restricted to chunk-causal windows.
struct ChunkedAttentionLayer {
  LinearLayer query;
  LinearLayer key;
  LinearLayer value;
  std::size_t chunk = 1;
  bool history = true;

  template <typename T>
  static ChunkedAttentionLayer create(BasicParamStore<T>& store,
                                      const std::string& name, std::size_t dim,
                                      std::size_t chunk, bool history,
                                      std::mt19937_64& rng);
  template <typename T>
  Var<T> forward(Graph<T>& g, const BasicParamStore<T>& store, Var<T> x) const;
};

// Residual attention block: y = x + Wo attn(x); out = y + W2 tanh(W1 y).
struct AttentionBlock {
  ChunkedAttentionLayer attention;
  LinearLayer output;
  LinearLayer ff_in;
  LinearLayer ff_out;

  template <typename T>
  static AttentionBlock create(BasicParamStore<T>& store, const std::string& name,
                               std::size_t dim, std::size_t ff_dim,
                               std::size_t chunk, std::mt19937_64& rng);
  template <typename T>
  Var<T> forward(Graph<T>& g, const BasicParamStore<T>& store, Var<T> x) const;
};

// Free-function forms of the two sequence layers.
template <typename T>
Var<T> recurrent_encode(Graph<T>& g, const BasicParamStore<T>& store,
                        const RecurrentLayer& layer, Var<T> x, Var<T> state0);
template <typename T>
Var<T> chunked_self_attention(Graph<T>& g, const BasicParamStore<T>& store,
                              const ChunkedAttentionLayer& layer, Var<T> x);

}  // namespace surt::nn
