#include "surt/layers.h"

#include <cmath>

namespace surt::nn {

template <typename T>
BasicTensor<T> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.values()) v = T(dist(rng));
  return t;
}

template <typename T>
LinearLayer LinearLayer::create(BasicParamStore<T>& store, const std::string& name,
                                std::size_t in_dim, std::size_t out_dim,
                                std::mt19937_64& rng) {
  LinearLayer l;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.weight = store.add(name + ".weight", xavier<T>({in_dim, out_dim}, in_dim, out_dim, rng));
  l.bias = store.add(name + ".bias", BasicTensor<T>({out_dim}));
  return l;
}

template <typename T>
Var<T> LinearLayer::forward(Graph<T>& g, const BasicParamStore<T>& store,
                            Var<T> x) const {
  return linear(x, g.parameter(store, weight), g.parameter(store, bias));
}

template <typename T>
ConvLayer ConvLayer::create(BasicParamStore<T>& store, const std::string& name,
                            std::size_t kernel, std::size_t in_dim,
                            std::size_t out_dim, std::mt19937_64& rng) {
  ConvLayer l;
  l.kernel = kernel;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  l.weight = store.add(name + ".weight", xavier<T>({kernel, in_dim, out_dim},
                                                   kernel * in_dim, out_dim, rng));
  l.bias = store.add(name + ".bias", BasicTensor<T>({out_dim}));
  return l;
}

template <typename T>
Var<T> ConvLayer::forward(Graph<T>& g, const BasicParamStore<T>& store,
                          Var<T> x) const {
  return conv1d_causal(x, g.parameter(store, weight), g.parameter(store, bias));
}

template <typename T>
RecurrentLayer RecurrentLayer::create(BasicParamStore<T>& store,
                                      const std::string& name, std::size_t in_dim,
                                      std::size_t hidden, std::mt19937_64& rng) {
  RecurrentLayer l;
  l.in_dim = in_dim;
  l.hidden = hidden;
  l.input_weight = store.add(name + ".input_weight",
                             xavier<T>({in_dim, 2 * hidden}, in_dim, hidden, rng));
  l.hidden_weight = store.add(name + ".hidden_weight",
                              xavier<T>({hidden, 2 * hidden}, hidden, hidden, rng));
  l.bias = store.add(name + ".bias", BasicTensor<T>({2 * hidden}));
  return l;
}

template <typename T>
Var<T> RecurrentLayer::forward(Graph<T>& g, const BasicParamStore<T>& store,
                               Var<T> x, Var<T> state0) const {
  return gated_recurrent(x, state0, g.parameter(store, input_weight),
                         g.parameter(store, hidden_weight), g.parameter(store, bias));
}

template <typename T>
ChunkedAttentionLayer ChunkedAttentionLayer::create(BasicParamStore<T>& store,
                                                    const std::string& name,
                                                    std::size_t dim,
                                                    std::size_t chunk, bool history,
                                                    std::mt19937_64& rng) {
  if (chunk == 0) throw ArgumentError("attention chunk must be >= 1");
  ChunkedAttentionLayer l;
  l.query = LinearLayer::create(store, name + ".query", dim, dim, rng);
  l.key = LinearLayer::create(store, name + ".key", dim, dim, rng);
  l.value = LinearLayer::create(store, name + ".value", dim, dim, rng);
  l.chunk = chunk;
  l.history = history;
  return l;
}

template <typename T>
Var<T> ChunkedAttentionLayer::forward(Graph<T>& g, const BasicParamStore<T>& store,
                                      Var<T> x) const {
  return chunked_attention(query.forward(g, store, x), key.forward(g, store, x),
                           value.forward(g, store, x), chunk, history);
}

template <typename T>
AttentionBlock AttentionBlock::create(BasicParamStore<T>& store,
                                      const std::string& name, std::size_t dim,
                                      std::size_t ff_dim, std::size_t chunk,
                                      std::mt19937_64& rng) {
  AttentionBlock b;
  b.attention = ChunkedAttentionLayer::create(store, name + ".attn", dim, chunk, true, rng);
  b.output = LinearLayer::create(store, name + ".attn_out", dim, dim, rng);
  b.ff_in = LinearLayer::create(store, name + ".ff_in", dim, ff_dim, rng);
  b.ff_out = LinearLayer::create(store, name + ".ff_out", ff_dim, dim, rng);
  return b;
}

template <typename T>
Var<T> AttentionBlock::forward(Graph<T>& g, const BasicParamStore<T>& store,
                               Var<T> x) const {
  Var<T> y = add(x, output.forward(g, store, attention.forward(g, store, x)));
  return add(y, ff_out.forward(g, store, tanh(ff_in.forward(g, store, y))));
}

template <typename T>
Var<T> recurrent_encode(Graph<T>& g, const BasicParamStore<T>& store,
                        const RecurrentLayer& layer, Var<T> x, Var<T> state0) {
  if (x.value().rank() != 2 || x.value().dim(0) == 0) {
    throw ArgumentError("recurrent_encode: need at least one frame, got shape " +
                        shape_string(x.value().shape()));
  }
  return layer.forward(g, store, x, state0);
}

template <typename T>
Var<T> chunked_self_attention(Graph<T>& g, const BasicParamStore<T>& store,
                              const ChunkedAttentionLayer& layer, Var<T> x) {
  return layer.forward(g, store, x);
}

#define SURT_INSTANTIATE_LAYERS(T)                                               \
  template BasicTensor<T> xavier<T>(Shape, std::size_t, std::size_t,             \
                                    std::mt19937_64&);                           \
  template LinearLayer LinearLayer::create<T>(BasicParamStore<T>&,               \
                                              const std::string&, std::size_t,   \
                                              std::size_t, std::mt19937_64&);    \
  template Var<T> LinearLayer::forward<T>(Graph<T>&, const BasicParamStore<T>&,  \
                                          Var<T>) const;                         \
  template ConvLayer ConvLayer::create<T>(BasicParamStore<T>&, const std::string&, \
                                          std::size_t, std::size_t, std::size_t, \
                                          std::mt19937_64&);                     \
  template Var<T> ConvLayer::forward<T>(Graph<T>&, const BasicParamStore<T>&,    \
                                        Var<T>) const;                           \
  template RecurrentLayer RecurrentLayer::create<T>(                             \
      BasicParamStore<T>&, const std::string&, std::size_t, std::size_t,         \
      std::mt19937_64&);                                                         \
  template Var<T> RecurrentLayer::forward<T>(Graph<T>&, const BasicParamStore<T>&, \
                                             Var<T>, Var<T>) const;              \
  template ChunkedAttentionLayer ChunkedAttentionLayer::create<T>(               \
      BasicParamStore<T>&, const std::string&, std::size_t, std::size_t, bool,   \
      std::mt19937_64&);                                                         \
  template Var<T> ChunkedAttentionLayer::forward<T>(                             \
      Graph<T>&, const BasicParamStore<T>&, Var<T>) const;                       \
  template AttentionBlock AttentionBlock::create<T>(                             \
      BasicParamStore<T>&, const std::string&, std::size_t, std::size_t,         \
      std::size_t, std::mt19937_64&);                                            \
  template Var<T> AttentionBlock::forward<T>(Graph<T>&, const BasicParamStore<T>&, \
                                             Var<T>) const;                      \
  template Var<T> recurrent_encode<T>(Graph<T>&, const BasicParamStore<T>&,      \
                                      const RecurrentLayer&, Var<T>, Var<T>);    \
  template Var<T> chunked_self_attention<T>(Graph<T>&, const BasicParamStore<T>&, \
                                            const ChunkedAttentionLayer&, Var<T>);

SURT_INSTANTIATE_LAYERS(float)
SURT_INSTANTIATE_LAYERS(double)

}  // namespace surt::nn
