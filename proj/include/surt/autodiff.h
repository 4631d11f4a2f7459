#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "surt/params.h"
#include "surt/tensor.h"

namespace surt::nn {

template <typename T>
class Graph;

// Handle to a node recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  bool valid() const { return graph != nullptr; }
  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape of tensor operations. Nodes are appended in execution order, so the
// tape is already topologically sorted and backward is a reverse sweep.
template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;
  // Reads grad(self) and accumulates into the inputs' grads.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(TensorT value);
  // Leaf bound to parameter `index` of `store`; repeated calls return the same
  // node. The store must outlive the graph and stay unmodified during use.
  Var<T> parameter(const BasicParamStore<T>& store, std::size_t index);
  Var<T> record(TensorT value, std::vector<std::size_t> inputs, BackwardFn fn);

  const TensorT& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Gradient buffer of a node, allocated (zeroed) on first access.
  TensorT& grad(std::size_t id);
  const std::optional<TensorT>& grad_if_any(std::size_t id) const {
    return nodes_.at(id).grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Throws UsageError when the loss was not
  // produced by a recorded forward pass on this graph, or on a second call.
  void backward(Var<T> loss);
  bool has_backward_run() const { return backward_done_; }

  // Adds the gradients of every parameter node into the store's grad slots.
  void accumulate_into(BasicParamStore<T>& store) const;
  // Parameter gradients as (param index, gradient) pairs in index order.
  std::vector<std::pair<std::size_t, TensorT>> parameter_grads() const;

 private:
  struct Node {
    TensorT value;
    std::optional<TensorT> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::size_t> param_index;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  const void* bound_store_ = nullptr;
  bool backward_done_ = false;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  if (!graph) throw UsageError("value() on an unbound Var");
  return graph->value(id);
}

// --- Operations ------------------------------------------------------------

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// y[t] = x[t] W + b
template <typename T> Var<T> linear(Var<T> x, Var<T> W, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> tanh(Var<T> x);
template <typename T> Var<T> relu(Var<T> x);
// Normalizes over the last dimension.
template <typename T> Var<T> log_softmax(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
// Smaller of two scalars; gradient routes to the first on ties.
template <typename T> Var<T> minimum(Var<T> a, Var<T> b);
// Rows of table[V x E] selected by ids.
template <typename T> Var<T> embedding(Var<T> table, const std::vector<int>& ids);
// Causal temporal convolution. x [T x Cin], W [K x Cin x Cout], b [Cout].
template <typename T> Var<T> conv1d_causal(Var<T> x, Var<T> W, Var<T> b);
// Gated recurrent layer over x [T x D]; h0 [H], Wx [D x 2H], Uh [H x 2H],
// b [2H]. Output [T x H]; row t depends on x rows 0..t only.
template <typename T>
Var<T> gated_recurrent(Var<T> x, Var<T> h0, Var<T> Wx, Var<T> Uh, Var<T> b);
// Scaled dot-product attention where query i attends to keys in its own
// chunk and, if `history`, all earlier chunks.
template <typename T>
Var<T> chunked_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t chunk,
                         bool history);
// Elementwise xbar * mask, rounded so that xbar - result is exact.
template <typename T> Var<T> mask_product(Var<T> xbar, Var<T> mask);
// Adds a constant tensor; gradient passes through unchanged.
template <typename T> Var<T> add_constant(Var<T> x, const BasicTensor<T>& offset);

// Key range [lo, hi) visible to query row i.
struct ChunkWindow {
  std::size_t lo;
  std::size_t hi;
};
inline ChunkWindow chunk_window(std::size_t i, std::size_t n, std::size_t chunk,
                                bool history) {
  const std::size_t start = (i / chunk) * chunk;
  return {history ? 0 : start, std::min(n, start + chunk)};
}

}  // namespace surt::nn
