#include "surt/autodiff.h"

#include <algorithm>
#include <cmath>
#include <memory>

#include "surt/kernels.h"

namespace surt::nn {

// --- Graph -------------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::constant(TensorT value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(const BasicParamStore<T>& store, std::size_t index) {
  if (bound_store_ && bound_store_ != &store) {
    throw UsageError("graph already bound to a different parameter store");
  }
  bound_store_ = &store;
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) {
    return {this, it->second};
  }
  Node n;
  n.value = store.value(index);
  n.requires_grad = true;
  n.param_index = index;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(index, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::record(TensorT value, std::vector<std::size_t> inputs,
                        BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw UsageError("record: input node out of range");
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
typename Graph<T>::TensorT& Graph<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.grad) n.grad = TensorT(n.value.shape());
  return *n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this || loss.id >= nodes_.size()) {
    throw UsageError("backward: loss was not produced by a forward pass on this graph");
  }
  if (backward_done_) throw UsageError("backward: already run on this graph");
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_string(nodes_[loss.id].value.shape()));
  }
  backward_done_ = true;
  grad(loss.id)[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || !n.grad) continue;
    n.backward(*this, id);
  }
}

template <typename T>
void Graph<T>::accumulate_into(BasicParamStore<T>& store) const {
  if (bound_store_ && bound_store_ != &store) {
    throw UsageError("accumulate_into: graph was built from a different store");
  }
  for (const auto& [index, grad] : parameter_grads()) {
    store.accumulate_grad(index, grad.values());
  }
}

template <typename T>
std::vector<std::pair<std::size_t, BasicTensor<T>>> Graph<T>::parameter_grads()
    const {
  std::vector<std::pair<std::size_t, TensorT>> out;
  for (const Node& n : nodes_) {
    if (!n.param_index) continue;
    out.emplace_back(*n.param_index,
                     n.grad ? *n.grad : TensorT(n.value.shape()));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

// --- Helpers -----------------------------------------------------------------

namespace {

template <typename T>
Graph<T>& graph_of(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = nullptr;
  for (const Var<T>& v : vars) {
    if (!v.graph) throw UsageError("operation on an unbound Var");
    if (g && g != v.graph) throw UsageError("operands belong to different graphs");
    g = v.graph;
  }
  return *g;
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_string(a) + " and " + shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got shape " + shape_string(s));
  }
}

template <typename T>
std::span<const T> cspan(const BasicTensor<T>& t) {
  return t.values();
}

}  // namespace

// --- Dense algebra -----------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of({a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  require_rank("matmul", A.shape(), 2);
  require_rank("matmul", B.shape(), 2);
  if (A.dim(1) != B.dim(0)) shape_error("matmul", A.shape(), B.shape());
  const std::size_t N = A.dim(0), K = A.dim(1), M = B.dim(1);
  BasicTensor<T> out({N, M});
  for (std::size_t n = 0; n < N; ++n) {
    kernels::affine_row<T>(A.row(n), B.data(), {}, out.row(n));
  }
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, N, K, M](Graph<T>& g, std::size_t self) {
                    const auto& G = *g.grad_if_any(self);
                    const auto& A = g.value(ai);
                    const auto& B = g.value(bi);
                    if (g.requires_grad(ai)) {
                      auto& dA = g.grad(ai);
                      for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t k = 0; k < K; ++k) {
                          T s = 0;
                          for (std::size_t m = 0; m < M; ++m)
                            s += G[n * M + m] * B[k * M + m];
                          dA[n * K + k] += s;
                        }
                    }
                    if (g.requires_grad(bi)) {
                      auto& dB = g.grad(bi);
                      for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t k = 0; k < K; ++k) {
                          const T x = A[n * K + k];
                          if (x == T{0}) continue;
                          for (std::size_t m = 0; m < M; ++m)
                            dB[k * M + m] += x * G[n * M + m];
                        }
                    }
                  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> W, Var<T> b) {
  Graph<T>& g = graph_of({x, W, b});
  const auto& X = x.value();
  const auto& Wt = W.value();
  const auto& Bt = b.value();
  require_rank("linear", X.shape(), 2);
  require_rank("linear", Wt.shape(), 2);
  if (X.dim(1) != Wt.dim(0)) shape_error("linear", X.shape(), Wt.shape());
  if (Bt.rank() != 1 || Bt.dim(0) != Wt.dim(1)) {
    shape_error("linear (bias)", Wt.shape(), Bt.shape());
  }
  const std::size_t N = X.dim(0), K = X.dim(1), M = Wt.dim(1);
  BasicTensor<T> out({N, M});
  for (std::size_t n = 0; n < N; ++n) {
    kernels::affine_row<T>(X.row(n), Wt.data(), cspan(Bt), out.row(n));
  }
  return g.record(
      std::move(out), {x.id, W.id, b.id},
      [xi = x.id, wi = W.id, bi = b.id, N, K, M](Graph<T>& g, std::size_t self) {
        const auto& G = *g.grad_if_any(self);
        const auto& X = g.value(xi);
        const auto& Wt = g.value(wi);
        if (g.requires_grad(xi)) {
          auto& dX = g.grad(xi);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) {
              T s = 0;
              const T* w = Wt.data() + k * M;
              const T* gr = G.data() + n * M;
              for (std::size_t m = 0; m < M; ++m) s += gr[m] * w[m];
              dX[n * K + k] += s;
            }
        }
        if (g.requires_grad(wi)) {
          auto& dW = g.grad(wi);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) {
              const T v = X[n * K + k];
              if (v == T{0}) continue;
              T* dw = dW.data() + k * M;
              const T* gr = G.data() + n * M;
              for (std::size_t m = 0; m < M; ++m) dw[m] += v * gr[m];
            }
        }
        if (g.requires_grad(bi)) {
          auto& dB = g.grad(bi);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m < M; ++m) dB[m] += G[n * M + m];
        }
      });
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Var<T> binary_elementwise(const char* op, Var<T> a, Var<T> b, Fwd fwd, Bwd bwd) {
  Graph<T>& g = graph_of({a, b});
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_error(op, A.shape(), B.shape());
  BasicTensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i], B[i]);
  return g.record(std::move(out), {a.id, b.id},
                  [ai = a.id, bi = b.id, bwd](Graph<T>& g, std::size_t self) {
                    const auto& G = *g.grad_if_any(self);
                    const auto& A = g.value(ai);
                    const auto& B = g.value(bi);
                    const bool need_a = g.requires_grad(ai);
                    const bool need_b = g.requires_grad(bi);
                    BasicTensor<T>* dA = need_a ? &g.grad(ai) : nullptr;
                    BasicTensor<T>* dB = need_b ? &g.grad(bi) : nullptr;
                    for (std::size_t i = 0; i < G.size(); ++i) {
                      auto [ga, gb] = bwd(A[i], B[i], G[i]);
                      if (dA) (*dA)[i] += ga;
                      if (dB) (*dB)[i] += gb;
                    }
                  });
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_elementwise(Var<T> x, Fwd fwd, Bwd bwd) {
  Graph<T>& g = graph_of({x});
  const auto& X = x.value();
  BasicTensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = fwd(X[i]);
  return g.record(std::move(out), {x.id},
                  [xi = x.id, bwd](Graph<T>& g, std::size_t self) {
                    const auto& G = *g.grad_if_any(self);
                    const auto& X = g.value(xi);
                    const auto& Y = g.value(self);
                    auto& dX = g.grad(xi);
                    for (std::size_t i = 0; i < G.size(); ++i)
                      dX[i] += G[i] * bwd(X[i], Y[i]);
                  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g) { return std::pair{g, g}; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g) { return std::pair{g, -g}; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g) { return std::pair{g * y, g * x}; });
}

template <typename T>
Var<T> mask_product(Var<T> xbar, Var<T> mask) {
  return binary_elementwise<T>(
      "mask_product", xbar, mask,
      [](T x, T m) { return kernels::masked_part(x, m); },
      [](T x, T m, T g) { return std::pair{g * m, g * x}; });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary_elementwise<T>(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary_elementwise<T>(
      x, [](T v) { return kernels::sigmoid(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary_elementwise<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary_elementwise<T>(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> add_constant(Var<T> x, const BasicTensor<T>& offset) {
  Graph<T>& g = graph_of({x});
  const auto& X = x.value();
  if (X.shape() != offset.shape()) shape_error("add_constant", X.shape(), offset.shape());
  BasicTensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] + offset[i];
  return g.record(std::move(out), {x.id}, [xi = x.id](Graph<T>& g, std::size_t self) {
    const auto& G = *g.grad_if_any(self);
    auto& dX = g.grad(xi);
    for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i];
  });
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
  Graph<T>& g = graph_of({x});
  const auto& X = x.value();
  if (X.rank() == 0 || X.shape().back() == 0) {
    throw DimensionError("log_softmax: last dimension must be >= 1, got shape " +
                         shape_string(X.shape()));
  }
  const std::size_t V = X.shape().back();
  const std::size_t R = X.size() / V;
  BasicTensor<T> out(X.shape());
  for (std::size_t r = 0; r < R; ++r) {
    kernels::log_softmax_row<T>(X.values().subspan(r * V, V),
                                out.values().subspan(r * V, V));
  }
  return g.record(std::move(out), {x.id},
                  [xi = x.id, V, R](Graph<T>& g, std::size_t self) {
                    const auto& G = *g.grad_if_any(self);
                    const auto& Y = g.value(self);
                    auto& dX = g.grad(xi);
                    for (std::size_t r = 0; r < R; ++r) {
                      T total = 0;
                      for (std::size_t v = 0; v < V; ++v) total += G[r * V + v];
                      for (std::size_t v = 0; v < V; ++v)
                        dX[r * V + v] += G[r * V + v] - std::exp(Y[r * V + v]) * total;
                    }
                  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = graph_of({x});
  T total = 0;
  for (T v : x.value().values()) total += v;
  return g.record(BasicTensor<T>::scalar(total), {x.id},
                  [xi = x.id](Graph<T>& g, std::size_t self) {
                    const T gs = (*g.grad_if_any(self))[0];
                    for (T& d : g.grad(xi).values()) d += gs;
                  });
}

template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of({a, b});
  const T va = a.value().item();
  const T vb = b.value().item();
  const bool first = va <= vb;
  return g.record(BasicTensor<T>::scalar(first ? va : vb), {a.id, b.id},
                  [ai = a.id, bi = b.id, first](Graph<T>& g, std::size_t self) {
                    const T gs = (*g.grad_if_any(self))[0];
                    const std::size_t target = first ? ai : bi;
                    if (g.requires_grad(target)) g.grad(target)[0] += gs;
                  });
}

template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  Graph<T>& g = graph_of({table});
  const auto& E = table.value();
  require_rank("embedding", E.shape(), 2);
  const std::size_t V = E.dim(0), D = E.dim(1);
  BasicTensor<T> out({ids.size(), D});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || std::size_t(ids[r]) >= V) {
      throw ArgumentError("embedding: id " + std::to_string(ids[r]) +
                          " outside table of " + std::to_string(V) + " rows");
    }
    auto src = E.row(std::size_t(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return g.record(std::move(out), {table.id},
                  [ti = table.id, ids, D](Graph<T>& g, std::size_t self) {
                    const auto& G = *g.grad_if_any(self);
                    auto& dE = g.grad(ti);
                    for (std::size_t r = 0; r < ids.size(); ++r)
                      for (std::size_t d = 0; d < D; ++d)
                        dE[std::size_t(ids[r]) * D + d] += G[r * D + d];
                  });
}

// --- Sequence layers ---------------------------------------------------------

template <typename T>
Var<T> conv1d_causal(Var<T> x, Var<T> W, Var<T> b) {
  Graph<T>& g = graph_of({x, W, b});
  const auto& X = x.value();
  const auto& Wt = W.value();
  const auto& Bt = b.value();
  require_rank("conv1d_causal", X.shape(), 2);
  require_rank("conv1d_causal", Wt.shape(), 3);
  if (X.dim(1) != Wt.dim(1)) shape_error("conv1d_causal", X.shape(), Wt.shape());
  if (Bt.rank() != 1 || Bt.dim(0) != Wt.dim(2)) {
    shape_error("conv1d_causal (bias)", Wt.shape(), Bt.shape());
  }
  const std::size_t N = X.dim(0), K = Wt.dim(0), Cin = Wt.dim(1), Cout = Wt.dim(2);
  BasicTensor<T> out({N, Cout});
  std::vector<const T*> taps(K);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t s = std::ptrdiff_t(t) - std::ptrdiff_t(K - 1) + std::ptrdiff_t(k);
      taps[k] = s < 0 ? nullptr : X.data() + std::size_t(s) * Cin;
    }
    kernels::conv_row<T>(taps, Cin, Wt.data(), cspan(Bt), out.row(t));
  }
  return g.record(
      std::move(out), {x.id, W.id, b.id},
      [xi = x.id, wi = W.id, bi = b.id, N, K, Cin, Cout](Graph<T>& g,
                                                         std::size_t self) {
        const auto& G = *g.grad_if_any(self);
        const auto& X = g.value(xi);
        const auto& Wt = g.value(wi);
        BasicTensor<T>* dX = g.requires_grad(xi) ? &g.grad(xi) : nullptr;
        BasicTensor<T>* dW = g.requires_grad(wi) ? &g.grad(wi) : nullptr;
        BasicTensor<T>* dB = g.requires_grad(bi) ? &g.grad(bi) : nullptr;
        for (std::size_t t = 0; t < N; ++t) {
          const T* gr = G.data() + t * Cout;
          if (dB)
            for (std::size_t j = 0; j < Cout; ++j) (*dB)[j] += gr[j];
          for (std::size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t s =
                std::ptrdiff_t(t) - std::ptrdiff_t(K - 1) + std::ptrdiff_t(k);
            if (s < 0) continue;
            const T* xs = X.data() + std::size_t(s) * Cin;
            for (std::size_t i = 0; i < Cin; ++i) {
              const T* w = Wt.data() + (k * Cin + i) * Cout;
              if (dX) {
                T acc = 0;
                for (std::size_t j = 0; j < Cout; ++j) acc += gr[j] * w[j];
                (*dX)[std::size_t(s) * Cin + i] += acc;
              }
              if (dW && xs[i] != T{0}) {
                T* dw = dW->data() + (k * Cin + i) * Cout;
                for (std::size_t j = 0; j < Cout; ++j) dw[j] += xs[i] * gr[j];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> gated_recurrent(Var<T> x, Var<T> h0, Var<T> Wx, Var<T> Uh, Var<T> b) {
  Graph<T>& g = graph_of({x, h0, Wx, Uh, b});
  const auto& X = x.value();
  const auto& H0 = h0.value();
  const auto& W = Wx.value();
  const auto& U = Uh.value();
  const auto& B = b.value();
  require_rank("gated_recurrent", X.shape(), 2);
  require_rank("gated_recurrent", H0.shape(), 1);
  const std::size_t N = X.dim(0), D = X.dim(1), H = H0.dim(0);
  if (W.shape() != Shape{D, 2 * H}) shape_error("gated_recurrent (Wx)", X.shape(), W.shape());
  if (U.shape() != Shape{H, 2 * H}) shape_error("gated_recurrent (Uh)", H0.shape(), U.shape());
  if (B.shape() != Shape{2 * H}) shape_error("gated_recurrent (b)", H0.shape(), B.shape());

  BasicTensor<T> out({N, H});
  // Saved per step: z and c for the backward pass.
  auto gates = std::make_shared<std::vector<T>>(N * H);
  auto cands = std::make_shared<std::vector<T>>(N * H);
  std::vector<T> pre(2 * H);
  for (std::size_t t = 0; t < N; ++t) {
    std::span<const T> h_prev = t == 0 ? cspan(H0) : std::span<const T>(out.row(t - 1));
    kernels::gated_step<T>(X.row(t), h_prev, W.data(), U.data(), cspan(B), pre,
                           std::span<T>(gates->data() + t * H, H),
                           std::span<T>(cands->data() + t * H, H), out.row(t));
  }
  return g.record(
      std::move(out), {x.id, h0.id, Wx.id, Uh.id, b.id},
      [xi = x.id, hi = h0.id, wi = Wx.id, ui = Uh.id, bi = b.id, N, D, H, gates,
       cands](Graph<T>& g, std::size_t self) {
        const auto& G = *g.grad_if_any(self);
        const auto& X = g.value(xi);
        const auto& H0 = g.value(hi);
        const auto& W = g.value(wi);
        const auto& U = g.value(ui);
        const auto& Y = g.value(self);
        BasicTensor<T>* dX = g.requires_grad(xi) ? &g.grad(xi) : nullptr;
        BasicTensor<T>* dH0 = g.requires_grad(hi) ? &g.grad(hi) : nullptr;
        BasicTensor<T>* dW = g.requires_grad(wi) ? &g.grad(wi) : nullptr;
        BasicTensor<T>* dU = g.requires_grad(ui) ? &g.grad(ui) : nullptr;
        BasicTensor<T>* dB = g.requires_grad(bi) ? &g.grad(bi) : nullptr;
        std::vector<T> dh(H, T{0}), dh_prev(H), dpre(2 * H);
        for (std::size_t t = N; t-- > 0;) {
          const T* h_prev = t == 0 ? H0.data() : Y.data() + (t - 1) * H;
          const T* z = gates->data() + t * H;
          const T* c = cands->data() + t * H;
          for (std::size_t j = 0; j < H; ++j) {
            const T d = dh[j] + G[t * H + j];
            const T dz = d * (c[j] - h_prev[j]);
            const T dc = d * z[j];
            dh_prev[j] = d * (T{1} - z[j]);
            dpre[j] = dz * z[j] * (T{1} - z[j]);
            dpre[H + j] = dc * (T{1} - c[j] * c[j]);
          }
          if (dB)
            for (std::size_t j = 0; j < 2 * H; ++j) (*dB)[j] += dpre[j];
          const T* xt = X.data() + t * D;
          for (std::size_t i = 0; i < D; ++i) {
            const T* w = W.data() + i * 2 * H;
            if (dX) {
              T acc = 0;
              for (std::size_t j = 0; j < 2 * H; ++j) acc += dpre[j] * w[j];
              (*dX)[t * D + i] += acc;
            }
            if (dW && xt[i] != T{0}) {
              T* dw = dW->data() + i * 2 * H;
              for (std::size_t j = 0; j < 2 * H; ++j) dw[j] += xt[i] * dpre[j];
            }
          }
          for (std::size_t i = 0; i < H; ++i) {
            const T* u = U.data() + i * 2 * H;
            T acc = 0;
            for (std::size_t j = 0; j < 2 * H; ++j) acc += dpre[j] * u[j];
            dh_prev[i] += acc;
            if (dU && h_prev[i] != T{0}) {
              T* du = dU->data() + i * 2 * H;
              for (std::size_t j = 0; j < 2 * H; ++j) du[j] += h_prev[i] * dpre[j];
            }
          }
          dh.swap(dh_prev);
        }
        if (dH0)
          for (std::size_t j = 0; j < H; ++j) (*dH0)[j] += dh[j];
      });
}

template <typename T>
Var<T> chunked_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t chunk,
                         bool history) {
  Graph<T>& g = graph_of({q, k, v});
  if (chunk == 0) throw ArgumentError("chunked_attention: chunk must be >= 1");
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  require_rank("chunked_attention", Q.shape(), 2);
  if (K.shape() != Q.shape()) shape_error("chunked_attention (keys)", Q.shape(), K.shape());
  if (V.shape() != Q.shape()) shape_error("chunked_attention (values)", Q.shape(), V.shape());
  const std::size_t N = Q.dim(0), d = Q.dim(1);
  const T scale = T{1} / std::sqrt(T(d));
  BasicTensor<T> out({N, d});
  // Dense N x N attention weights; zero outside each query's window.
  auto weights = std::make_shared<std::vector<T>>(N * N, T{0});
  for (std::size_t i = 0; i < N; ++i) {
    const auto win = chunk_window(i, N, chunk, history);
    kernels::attention_row<T>(Q.row(i), K.data(), V.data(), d, win.lo, win.hi, scale,
                              std::span<T>(weights->data() + i * N + win.lo,
                                           win.hi - win.lo),
                              out.row(i));
  }
  return g.record(
      std::move(out), {q.id, k.id, v.id},
      [qi = q.id, ki = k.id, vi = v.id, N, d, chunk, history, scale,
       weights](Graph<T>& g, std::size_t self) {
        const auto& G = *g.grad_if_any(self);
        const auto& Q = g.value(qi);
        const auto& K = g.value(ki);
        const auto& V = g.value(vi);
        BasicTensor<T>* dQ = g.requires_grad(qi) ? &g.grad(qi) : nullptr;
        BasicTensor<T>* dK = g.requires_grad(ki) ? &g.grad(ki) : nullptr;
        BasicTensor<T>* dV = g.requires_grad(vi) ? &g.grad(vi) : nullptr;
        std::vector<T> da(N);
        for (std::size_t i = 0; i < N; ++i) {
          const auto win = chunk_window(i, N, chunk, history);
          const T* a = weights->data() + i * N;
          const T* gi = G.data() + i * d;
          T dot = 0;
          for (std::size_t j = win.lo; j < win.hi; ++j) {
            const T* vj = V.data() + j * d;
            T s = 0;
            for (std::size_t c = 0; c < d; ++c) s += gi[c] * vj[c];
            da[j] = s;
            dot += a[j] * s;
            if (dV) {
              T* dv = dV->data() + j * d;
              for (std::size_t c = 0; c < d; ++c) dv[c] += a[j] * gi[c];
            }
          }
          for (std::size_t j = win.lo; j < win.hi; ++j) {
            const T ds = a[j] * (da[j] - dot) * scale;
            if (ds == T{0}) continue;
            if (dQ) {
              const T* kj = K.data() + j * d;
              T* dq = dQ->data() + i * d;
              for (std::size_t c = 0; c < d; ++c) dq[c] += ds * kj[c];
            }
            if (dK) {
              const T* qrow = Q.data() + i * d;
              T* dk = dK->data() + j * d;
              for (std::size_t c = 0; c < d; ++c) dk[c] += ds * qrow[c];
            }
          }
        }
      });
}

#define SURT_INSTANTIATE_OPS(T)                                                 \
  template class Graph<T>;                                                      \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                    \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                            \
  template Var<T> add<T>(Var<T>, Var<T>);                                       \
  template Var<T> sub<T>(Var<T>, Var<T>);                                       \
  template Var<T> mul<T>(Var<T>, Var<T>);                                       \
  template Var<T> scale<T>(Var<T>, T);                                          \
  template Var<T> sigmoid<T>(Var<T>);                                           \
  template Var<T> tanh<T>(Var<T>);                                              \
  template Var<T> relu<T>(Var<T>);                                              \
  template Var<T> log_softmax<T>(Var<T>);                                       \
  template Var<T> sum<T>(Var<T>);                                               \
  template Var<T> minimum<T>(Var<T>, Var<T>);                                   \
  template Var<T> embedding<T>(Var<T>, const std::vector<int>&);                \
  template Var<T> conv1d_causal<T>(Var<T>, Var<T>, Var<T>);                     \
  template Var<T> gated_recurrent<T>(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);   \
  template Var<T> chunked_attention<T>(Var<T>, Var<T>, Var<T>, std::size_t,     \
                                       bool);                                   \
  template Var<T> mask_product<T>(Var<T>, Var<T>);                              \
  template Var<T> add_constant<T>(Var<T>, const BasicTensor<T>&);

SURT_INSTANTIATE_OPS(float)
SURT_INSTANTIATE_OPS(double)

}  // namespace surt::nn
