#include "surt/params.h"

#include <cmath>

namespace surt::nn {

template <typename T>
std::size_t BasicParamStore<T>::add(std::string name, TensorT init) {
  if (index_.count(name)) {
    throw ArgumentError("duplicate parameter name '" + name + "'");
  }
  const std::size_t idx = entries_.size();
  index_.emplace(name, idx);
  Entry e;
  e.name = std::move(name);
  e.first_moment = TensorT(init.shape());
  e.second_moment = TensorT(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return idx;
}

template <typename T>
std::size_t BasicParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
std::optional<std::size_t> BasicParamStore<T>::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::size_t BasicParamStore<T>::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw ArgumentError("unknown parameter '" + std::string(name) + "'");
  return *idx;
}

template <typename T>
void BasicParamStore<T>::accumulate_grad(std::size_t i, std::span<const T> g) {
  Entry& e = entries_.at(i);
  if (g.size() != e.value.size()) {
    throw DimensionError("gradient for '" + e.name + "' has " +
                         std::to_string(g.size()) + " values, parameter shape " +
                         shape_string(e.value.shape()));
  }
  if (!e.grad) e.grad = TensorT(e.value.shape());
  T* dst = e.grad->data();
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
}

template <typename T>
void BasicParamStore<T>::zero_grads() {
  for (auto& e : entries_) e.grad = TensorT(e.value.shape());
}

template <typename T>
void BasicParamStore<T>::clear_grads() {
  for (auto& e : entries_) e.grad.reset();
}

template <typename T>
bool BasicParamStore<T>::has_all_grads() const {
  for (const auto& e : entries_) {
    if (!e.grad) return false;
  }
  return true;
}

template <typename T>
void BasicParamStore<T>::scale_grads(T s) {
  for (auto& e : entries_) {
    if (!e.grad) continue;
    for (T& g : e.grad->values()) g *= s;
  }
}

template <typename T>
double BasicParamStore<T>::grad_norm() const {
  double sq = 0;
  for (const auto& e : entries_) {
    if (!e.grad) continue;
    for (T g : e.grad->values()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

template <typename T>
void adam_step(BasicParamStore<T>& store, const AdamConfig& cfg) {
  for (const auto& e : store.entries_) {
    if (!e.grad) {
      throw UsageError("adam_step: parameter '" + e.name + "' has no gradient");
    }
  }
  ++store.steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(store.steps_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(store.steps_));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T step = T(cfg.lr / bc1);
  const T inv_bc2 = T(1.0 / bc2);
  const T eps = T(cfg.eps);
  for (auto& e : store.entries_) {
    T* w = e.value.data();
    T* m = e.first_moment.data();
    T* v = e.second_moment.data();
    const T* g = e.grad->data();
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
    }
  }
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template void adam_step<float>(BasicParamStore<float>&, const AdamConfig&);
template void adam_step<double>(BasicParamStore<double>&, const AdamConfig&);

}  // namespace surt::nn
