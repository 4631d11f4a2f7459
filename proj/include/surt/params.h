#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "surt/tensor.h"

namespace surt::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters in insertion order, with gradient slots and Adam moments.
template <typename T>
class BasicParamStore {
 public:
  using TensorT = BasicTensor<T>;

  struct Entry {
    std::string name;
    TensorT value;
    std::optional<TensorT> grad;
    TensorT first_moment;
    TensorT second_moment;
  };

  std::size_t add(std::string name, TensorT init);

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Entry& entry(std::size_t i) { return entries_.at(i); }
  const TensorT& value(std::size_t i) const { return entries_.at(i).value; }
  TensorT& value(std::size_t i) { return entries_.at(i).value; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }

  // Adds g into the gradient slot of parameter i, allocating it on first use.
  void accumulate_grad(std::size_t i, std::span<const T> g);
  // Allocates zero gradients for every parameter.
  void zero_grads();
  void clear_grads();
  bool has_all_grads() const;
  // Multiplies every populated gradient by s.
  void scale_grads(T s);
  double grad_norm() const;

  std::int64_t step_count() const { return steps_; }

  // Values only; optimizer state starts fresh.
  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  template <typename U>
  friend void adam_step(BasicParamStore<U>& store, const AdamConfig& cfg);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::int64_t steps_ = 0;
};

// One bias-corrected Adam update from the populated gradients. Throws
// UsageError if any parameter lacks a gradient.
template <typename T>
void adam_step(BasicParamStore<T>& store, const AdamConfig& cfg);

using ParamStore = BasicParamStore<float>;

}  // namespace surt::nn
