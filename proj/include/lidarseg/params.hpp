#ifndef LIDARSEG_PARAMS_HPP
#define LIDARSEG_PARAMS_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidarseg/autodiff.hpp"
#include "lidarseg/error.hpp"

namespace lidarseg {

/// Deterministic RNG. Uniform doubles are derived from raw mt19937_64 bits so
/// results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) {
    if (n == 0) return 0;
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i >= n ? n - 1 : i;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

/// Ordered, named collection of model tensors. Trainable entries are tracked
/// for gradients; buffers (running statistics) are plain values. Registration
/// order defines checkpoint layout and optimizer traversal order.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::TensorPtr<S> tensor;
    bool trainable;
  };

  ad::TensorPtr<S> add(const std::string& name, std::vector<std::size_t> shape,
                       bool trainable) {
    if (index_.count(name))
      throw Error(ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
    auto t = ad::make_tensor<S>(std::move(shape), trainable);
    index_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
  }

  ad::TensorPtr<S> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].tensor;
  }

  ad::TensorPtr<S> at(const std::string& name) const {
    auto t = find(name);
    if (!t) throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + name + "'");
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.trainable) e.tensor->zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Copies values across precisions; both stores must hold identical entries.
template <class To, class From>
void copy_param_values(const ParamStore<From>& src, ParamStore<To>& dst) {
  const auto& a = src.entries();
  const auto& b = dst.entries();
  if (a.size() != b.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter stores differ in layout");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor->size() != b[i].tensor->size())
      throw Error(ErrorCode::ShapeMismatch, "parameter stores differ at " + a[i].name);
    for (std::size_t j = 0; j < a[i].tensor->size(); ++j)
      b[i].tensor->value[j] = static_cast<To>(a[i].tensor->value[j]);
  }
}

/// He-style uniform fan-in initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <class S>
void fill_uniform_fan_in(Rng& rng, const ad::TensorPtr<S>& t, std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t->value) v = static_cast<S>(rng.uniform(-limit, limit));
}

template <class S>
void fill_constant(const ad::TensorPtr<S>& t, S value) {
  std::fill(t->value.begin(), t->value.end(), value);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators aligned with the store's trainable
/// entries, in registration order.
template <class S>
struct AdamState {
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;
  int64_t step = 0;
  AdamConfig cfg;

  static AdamState init(const ParamStore<S>& store, AdamConfig cfg = {}) {
    AdamState st;
    st.cfg = cfg;
    for (const auto& e : store.entries()) {
      if (!e.trainable) continue;
      st.m.emplace_back(e.tensor->size(), S(0));
      st.v.emplace_back(e.tensor->size(), S(0));
    }
    return st;
  }
};

/// One Adam update with bias correction, reading each parameter's accumulated
/// gradient. Strictly sequential over parameters in store order.
template <class S>
void adam_step(ParamStore<S>& store, AdamState<S>& state, S learning_rate) {
  ++state.step;
  const S beta1 = static_cast<S>(state.cfg.beta1);
  const S beta2 = static_cast<S>(state.cfg.beta2);
  const S eps = static_cast<S>(state.cfg.epsilon);
  const S bias1 = S(1) - std::pow(beta1, static_cast<S>(state.step));
  const S bias2 = S(1) - std::pow(beta2, static_cast<S>(state.step));
  std::size_t slot = 0;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto& m = state.m[slot];
    auto& v = state.v[slot];
    ++slot;
    auto& value = e.tensor->value;
    const auto& grad = e.tensor->grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const S g = grad[i];
      m[i] = beta1 * m[i] + (S(1) - beta1) * g;
      v[i] = beta2 * v[i] + (S(1) - beta2) * g * g;
      const S m_hat = m[i] / bias1;
      const S v_hat = v[i] / bias2;
      value[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace lidarseg

#endif  // LIDARSEG_PARAMS_HPP
