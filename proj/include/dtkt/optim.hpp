// Named parameter store with Adam moments, plus global-norm gradient clipping.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtkt/tensor.hpp"

namespace dtkt::num {

struct AdamSettings {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Gradients keyed by parameter name, accumulated in float64.
using GradMap = std::map<std::string, TensorD>;

class ParamStore {
 public:
  void add(const std::string& name, TensorF value) {
    if (entries_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    Entry e;
    e.value = std::move(value);
    e.m = TensorD(e.value.shape());
    e.v = TensorD(e.value.shape());
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  TensorF& value(const std::string& name) { return entry(name).value; }
  const TensorF& value(const std::string& name) const { return entry(name).value; }
  const TensorD& first_moment(const std::string& name) const { return entry(name).m; }
  const TensorD& second_moment(const std::string& name) const { return entry(name).v; }

  std::int64_t step_count() const { return step_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  /// Zero-filled gradient map matching the stored parameter shapes.
  GradMap make_grad_map() const {
    GradMap g;
    for (const auto& [k, e] : entries_) g.emplace(k, TensorD(e.value.shape()));
    return g;
  }

  /// One bias-corrected Adam update. Rejects non-finite gradients before
  /// touching any parameter, naming the offender.
  void adam_step(const GradMap& grads, const AdamSettings& s = {}) {
    for (const auto& [name, g] : grads) {
      const Entry& e = entry(name);
      if (g.shape() != e.value.shape())
        throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape()) +
                                    " does not match parameter " + name + " " +
                                    shape_str(e.value.shape()));
      if (!g.all_finite())
        throw std::runtime_error("adam: non-finite gradient for parameter " + name);
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step_));
    for (auto& [name, e] : entries_) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const TensorD& g = it->second;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        e.m[i] = s.beta1 * e.m[i] + (1.0 - s.beta1) * g[i];
        e.v[i] = s.beta2 * e.v[i] + (1.0 - s.beta2) * g[i] * g[i];
        const double mhat = e.m[i] / bc1;
        const double vhat = e.v[i] / bc2;
        e.value[i] = static_cast<float>(static_cast<double>(e.value[i]) -
                                        s.lr * mhat / (std::sqrt(vhat) + s.eps));
      }
    }
  }

 private:
  struct Entry {
    TensorF value;
    TensorD m, v;
  };

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("param store: unknown name " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("param store: unknown name " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  std::int64_t step_ = 0;
};

/// Global L2 norm across every gradient tensor.
inline double global_norm(const GradMap& grads) {
  double acc = 0.0;
  for (const auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * g[i];
  return std::sqrt(acc);
}

/// Scales all gradients by max_norm/norm when the global norm exceeds
/// max_norm; otherwise leaves them untouched.
inline void clip_global_norm(GradMap& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= scale;
}

}  // namespace dtkt::num
