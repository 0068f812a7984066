#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ucnerf/graph.hpp"
#include "ucnerf/mathutil.hpp"

namespace ucnerf {

// Flat store of named trainable tensors with their gradient and Adam state.
// Graphs get per-graph leaf copies through ParamBinder; gradients flow back
// into `g` and a single adam_step applies the update.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    int64_t rows = 0, cols = 0;
    std::vector<T> v, g, m, vv;
  };
  std::vector<Entry> entries;
  int64_t step_count = 0;

  int add(const std::string& name, int64_t rows, int64_t cols,
          std::vector<T> init) {
    if (static_cast<int64_t>(init.size()) != rows * cols)
      throw std::invalid_argument("params: init size mismatch for " + name);
    if (find(name) >= 0)
      throw std::invalid_argument("params: duplicate name " + name);
    Entry e;
    e.name = name;
    e.rows = rows;
    e.cols = cols;
    e.v = std::move(init);
    e.g.assign(e.v.size(), T(0));
    e.m.assign(e.v.size(), T(0));
    e.vv.assign(e.v.size(), T(0));
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }

  Entry& operator[](int i) { return entries[i]; }
  const Entry& operator[](int i) const { return entries[i]; }

  size_t total_params() const {
    size_t n = 0;
    for (const auto& e : entries) n += e.v.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries)
      std::fill(e.g.begin(), e.g.end(), T(0));
  }

  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto& e : entries)
      for (size_t i = 0; i < e.v.size(); ++i) {
        const double g = static_cast<double>(e.g[i]);
        const double m = beta1 * e.m[i] + (1.0 - beta1) * g;
        const double v = beta2 * e.vv[i] + (1.0 - beta2) * g * g;
        e.m[i] = static_cast<T>(m);
        e.vv[i] = static_cast<T>(v);
        e.v[i] -= static_cast<T>(lr * (m / bc1) /
                                 (std::sqrt(v / bc2) + eps));
      }
  }
};

// Per-graph leaves for store entries; dedupes so each entry appears once.
template <typename T>
struct ParamBinder {
  Graph<T>* graph = nullptr;
  ParamStore<T>* store = nullptr;
  bool trainable = true;
  std::vector<std::pair<int, typename Graph<T>::Id>> bound;

  ParamBinder(Graph<T>& g, ParamStore<T>& s, bool train = true)
      : graph(&g), store(&s), trainable(train) {}

  typename Graph<T>::Id use(int pidx) {
    for (const auto& [i, id] : bound)
      if (i == pidx) return id;
    const auto& e = (*store)[pidx];
    const auto id = graph->value(e.rows, e.cols, e.v, trainable);
    bound.emplace_back(pidx, id);
    return id;
  }

  // Accumulate leaf gradients back into the store after backward.
  void harvest() {
    if (!trainable) return;
    for (const auto& [pidx, id] : bound) {
      const auto& g = graph->grad(id);
      if (g.empty()) continue;
      auto& dst = (*store)[pidx].g;
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  }
};

// He-style fan-in init for layers feeding a ReLU; `scale` shrinks heads.
template <typename T>
std::vector<T> he_init(Rng& rng, int64_t fan_in, int64_t n, double scale = 1.0) {
  std::vector<T> v(n);
  const double std = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = static_cast<T>(std * rng.normal());
  return v;
}

template <typename T>
std::vector<T> zeros(int64_t n) {
  return std::vector<T>(n, T(0));
}

}  // namespace ucnerf
