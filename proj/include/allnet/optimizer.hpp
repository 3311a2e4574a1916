#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "error.hpp"
#include "graph.hpp"

namespace allnet {

enum class OptimizerKind { sgd, momentum, adam };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
  case OptimizerKind::sgd: return "sgd";
  case OptimizerKind::momentum: return "sgd-momentum";
  case OptimizerKind::adam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd-momentum" || s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw UsageError("unknown optimizer '" + s + "' (expected sgd, sgd-momentum, adam)");
}

/// Gradient of one parameter tensor of `node` (slot 0 weights, 1 bias).
inline std::span<const float> grad_slot(const Gradients<float>& g, int node, int slot) {
  auto it = g.params.find(node);
  if (it == g.params.end()) return {};
  if (slot == 0) return it->second.weights.data();
  return it->second.bias;
}

/// Global L2 norm over every parameter gradient.
inline double gradient_norm(const Gradients<float>& g) {
  double sq = 0;
  for (const auto& [id, ng] : g.params) {
    for (float v : ng.weights.data()) sq += static_cast<double>(v) * v;
    for (float v : ng.bias) sq += static_cast<double>(v) * v;
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their global norm is at most `cap`. Returns
/// the norm before clipping.
inline double clip_gradients(Gradients<float>& g, double cap) {
  const double norm = gradient_norm(g);
  if (norm > cap && norm > 0) {
    const double scale = cap / norm;
    for (auto& [id, ng] : g.params) {
      for (float& v : ng.weights.data()) v = static_cast<float>(v * scale);
      for (float& v : ng.bias) v = static_cast<float>(v * scale);
    }
  }
  return norm;
}

/// SGD, SGD with momentum 0.9, or Adam (0.9, 0.999, 1e-8). Keeps one slot
/// vector per parameter tensor per moment, in Graph::parameters() order.
class Optimizer {
public:
  static constexpr double momentum_decay = 0.9;
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double adam_epsilon = 1e-8;

  Optimizer(OptimizerKind kind, double learning_rate, const Graph& graph) : kind_(kind), lr_(learning_rate) {
    // lr = 0 is accepted here (a no-op step); TrainConfig requires lr > 0.
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
      throw UsageError("learning rate must be finite and non-negative");
    }
    for (const auto& pv : graph.parameters()) {
      sizes_.push_back(pv.values.size());
      shapes_.push_back(pv.shape);
      nodes_.push_back(pv.node);
    }
    const std::size_t moments = slots_per_param();
    for (std::size_t m = 0; m < moments; ++m)
      for (std::size_t s : sizes_) slots_.emplace_back(s, 0.0f);
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::uint32_t steps() const { return step_; }

  std::size_t slots_per_param() const {
    switch (kind_) {
    case OptimizerKind::sgd: return 0;
    case OptimizerKind::momentum: return 1;
    case OptimizerKind::adam: return 2;
    }
    return 0;
  }

  /// Slot vectors: for Adam all first moments, then all second moments.
  std::vector<std::vector<float>>& slots() { return slots_; }
  const std::vector<std::vector<float>>& slots() const { return slots_; }
  const std::vector<int>& slot_nodes() const { return nodes_; }
  const std::vector<Shape>& slot_shapes() const { return shapes_; }
  void set_steps(std::uint32_t s) { step_ = s; }

  /// Applies one update to every trainable parameter. Frozen parameters and
  /// parameters without a gradient entry are left untouched. A non-finite
  /// gradient aborts before anything changes.
  void step(Graph& graph, const Gradients<float>& grads) {
    for (const auto& [id, ng] : grads.params) {
      auto finite = [](float v) { return std::isfinite(v); };
      if (!std::all_of(ng.weights.data().begin(), ng.weights.data().end(), finite) ||
          !std::all_of(ng.bias.begin(), ng.bias.end(), finite)) {
        throw NumericError("non-finite gradient at node " + std::to_string(id) + " (" + graph.node(id).name + ")");
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    auto params = graph.parameters();
    if (params.size() != sizes_.size()) throw DataError("optimizer was built for a different graph");
    const std::size_t count = params.size();
    for (std::size_t i = 0; i < count; ++i) {
      ParamView<float>& pv = params[i];
      if (!pv.trainable) continue;
      const std::span<const float> g = grad_slot(grads, pv.node, pv.slot);
      if (g.empty()) continue;
      if (g.size() != pv.values.size()) {
        throw ShapeError("gradient for node " + std::to_string(pv.node) + " has the wrong size");
      }
      switch (kind_) {
      case OptimizerKind::sgd:
        for (std::size_t j = 0; j < g.size(); ++j) pv.values[j] = static_cast<float>(pv.values[j] - lr_ * g[j]);
        break;
      case OptimizerKind::momentum: {
        auto& v = slots_[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
          v[j] = static_cast<float>(momentum_decay * v[j] + g[j]);
          pv.values[j] = static_cast<float>(pv.values[j] - lr_ * v[j]);
        }
        break;
      }
      case OptimizerKind::adam: {
        auto& m = slots_[i];
        auto& v = slots_[count + i];
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double gj = g[j];
          const double mj = beta1 * m[j] + (1 - beta1) * gj;
          const double vj = beta2 * v[j] + (1 - beta2) * gj * gj;
          m[j] = static_cast<float>(mj);
          v[j] = static_cast<float>(vj);
          const double update = lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + adam_epsilon);
          pv.values[j] = static_cast<float>(pv.values[j] - update);
        }
        break;
      }
      }
    }
  }

private:
  OptimizerKind kind_;
  double lr_;
  std::uint32_t step_ = 0;
  std::vector<std::size_t> sizes_;
  std::vector<Shape> shapes_;
  std::vector<int> nodes_;
  std::vector<std::vector<float>> slots_;
};

} // namespace allnet
