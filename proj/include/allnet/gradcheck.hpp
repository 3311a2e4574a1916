#pragma once

// Finite-difference verification of the reverse-mode gradients.
//
// The analytic side runs the float engine. The numeric side evaluates the
// same graph and weights cast to double, so the central differences are not
// swamped by float32 rounding of the loss.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"
#include "rng.hpp"

namespace allnet {

struct GradCheckOptions {
  std::size_t samples = 20;
  double tolerance = 1e-3;
  double step = 1e-3;
  /// Denominator floor for the relative error, so gradients that are zero
  /// on both sides do not divide by zero.
  double absolute_floor = 1e-6;
  /// A sample is treated as straddling a relu or pooling kink, and skipped,
  /// when the estimates at step and step/2 differ by more than this
  /// (relative). On smooth stretches the two estimates agree to about 1e-7
  /// in double precision.
  double kink_tolerance = 1e-5;
  std::uint64_t seed = 0;
  /// Also sample elements of the input tensor (needed for parameter-free
  /// graphs).
  bool include_input = false;
  /// Replaces the engine's forward+backward when set; test fixtures use it
  /// to inject a broken gradient.
  std::function<Gradients<float>(const Graph&, const Tensor&)> analytic;
};

struct GradCheckSample {
  std::string what; ///< "node 12 (name) slot 0 [34]" or "input [5]"
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0;
  std::size_t checked = 0;
  /// Samples dropped because the finite difference straddled a kink (the
  /// estimates at h and h/2 disagreed beyond the kink tolerance).
  std::size_t skipped = 0;
  std::vector<GradCheckSample> samples;
  std::vector<std::string> failures;

  std::string str() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " checked=" << checked << " skipped=" << skipped
       << " max_rel_error=" << max_relative_error;
    for (const auto& f : failures) os << "\n  " << f;
    return os.str();
  }
};

namespace detail {

template <typename T> double sum_output(const BasicGraph<T>& g, const BasicTensor<T>& x) {
  const BasicTensor<T> y = predict(g, x);
  double s = 0;
  for (T v : y.data()) s += static_cast<double>(v);
  return s;
}

} // namespace detail

/// Loss is the sum of the graph's outputs. Samples are drawn uniformly over
/// all trainable parameter scalars (plus input elements when requested).
inline GradCheckReport grad_check(const Graph& graph, const Tensor& input, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  if (opt.samples < 1) throw UsageError("grad_check needs at least one sample");

  Gradients<float> grads;
  if (opt.analytic) {
    grads = opt.analytic(graph, input);
  } else {
    const Tape<float> tape = forward(graph, input);
    const Tensor ones(tape.at(graph.output()).shape(), 1.0f);
    grads = backward(graph, tape, ones, opt.include_input);
  }

  struct Slot {
    int node;   // -1 for the input
    int slot;
    std::size_t size;
  };
  std::vector<Slot> slots;
  std::size_t total = 0;
  for (const auto& pv : graph.parameters()) {
    if (!pv.trainable) continue;
    slots.push_back({pv.node, pv.slot, pv.values.size()});
    total += pv.values.size();
  }
  if (opt.include_input) {
    slots.push_back({-1, 0, input.size()});
    total += input.size();
  }
  if (total == 0) throw UsageError("grad_check: nothing to check (no trainable parameters)");

  BasicGraph<double> probe = graph.cast<double>();
  BasicTensor<double> x = input.cast<double>();
  Rng rng(opt.seed);

  auto analytic_value = [&](const Slot& s, std::size_t i) -> double {
    if (s.node < 0) return grads.input ? (*grads.input)[i] : std::nan("");
    auto it = grads.params.find(s.node);
    if (it == grads.params.end()) return std::nan("");
    if (s.slot == 0) return i < it->second.weights.size() ? it->second.weights[i] : std::nan("");
    return i < it->second.bias.size() ? it->second.bias[i] : std::nan("");
  };

  auto scalar = [&](const Slot& s, std::size_t i) -> double& {
    if (s.node < 0) return x[i];
    for (auto& pv : probe.parameters()) {
      if (pv.node == s.node && pv.slot == s.slot) return pv.values[i];
    }
    throw DataError("grad_check: lost parameter slot");
  };

  auto central = [&](double& v, double h) {
    const double saved = v;
    v = saved + h;
    const double up = detail::sum_output(probe, x);
    v = saved - h;
    const double down = detail::sum_output(probe, x);
    v = saved;
    return (up - down) / (2 * h);
  };

  const std::size_t max_draws = opt.samples * 20;
  for (std::size_t draw = 0; draw < max_draws && report.checked < opt.samples; ++draw) {
    std::size_t flat = rng.below(total);
    std::size_t k = 0;
    while (flat >= slots[k].size) flat -= slots[k++].size;
    const Slot& s = slots[k];

    std::ostringstream what;
    if (s.node < 0) {
      what << "input [" << flat << "]";
    } else {
      what << "node " << s.node << " (" << graph.node(s.node).name << ") slot " << s.slot << " [" << flat << "]";
    }

    double& v = scalar(s, flat);
    const double numeric = central(v, opt.step);
    const double refined = central(v, opt.step / 2);
    const double a = analytic_value(s, flat);

    if (!std::isfinite(a)) {
      report.failures.push_back(what.str() + ": non-finite or missing analytic gradient");
      ++report.checked;
      report.max_relative_error = std::numeric_limits<double>::infinity();
      continue;
    }
    const double scale = std::max({std::abs(numeric), std::abs(refined), opt.absolute_floor});
    if (std::abs(numeric - refined) > opt.kink_tolerance * scale) {
      ++report.skipped;
      continue;
    }
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.absolute_floor});
    report.samples.push_back({what.str(), a, numeric, rel});
    report.max_relative_error = std::max(report.max_relative_error, rel);
    ++report.checked;
    if (!(rel <= opt.tolerance)) {
      std::ostringstream f;
      f << what.str() << ": analytic " << a << " vs numeric " << numeric << " (rel " << rel << ")";
      report.failures.push_back(f.str());
    }
  }
  if (report.checked < opt.samples) {
    report.failures.push_back("only " + std::to_string(report.checked) + " of " + std::to_string(opt.samples) +
                              " samples were smooth enough to check");
  }
  report.passed = report.failures.empty();
  return report;
}

} // namespace allnet
