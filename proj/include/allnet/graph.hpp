#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "error.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace allnet {

struct InputOp {};
template <typename T> struct ConvOp {
  ConvParams<T> params;
};
struct ReluOp {};
struct SigmoidOp {};
struct MaxPoolOp {
  std::size_t window = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};
struct AdaptiveMaxPoolOp {
  std::size_t out_h = 1;
  std::size_t out_w = 1;
};
struct ConcatOp {};
struct AddOp {};
template <typename T> struct DenseOp {
  DenseParams<T> params;
};

template <typename T>
using Op = std::variant<InputOp, ConvOp<T>, ReluOp, SigmoidOp, MaxPoolOp, AdaptiveMaxPoolOp, ConcatOp, AddOp, DenseOp<T>>;

template <typename T> struct Node {
  int id = 0;
  std::string name;
  std::string scope; ///< backbone or "head"; used by freezing
  Op<T> op;
  std::vector<int> inputs;
  bool trainable = true;
  Shape out; ///< per-sample output extent; n is always 1

  bool has_params() const {
    return std::holds_alternative<ConvOp<T>>(op) || std::holds_alternative<DenseOp<T>>(op);
  }

  std::size_t parameter_count() const {
    if (auto* c = std::get_if<ConvOp<T>>(&op)) return c->params.kernel.size() + c->params.bias.size();
    if (auto* d = std::get_if<DenseOp<T>>(&op)) return d->params.weights.size() + d->params.bias.size();
    return 0;
  }
};

/// One parameter tensor of a node: slot 0 is the kernel/weight tensor,
/// slot 1 the bias, viewed with shape (len, 1, 1, 1).
template <typename T> struct ParamView {
  int node = 0;
  int slot = 0;
  Shape shape;
  std::span<T> values;
  bool trainable = true;
};

template <typename T> class GraphBuilder;

/// Directed acyclic graph of layer nodes in topological insertion order.
/// Node 0 is always the input. Parameters live inside the nodes; a built
/// graph has a fixed architecture but mutable weights (single writer).
template <typename T> class BasicGraph {
public:
  const std::vector<Node<T>>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  const Node<T>& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  Node<T>& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(std::string_view name) const {
    for (const auto& n : nodes_)
      if (n.name == name) return n.id;
    return std::nullopt;
  }

  /// Per-sample input extent (n = 1).
  const Shape& input_spec() const { return input_spec_; }

  const std::map<std::string, int>& taps() const { return taps_; }

  int tap(const std::string& label) const {
    auto it = taps_.find(label);
    if (it == taps_.end()) throw DataError("graph has no tap named '" + label + "'");
    return it->second;
  }

  /// The node tagged "output", or the last node.
  int output() const {
    auto it = taps_.find("output");
    return it == taps_.end() ? static_cast<int>(nodes_.size()) - 1 : it->second;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) total += n.parameter_count();
    return total;
  }

  std::size_t trainable_parameter_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_)
      if (n.trainable) total += n.parameter_count();
    return total;
  }

  /// Every parameter tensor in node-id order.
  std::vector<ParamView<T>> parameters() { return collect<T>(*this); }
  std::vector<ParamView<const T>> parameters() const { return collect<const T>(*this); }

  void freeze_scope(std::string_view scope) {
    bool any = false;
    for (auto& n : nodes_) {
      if (n.scope == scope) {
        n.trainable = false;
        any = true;
      }
    }
    if (!any) throw UsageError("no nodes in scope '" + std::string(scope) + "'");
  }

  /// Freezes node ids first..last inclusive.
  void freeze_range(int first, int last) {
    if (first < 0 || last < first || last >= static_cast<int>(nodes_.size())) {
      throw UsageError("freeze range " + std::to_string(first) + "-" + std::to_string(last) + " outside node ids 0-" +
                       std::to_string(nodes_.size() - 1));
    }
    for (int id = first; id <= last; ++id) node(id).trainable = false;
  }

  void unfreeze_all() {
    for (auto& n : nodes_) n.trainable = true;
  }

  /// The same architecture and weights in another scalar type.
  template <typename U> BasicGraph<U> cast() const {
    BasicGraph<U> g;
    g.input_spec_ = input_spec_;
    g.taps_ = taps_;
    for (const auto& n : nodes_) {
      Node<U> m;
      m.id = n.id;
      m.name = n.name;
      m.scope = n.scope;
      m.inputs = n.inputs;
      m.trainable = n.trainable;
      m.out = n.out;
      m.op = std::visit(
          [](const auto& op) -> Op<U> {
            using O = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<O, ConvOp<T>>) {
              ConvParams<U> p{op.params.kernel.template cast<U>(),
                              std::vector<U>(op.params.bias.begin(), op.params.bias.end()), op.params.stride,
                              op.params.padding};
              return ConvOp<U>{std::move(p)};
            } else if constexpr (std::is_same_v<O, DenseOp<T>>) {
              DenseParams<U> p{op.params.weights.template cast<U>(),
                               std::vector<U>(op.params.bias.begin(), op.params.bias.end())};
              return DenseOp<U>{std::move(p)};
            } else {
              return op;
            }
          },
          n.op);
      g.nodes_.push_back(std::move(m));
    }
    return g;
  }

  /// Line-oriented architecture description: one line per node with its
  /// op, inputs, output extent, and parameter count, then the taps. Weights
  /// and freeze flags are not part of it.
  std::string summary() const {
    std::ostringstream os;
    os << "graph input=" << dims(input_spec_) << " nodes=" << nodes_.size() << " params=" << parameter_count()
       << '\n';
    for (const auto& n : nodes_) {
      os << n.id << ' ' << n.name << ' ' << describe(n.op) << " [";
      for (std::size_t i = 0; i < n.inputs.size(); ++i) os << (i ? "," : "") << n.inputs[i];
      os << "] " << dims(n.out) << " params=" << n.parameter_count() << '\n';
    }
    for (const auto& [label, id] : taps_) os << "tap " << label << '=' << id << '\n';
    return os.str();
  }

  /// FNV-1a 64 of summary().
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : summary()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::string describe(const Op<T>& op) {
    return std::visit(
        [](const auto& o) -> std::string {
          using O = std::decay_t<decltype(o)>;
          std::ostringstream os;
          if constexpr (std::is_same_v<O, InputOp>) {
            os << "input";
          } else if constexpr (std::is_same_v<O, ConvOp<T>>) {
            os << "conv" << o.params.kernel_h() << 'x' << o.params.kernel_w() << "/s" << o.params.stride << "/p"
               << o.params.padding;
          } else if constexpr (std::is_same_v<O, ReluOp>) {
            os << "relu";
          } else if constexpr (std::is_same_v<O, SigmoidOp>) {
            os << "sigmoid";
          } else if constexpr (std::is_same_v<O, MaxPoolOp>) {
            os << "maxpool" << o.window << 'x' << o.window << "/s" << o.stride << "/p" << o.padding;
          } else if constexpr (std::is_same_v<O, AdaptiveMaxPoolOp>) {
            os << "adaptive_maxpool" << o.out_h << 'x' << o.out_w;
          } else if constexpr (std::is_same_v<O, ConcatOp>) {
            os << "concat";
          } else if constexpr (std::is_same_v<O, AddOp>) {
            os << "add";
          } else {
            os << "dense" << o.params.out_units();
          }
          return os.str();
        },
        op);
  }

private:
  friend class GraphBuilder<T>;
  template <typename> friend class BasicGraph;

  static std::string dims(const Shape& s) {
    return std::to_string(s.c) + 'x' + std::to_string(s.h) + 'x' + std::to_string(s.w);
  }

  template <typename V, typename G> static std::vector<ParamView<V>> collect(G& graph) {
    std::vector<ParamView<V>> out;
    for (auto& n : graph.nodes_) {
      auto add = [&](auto& weights, auto& bias) {
        out.push_back(ParamView<V>{n.id, 0, weights.shape(), weights.data(), n.trainable});
        out.push_back(ParamView<V>{n.id, 1, Shape{bias.size(), 1, 1, 1}, std::span<V>(bias), n.trainable});
      };
      if (auto* c = std::get_if<ConvOp<T>>(&n.op)) add(c->params.kernel, c->params.bias);
      if (auto* d = std::get_if<DenseOp<T>>(&n.op)) add(d->params.weights, d->params.bias);
    }
    return out;
  }

  Shape input_spec_;
  std::vector<Node<T>> nodes_;
  std::map<std::string, int> taps_;
};

using Graph = BasicGraph<float>;

/// Appends nodes in topological order, propagating shapes as it goes so
/// that any misaligned concat or degenerate layer fails at build time.
/// Weights are drawn uniformly from +-sqrt(6 / (fan_in + fan_out)); biases
/// start at zero.
template <typename T> class GraphBuilder {
public:
  GraphBuilder(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed = 0) : rng_(seed) {
    graph_.input_spec_ = Shape{1, channels, height, width};
    if (!graph_.input_spec_.valid()) throw ShapeError("graph input spec must be positive");
    Node<T> n;
    n.id = 0;
    n.name = "input";
    n.op = InputOp{};
    n.out = graph_.input_spec_;
    graph_.nodes_.push_back(std::move(n));
  }

  int input() const { return 0; }

  /// Scope stamped on every node appended from now on.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  const Shape& shape(int id) const { return graph_.node(id).out; }

  int conv(int in, std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding,
           std::string name) {
    check_input(in, name);
    const std::size_t in_channels = shape(in).c;
    ConvParams<T> p{BasicTensor<T>(Shape{out_channels, in_channels, kernel, kernel}),
                    std::vector<T>(out_channels, T(0)), stride, padding};
    const double fan_in = static_cast<double>(in_channels * kernel * kernel);
    const double fan_out = static_cast<double>(out_channels * kernel * kernel);
    init(p.kernel.data(), fan_in, fan_out);
    const Shape out = named(name, [&] { return conv2d_output_shape(shape(in), p); });
    return append(std::move(name), ConvOp<T>{std::move(p)}, {in}, out);
  }

  int dense(int in, std::size_t units, std::string name) {
    check_input(in, name);
    const std::size_t in_units = shape(in).per_sample();
    DenseParams<T> p{BasicTensor<T>(Shape{units, in_units, 1, 1}), std::vector<T>(units, T(0))};
    init(p.weights.data(), static_cast<double>(in_units), static_cast<double>(units));
    return append(std::move(name), DenseOp<T>{std::move(p)}, {in}, Shape{1, units, 1, 1});
  }

  int relu(int in, std::string name) {
    check_input(in, name);
    return append(std::move(name), ReluOp{}, {in}, shape(in));
  }

  int sigmoid(int in, std::string name) {
    check_input(in, name);
    return append(std::move(name), SigmoidOp{}, {in}, shape(in));
  }

  int maxpool(int in, std::size_t window, std::size_t stride, std::size_t padding, std::string name) {
    check_input(in, name);
    const Shape out = named(name, [&] { return maxpool2d_output_shape(shape(in), window, stride, padding); });
    return append(std::move(name), MaxPoolOp{window, stride, padding}, {in}, out);
  }

  int adaptive_maxpool(int in, std::size_t out_h, std::size_t out_w, std::string name) {
    check_input(in, name);
    if (out_h < 1 || out_w < 1) throw DegenerateOutputError(name + ": adaptive pool grid must be >= 1x1");
    const Shape s = shape(in);
    return append(std::move(name), AdaptiveMaxPoolOp{out_h, out_w}, {in}, Shape{1, s.c, out_h, out_w});
  }

  int concat(std::vector<int> ins, std::string name) {
    if (ins.empty()) throw ShapeError(name + ": concat needs at least one input");
    const Shape first = (check_input(ins[0], name), shape(ins[0]));
    std::size_t channels = 0;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      check_input(ins[i], name);
      const Shape s = shape(ins[i]);
      if (s.h != first.h || s.w != first.w) {
        throw ShapeError(name + ": concat input " + std::to_string(i) + " (node " + std::to_string(ins[i]) +
                         ") is " + s.str() + ", off the " + std::to_string(first.h) + "x" + std::to_string(first.w) +
                         " grid of input 0");
      }
      channels += s.c;
    }
    return append(std::move(name), ConcatOp{}, std::move(ins), Shape{1, channels, first.h, first.w});
  }

  int add(int a, int b, std::string name) {
    check_input(a, name);
    check_input(b, name);
    if (shape(a) != shape(b)) {
      throw ShapeError(name + ": add of " + shape(a).str() + " and " + shape(b).str());
    }
    return append(std::move(name), AddOp{}, {a, b}, shape(a));
  }

  void tap(const std::string& label, int id) {
    check_input(id, "tap " + label);
    if (!graph_.taps_.emplace(label, id).second) throw ShapeError("duplicate tap '" + label + "'");
  }

  Rng& rng() { return rng_; }

  BasicGraph<T> finish() && { return std::move(graph_); }

private:
  void check_input(int id, const std::string& name) const {
    if (id < 0 || id >= static_cast<int>(graph_.nodes_.size())) {
      throw ShapeError(name + ": input node " + std::to_string(id) + " does not exist");
    }
  }

  template <typename F> static Shape named(const std::string& name, F&& f) {
    try {
      return f();
    } catch (const DegenerateOutputError& e) {
      throw DegenerateOutputError(name + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError(name + ": " + e.what());
    }
  }

  void init(std::span<T> values, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : values) v = static_cast<T>(rng_.uniform(-limit, limit));
  }

  int append(std::string name, Op<T> op, std::vector<int> inputs, Shape out) {
    if (graph_.find(name)) throw ShapeError("duplicate node name '" + name + "'");
    Node<T> n;
    n.id = static_cast<int>(graph_.nodes_.size());
    n.name = std::move(name);
    n.scope = scope_;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.out = out;
    graph_.nodes_.push_back(std::move(n));
    return graph_.nodes_.back().id;
  }

  BasicGraph<T> graph_;
  std::string scope_;
  Rng rng_;
};

} // namespace allnet
