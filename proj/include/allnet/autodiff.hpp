#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "graph.hpp"
#include "ops.hpp"

namespace allnet {

/// Everything backward needs from a forward pass: one activation per node
/// and the argmax maps of the pooling nodes.
template <typename T> struct Tape {
  std::vector<BasicTensor<T>> activations;
  std::vector<std::vector<std::size_t>> argmax;

  const BasicTensor<T>& at(int id) const { return activations.at(static_cast<std::size_t>(id)); }
};

template <typename T> struct NodeGrads {
  BasicTensor<T> weights;
  std::vector<T> bias;
};

/// Parameter gradients keyed by node id (trainable nodes only), plus the
/// input gradient when it was requested.
template <typename T> struct Gradients {
  std::map<int, NodeGrads<T>> params;
  std::optional<BasicTensor<T>> input;
};

namespace detail {

template <typename T> std::string node_label(const Node<T>& n) {
  return "node " + std::to_string(n.id) + " (" + n.name + ")";
}

template <typename F> decltype(auto) at_node(const std::string& label, F&& f) {
  try {
    return f();
  } catch (const DegenerateOutputError& e) {
    throw DegenerateOutputError(label + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(label + ": " + e.what());
  }
}

template <typename T> void accumulate(std::optional<BasicTensor<T>>& slot, BasicTensor<T>&& g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  if (slot->shape() != g.shape()) throw ShapeError("gradient shape mismatch " + slot->shape().str() + " vs " + g.shape().str());
  for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

} // namespace detail

/// Runs every node once in topological order.
template <typename T> Tape<T> forward(const BasicGraph<T>& graph, const BasicTensor<T>& input) {
  const Shape spec = graph.input_spec();
  const Shape in = input.shape();
  if (in.c != spec.c || in.h != spec.h || in.w != spec.w) {
    throw ShapeError("node 0 (input): expected (N, " + std::to_string(spec.c) + ", " + std::to_string(spec.h) + ", " +
                     std::to_string(spec.w) + "), got " + in.str());
  }
  Tape<T> tape;
  tape.activations.reserve(graph.size());
  tape.argmax.resize(graph.size());
  for (const Node<T>& node : graph.nodes()) {
    auto arg = [&](std::size_t i) -> const BasicTensor<T>& { return tape.at(node.inputs[i]); };
    BasicTensor<T> out = detail::at_node(detail::node_label(node), [&]() -> BasicTensor<T> {
      return std::visit(
          [&](const auto& op) -> BasicTensor<T> {
            using O = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<O, InputOp>) {
              return input;
            } else if constexpr (std::is_same_v<O, ConvOp<T>>) {
              return conv2d(arg(0), op.params);
            } else if constexpr (std::is_same_v<O, ReluOp>) {
              return relu(arg(0));
            } else if constexpr (std::is_same_v<O, SigmoidOp>) {
              return sigmoid(arg(0));
            } else if constexpr (std::is_same_v<O, MaxPoolOp>) {
              auto r = maxpool2d(arg(0), op.window, op.stride, op.padding);
              tape.argmax[node.id] = std::move(r.argmax);
              return std::move(r.output);
            } else if constexpr (std::is_same_v<O, AdaptiveMaxPoolOp>) {
              auto r = adaptive_maxpool2d(arg(0), op.out_h, op.out_w);
              tape.argmax[node.id] = std::move(r.argmax);
              return std::move(r.output);
            } else if constexpr (std::is_same_v<O, ConcatOp>) {
              std::vector<const BasicTensor<T>*> parts;
              for (int id : node.inputs) parts.push_back(&tape.at(id));
              return concat_channels<T>(std::span<const BasicTensor<T>* const>(parts));
            } else if constexpr (std::is_same_v<O, AddOp>) {
              return elementwise_add(arg(0), arg(1));
            } else {
              return dense(arg(0), op.params);
            }
          },
          node.op);
    });
    tape.activations.push_back(std::move(out));
  }
  return tape;
}

/// Forward pass returning only the output node's activation.
template <typename T> BasicTensor<T> predict(const BasicGraph<T>& graph, const BasicTensor<T>& input) {
  Tape<T> tape = forward(graph, input);
  return std::move(tape.activations[static_cast<std::size_t>(graph.output())]);
}

/// Reverse-mode pass from `output_grad` (the loss gradient with respect to
/// the output node). Frozen nodes pass gradient through to their inputs but
/// get no entry of their own; every trainable parameter node gets one,
/// zero-filled when no path reaches it.
template <typename T>
Gradients<T> backward(const BasicGraph<T>& graph, const Tape<T>& tape, const BasicTensor<T>& output_grad,
                      bool want_input_grad = false) {
  if (tape.activations.size() != graph.size()) {
    throw ShapeError("backward: tape has " + std::to_string(tape.activations.size()) + " activations for a " +
                     std::to_string(graph.size()) + "-node graph");
  }
  const int out_id = graph.output();
  if (output_grad.shape() != tape.at(out_id).shape()) {
    throw ShapeError("node " + std::to_string(out_id) + " (output): loss gradient " + output_grad.shape().str() +
                     " vs activation " + tape.at(out_id).shape().str());
  }

  // A node's output gradient matters only if it, or something upstream of
  // it, owns trainable parameters (or is the input, when asked for).
  std::vector<char> needed(graph.size(), 0);
  for (const Node<T>& n : graph.nodes()) {
    bool need = n.id == 0 ? want_input_grad : (n.has_params() && n.trainable);
    for (int in : n.inputs) need = need || needed[static_cast<std::size_t>(in)];
    needed[static_cast<std::size_t>(n.id)] = need;
  }

  std::vector<std::optional<BasicTensor<T>>> grads(graph.size());
  grads[static_cast<std::size_t>(out_id)] = output_grad;
  Gradients<T> result;

  for (int id = out_id; id >= 1; --id) {
    const Node<T>& node = graph.node(id);
    auto& g = grads[static_cast<std::size_t>(id)];
    const bool owns = node.has_params() && node.trainable;
    if (!g) {
      if (owns) {
        std::visit(
            [&](const auto& op) {
              using O = std::decay_t<decltype(op)>;
              if constexpr (std::is_same_v<O, ConvOp<T>>) {
                result.params[id] = {BasicTensor<T>(op.params.kernel.shape()), std::vector<T>(op.params.bias.size())};
              } else if constexpr (std::is_same_v<O, DenseOp<T>>) {
                result.params[id] = {BasicTensor<T>(op.params.weights.shape()), std::vector<T>(op.params.bias.size())};
              }
            },
            node.op);
      }
      continue;
    }
    const BasicTensor<T>& gout = *g;
    auto need_in = [&](std::size_t i) { return needed[static_cast<std::size_t>(node.inputs[i])] != 0; };
    auto send = [&](std::size_t i, BasicTensor<T>&& t) {
      detail::accumulate(grads[static_cast<std::size_t>(node.inputs[i])], std::move(t));
    };
    auto arg = [&](std::size_t i) -> const BasicTensor<T>& { return tape.at(node.inputs[i]); };

    detail::at_node(detail::node_label(node), [&] {
      std::visit(
          [&](const auto& op) {
            using O = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<O, ConvOp<T>>) {
              if (!owns && !need_in(0)) return;
              auto cg = conv2d_backward(arg(0), op.params, gout, need_in(0), owns);
              if (owns) result.params[id] = {std::move(cg.kernel), std::move(cg.bias)};
              if (need_in(0)) send(0, std::move(cg.input));
            } else if constexpr (std::is_same_v<O, DenseOp<T>>) {
              if (!owns && !need_in(0)) return;
              auto dg = dense_backward(arg(0), op.params, gout);
              if (owns) result.params[id] = {std::move(dg.weights), std::move(dg.bias)};
              if (need_in(0)) send(0, std::move(dg.input));
            } else if constexpr (std::is_same_v<O, ReluOp>) {
              if (need_in(0)) send(0, relu_backward(arg(0), gout));
            } else if constexpr (std::is_same_v<O, SigmoidOp>) {
              if (need_in(0)) send(0, sigmoid_backward(tape.at(id), gout));
            } else if constexpr (std::is_same_v<O, MaxPoolOp> || std::is_same_v<O, AdaptiveMaxPoolOp>) {
              if (need_in(0)) {
                send(0, maxpool2d_backward<T>(tape.argmax[static_cast<std::size_t>(id)], gout, arg(0).shape()));
              }
            } else if constexpr (std::is_same_v<O, ConcatOp>) {
              std::vector<std::size_t> channels;
              for (int in : node.inputs) channels.push_back(tape.at(in).shape().c);
              auto pieces = split_channels<T>(gout, channels);
              for (std::size_t i = 0; i < pieces.size(); ++i)
                if (need_in(i)) send(i, std::move(pieces[i]));
            } else if constexpr (std::is_same_v<O, AddOp>) {
              if (need_in(0)) send(0, BasicTensor<T>(gout));
              if (need_in(1)) send(1, BasicTensor<T>(gout));
            }
          },
          node.op);
    });
    g.reset();
  }
  // Trainable nodes after the output node never influence the loss.
  for (int id = out_id + 1; id < static_cast<int>(graph.size()); ++id) {
    const Node<T>& node = graph.node(id);
    if (!node.has_params() || !node.trainable) continue;
    if (auto* c = std::get_if<ConvOp<T>>(&node.op))
      result.params[id] = {BasicTensor<T>(c->params.kernel.shape()), std::vector<T>(c->params.bias.size())};
    if (auto* d = std::get_if<DenseOp<T>>(&node.op))
      result.params[id] = {BasicTensor<T>(d->params.weights.shape()), std::vector<T>(d->params.bias.size())};
  }
  if (want_input_grad) {
    auto& g0 = grads[0];
    result.input = g0 ? std::move(*g0) : BasicTensor<T>(tape.at(0).shape());
  }
  return result;
}

} // namespace allnet
