#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "datapipe.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "optimizer.hpp"
#include "rng.hpp"

namespace allnet {

inline constexpr double bce_epsilon = 1e-7;

struct LossResult {
  double loss = 0;
  Tensor grad; ///< d(mean loss)/d(prediction), same shape as the predictions
};

/// Mean binary cross-entropy over one prediction per label, predictions
/// clamped to [eps, 1 - eps].
inline LossResult bce_loss(const Tensor& predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("bce_loss: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("bce_loss: empty batch");
  const double n = static_cast<double>(labels.size());
  LossResult r{0, Tensor(predictions.shape())};
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("bce_loss: labels must be 0 or 1");
    const double p = std::clamp(static_cast<double>(predictions[i]), bce_epsilon, 1.0 - bce_epsilon);
    const double y = labels[i];
    total += y * std::log(p) + (1 - y) * std::log(1 - p);
    r.grad[i] = static_cast<float>((p - y) / (p * (1 - p) * n));
  }
  r.loss = -total / n;
  return r;
}

/// Node-id ranges (inclusive) and scope names whose parameters stay fixed.
struct FreezeSpec {
  std::vector<std::string> scopes;
  std::vector<std::pair<int, int>> ranges;

  bool empty() const { return scopes.empty() && ranges.empty(); }

  void apply(Graph& graph) const {
    for (const auto& s : scopes) graph.freeze_scope(s);
    for (const auto& [first, last] : ranges) graph.freeze_range(first, last);
  }
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  FreezeSpec freeze;
  std::optional<double> clip = 5.0;

  void validate() const {
    if (epochs < 1) throw UsageError("train.epochs must be >= 1");
    if (batch_size < 1) throw UsageError("train.batch_size must be >= 1");
    if (!std::isfinite(learning_rate) || !(learning_rate > 0)) throw UsageError("train.lr must be finite and > 0");
    if (clip && !(*clip > 0)) throw UsageError("train.clip must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0; ///< 1-based
  double train_loss = 0;
  double train_accuracy = 0; ///< fraction, threshold 0.5
  double val_loss = 0;
  double val_accuracy = 0;
};

struct History {
  std::vector<EpochRecord> records;

  std::string csv() const {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char buf[160];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.train_accuracy, r.val_loss,
                    r.val_accuracy);
      out += buf;
    }
    return out;
  }
};

struct EvalResult {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Output scores for every image in manifest order. Never touches the
/// graph's parameters.
inline EvalResult evaluate(const Graph& graph, const Dataset& data, std::size_t batch_size = 16) {
  EvalResult r;
  BatchIterator it(data, batch_size);
  while (auto batch = it.next()) {
    const Tensor out = predict(graph, batch->images);
    if (out.size() != batch->labels.size()) throw ShapeError("evaluate: graph output is not one score per image");
    for (float v : out.data()) r.scores.push_back(v);
    r.labels.insert(r.labels.end(), batch->labels.begin(), batch->labels.end());
    batch.reset();
  }
  return r;
}

inline double accuracy_at_half(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) return 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += (scores[i] >= 0.5) == (labels[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

/// Returning false stops training after the epoch just recorded.
using EpochCallback = std::function<bool(const EpochRecord&)>;

struct TrainResult {
  History history;
  Checkpoint checkpoint;
};

inline void require_sigmoid_output(const Graph& graph) {
  const auto& out = graph.node(graph.output());
  if (!std::holds_alternative<SigmoidOp>(out.op) || out.out.numel() != 1) {
    throw UsageError("training needs a graph whose output is a single sigmoid neuron; node " +
                     std::to_string(out.id) + " (" + out.name + ") is " + Graph::describe(out.op) + " " +
                     out.out.str());
  }
}

/// Mini-batch training with binary cross-entropy. Batch order comes from
/// an Rng seeded with `config.seed`, so equal seeds and data give bitwise
/// equal results. An empty validation manifest yields zero val metrics.
inline TrainResult train(Graph& graph, const Dataset& train_data, const Dataset& val_data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  require_sigmoid_output(graph);
  if (train_data.manifest.size() == 0) throw DataError("training manifest is empty");
  config.freeze.apply(graph);

  Rng rng(config.seed);
  Optimizer opt(config.optimizer, config.learning_rate, graph);
  TrainResult result;
  std::uint32_t completed = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BatchIterator it(train_data, config.batch_size, rng.next());
    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    while (auto batch = it.next()) {
      const auto where = [&] {
        return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index);
      };
      const Tape<float> tape = forward(static_cast<const Graph&>(graph), batch->images);
      const Tensor& pred = tape.at(graph.output());
      const LossResult loss = bce_loss(pred, batch->labels);
      if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss at " + where());
      Gradients<float> grads = backward(static_cast<const Graph&>(graph), tape, loss.grad);
      if (config.clip) clip_gradients(grads, *config.clip);
      try {
        opt.step(graph, grads);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where());
      }
      const std::size_t b = batch->labels.size();
      loss_sum += loss.loss * static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) correct += (pred[i] >= 0.5f) == (batch->labels[i] == 1);
      seen += b;
      ++batch_index;
      batch.reset();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_data.manifest.size() > 0) {
      const EvalResult val = evaluate(graph, val_data, config.batch_size);
      Tensor scores(Shape{val.scores.size(), 1, 1, 1});
      for (std::size_t i = 0; i < val.scores.size(); ++i) scores[i] = static_cast<float>(val.scores[i]);
      rec.val_loss = bce_loss(scores, val.labels).loss;
      rec.val_accuracy = accuracy_at_half(val.scores, val.labels);
    }
    result.history.records.push_back(rec);
    completed = static_cast<std::uint32_t>(epoch);
    if (on_epoch && !on_epoch(rec)) break;
  }

  result.checkpoint = capture(graph, &opt, completed, rng.state());
  return result;
}

} // namespace allnet
