#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace allnet {

/// Binary confusion counts with label 1 (ALL) as the positive class.
struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  /// The same predictions scored with the classes swapped.
  Confusion mirrored() const { return Confusion{tn, fn, tp, fp}; }

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Metrics whose denominator is zero are nullopt ("undefined").
struct MetricsReport {
  std::optional<double> accuracy;    ///< percent
  std::optional<double> sensitivity; ///< percent
  std::optional<double> specificity; ///< percent
  std::optional<double> auc;         ///< fraction
  std::optional<double> f1;          ///< fraction
  double threshold = 0.5;
  Confusion confusion;
};

inline constexpr double default_threshold = 0.5;

namespace detail {

inline void check_scored(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DataError("metrics: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                    " labels");
  }
  if (scores.empty()) throw DataError("metrics: no samples");
  for (int y : labels)
    if (y != 0 && y != 1) throw DataError("metrics: labels must be 0 or 1");
}

inline std::optional<double> ratio(double num, double den) {
  if (den == 0) return std::nullopt;
  return num / den;
}

} // namespace detail

/// A score at or above the threshold is a positive prediction.
inline Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                           double threshold = default_threshold) {
  detail::check_scored(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn)++;
    } else {
      (predicted ? c.fp : c.tn)++;
    }
  }
  return c;
}

struct Summary {
  std::optional<double> accuracy;    ///< percent
  std::optional<double> sensitivity; ///< percent
  std::optional<double> specificity; ///< percent
  std::optional<double> f1;          ///< fraction
};

inline Summary summarize(const Confusion& c) {
  const auto pct = [](std::optional<double> v) { return v ? std::optional<double>(*v * 100.0) : std::nullopt; };
  const double tp = static_cast<double>(c.tp);
  const double fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn);
  const double fn = static_cast<double>(c.fn);
  return Summary{pct(detail::ratio(tp + tn, static_cast<double>(c.total()))), pct(detail::ratio(tp, tp + fn)),
                 pct(detail::ratio(tn, tn + fp)), detail::ratio(2 * tp, 2 * tp + fp + fn)};
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann-Whitney statistic). Sort plus average ranks
/// over tie groups; nullopt when either class is absent.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scored(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share their mean.
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += mean_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

inline MetricsReport report(std::span<const double> scores, std::span<const int> labels,
                            double threshold = default_threshold) {
  const Confusion c = confusion(scores, labels, threshold);
  const Summary s = summarize(c);
  return MetricsReport{s.accuracy, s.sensitivity, s.specificity, roc_auc(scores, labels), s.f1, threshold, c};
}

/// Five `metric=value` lines: percentages with 4 decimals, AUC and F1 with
/// 6; undefined metrics print as "undefined".
inline std::string format_report(const MetricsReport& r) {
  auto fmt = [](std::optional<double> v, int decimals) {
    if (!v) return std::string("undefined");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
    return std::string(buf);
  };
  return "accuracy=" + fmt(r.accuracy, 4) + "\n" + "sensitivity=" + fmt(r.sensitivity, 4) + "\n" +
         "specificity=" + fmt(r.specificity, 4) + "\n" + "auc=" + fmt(r.auc, 6) + "\n" + "f1=" + fmt(r.f1, 6) + "\n";
}

} // namespace allnet
