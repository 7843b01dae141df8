#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "driftwatch/error.hpp"
#include "driftwatch/stats.hpp"

namespace driftwatch::metrics {

struct PairOutcome {
  std::string pair_id;
  double p_value = 1.0;
  stats::Decision decision = stats::Decision::insufficient_evidence;
  bool ground_truth_distinct = false;
  double s_obs = 1.0;

  bool operator==(const PairOutcome&) const = default;
};

enum class Classification { tp, fp, tn, fn };

inline Classification classify(const PairOutcome& o) {
  const bool positive = o.decision == stats::Decision::distinct;
  if (positive) return o.ground_truth_distinct ? Classification::tp
                                               : Classification::fp;
  return o.ground_truth_distinct ? Classification::fn : Classification::tn;
}

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<PairOutcome>& outcomes) {
  ConfusionMatrix m;
  for (const auto& o : outcomes) {
    switch (classify(o)) {
      case Classification::tp: ++m.tp; break;
      case Classification::fp: ++m.fp; break;
      case Classification::tn: ++m.tn; break;
      case Classification::fn: ++m.fn; break;
    }
  }
  return m;
}

// absent when the matrix is empty
inline std::optional<double> accuracy(const ConfusionMatrix& m) {
  if (m.total() == 0) return std::nullopt;
  return static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
}

// absent when there are no positives anywhere (2tp + fp + fn = 0)
inline std::optional<double> f1(const ConfusionMatrix& m) {
  const std::size_t denom = 2 * m.tp + m.fp + m.fn;
  if (denom == 0) return std::nullopt;
  return 2.0 * static_cast<double>(m.tp) / static_cast<double>(denom);
}

// mean p-value over one classification subset; absent when the subset is empty
inline std::optional<double> mean_p(const std::vector<PairOutcome>& outcomes,
                                    Classification which) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& o : outcomes)
    if (classify(o) == which) {
      sum += o.p_value;
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

// three-decimal fixed rendering used by every report surface
inline std::string format3(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

inline std::string format3(const std::optional<double>& x,
                           const char* absent = "-") {
  return x ? format3(*x) : std::string(absent);
}

}  // namespace driftwatch::metrics
