#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "effops/cost.hpp"
#include "effops/pipeline.hpp"
#include "effops/task.hpp"

namespace effops {

struct TradeoffPoint {
  double time_cost = 0.0;  // mean MACs per example
  double accuracy = 0.0;   // fraction in [0, 1]
  std::optional<double> threshold;
  double avg_exit_layer = 0.0;
  double wallclock_ms = 0.0;  // per example, informational
};

// Points sorted by time_cost ascending.
struct TradeoffCurve {
  std::vector<TradeoffPoint> points;

  void sort();
  double min_time() const;  // t_E
  double max_time() const;
};

struct Evaluation {
  TradeoffPoint point;
  std::vector<float> logits;  // [n, n_classes] in test-set order
  std::vector<int> exit_layer;
};

// Batches of batch_size in test order. With the artifact's L flag each batch
// is padded to its own longest sequence, otherwise to the model's max_len.
Evaluation evaluate(const ModelArtifact& artifact, std::span<const Example> test, std::optional<float> threshold,
                    int batch_size = 8, const CostModel& cost = {});

TradeoffPoint measure_point(const ModelArtifact& artifact, std::span<const Example> test,
                            std::optional<float> threshold = std::nullopt, int batch_size = 8,
                            const CostModel& cost = {});

TradeoffCurve measure_curve(const ModelArtifact& artifact, std::span<const Example> test,
                            std::span<const float> thresholds, int batch_size = 8, const CostModel& cost = {});

// Largest accuracy gap (percentage points) over the shared time range, on a
// 100-point uniform grid with linear interpolation.
double curve_distance(const TradeoffCurve& a, const TradeoffCurve& b);

// Accuracy at time t by linear interpolation; points at equal time are averaged.
double interpolate_accuracy(const TradeoffCurve& curve, double t);

struct DistanceStats {
  std::string group;  // "same-order" | "different-order"
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
  int n_pairs = 0;
};

struct CommutativityReport {
  std::string dataset;
  std::string operator_set;
  std::vector<std::string> orderings;
  DistanceStats same;
  DistanceStats different;
  bool overlap_1sd = false;
};

// Every ordering of the letters that passes validation, in lexicographic order.
std::vector<std::string> valid_orderings(const std::string& operator_set);

DistanceStats distance_stats(const std::string& group, const std::vector<double>& distances);

// curves[o][s]: curve of ordering o under seed s.
CommutativityReport commutativity_from_curves(const std::string& dataset, const std::string& operator_set,
                                              const std::vector<std::string>& orderings,
                                              const std::vector<std::vector<TradeoffCurve>>& curves);

using CurveSource = std::function<TradeoffCurve(const std::string& pipeline, std::uint64_t seed)>;

CommutativityReport commutativity_report(const std::string& dataset, const std::string& operator_set,
                                         std::span<const std::uint64_t> seeds, const CurveSource& source);

void write_curve_csv(const std::string& path, const TradeoffCurve& curve);
TradeoffCurve read_curve_csv(const std::string& path);
void write_report_csv(const std::string& path, std::span<const CommutativityReport> reports);

}  // namespace effops
