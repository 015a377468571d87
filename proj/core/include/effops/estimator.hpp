#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "effops/evalbench.hpp"
#include "effops/pipeline.hpp"

namespace effops {

struct Measurement {
  std::string task;
  std::uint64_t seed = 0;
  std::string pipeline;
  std::variant<TradeoffPoint, TradeoffCurve> value;

  bool is_curve() const { return std::holds_alternative<TradeoffCurve>(value); }
};

// Keyed by (task, seed, pipeline); adding an existing key replaces it.
class MeasurementStore {
 public:
  void put(Measurement m);
  const Measurement* find(const std::string& task, std::uint64_t seed, const std::string& pipeline) const;
  const std::vector<Measurement>& records() const { return records_; }

  // JSON array of {task, seed, pipeline, point | curve}; curve entries are
  // {threshold, time, accuracy}.
  static MeasurementStore load(const std::string& path);
  void save(const std::string& path) const;
  static MeasurementStore from_json(const std::string& text);
  std::string to_json() const;

 private:
  std::vector<Measurement> records_;
};

// Relative-drop composition: (A_op / A_O) * A_R.
double est_accuracy(double a_r, double a_op, double a_o);

// Ratio composition can overshoot 100%; pipeline estimates are capped to [0, 1].
double clamp_accuracy(double a);

// Per point of an E curve: t_E + (T_E - t_E) * d_ratio when D is present, then
// times p_ratio when P is present.
std::vector<double> est_time(const TradeoffCurve& curve_e, std::optional<double> d_ratio,
                             std::optional<double> p_ratio);

struct Group2Terms {
  std::optional<double> q_saving;     // 1 - T_Q / T_base
  std::optional<double> l_saving;     // 1 - T_L / T_base
  std::optional<double> q_acc_ratio;  // A_Q / A_base
};

TradeoffPoint est_group2(const TradeoffPoint& base, const Group2Terms& terms);

// Q/L terms for a base pipeline, taken from the most specific measurements
// available: base+Q / base+L when stored, otherwise Q and L measured on O.
// A base containing P needs a measured PQ compound for Q.
Group2Terms group2_terms(const MeasurementStore& store, const std::string& task, std::uint64_t seed,
                         const std::string& base_pipeline, bool want_q, bool want_l,
                         std::vector<std::string>* provenance = nullptr);

// Savings as whole percent, as printed in a results table.
int saving_percent(double saving);

struct Estimate {
  std::string target;
  bool is_curve = false;
  TradeoffCurve curve;  // single point when !is_curve
  std::vector<std::string> provenance;
};

Estimate estimate_pipeline(const MeasurementStore& store, const PipelineSpec& target, const std::string& task,
                           std::uint64_t seed);

// Estimated vs measured values for every estimated point; measured cells are
// filled when the target itself is in the store (matched by threshold).
void write_estimate_csv(const std::string& path, const Estimate& estimate, const Measurement* measured);

}  // namespace effops
