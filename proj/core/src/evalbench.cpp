#include "effops/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "effops/error.hpp"

namespace effops {

namespace {

constexpr int kGridPoints = 100;

// (time, accuracy) with equal times merged.
std::vector<std::pair<double, double>> knots(const TradeoffCurve& curve) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve.points) pts.emplace_back(p.time_cost, p.accuracy);
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < pts.size() && pts[j].first == pts[i].first) sum += pts[j++].second;
    out.emplace_back(pts[i].first, sum / static_cast<double>(j - i));
    i = j;
  }
  return out;
}

double interp(const std::vector<std::pair<double, double>>& k, double t) {
  if (t <= k.front().first) return k.front().second;
  if (t >= k.back().first) return k.back().second;
  const auto hi = std::upper_bound(k.begin(), k.end(), t, [](double v, const auto& p) { return v < p.first; });
  const auto lo = hi - 1;
  const double w = (t - lo->first) / (hi->first - lo->first);
  return lo->second + w * (hi->second - lo->second);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void TradeoffCurve::sort() {
  std::stable_sort(points.begin(), points.end(), [](const TradeoffPoint& a, const TradeoffPoint& b) {
    if (a.time_cost != b.time_cost) return a.time_cost < b.time_cost;
    return a.threshold.value_or(0.0) < b.threshold.value_or(0.0);
  });
}

double TradeoffCurve::min_time() const {
  if (points.empty()) throw ValidationError("curve is empty");
  return std::min_element(points.begin(), points.end(), [](const auto& a, const auto& b) {
           return a.time_cost < b.time_cost;
         })->time_cost;
}

double TradeoffCurve::max_time() const {
  if (points.empty()) throw ValidationError("curve is empty");
  return std::max_element(points.begin(), points.end(), [](const auto& a, const auto& b) {
           return a.time_cost < b.time_cost;
         })->time_cost;
}

Evaluation evaluate(const ModelArtifact& artifact, std::span<const Example> test, std::optional<float> threshold,
                    int batch_size, const CostModel& cost) {
  if (test.empty()) throw ValidationError("evaluate: test set is empty");
  if (batch_size < 1) throw ValidationError("evaluate: batch size must be positive");
  const TransformerModel& model = artifact.model;
  const auto n_classes = static_cast<std::size_t>(model.config.n_classes);
  const auto bs = static_cast<std::size_t>(batch_size);
  Evaluation ev;
  double macs = 0.0, exits = 0.0;
  std::int64_t wall_ns = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += bs) {
    std::vector<std::size_t> idx(std::min(bs, test.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    std::optional<std::size_t> pad;
    if (!artifact.l_flag) pad = static_cast<std::size_t>(model.config.max_len);
    const TokenBatch batch = batch_examples(test, idx, pad);
    const ForwardOutput out = forward(model, batch, threshold, cost);
    auto logits = out.logits.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const float* row = logits.data() + b * n_classes;
      const auto pred = static_cast<int>(std::max_element(row, row + n_classes) - row);
      correct += pred == test[idx[b]].label ? 1 : 0;
      macs += out.mac_count[b];
      exits += out.exit_layer[b];
      ev.exit_layer.push_back(out.exit_layer[b]);
    }
    ev.logits.insert(ev.logits.end(), logits.begin(), logits.end());
    wall_ns += out.wall_ns;
  }
  const auto n = static_cast<double>(test.size());
  ev.point.time_cost = macs / n;
  ev.point.accuracy = static_cast<double>(correct) / n;
  if (threshold) ev.point.threshold = *threshold;
  ev.point.avg_exit_layer = exits / n;
  ev.point.wallclock_ms = static_cast<double>(wall_ns) / 1e6 / n;
  return ev;
}

TradeoffPoint measure_point(const ModelArtifact& artifact, std::span<const Example> test,
                            std::optional<float> threshold, int batch_size, const CostModel& cost) {
  return evaluate(artifact, test, threshold, batch_size, cost).point;
}

TradeoffCurve measure_curve(const ModelArtifact& artifact, std::span<const Example> test,
                            std::span<const float> thresholds, int batch_size, const CostModel& cost) {
  if (!artifact.model.has_exits()) throw ValidationError("measure_curve: model has no exit classifiers");
  if (thresholds.empty()) throw ValidationError("measure_curve: no thresholds given");
  TradeoffCurve curve;
  for (float th : thresholds) curve.points.push_back(measure_point(artifact, test, th, batch_size, cost));
  curve.sort();
  return curve;
}

double interpolate_accuracy(const TradeoffCurve& curve, double t) {
  if (curve.points.empty()) throw ValidationError("interpolate: curve is empty");
  return interp(knots(curve), t);
}

double curve_distance(const TradeoffCurve& a, const TradeoffCurve& b) {
  if (a.points.size() < 2 || b.points.size() < 2) throw ValidationError("curve_distance: curves need at least 2 points");
  const auto ka = knots(a), kb = knots(b);
  const double lo = std::max(ka.front().first, kb.front().first);
  const double hi = std::min(ka.back().first, kb.back().first);
  if (lo > hi) {
    throw MissingPrerequisite("curve_distance: time ranges do not overlap ([" + fmt(ka.front().first) + ", " +
                              fmt(ka.back().first) + "] vs [" + fmt(kb.front().first) + ", " +
                              fmt(kb.back().first) + "])");
  }
  double worst = 0.0;
  for (int i = 0; i < kGridPoints; ++i) {
    const double t = i == kGridPoints - 1 ? hi : lo + (hi - lo) * i / (kGridPoints - 1);
    worst = std::max(worst, std::fabs(interp(ka, t) - interp(kb, t)));
  }
  return worst * 100.0;
}

std::vector<std::string> valid_orderings(const std::string& operator_set) {
  std::string letters = operator_set;
  std::sort(letters.begin(), letters.end());
  if (letters.empty()) throw ValidationError("operator set is empty");
  std::vector<std::string> out;
  PipelineSpec::parse(letters);  // rejects unknown or repeated letters
  do {
    if (PipelineSpec::parse(letters).valid()) out.push_back(letters);
  } while (std::next_permutation(letters.begin(), letters.end()));
  return out;
}

DistanceStats distance_stats(const std::string& group, const std::vector<double>& distances) {
  DistanceStats s;
  s.group = group;
  s.n_pairs = static_cast<int>(distances.size());
  if (distances.empty()) return s;
  s.mean = std::accumulate(distances.begin(), distances.end(), 0.0) / static_cast<double>(distances.size());
  if (distances.size() > 1) {
    double ss = 0.0;
    for (double d : distances) ss += (d - s.mean) * (d - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(distances.size() - 1));
  }
  return s;
}

CommutativityReport commutativity_from_curves(const std::string& dataset, const std::string& operator_set,
                                              const std::vector<std::string>& orderings,
                                              const std::vector<std::vector<TradeoffCurve>>& curves) {
  if (curves.size() != orderings.size()) throw ValidationError("commutativity: one curve list per ordering required");
  std::vector<double> same, diff;
  for (std::size_t o = 0; o < curves.size(); ++o) {
    const auto& a = curves[o];
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) same.push_back(curve_distance(a[i], a[j]));
    for (std::size_t p = o + 1; p < curves.size(); ++p)
      for (const auto& ca : a)
        for (const auto& cb : curves[p]) diff.push_back(curve_distance(ca, cb));
  }
  CommutativityReport r;
  r.dataset = dataset;
  r.operator_set = operator_set;
  r.orderings = orderings;
  r.same = distance_stats("same-order", same);
  r.different = distance_stats("different-order", diff);
  r.overlap_1sd = std::fabs(r.same.mean - r.different.mean) <= r.same.sd + r.different.sd;
  return r;
}

CommutativityReport commutativity_report(const std::string& dataset, const std::string& operator_set,
                                         std::span<const std::uint64_t> seeds, const CurveSource& source) {
  if (operator_set.find('E') == std::string::npos) {
    throw ValidationError("commute: operator set " + operator_set + " has no E, so its pipelines have no curves");
  }
  for (char c : operator_set) {
    if (c != 'D' && c != 'P' && c != 'E') throw ValidationError("commute: operator set must be a subset of {D,P,E}");
  }
  if (seeds.size() < 2) throw ValidationError("commute: at least two seeds are required");
  const auto orderings = valid_orderings(operator_set);
  std::vector<std::vector<TradeoffCurve>> curves(orderings.size());
  for (std::size_t o = 0; o < orderings.size(); ++o)
    for (auto seed : seeds) curves[o].push_back(source(orderings[o], seed));
  return commutativity_from_curves(dataset, operator_set, orderings, curves);
}

void write_curve_csv(const std::string& path, const TradeoffCurve& curve) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "threshold,avg_exit_layer,mean_macs,wallclock_ms,accuracy\n";
  for (const auto& p : curve.points) {
    out << (p.threshold ? fmt(*p.threshold) : "") << ',' << fmt(p.avg_exit_layer) << ',' << fmt(p.time_cost) << ','
        << fmt(p.wallclock_ms) << ',' << fmt(p.accuracy) << '\n';
  }
}

TradeoffCurve read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty curve file");
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(path + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_th = column("threshold"), c_exit = column("avg_exit_layer"), c_mac = column("mean_macs"),
                    c_wall = column("wallclock_ms"), c_acc = column("accuracy");
  TradeoffCurve curve;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw FormatError(path + ": row " + std::to_string(row) + " has wrong width");
    try {
      TradeoffPoint p;
      if (!cells[c_th].empty()) p.threshold = std::stod(cells[c_th]);
      p.avg_exit_layer = std::stod(cells[c_exit]);
      p.time_cost = std::stod(cells[c_mac]);
      p.wallclock_ms = std::stod(cells[c_wall]);
      p.accuracy = std::stod(cells[c_acc]);
      curve.points.push_back(p);
    } catch (const std::exception&) {
      throw FormatError(path + ": row " + std::to_string(row) + " is not numeric");
    }
  }
  curve.sort();
  return curve;
}

void write_report_csv(const std::string& path, std::span<const CommutativityReport> reports) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "dataset,operator_set,group,mean,sd,n_pairs,overlap_1sd\n";
  for (const auto& r : reports) {
    for (const DistanceStats* s : {&r.same, &r.different}) {
      out << r.dataset << ',' << r.operator_set << ',' << s->group << ',' << fmt(s->mean) << ',' << fmt(s->sd) << ','
          << s->n_pairs << ',' << (r.overlap_1sd ? "true" : "false") << '\n';
    }
  }
}

}  // namespace effops
