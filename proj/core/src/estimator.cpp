#include "effops/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "effops/error.hpp"
#include "json.hpp"

namespace effops {

using nlohmann::json;

namespace {

json point_json(const TradeoffPoint& p) {
  json j{{"time", p.time_cost}, {"accuracy", p.accuracy}};
  if (p.threshold) j["threshold"] = *p.threshold;
  if (p.avg_exit_layer != 0.0) j["avg_exit_layer"] = p.avg_exit_layer;
  if (p.wallclock_ms != 0.0) j["wallclock_ms"] = p.wallclock_ms;
  return j;
}

TradeoffPoint point_from(const json& j) {
  TradeoffPoint p;
  p.time_cost = j.at("time").get<double>();
  p.accuracy = j.at("accuracy").get<double>();
  if (j.contains("threshold") && !j.at("threshold").is_null()) p.threshold = j.at("threshold").get<double>();
  p.avg_exit_layer = j.value("avg_exit_layer", 0.0);
  p.wallclock_ms = j.value("wallclock_ms", 0.0);
  if (!(p.time_cost > 0.0) || !(p.accuracy >= 0.0 && p.accuracy <= 1.0)) {
    throw FormatError("measurement: time must be positive and accuracy within [0, 1]");
  }
  return p;
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

std::string join_key(const std::string& base, char op) { return base == "O" ? std::string(1, op) : base + op; }

// Collects every absent record so the caller can report them together.
class Lookup {
 public:
  Lookup(const MeasurementStore& store, std::string task, std::uint64_t seed)
      : store_(store), task_(std::move(task)), seed_(seed) {}

  const TradeoffPoint* point(const std::string& pipeline) {
    const Measurement* m = store_.find(task_, seed_, pipeline);
    if (m == nullptr) {
      note(pipeline + " (point)");
      return nullptr;
    }
    if (m->is_curve()) {
      note(pipeline + " (point; a curve is stored)");
      return nullptr;
    }
    return &std::get<TradeoffPoint>(m->value);
  }

  const TradeoffCurve* curve(const std::string& pipeline) {
    const Measurement* m = store_.find(task_, seed_, pipeline);
    if (m == nullptr || !m->is_curve()) {
      note(pipeline + (m == nullptr ? " (curve)" : " (curve; a point is stored)"));
      return nullptr;
    }
    return &std::get<TradeoffCurve>(m->value);
  }

  const TradeoffPoint* optional_point(const std::string& pipeline) const {
    const Measurement* m = store_.find(task_, seed_, pipeline);
    return m != nullptr && !m->is_curve() ? &std::get<TradeoffPoint>(m->value) : nullptr;
  }

  void note(const std::string& what) {
    if (std::find(missing_.begin(), missing_.end(), what) == missing_.end()) missing_.push_back(what);
  }

  void throw_if_missing(const std::string& target, const std::string& extra = "") const {
    if (missing_.empty()) return;
    std::string msg = "cannot estimate " + target + " for task " + task_ + ", seed " + std::to_string(seed_) +
                      "; missing measurements:";
    for (const auto& m : missing_) msg += "\n  - " + m;
    if (!extra.empty()) msg += "\n" + extra;
    throw MissingPrerequisite(msg);
  }

 private:
  const MeasurementStore& store_;
  std::string task_;
  std::uint64_t seed_;
  std::vector<std::string> missing_;
};

constexpr const char* kCompoundNote =
    "pruning changes the mix of weight and attention matmuls, so P followed by Q is treated as a compound "
    "operator and PQ must be measured";

struct Group2Resolution {
  Group2Terms terms;
  bool compound_missing = false;
};

Group2Resolution resolve_group2(Lookup& look, const std::string& base, bool want_q, bool want_l,
                                std::vector<std::string>* provenance) {
  Group2Resolution r;
  auto record = [provenance](const std::string& s) {
    if (provenance != nullptr) provenance->push_back(s);
  };
  const bool base_has_p = base.find('P') != std::string::npos;
  const TradeoffPoint* base_pt = look.optional_point(base);
  if (want_q) {
    const TradeoffPoint* own = base_pt != nullptr ? look.optional_point(join_key(base, 'Q')) : nullptr;
    std::string from, rel;
    const TradeoffPoint *q = nullptr, *ref = nullptr;
    if (own != nullptr) {
      q = own, ref = base_pt, from = join_key(base, 'Q'), rel = base;
    } else if (base_has_p) {
      q = look.optional_point("PQ");
      ref = look.point("P");
      if (q == nullptr) {
        look.note("PQ (point)");
        r.compound_missing = true;
      }
      from = "PQ", rel = "P";
    } else {
      q = look.point("Q");
      ref = look.point("O");
      from = "Q", rel = "O";
    }
    if (q != nullptr && ref != nullptr) {
      r.terms.q_saving = 1.0 - q->time_cost / ref->time_cost;
      r.terms.q_acc_ratio = q->accuracy / ref->accuracy;
      record("Q saving and accuracy ratio from " + from + " relative to " + rel);
    }
  }
  if (want_l) {
    const TradeoffPoint* own = base_pt != nullptr ? look.optional_point(join_key(base, 'L')) : nullptr;
    const TradeoffPoint *l = own, *ref = base_pt;
    std::string from = join_key(base, 'L'), rel = base;
    if (own == nullptr) {
      l = look.point("L");
      ref = look.point("O");
      from = "L", rel = "O";
    }
    if (l != nullptr && ref != nullptr) {
      r.terms.l_saving = 1.0 - l->time_cost / ref->time_cost;
      record("L saving from " + from + " relative to " + rel);
    }
  }
  return r;
}

}  // namespace

void MeasurementStore::put(Measurement m) {
  if (m.is_curve()) std::get<TradeoffCurve>(m.value).sort();
  for (auto& r : records_) {
    if (r.task == m.task && r.seed == m.seed && r.pipeline == m.pipeline) {
      r = std::move(m);
      return;
    }
  }
  records_.push_back(std::move(m));
}

const Measurement* MeasurementStore::find(const std::string& task, std::uint64_t seed,
                                          const std::string& pipeline) const {
  for (const auto& r : records_)
    if (r.task == task && r.seed == seed && r.pipeline == pipeline) return &r;
  return nullptr;
}

std::string MeasurementStore::to_json() const {
  json arr = json::array();
  for (const auto& r : records_) {
    json j{{"task", r.task}, {"seed", r.seed}, {"pipeline", r.pipeline}};
    if (r.is_curve()) {
      json pts = json::array();
      for (const auto& p : std::get<TradeoffCurve>(r.value).points) pts.push_back(point_json(p));
      j["curve"] = pts;
    } else {
      j["point"] = point_json(std::get<TradeoffPoint>(r.value));
    }
    arr.push_back(j);
  }
  return arr.dump(2);
}

MeasurementStore MeasurementStore::from_json(const std::string& text) {
  MeasurementStore store;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array()) throw FormatError("measurement store: top level must be an array");
    for (const auto& j : arr) {
      Measurement m;
      m.task = j.at("task").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.pipeline = PipelineSpec::parse(j.at("pipeline").get<std::string>()).to_string();
      if (j.contains("curve")) {
        TradeoffCurve c;
        for (const auto& p : j.at("curve")) c.points.push_back(point_from(p));
        m.value = std::move(c);
      } else {
        m.value = point_from(j.at("point"));
      }
      if (store.find(m.task, m.seed, m.pipeline) != nullptr) {
        throw FormatError("measurement store: duplicate record " + m.task + "/" + std::to_string(m.seed) + "/" +
                          m.pipeline);
      }
      store.put(std::move(m));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("measurement store: ") + e.what());
  }
  return store;
}

MeasurementStore MeasurementStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot read measurement store " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void MeasurementStore::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << to_json() << '\n';
}

double est_accuracy(double a_r, double a_op, double a_o) {
  if (a_o == 0.0) throw NumericError("est_accuracy: baseline accuracy is zero");
  return a_op / a_o * a_r;
}

double clamp_accuracy(double a) { return std::clamp(a, 0.0, 1.0); }

std::vector<double> est_time(const TradeoffCurve& curve_e, std::optional<double> d_ratio,
                             std::optional<double> p_ratio) {
  if (!d_ratio && !p_ratio) throw ValidationError("est_time: neither a D nor a P time ratio was supplied");
  for (auto r : {d_ratio, p_ratio}) {
    if (r && !(*r > 0.0 && *r <= 1.0)) throw ValidationError("est_time: time ratios must lie in (0, 1]");
  }
  const double t_e = curve_e.min_time();
  std::vector<double> out;
  for (const auto& p : curve_e.points) {
    double t = p.time_cost;
    // same as t_E + (T - t_E) * r, but exact at r = 1 and at T = t_E
    if (d_ratio) t -= (t - t_e) * (1.0 - *d_ratio);
    if (p_ratio) t *= *p_ratio;
    out.push_back(t);
  }
  return out;
}

TradeoffPoint est_group2(const TradeoffPoint& base, const Group2Terms& terms) {
  for (auto s : {terms.q_saving, terms.l_saving}) {
    if (s && !(*s >= 0.0 && *s < 1.0)) throw ValidationError("est_group2: savings must lie in [0, 1)");
  }
  TradeoffPoint p = base;
  p.time_cost = base.time_cost * (1.0 - terms.q_saving.value_or(0.0)) * (1.0 - terms.l_saving.value_or(0.0));
  p.accuracy = base.accuracy * terms.q_acc_ratio.value_or(1.0);
  return p;
}

Group2Terms group2_terms(const MeasurementStore& store, const std::string& task, std::uint64_t seed,
                         const std::string& base_pipeline, bool want_q, bool want_l,
                         std::vector<std::string>* provenance) {
  Lookup look(store, task, seed);
  const auto r = resolve_group2(look, base_pipeline, want_q, want_l, provenance);
  look.throw_if_missing(base_pipeline + " + Group II", r.compound_missing ? kCompoundNote : "");
  return r.terms;
}

int saving_percent(double saving) {
  // Snap away binary noise first so ratios of decimal inputs round as decimals.
  return static_cast<int>(std::lround(std::round(saving * 1e8) / 1e6));
}

Estimate estimate_pipeline(const MeasurementStore& store, const PipelineSpec& target, const std::string& task,
                           std::uint64_t seed) {
  const std::string name = target.to_string();
  if (const auto v = target.validate(); !v.empty()) {
    std::string msg = "estimate: pipeline " + name + " is invalid:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg);
  }
  Estimate est;
  est.target = name;
  est.is_curve = target.contains(Op::E);
  Lookup look(store, task, seed);

  if (target.ops.size() <= 1) {
    const Measurement* m = store.find(task, seed, name);
    if (m == nullptr) {
      look.note(name);
      look.throw_if_missing(name);
    }
    if (m->is_curve() != est.is_curve) throw FormatError("estimate: stored " + name + " has the wrong record kind");
    est.curve = m->is_curve() ? std::get<TradeoffCurve>(m->value) : TradeoffCurve{{std::get<TradeoffPoint>(m->value)}};
    est.provenance.push_back("measured " + name);
    return est;
  }

  PipelineSpec group1;
  bool want_q = false, want_l = false;
  for (Op op : target.ops) {
    if (is_group1(op)) group1.ops.push_back(op);
    want_q = want_q || op == Op::Q;
    want_l = want_l || op == Op::L;
  }
  const std::string base = group1.to_string();
  const TradeoffPoint* o = look.point("O");

  TradeoffCurve base_curve;
  const Measurement* measured_base = base != name ? store.find(task, seed, base) : nullptr;
  if (measured_base != nullptr) {
    base_curve = measured_base->is_curve() ? std::get<TradeoffCurve>(measured_base->value)
                                           : TradeoffCurve{{std::get<TradeoffPoint>(measured_base->value)}};
    est.provenance.push_back("base " + base + " measured");
  } else if (group1.contains(Op::E)) {
    const TradeoffCurve* e = look.curve("E");
    const TradeoffPoint* d = group1.contains(Op::D) ? look.point("D") : nullptr;
    const TradeoffPoint* p = group1.contains(Op::P) ? look.point("P") : nullptr;
    if (e != nullptr && o != nullptr && (d != nullptr || !group1.contains(Op::D)) &&
        (p != nullptr || !group1.contains(Op::P))) {
      std::optional<double> d_ratio, p_ratio;
      if (d != nullptr) d_ratio = d->time_cost / o->time_cost;
      if (p != nullptr) p_ratio = p->time_cost / o->time_cost;
      const std::vector<double> times =
          (d_ratio || p_ratio) ? est_time(*e, d_ratio, p_ratio) : std::vector<double>{};
      base_curve = *e;
      for (std::size_t i = 0; i < base_curve.points.size(); ++i) {
        auto& pt = base_curve.points[i];
        if (d != nullptr) pt.accuracy = est_accuracy(pt.accuracy, d->accuracy, o->accuracy);
        if (p != nullptr) pt.accuracy = est_accuracy(pt.accuracy, p->accuracy, o->accuracy);
        if (!times.empty()) pt.time_cost = times[i];
      }
      est.provenance.push_back("points from the E curve");
      if (d != nullptr) {
        est.provenance.push_back("accuracy x A_D/A_O; time t_E + (T - t_E) x T_D/T_O (T_D/T_O = " + num(*d_ratio) +
                                 ")");
      }
      if (p != nullptr) est.provenance.push_back("accuracy x A_P/A_O; time x T_P/T_O (= " + num(*p_ratio) + ")");
    }
  } else {
    TradeoffPoint pt;
    if (o != nullptr) pt = *o;
    for (Op op : group1.ops) {
      const std::string key(1, static_cast<char>(op));
      const TradeoffPoint* m = look.point(key);
      if (m != nullptr && o != nullptr) {
        pt.accuracy = est_accuracy(pt.accuracy, m->accuracy, o->accuracy);
        pt.time_cost *= m->time_cost / o->time_cost;
        est.provenance.push_back("accuracy x A_" + key + "/A_O; time x T_" + key + "/T_O");
      }
    }
    base_curve.points.push_back(pt);
  }

  Group2Resolution g2;
  if (want_q || want_l) g2 = resolve_group2(look, base, want_q, want_l, &est.provenance);
  look.throw_if_missing(name, g2.compound_missing ? kCompoundNote : "");

  if (want_q && est.is_curve) est.provenance.push_back("Q accuracy ratio extended to exit curve points");
  if (want_l && est.is_curve) est.provenance.push_back("L saving applied uniformly, including t_E");
  for (auto& pt : base_curve.points) {
    pt = est_group2(pt, g2.terms);
    pt.accuracy = clamp_accuracy(pt.accuracy);
  }
  est.curve = std::move(base_curve);
  est.curve.sort();
  return est;
}

void write_estimate_csv(const std::string& path, const Estimate& estimate, const Measurement* measured) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "target,threshold,est_time,est_accuracy,measured_time,measured_accuracy,provenance\n";
  std::string prov;
  for (const auto& s : estimate.provenance) prov += (prov.empty() ? "" : "; ") + s;
  for (const auto& p : estimate.curve.points) {
    const TradeoffPoint* m = nullptr;
    if (measured != nullptr) {
      if (measured->is_curve()) {
        for (const auto& q : std::get<TradeoffCurve>(measured->value).points)
          if (q.threshold && p.threshold && std::fabs(*q.threshold - *p.threshold) < 1e-6) m = &q;
      } else {
        m = &std::get<TradeoffPoint>(measured->value);
      }
    }
    out << estimate.target << ',' << (p.threshold ? num(*p.threshold) : "") << ',' << num(p.time_cost) << ','
        << num(p.accuracy) << ',' << (m ? num(m->time_cost) : "") << ',' << (m ? num(m->accuracy) : "") << ",\""
        << prov << "\"\n";
  }
}

}  // namespace effops
