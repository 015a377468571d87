#include "effops_cli/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "effops/error.hpp"
#include "effops/estimator.hpp"
#include "effops/evalbench.hpp"
#include "effops/pipeline.hpp"

namespace effops::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::string task;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string registry;
  std::string store;
  bool force = false;
};

RunConfig effective_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path, RunConfig{});
  if (!c.task.empty()) cfg.task.kind = task_kind_from_string(c.task);
  cfg.validate();
  return cfg;
}

fs::path registry_root(const Common& c, const RunConfig& cfg) {
  if (!c.registry.empty()) return c.registry;
  if (const char* env = std::getenv("EFFOPS_REGISTRY"); env != nullptr && *env != '\0') return env;
  return fs::path(cfg.output_dir) / "registry";
}

fs::path store_path(const Common& c, const RunConfig& cfg) {
  return c.store.empty() ? fs::path(cfg.output_dir) / "measurements.json" : fs::path(c.store);
}

void echo_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw UsageError("cannot write " + (dir / "config.json").string());
  out << cfg.to_json() << '\n';
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s.empty() ? "-" : s;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void print_curve(std::ostream& out, const TradeoffCurve& c) {
  out << "  threshold  avg_exit  mean_macs  accuracy\n";
  for (const auto& p : c.points) {
    out << "  " << std::setw(9) << (p.threshold ? fixed(*p.threshold, 2) : std::string("-")) << "  " << std::setw(8)
        << fixed(p.avg_exit_layer, 2) << "  " << std::setw(9) << fixed(p.time_cost, 0) << "  "
        << fixed(100.0 * p.accuracy, 2) << "%\n";
  }
}

// ---- gen-data ----

void gen_data(const Common& c, std::optional<int> train_size, std::ostream& out) {
  RunConfig cfg = effective_config(c);
  if (c.seed) cfg.task.seed = *c.seed;
  if (train_size) cfg.task.train_size = *train_size;
  cfg.validate();
  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "data" / (cfg.task.id() + "-" + std::to_string(cfg.task.seed))
                                     : fs::path(c.out);
  for (const char* f : {"train.tsv", "dev.tsv", "test.tsv"}) {
    if (fs::exists(dir / f) && !c.force) {
      throw UsageError((dir / f).string() + " exists; pass --force to overwrite");
    }
  }
  const Dataset data = gen_task(cfg.task);
  fs::create_directories(dir);
  write_examples((dir / "train.tsv").string(), data.train);
  write_examples((dir / "dev.tsv").string(), data.dev);
  write_examples((dir / "test.tsv").string(), data.test);
  echo_config(dir, cfg);
  std::vector<int> per_class(static_cast<std::size_t>(cfg.task.n_classes), 0);
  for (const auto& e : data.train) ++per_class[static_cast<std::size_t>(e.label)];
  out << "wrote " << data.train.size() << "/" << data.dev.size() << "/" << data.test.size()
      << " train/dev/test examples to " << dir.string() << "\n";
  out << "train labels:";
  for (std::size_t k = 0; k < per_class.size(); ++k) out << " " << k << "=" << per_class[k];
  out << "\n";
}

// ---- run ----

struct Produced {
  ModelArtifact artifact;
  ExecuteLog log;
};

Produced produce(const RunConfig& cfg, const Dataset& data, const PipelineSpec& spec, std::uint64_t seed,
                 Registry& reg) {
  Produced p;
  const ModelArtifact base = train_base(cfg, data, seed, &reg, &p.log);
  p.artifact = execute(spec, base, data, cfg, &reg, &p.log);
  return p;
}

Measurement measure(const RunConfig& cfg, const Dataset& data, const ModelArtifact& a) {
  Measurement m{a.provenance.task, a.provenance.seed, a.provenance.pipeline, TradeoffPoint{}};
  if (a.model.has_exits()) {
    m.value = measure_curve(a, data.test, cfg.thresholds, cfg.eval_batch, cfg.cost);
  } else {
    m.value = measure_point(a, data.test, std::nullopt, cfg.eval_batch, cfg.cost);
  }
  return m;
}

TradeoffCurve as_curve(const Measurement& m) {
  return m.is_curve() ? std::get<TradeoffCurve>(m.value) : TradeoffCurve{{std::get<TradeoffPoint>(m.value)}};
}

void record(const fs::path& path, const Measurement& m) {
  MeasurementStore store = fs::exists(path) ? MeasurementStore::load(path.string()) : MeasurementStore{};
  store.put(m);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  store.save(path.string());
}

void run_pipeline(const Common& c, const std::string& pipeline, std::ostream& out) {
  const RunConfig cfg = effective_config(c);
  const PipelineSpec spec = PipelineSpec::parse(pipeline);
  if (const auto v = spec.validate(); !v.empty()) {
    std::string msg = "pipeline " + spec.to_string() + " is invalid:";
    for (const auto& s : v) msg += " " + s + ";";
    throw ValidationError(msg);
  }
  const std::uint64_t seed = c.seed.value_or(cfg.seeds.front());
  Registry reg(registry_root(c, cfg));
  const Dataset data = gen_task(cfg.task);
  const Produced p = produce(cfg, data, spec, seed, reg);
  const Measurement m = measure(cfg, data, p.artifact);

  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "runs" / cfg.task.id() / std::to_string(seed) /
                                           spec.to_string()
                                     : fs::path(c.out);
  echo_config(dir, cfg);
  write_curve_csv((dir / "curve.csv").string(), as_curve(m));
  const fs::path sp = store_path(c, cfg);
  record(sp, m);

  out << "pipeline " << spec.to_string() << " on " << cfg.task.id() << ", seed " << seed << "\n";
  out << "  reused: " << join(p.log.reused) << "\n  computed: " << join(p.log.computed) << "\n";
  print_curve(out, as_curve(m));
  out << "curve: " << (dir / "curve.csv").string() << "\nstore: " << sp.string() << "\n";
}

// ---- estimate ----

void estimate(const Common& c, const std::string& target, std::ostream& out) {
  const RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path, RunConfig{});
  const std::string task = c.task.empty() ? cfg.task.id() : c.task;
  const std::uint64_t seed = c.seed.value_or(cfg.seeds.front());
  const MeasurementStore store = MeasurementStore::load(store_path(c, cfg).string());
  const PipelineSpec spec = PipelineSpec::parse(target);
  const Estimate est = estimate_pipeline(store, spec, task, seed);
  const Measurement* measured = store.find(task, seed, est.target);

  const fs::path csv = c.out.empty() ? fs::path(cfg.output_dir) / "estimates" /
                                           (task + "-" + std::to_string(seed) + "-" + est.target + ".csv")
                                     : fs::path(c.out);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  write_estimate_csv(csv.string(), est, measured);

  out << "estimate " << est.target << " on " << task << ", seed " << seed << "\n";
  for (const auto& s : est.provenance) out << "  - " << s << "\n";
  print_curve(out, est.curve);
  if (measured != nullptr && est.is_curve && measured->is_curve() && est.curve.points.size() >= 2) {
    try {
      out << "distance to measured curve: " << fixed(curve_distance(est.curve, std::get<TradeoffCurve>(measured->value)), 2)
          << " points\n";
    } catch (const MissingPrerequisite& e) {
      out << "distance to measured curve: n/a (" << e.what() << ")\n";
    }
  }
  // Group II savings, as printed in a results table
  PipelineSpec group1;
  for (Op op : spec.ops)
    if (is_group1(op)) group1.ops.push_back(op);
  if (!est.is_curve && group1.ops.size() < spec.ops.size()) {
    if (const Measurement* base = store.find(task, seed, group1.to_string()); base != nullptr && !base->is_curve()) {
      const double t = std::get<TradeoffPoint>(base->value).time_cost;
      out << "time vs " << group1.to_string() << ": -" << saving_percent(1.0 - est.curve.points[0].time_cost / t)
          << "% (est.)";
      if (measured != nullptr && !measured->is_curve()) {
        out << ", -" << saving_percent(1.0 - std::get<TradeoffPoint>(measured->value).time_cost / t) << "% (measured)";
      }
      out << "\n";
    }
  }
  out << "report: " << csv.string() << "\n";
}

// ---- commute ----

void commute(const Common& c, const std::string& set, const std::vector<std::uint64_t>& seeds_flag, std::ostream& out) {
  RunConfig cfg = effective_config(c);
  if (!seeds_flag.empty()) cfg.seeds = seeds_flag;
  Registry reg(registry_root(c, cfg));
  const Dataset data = gen_task(cfg.task);
  const fs::path dir = c.out.empty() ? fs::path(cfg.output_dir) / "commute" / (cfg.task.id() + "-" + set) : fs::path(c.out);
  const fs::path sp = store_path(c, cfg);

  // nothing is written until the set has passed validation
  const CurveSource source = [&](const std::string& pipeline, std::uint64_t seed) {
    fs::create_directories(dir);
    const Produced p = produce(cfg, data, PipelineSpec::parse(pipeline), seed, reg);
    const Measurement m = measure(cfg, data, p.artifact);
    record(sp, m);
    const TradeoffCurve curve = as_curve(m);
    write_curve_csv((dir / (pipeline + "-" + std::to_string(seed) + ".csv")).string(), curve);
    out << "  " << pipeline << " seed " << seed << ": reused " << join(p.log.reused) << "; computed "
        << join(p.log.computed) << "\n";
    return curve;
  };
  out << "commutativity of {" << set << "} on " << cfg.task.id() << "\n";
  const CommutativityReport r = commutativity_report(cfg.task.id(), set, cfg.seeds, source);
  echo_config(dir, cfg);
  write_report_csv((dir / "report.csv").string(), std::vector<CommutativityReport>{r});
  out << "orderings: " << join(r.orderings) << "\n";
  for (const auto* s : {&r.same, &r.different}) {
    out << "  " << std::setw(15) << s->group << ": " << fixed(s->mean, 2) << " +- " << fixed(s->sd, 2) << " ("
        << s->n_pairs << " pairs)\n";
  }
  out << "1-SD overlap: " << (r.overlap_1sd ? "yes" : "no") << "\n";
  if (!r.overlap_1sd) out << "WARNING: same-order and different-order 1-SD intervals do not overlap\n";
  out << "report: " << (dir / "report.csv").string() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Efficiency-operator pipelines on toy transformers"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config_path, "JSON run config; flags override its fields")->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "output location (default under the config's output_dir)");
  };

  auto* gen = app.add_subcommand("gen-data", "write seeded dataset splits");
  add_common(gen);
  gen->add_option("--task", c.task, "parity | majority | pattern")->required();
  gen->add_option("--seed", c.seed, "data seed");
  std::optional<int> train_size;
  gen->add_option("--train-size", train_size, "number of training examples");
  gen->add_flag("--force", c.force, "overwrite existing files");

  auto* run_cmd = app.add_subcommand("run", "train/cache a pipeline, measure it and record the result");
  add_common(run_cmd);
  std::string pipeline;
  run_cmd->add_option("pipeline,--pipeline", pipeline, "operator string, e.g. DEPLQ or O")->required();
  run_cmd->add_option("--task", c.task, "parity | majority | pattern");
  run_cmd->add_option("--seed", c.seed, "model seed");
  run_cmd->add_option("--registry", c.registry, "artifact registry root (else $EFFOPS_REGISTRY)");
  run_cmd->add_option("--store", c.store, "measurement store JSON");

  auto* est = app.add_subcommand("estimate", "estimate a pipeline from stored measurements");
  add_common(est);
  std::string target;
  est->add_option("target,--pipeline", target, "target operator string")->required();
  est->add_option("--task", c.task, "task key in the store");
  est->add_option("--seed", c.seed, "seed key in the store");
  est->add_option("--store", c.store, "measurement store JSON");

  auto* cmp = app.add_subcommand("compare", "curve distance between two curve CSVs");
  std::string csv_a, csv_b;
  cmp->add_option("a", csv_a, "curve CSV")->required();
  cmp->add_option("b", csv_b, "curve CSV")->required();

  auto* com = app.add_subcommand("commute", "same-order vs different-order curve distances");
  add_common(com);
  std::string set;
  std::vector<std::uint64_t> seeds;
  com->add_option("set", set, "operator set, e.g. DE or PE")->required();
  com->add_option("--task", c.task, "parity | majority | pattern");
  com->add_option("--seeds", seeds, "seeds (default from config)")->delimiter(',');
  com->add_option("--registry", c.registry, "artifact registry root (else $EFFOPS_REGISTRY)");
  com->add_option("--store", c.store, "measurement store JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) gen_data(c, train_size, out);
    if (run_cmd->parsed()) run_pipeline(c, pipeline, out);
    if (est->parsed()) estimate(c, target, out);
    if (cmp->parsed()) out << fixed(curve_distance(read_curve_csv(csv_a), read_curve_csv(csv_b)), 4) << "\n";
    if (com->parsed()) commute(c, set, seeds, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace effops::cli
