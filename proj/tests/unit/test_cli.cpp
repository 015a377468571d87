#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "effops/estimator.hpp"
#include "effops_cli/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "effops");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = effops::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Work {
  fs::path dir;
  Work() {
    dir = fs::temp_directory_path() / ("effops_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Work() { fs::remove_all(dir); }
  std::string at(const std::string& rel) const { return (dir / rel).string(); }
};

const std::string kFixtures = EFFOPS_FIXTURES;
const std::string kTiny = kFixtures + "/tiny_config.json";

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"gen-data"}).code == 2);  // missing --task
  CHECK(cli({"gen-data", "--task", "sorting"}).code == 2);
  CHECK(cli({"compare", "only-one.csv"}).code == 2);
}

TEST_CASE("gen-data") {
  Work w;
  const Result a = cli({"gen-data", "--task", "parity", "--seed", "1", "--out", w.at("a")});
  REQUIRE(a.code == 0);
  const Result b = cli({"gen-data", "--task", "parity", "--seed", "1", "--out", w.at("b")});
  REQUIRE(b.code == 0);
  for (const char* f : {"train.tsv", "dev.tsv", "test.tsv"}) CHECK(slurp(w.dir / "a" / f) == slurp(w.dir / "b" / f));
  CHECK(fs::exists(w.dir / "a" / "config.json"));

  const Result again = cli({"gen-data", "--task", "parity", "--seed", "1", "--out", w.at("a")});
  CHECK(again.code == 2);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(cli({"gen-data", "--task", "parity", "--seed", "1", "--out", w.at("a"), "--force"}).code == 0);

  // 10k parity examples: balance by counting the written file
  REQUIRE(cli({"gen-data", "--task", "parity", "--train-size", "10000", "--out", w.at("big")}).code == 0);
  std::ifstream in(w.dir / "big" / "train.tsv");
  int ones = 0, total = 0;
  for (std::string line; std::getline(in, line);) {
    ++total;
    ones += line[0] == '1' ? 1 : 0;
  }
  CHECK(total == 10000);
  CHECK(std::abs(ones - 5000) <= 250);
}

TEST_CASE("run, cache reuse and curve output") {
  Work w;
  const std::vector<std::string> common{"--config", kTiny, "--registry", w.at("reg"), "--store", w.at("store.json")};
  auto run = [&](const std::string& p, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"run", p, "--seed", "1"};
    args.insert(args.end(), common.begin(), common.end());
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  };

  const Result bad = run("PD");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("D after P") != std::string::npos);

  REQUIRE(run("O", {"--out", w.at("o")}).code == 0);
  REQUIRE(run("D", {"--out", w.at("d")}).code == 0);
  const Result de = run("DE", {"--out", w.at("de")});
  REQUIRE(de.code == 0);
  CHECK(de.out.find("reused: O, D") != std::string::npos);
  CHECK(de.out.find("computed: DE") != std::string::npos);

  const Result full = run("DEPLQ", {"--out", w.at("deplq")});
  REQUIRE(full.code == 0);
  const std::string csv = slurp(w.dir / "deplq" / "curve.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 9);
  CHECK(slurp(w.dir / "deplq" / "config.json").find("\"epochs\": 1") != std::string::npos);

  const auto store = effops::MeasurementStore::load(w.at("store.json"));
  CHECK(store.records().size() == 4);
  CHECK(store.find("parity", 1, "DEPLQ")->is_curve());
  CHECK_FALSE(store.find("parity", 1, "D")->is_curve());

  // registry from the environment
  ::setenv("EFFOPS_REGISTRY", w.at("reg").c_str(), 1);
  const Result env = cli({"run", "O", "--seed", "1", "--config", kTiny, "--store", w.at("store.json"), "--out", w.at("o2")});
  ::unsetenv("EFFOPS_REGISTRY");
  CHECK(env.code == 0);
  CHECK(env.out.find("reused: O") != std::string::npos);
}

TEST_CASE("estimate from the Table 2 store") {
  Work w;
  const std::string store = kFixtures + "/table2_store.json";
  const std::vector<std::tuple<std::string, std::string, int>> rows{
      {"MRPC", "QL", 92},   {"MRPC", "DQL", 91},  {"MRPC", "PQL", 95},  {"MRPC", "DPQL", 94},
      {"SST-2", "QL", 93},  {"SST-2", "DQL", 93}, {"SST-2", "PQL", 96}, {"SST-2", "DPQL", 96},
      {"QNLI", "QL", 92},   {"QNLI", "DQL", 91},  {"QNLI", "PQL", 95},  {"QNLI", "DPQL", 95},
      {"QQP", "QL", 93},    {"QQP", "DQL", 93},   {"QQP", "PQL", 95},   {"QQP", "DPQL", 95}};
  for (const auto& [task, target, pct] : rows) {
    CAPTURE(task);
    CAPTURE(target);
    const Result r = cli({"estimate", target, "--store", store, "--task", task, "--seed", "0", "--out", w.at("e.csv")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("-" + std::to_string(pct) + "% (est.)") != std::string::npos);
  }

  // without the PQ compound
  auto s = effops::MeasurementStore::load(store);
  effops::MeasurementStore no_pq;
  for (const auto& r : s.records())
    if (r.pipeline != "PQ") no_pq.put(r);
  no_pq.save(w.at("no_pq.json"));
  const Result missing = cli({"estimate", "PQL", "--store", w.at("no_pq.json"), "--task", "MRPC", "--seed", "0"});
  CHECK(missing.code == 3);
  CHECK(missing.err.find("compound") != std::string::npos);

  CHECK(cli({"estimate", "PD", "--store", store, "--task", "MRPC", "--seed", "0"}).code == 2);
  CHECK(cli({"estimate", "QL", "--store", w.at("nope.json")}).code == 3);
}

TEST_CASE("estimate EDP against the measured pipeline") {
  Work w;
  for (const char* p : {"O", "E", "D", "P", "EDP"}) {
    REQUIRE(cli({"run", p, "--seed", "1", "--config", kTiny, "--registry", w.at("reg"), "--store", w.at("s.json"),
                 "--out", w.at(std::string("run_") + p)})
                .code == 0);
  }
  const Result r = cli({"estimate", "EDP", "--store", w.at("s.json"), "--task", "parity", "--seed", "1", "--out",
                        w.at("edp.csv")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("distance to measured curve") != std::string::npos);
  const std::string csv = slurp(w.dir / "edp.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 9);
  // measured cells are filled on every row
  std::istringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) CHECK(line.find(",,") == std::string::npos);
}

TEST_CASE("compare") {
  const std::string a = kFixtures + "/curve_a.csv", b = kFixtures + "/curve_b.csv";
  CHECK(cli({"compare", a, a}).out == "0.0000\n");
  const Result r = cli({"compare", a, b});
  CHECK(r.code == 0);
  CHECK(r.out == "10.0000\n");
  CHECK(cli({"compare", a, kFixtures + "/curve_far.csv"}).code == 3);
  CHECK(cli({"compare", a, kFixtures + "/missing.csv"}).code == 3);
}

TEST_CASE("commute") {
  Work w;
  const Result r = cli({"commute", "DE", "--config", kTiny, "--seeds", "1,2,3", "--registry", w.at("reg"), "--store",
                        w.at("s.json"), "--out", w.at("c")});
  REQUIRE(r.code == 0);
  const std::string report = slurp(w.dir / "c" / "report.csv");
  CHECK(report.rfind("dataset,operator_set,group,mean,sd,n_pairs,overlap_1sd\n", 0) == 0);
  CHECK(report.find("same-order") != std::string::npos);
  CHECK(report.find(",6,") != std::string::npos);
  CHECK(report.find(",9,") != std::string::npos);
  CHECK(r.out.find("1-SD overlap:") != std::string::npos);
  CHECK(fs::exists(w.dir / "c" / "ED-3.csv"));

  CHECK(cli({"commute", "DP", "--config", kTiny, "--registry", w.at("reg"), "--out", w.at("dp")}).code == 2);
  CHECK_FALSE(fs::exists(w.dir / "dp"));
}
