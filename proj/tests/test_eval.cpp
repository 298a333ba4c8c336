#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "gcdk/eval.hpp"
#include "test_support.hpp"

using namespace gcdk;
using gcdk::testing::asset;
using gcdk::testing::grammar;

namespace {

RunResult run(const std::string& id, std::size_t sample, bool syn, bool fun = false) {
  RunResult r;
  r.problem_id = id;
  r.strategy = "LAVE";
  r.sample = sample;
  r.syntactic = syn;
  r.functional = fun;
  return r;
}

Suite one_problem(const std::string& grammar_name) {
  Suite s;
  s.name = "single";
  Problem p;
  p.id = "p";
  p.grammar = asset("grammars/" + grammar_name + ".gram");
  s.problems.push_back(p);
  return s;
}

DenoiserFactory noisy(double eps) {
  return [eps](const Problem&, const std::shared_ptr<const Grammar>& g) -> std::shared_ptr<const Denoiser> {
    return make_noisy_oracle(g, eps);
  };
}

BenchOptions small_opts() {
  BenchOptions o;
  o.config.max_length = 16;
  o.config.denoise_steps = 16;
  o.config.block_size = 8;
  o.samples = 3;
  o.seed = 5;
  return o;
}

}  // namespace

TEST_CASE("syntactic@k counts problems with any valid sample among the first k") {
  CHECK(syntactic_at_k({{true, false, false}, {false, false, false}}, 3) == 50.0);
  CHECK(syntactic_at_k({{true}, {true}, {true}}, 1) == 100.0);
  CHECK(syntactic_at_k({{false, true}}, 1) == 0.0);
  CHECK(syntactic_at_k({{false, true}}, 2) == 100.0);
  CHECK_THROWS_AS(syntactic_at_k(std::vector<std::vector<bool>>{{true}}, 3), InsufficientSamplesError);
  CHECK_THROWS_AS(syntactic_at_k(std::vector<std::vector<bool>>{{true}}, 0), std::invalid_argument);
}

TEST_CASE("functional@k groups by problem and orders by sample index") {
  std::vector<RunResult> rs{run("P1", 0, true, true), run("P2", 0, true, false)};
  CHECK(functional_at_k(rs, 1) == 50.0);
  std::vector<RunResult> shuffled{run("A", 1, true, true), run("A", 0, false), run("B", 0, true), run("B", 1, false)};
  CHECK(syntactic_at_k(shuffled, 1) == 50.0);
  CHECK(syntactic_at_k(shuffled, 2) == 100.0);
  CHECK(functional_at_k(shuffled, 1) == 0.0);
  CHECK(functional_at_k(shuffled, 2) == 50.0);
}

TEST_CASE("checkers") {
  CheckerSpec exact;
  exact.kind = CheckerSpec::Kind::kExact;
  exact.target = {"(", ")"};
  CHECK(run_checker(exact, {"(", ")"}, true).functional);
  CHECK_FALSE(run_checker(exact, {"[", "]"}, true).functional);

  CheckerSpec cmd;
  cmd.kind = CheckerSpec::Kind::kCommand;
  cmd.command = "grep -qx '( )' {output_file}";
  CHECK(run_checker(cmd, {"(", ")"}, true).functional);
  CHECK_FALSE(run_checker(cmd, {"[", "]"}, true).functional);
  // Invalid output never reaches the checker, even one that always passes.
  cmd.command = "true";
  CHECK_FALSE(run_checker(cmd, {")"}, false).functional);
  cmd.command = "definitely-not-a-command-gcdk {output_file} 2>/dev/null";
  auto missing = run_checker(cmd, {"("}, true);
  CHECK_FALSE(missing.functional);
  CHECK_FALSE(missing.error.empty());
}

TEST_CASE("suite files") {
  auto s = Suite::load(asset("suites/demo.json"));
  CHECK(s.name == "demo");
  REQUIRE(s.problems.size() == 4);
  CHECK(std::filesystem::exists(s.problems[0].grammar));
  CHECK(s.problems[1].checker.kind == CheckerSpec::Kind::kExact);
  auto again = Suite::parse(s.to_text());
  CHECK(again.problems == s.problems);

  auto s50 = Suite::load(asset("suites/synthetic50.json"));
  CHECK(s50.problems.size() == 50);

  CHECK_THROWS(Suite::parse("{\"problems\": [{\"id\": \"a\"}]}"));
  CHECK_THROWS(Suite::parse("{\"problems\": [{\"id\": \"a\", \"grammar\": \"g\"}, {\"id\": \"a\", \"grammar\": \"g\"}]}"));
  CHECK_THROWS(Suite::parse("{\"problems\": [{\"id\": \"a\", \"grammar\": \"g\", \"checker\": {\"type\": \"fuzzy\"}}]}"));
  CHECK_THROWS(Suite::parse("[1, 2"));
}

TEST_CASE("benchmark: adversarial denoiser separates LAVE from NO-CD") {
  auto suite = one_problem("brackets");
  auto opts = small_opts();
  opts.samples = 1;
  opts.config.attempt_budget = 1;
  opts.strategies = {Strategy::kNoCd, Strategy::kLave};
  auto rec = Recording::load(asset("replay/always_close_brackets.jsonl"), 7);
  DenoiserFactory f = [&](const Problem&, const std::shared_ptr<const Grammar>&) -> std::shared_ptr<const Denoiser> {
    return std::make_shared<ScriptedDenoiser>(rec, 7);
  };
  auto report = run_benchmark(suite, opts, f);
  REQUIRE(report.strategies.size() == 2);
  CHECK(report.strategies[0].strategy == "NO-CD");
  CHECK(report.strategies[0].syntactic.at(1) == 0.0);
  CHECK(report.strategies[1].strategy == "LAVE");
  CHECK(report.strategies[1].syntactic.at(1) == 100.0);
  CHECK(report.strategies[1].functional.at(1) == 100.0);
}

TEST_CASE("benchmark: empty strategy list gives metadata only") {
  auto opts = small_opts();
  opts.strategies.clear();
  opts.denoiser_name = "noisy-oracle:0.3";
  auto report = run_benchmark(one_problem("brackets"), opts, noisy(0.3));
  CHECK(report.strategies.empty());
  CHECK(report.runs.empty());
  CHECK(report.meta.denoiser == "noisy-oracle:0.3");
  CHECK(report.meta.samples == 3);
}

TEST_CASE("benchmark: ks up to the sample count, monotone, functional below syntactic") {
  auto opts = small_opts();
  opts.samples = 10;
  auto report = run_benchmark(Suite::load(asset("suites/demo.json")), opts, noisy(0.5));
  REQUIRE(report.strategies.size() == 3);
  for (const auto& s : report.strategies) {
    CHECK(s.runs == 40);
    CHECK(s.syntactic.size() == 4);
    double prev = -1;
    for (auto k : report_ks()) {
      CHECK(s.syntactic.at(k) >= prev);
      prev = s.syntactic.at(k);
      CHECK(s.functional.at(k) <= s.syntactic.at(k));
    }
  }
  for (const auto& r : report.runs) {
    if (r.functional) CHECK(r.syntactic);
  }
  opts.samples = 4;
  auto four = run_benchmark(one_problem("brackets"), opts, noisy(0.5));
  CHECK(four.strategies[0].syntactic.size() == 2);  // k = 1, 3
}

TEST_CASE("benchmark: results do not depend on worker count or run order") {
  auto suite = Suite::load(asset("suites/demo.json"));
  auto opts = small_opts();
  auto serial = run_benchmark(suite, opts, noisy(0.3));
  opts.jobs = 4;
  auto parallel = run_benchmark(suite, opts, noisy(0.3));
  CHECK(serial.to_json() == parallel.to_json());

  auto runs = serial.runs;
  std::vector<RunResult> lave;
  for (const auto& r : runs) {
    if (r.strategy == "LAVE") lave.push_back(r);
  }
  auto forward = summarize("LAVE", lave, 3);
  std::reverse(lave.begin(), lave.end());
  CHECK(summarize("LAVE", lave, 3) == forward);
}

TEST_CASE("benchmark: unloadable grammar is recorded per run") {
  Suite s = one_problem("brackets");
  s.problems[0].grammar = "/nonexistent/grammar.gram";
  auto report = run_benchmark(s, small_opts(), noisy(0.3));
  CHECK(report.runs.size() == 9);
  for (const auto& r : report.runs) CHECK_FALSE(r.error.empty());
  CHECK(report.strategies[0].errors == 3);
}

TEST_CASE("reports round-trip and render a table") {
  auto opts = small_opts();
  opts.include_timing = true;
  auto report = run_benchmark(Suite::load(asset("suites/demo.json")), opts, noisy(0.3));
  CHECK(Report::from_json(report.to_json()) == report);

  auto dir = std::filesystem::temp_directory_path() / "gcdk_report_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "report.json").string();
  write_report(report, path);
  CHECK(read_report(path) == report);
  CHECK(std::filesystem::exists(dir / "report.txt"));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_WITH(write_report(report, "/nonexistent-dir/r.json"), doctest::Contains("/nonexistent-dir/r.json"));

  auto table = report.to_table();
  auto header = table.substr(0, table.find('\n'));
  auto pos = [&](const std::string& s) { return header.find(s); };
  CHECK(pos("strategy") < pos("metric"));
  CHECK(pos("metric") < pos("k=1"));
  CHECK(pos("k=1") < pos("k=3"));
  CHECK(pos("k=3") < pos("k=5"));
  CHECK(pos("k=5") < pos("k=10"));
  CHECK(pos("k=10") < pos("time (s)"));
  // Three samples: k=5 and k=10 are not reported; time has two decimals.
  auto lave = table.substr(table.find("LAVE"));
  lave = lave.substr(0, lave.find('\n'));
  CHECK(lave.find(" - ") != std::string::npos);
  auto time = lave.substr(lave.rfind(' ') + 1);
  CHECK(time.size() - time.find('.') == 3);
}

TEST_CASE("feasibility study") {
  auto g = grammar("brackets");
  auto corpus = sample_sentences(*g, 30, 12, 1);
  for (const auto& s : corpus) CHECK(is_valid(*g, s));
  UniformDenoiser u(7);

  StudyOptions all_kept;
  all_kept.retain_prob = 1.0;
  all_kept.n_values = {1};
  all_kept.instances = 50;
  auto r1 = prefix_mask_acceptance_study(*g, corpus, u, all_kept);
  CHECK(r1.points[0].rate() == 100.0);

  StudyOptions o;
  o.retain_prob = 0.8;
  o.instances = 150;
  auto r = prefix_mask_acceptance_study(*g, corpus, u, o);
  CHECK(r.monotonicity_violations == 0);
  REQUIRE(r.points.back().n == 0);
  CHECK(r.points.back().rate() == 100.0);
  for (std::size_t j = 1; j < r.points.size(); ++j) CHECK(r.points[j].accepted >= r.points[j - 1].accepted);
  CHECK(r.points.front().rate() < 100.0);
  CHECK(r.to_text().rfind("N,accepted,total,rate\n", 0) == 0);

  CHECK_THROWS(prefix_mask_acceptance_study(*g, {{g->vocab().at(")")}}, u, o));
}

TEST_CASE("sentence sampler respects the length bound") {
  auto g = grammar("json_schema_example");
  auto s = sample_sentences(*g, 5, 40, 3);
  for (const auto& x : s) {
    CHECK(is_valid(*g, x));
    CHECK(x.size() <= 40);
  }
  CHECK_THROWS(sample_sentences(*g, 1, 5, 3));
}
