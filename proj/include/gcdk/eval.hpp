#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcdk/decode.hpp"
#include "gcdk/denoiser.hpp"
#include "gcdk/grammar.hpp"

namespace gcdk {

struct CheckerSpec {
  enum class Kind { kValidity, kExact, kCommand };
  Kind kind = Kind::kValidity;
  /// kExact: expected tokens (EOS stripped).
  std::vector<std::string> target;
  /// kCommand: shell command; "{output_file}" is replaced by a file holding
  /// the output tokens joined by `joiner`. Exit status 0 passes.
  std::string command;
  std::string joiner = " ";

  friend bool operator==(const CheckerSpec&, const CheckerSpec&) = default;
};

struct Problem {
  std::string id;
  std::vector<std::string> prompt;
  /// Grammar file; relative paths resolve against the suite file's directory.
  std::string grammar;
  /// Optional vocabulary file; defaults to the grammar's sibling .vocab.
  std::string vocab;
  CheckerSpec checker;

  friend bool operator==(const Problem&, const Problem&) = default;
};

/// A list of problems, stored as JSON:
///   {"name": "...", "problems": [{"id": "p1", "grammar": "brackets.gram",
///     "prompt": [], "checker": {"type": "validity" | "exact" | "command", ...}}]}
struct Suite {
  std::string name;
  std::vector<Problem> problems;

  static Suite parse(const std::string& text, const std::string& base_dir = ".");
  static Suite load(const std::string& path);
  std::string to_text() const;
};

struct CheckOutcome {
  bool functional = false;
  std::string error;
};

/// Runs the checker. Only syntactically valid outputs reach a checker;
/// invalid ones fail without invoking it.
CheckOutcome run_checker(const CheckerSpec& spec, const std::vector<std::string>& output, bool syntactic);

struct RunResult {
  std::string problem_id;
  std::string strategy;
  std::size_t sample = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> output;
  bool syntactic = false;
  bool functional = false;
  double wall_seconds = 0.0;
  std::size_t rejections = 0;
  std::size_t recoveries = 0;
  bool truncated = false;
  std::string error;

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

class InsufficientSamplesError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Percentage of problems with a true flag among their first k samples.
double syntactic_at_k(const std::vector<std::vector<bool>>& flags, std::size_t k);
/// Same aggregation over RunResult::functional; problems in first-seen order,
/// samples ordered by sample index.
double functional_at_k(const std::vector<RunResult>& results, std::size_t k);
double syntactic_at_k(const std::vector<RunResult>& results, std::size_t k);

inline const std::vector<std::size_t>& report_ks() {
  static const std::vector<std::size_t> ks{1, 3, 5, 10};
  return ks;
}

struct StrategySummary {
  std::string strategy;
  std::map<std::size_t, double> syntactic;
  std::map<std::size_t, double> functional;
  double avg_seconds = 0.0;
  std::size_t runs = 0;
  std::size_t truncated = 0;
  /// Valid outputs among non-truncated runs, as a percentage (100 when none).
  double valid_when_complete = 100.0;
  std::size_t errors = 0;

  friend bool operator==(const StrategySummary&, const StrategySummary&) = default;
};

struct ReportMeta {
  std::string suite;
  std::string denoiser;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::size_t max_length = 0;
  std::size_t denoise_steps = 0;
  std::size_t block_size = 0;
  std::size_t lookahead = 0;
  std::size_t attempt_budget = 0;
  double temperature = 0.0;
  bool include_timing = false;

  friend bool operator==(const ReportMeta&, const ReportMeta&) = default;
};

struct Report {
  ReportMeta meta;
  std::vector<StrategySummary> strategies;
  std::vector<RunResult> runs;

  std::string to_json() const;
  static Report from_json(const std::string& text);
  /// Aligned table: strategy, metric, k=1, k=3, k=5, k=10, time (s).
  std::string to_table() const;

  friend bool operator==(const Report&, const Report&) = default;
};

/// Writes `<path>` (JSON) and `<path minus .json>.txt` (table).
void write_report(const Report& r, const std::string& path);
Report read_report(const std::string& path);

/// Builds the denoiser used for one problem.
using DenoiserFactory =
    std::function<std::shared_ptr<const Denoiser>(const Problem&, const std::shared_ptr<const Grammar>&)>;

struct BenchOptions {
  std::vector<Strategy> strategies{Strategy::kNoCd, Strategy::kFsCd, Strategy::kLave};
  /// Decode settings; strategy and seed are overridden per run.
  DecodeConfig config;
  std::size_t samples = 1;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool include_timing = false;
  std::string denoiser_name;
};

/// Seed for one (problem, strategy, sample) cell.
std::uint64_t run_seed(std::uint64_t suite_seed, const std::string& problem_id, Strategy s, std::size_t sample);

/// Decodes `samples` outputs per (problem, strategy). Failures are recorded
/// on the run and never abort the suite. Results do not depend on `jobs`.
Report run_benchmark(const Suite& suite, const BenchOptions& opts, const DenoiserFactory& factory);

/// Summaries recomputed from runs (used by run_benchmark and for checks).
StrategySummary summarize(const std::string& strategy, const std::vector<RunResult>& runs, std::size_t samples);

// ---------------------------------------------------------------------------
// Feasibility study

struct StudyOptions {
  double retain_prob = 0.8;
  std::vector<std::size_t> n_values{1, 2, 4, 8, 10, 16, 32};
  /// Also run exhaustive lookahead (reported as N = 0).
  bool exhaustive = true;
  std::size_t instances = 200;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct StudyPoint {
  /// 0 stands for exhaustive enumeration.
  std::size_t n = 0;
  std::size_t accepted = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 100.0 : 100.0 * static_cast<double>(accepted) / static_cast<double>(total); }
};

struct StudyResult {
  std::vector<StudyPoint> points;
  /// accepted[i][j]: instance i at points[j].
  std::vector<std::vector<bool>> accepted;
  /// Instances whose acceptance ever went from true to false as N grew.
  std::size_t monotonicity_violations = 0;
  std::string to_text() const;
};

/// Masks random prefixes of corpus sentences (each token kept with
/// `retain_prob`), queries the denoiser once per instance and records
/// whether lookahead with N samples accepts. The same random stream is used
/// for every N of an instance.
StudyResult prefix_mask_acceptance_study(const Grammar& g, const std::vector<std::vector<TokenId>>& corpus,
                                         const Denoiser& d, const StudyOptions& opts);

/// Random sentences of length <= max_len, by a random walk over next_tokens.
/// Throws if no sentence is found within the attempt budget.
std::vector<std::vector<TokenId>> sample_sentences(const Grammar& g, std::size_t count, std::size_t max_len,
                                                   std::uint64_t seed);

}  // namespace gcdk
