// gcdk: grammar checks, constrained decodes, benchmark suites and the
// lookahead feasibility study from the command line.
//
// Exit codes: 0 success, 1 domain negative (dead prefix, invalid output),
// 2 usage or environment error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gcdk/bridge.hpp"
#include "gcdk/decode.hpp"
#include "gcdk/earley.hpp"
#include "gcdk/eval.hpp"

using namespace gcdk;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNegative = 1;
constexpr int kExitUsage = 2;

/// A failure the user has to fix (bad flag, missing file); exits with 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LogLevel { kQuiet, kInfo, kDebug };

LogLevel log_level() {
  const char* v = std::getenv("GCDK_LOG");
  if (v == nullptr) return LogLevel::kQuiet;
  std::string s(v);
  if (s.empty() || s == "0" || s == "quiet" || s == "off") return LogLevel::kQuiet;
  if (s == "1" || s == "info") return LogLevel::kInfo;
  if (s == "2" || s == "debug" || s == "trace") return LogLevel::kDebug;
  std::cerr << "gcdk: ignoring unknown GCDK_LOG value '" << s << "'\n";
  return LogLevel::kQuiet;
}

void info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[gcdk] " << msg << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_ws(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (const auto& a : args) {
    std::istringstream in(a);
    for (std::string t; in >> t;) out.push_back(t);
  }
  return out;
}

/// One token per line; lines are kept verbatim so tokens may contain spaces.
std::vector<std::string> read_token_file(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::shared_ptr<const Grammar> load(const std::string& grammar, const std::string& vocab) {
  if (grammar.empty()) throw UsageError("--grammar is required");
  try {
    return load_reduced_grammar(grammar, vocab);
  } catch (const std::exception& e) {
    throw UsageError(std::string("cannot load grammar ") + grammar + ": " + e.what());
  }
}

std::vector<TokenId> encode(const Grammar& g, const std::vector<std::string>& tokens) {
  try {
    return g.vocab().encode(tokens);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

/// Flags shared by decode, bench and the study. Unset values fall back to
/// the config file, then to built-in defaults.
struct CommonFlags {
  std::string grammar;
  std::string vocab;
  std::string config_file;
  std::string denoiser;
  std::vector<std::string> strategies;
  std::optional<std::size_t> max_length, steps, block_size, lookahead, budget;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
  bool exhaustive = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_grammar) {
  if (with_grammar) {
    cmd->add_option("--grammar", f.grammar, "grammar file")->required();
    cmd->add_option("--vocab", f.vocab, "vocabulary file (one token per line)");
  }
  cmd->add_option("--config", f.config_file, "JSON file with setting defaults");
  cmd->add_option("--denoiser", f.denoiser,
                  "uniform | noisy-oracle:EPS | replay:PATH | bridge:COMMAND (default noisy-oracle:0.3)");
  cmd->add_option("--strategy", f.strategies, "NO_CD | FS_CD | LAVE")->delimiter(',');
  cmd->add_option("-L,--max-length", f.max_length, "output length L");
  cmd->add_option("-T,--steps", f.steps, "denoising steps T");
  cmd->add_option("-B,--block-size", f.block_size, "block size B");
  cmd->add_option("-N,--lookahead", f.lookahead, "lookahead samples N");
  cmd->add_option("--budget", f.budget, "attempt budget tau");
  cmd->add_option("--temperature", f.temperature, "sampling temperature");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_flag("--exhaustive", f.exhaustive, "exhaustive lookahead instead of N samples");
}

/// Settings after defaults < config file < flags.
struct Settings {
  DecodeConfig config;
  std::vector<Strategy> strategies;
  std::string denoiser = "noisy-oracle:0.3";
  std::optional<double> temperature;
  nlohmann::json extra = nlohmann::json::object();
};

Settings resolve(const CommonFlags& f) {
  Settings s;
  std::vector<std::string> strategies;
  if (!f.config_file.empty()) {
    auto j = nlohmann::json::parse(read_file(f.config_file), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw UsageError(f.config_file + ": expected a JSON object");
    try {
      for (const auto& [key, val] : j.items()) {
        if (key == "max_length") {
          s.config.max_length = val.get<std::size_t>();
        } else if (key == "steps") {
          s.config.denoise_steps = val.get<std::size_t>();
        } else if (key == "block_size") {
          s.config.block_size = val.get<std::size_t>();
        } else if (key == "lookahead") {
          s.config.lookahead = val.get<std::size_t>();
        } else if (key == "budget") {
          s.config.attempt_budget = val.get<std::size_t>();
        } else if (key == "temperature") {
          s.temperature = val.get<double>();
        } else if (key == "seed") {
          s.config.seed = val.get<std::uint64_t>();
        } else if (key == "exhaustive") {
          s.config.exhaustive_lookahead = val.get<bool>();
        } else if (key == "denoiser") {
          s.denoiser = val.get<std::string>();
        } else if (key == "strategy") {
          strategies = val.is_array() ? val.get<std::vector<std::string>>()
                                      : std::vector<std::string>{val.get<std::string>()};
        } else if (key == "samples" || key == "jobs" || key == "retain" || key == "instances" ||
                   key == "n_values") {
          s.extra[key] = val;
        } else {
          throw UsageError(f.config_file + ": unknown setting '" + key + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(f.config_file + ": " + e.what());
    }
  }
  if (f.max_length) s.config.max_length = *f.max_length;
  if (f.steps) s.config.denoise_steps = *f.steps;
  if (f.block_size) s.config.block_size = *f.block_size;
  if (f.lookahead) s.config.lookahead = *f.lookahead;
  if (f.budget) s.config.attempt_budget = *f.budget;
  if (f.temperature) s.temperature = *f.temperature;
  if (f.seed) s.config.seed = *f.seed;
  if (f.exhaustive) s.config.exhaustive_lookahead = true;
  if (!f.denoiser.empty()) s.denoiser = f.denoiser;
  if (!f.strategies.empty()) strategies = f.strategies;
  if (s.temperature) s.config.temperature = *s.temperature;

  try {
    for (const auto& name : strategies) s.strategies.push_back(parse_strategy(name));
    s.config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

/// Builds the denoiser named by a selector for one grammar.
std::shared_ptr<const Denoiser> make_denoiser(const std::string& selector, const std::shared_ptr<const Grammar>& g) {
  auto colon = selector.find(':');
  std::string kind = selector.substr(0, colon);
  std::string arg = colon == std::string::npos ? "" : selector.substr(colon + 1);
  try {
    if (kind == "uniform" && arg.empty()) return std::make_shared<UniformDenoiser>(g->vocab().outcome_count());
    if (kind == "noisy-oracle") {
      std::size_t used = 0;
      double eps = std::stod(arg, &used);
      if (used != arg.size()) throw std::invalid_argument("bad epsilon");
      return make_noisy_oracle(g, eps);
    }
    if (kind == "replay" && !arg.empty()) {
      auto outcomes = g->vocab().outcome_count();
      return std::make_shared<ScriptedDenoiser>(Recording::load(arg, outcomes), outcomes);
    }
    if (kind == "bridge" && !arg.empty()) return std::make_shared<BridgeDenoiser>(arg, std::make_shared<Vocabulary>(g->vocab()));
  } catch (const BridgeError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError("denoiser '" + selector + "': " + e.what());
  }
  throw UsageError("unknown denoiser '" + selector + "' (uniform | noisy-oracle:EPS | replay:PATH | bridge:COMMAND)");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string grammar, vocab, tokens_file;
  std::vector<std::string> tokens;
};

std::vector<TokenId> check_input(const CheckArgs& a, const Grammar& g) {
  return encode(g, a.tokens_file.empty() ? split_ws(a.tokens) : read_token_file(a.tokens_file));
}

int cmd_check(const CheckArgs& a) {
  auto g = load(a.grammar, a.vocab);
  auto toks = check_input(a, *g);
  if (is_valid(*g, toks)) {
    std::cout << "valid\n";
    return kExitOk;
  }
  if (is_extendable(*g, toks)) {
    std::cout << "extendable\n";
    return kExitOk;
  }
  std::cout << "dead\n";
  return kExitNegative;
}

int cmd_next_tokens(const CheckArgs& a) {
  auto g = load(a.grammar, a.vocab);
  auto toks = check_input(a, *g);
  if (!is_extendable(*g, toks)) {
    std::cout << "dead\n";
    return kExitNegative;
  }
  for (TokenId t : next_tokens(*g, toks)) std::cout << g->vocab().token(t) << '\n';
  if (is_valid(*g, toks)) std::cout << g->vocab().eos_marker() << '\n';
  return kExitOk;
}

struct DecodeArgs {
  CommonFlags common;
  std::string prompt, prompt_file, out, trace, record;
};

int cmd_decode(const DecodeArgs& a) {
  auto s = resolve(a.common);
  if (s.strategies.size() > 1) throw UsageError("decode takes a single --strategy");
  auto g = load(a.common.grammar, a.common.vocab);
  auto prompt = encode(*g, a.prompt_file.empty() ? split_ws({a.prompt}) : read_token_file(a.prompt_file));
  auto denoiser = make_denoiser(s.denoiser, g);
  auto cfg = s.config;
  if (!s.strategies.empty()) cfg.strategy = s.strategies.front();

  info("decode " + to_string(cfg.strategy) + " with " + denoiser->name() + " (L=" + std::to_string(cfg.max_length) +
       ", T=" + std::to_string(cfg.denoise_steps) + ", B=" + std::to_string(cfg.block_size) + ")");
  std::optional<RecordingDenoiser> recorder;
  if (!a.record.empty()) recorder.emplace(*denoiser);
  const Denoiser& used = recorder ? static_cast<const Denoiser&>(*recorder) : *denoiser;

  auto t0 = std::chrono::steady_clock::now();
  auto res = decode(cfg, *g, used, prompt);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto trace_text = trace_to_text(res.trace, g->vocab());
  if (log_level() >= LogLevel::kDebug) std::cerr << trace_text;
  if (!a.trace.empty()) write_text(a.trace, trace_text);
  if (recorder) recorder->recording().save(a.record);
  auto words = g->vocab().decode(res.tokens);
  if (!a.out.empty()) {
    std::string text;
    for (const auto& w : words) text += w + "\n";
    write_text(a.out, text);
  }

  const bool valid = is_valid(*g, res.tokens);
  std::string joined;
  for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
  std::ostringstream time;
  time.setf(std::ios::fixed);
  time.precision(3);
  time << secs;
  std::cout << "output: " << joined << '\n'
            << "strategy: " << to_string(cfg.strategy) << '\n'
            << "valid: " << (valid ? "yes" : "no") << '\n'
            << "rejections: " << res.stats.rejected << '\n'
            << "recoveries: " << res.stats.recoveries << '\n'
            << "truncated: " << (res.truncated ? "yes" : "no") << '\n'
            << "time: " << time.str() << " s\n";
  return valid ? kExitOk : kExitNegative;
}

struct BenchArgs {
  CommonFlags common;
  std::string suite, out;
  std::optional<std::size_t> samples, jobs;
  std::size_t k = 10;
  bool timing = false;
};

int cmd_bench(const BenchArgs& a) {
  auto s = resolve(a.common);
  if (a.suite.empty()) throw UsageError("--suite is required");
  Suite suite;
  try {
    suite = Suite::load(a.suite);
  } catch (const std::exception& e) {
    throw UsageError(std::string("cannot load suite ") + a.suite + ": " + e.what());
  }
  if (a.k < 1) throw UsageError("--k must be at least 1");

  BenchOptions opts;
  opts.config = s.config;
  if (!s.strategies.empty()) opts.strategies = s.strategies;
  opts.seed = s.config.seed;
  opts.samples = a.samples.value_or(s.extra.value("samples", std::size_t{1}));
  opts.jobs = a.jobs.value_or(s.extra.value("jobs", std::size_t{1}));
  opts.include_timing = a.timing;
  opts.denoiser_name = s.denoiser;
  if (opts.samples < 1) throw UsageError("--samples must be at least 1");
  if (opts.jobs < 1) throw UsageError("--jobs must be at least 1");

  // Probe the selector once so a typo is a usage error, not 50 failed runs.
  if (s.denoiser.rfind("bridge:", 0) != 0 && !suite.problems.empty()) {
    try {
      auto g = load_reduced_grammar(suite.problems.front().grammar, suite.problems.front().vocab);
      make_denoiser(s.denoiser, g);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception&) {
      // Grammar problems are reported per run by the harness.
    }
  }

  info("bench " + suite.name + ": " + std::to_string(suite.problems.size()) + " problems, " +
       std::to_string(opts.samples) + " samples, " + std::to_string(opts.jobs) + " jobs");
  DenoiserFactory factory = [&](const Problem&, const std::shared_ptr<const Grammar>& g) {
    return make_denoiser(s.denoiser, g);
  };
  auto report = run_benchmark(suite, opts, factory);
  for (auto& st : report.strategies) {
    std::erase_if(st.syntactic, [&](const auto& kv) { return kv.first > a.k; });
    std::erase_if(st.functional, [&](const auto& kv) { return kv.first > a.k; });
  }
  if (!a.out.empty()) write_report(report, a.out);
  std::cout << report.to_table();
  return kExitOk;
}

struct StudyArgs {
  CommonFlags common;
  std::string corpus, out;
  std::optional<double> retain;
  std::vector<std::size_t> n_values;
  std::optional<std::size_t> instances;
  std::size_t corpus_size = 100;
  std::size_t sentence_length = 24;
};

int cmd_study(const StudyArgs& a) {
  auto s = resolve(a.common);
  auto g = load(a.common.grammar, a.common.vocab);
  auto denoiser = make_denoiser(s.denoiser, g);

  StudyOptions o;
  o.retain_prob = a.retain.value_or(s.extra.value("retain", 0.8));
  o.n_values = !a.n_values.empty() ? a.n_values
                                   : s.extra.value("n_values", std::vector<std::size_t>{3, 5, 10, 20, 30, 40});
  o.instances = a.instances.value_or(s.extra.value("instances", std::size_t{200}));
  o.exhaustive = s.config.exhaustive_lookahead;
  o.temperature = s.temperature.value_or(1.0);
  o.seed = s.config.seed;
  if (!(o.retain_prob >= 0.0 && o.retain_prob <= 1.0)) throw UsageError("--retain must lie in [0, 1]");
  if (o.temperature <= 0.0) throw UsageError("--temperature must be positive");
  for (auto n : o.n_values) {
    if (n < 1) throw UsageError("--n-values entries must be at least 1");
  }

  std::vector<std::vector<TokenId>> corpus;
  if (!a.corpus.empty()) {
    std::istringstream in(read_file(a.corpus));
    for (std::string line; std::getline(in, line);) {
      auto toks = split_ws({line});
      if (!toks.empty()) corpus.push_back(encode(*g, toks));
    }
  } else {
    corpus = sample_sentences(*g, a.corpus_size, a.sentence_length, o.seed);
  }
  info("study over " + std::to_string(corpus.size()) + " sentences, " + std::to_string(o.instances) + " instances");
  StudyResult r;
  try {
    r = prefix_mask_acceptance_study(*g, corpus, *denoiser, o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.out.empty()) {
    std::cout << r.to_text();
  } else {
    write_text(a.out, r.to_text());
  }
  std::cerr << "monotonicity violations: " << r.monotonicity_violations << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grammar-constrained decoding for masked diffusion generators"};
  app.require_subcommand(1);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "classify a token string as valid, extendable or dead");
  c->add_option("--grammar", check.grammar, "grammar file")->required();
  c->add_option("--vocab", check.vocab, "vocabulary file");
  c->add_option("tokens", check.tokens, "whitespace-separated tokens");
  c->add_option("--tokens-file", check.tokens_file, "one token per line");

  CheckArgs next;
  auto* n = app.add_subcommand("next-tokens", "list the tokens that keep a prefix extendable");
  n->add_option("--grammar", next.grammar, "grammar file")->required();
  n->add_option("--vocab", next.vocab, "vocabulary file");
  n->add_option("tokens", next.tokens, "whitespace-separated prefix tokens");
  n->add_option("--tokens-file", next.tokens_file, "one token per line");

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "run one decode and write its output and trace");
  add_common(d, dec.common, true);
  d->add_option("--prompt", dec.prompt, "whitespace-separated prompt tokens");
  d->add_option("--prompt-file", dec.prompt_file, "prompt, one token per line");
  d->add_option("--out", dec.out, "write output tokens, one per line");
  d->add_option("--trace", dec.trace, "write the decode trace (JSON lines)");
  d->add_option("--record", dec.record, "record denoiser calls for later replay");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "run strategies over a problem suite");
  add_common(b, bench.common, false);
  b->add_option("--suite", bench.suite, "suite file")->required();
  b->add_option("--samples", bench.samples, "independent runs per problem and strategy");
  b->add_option("--k", bench.k, "largest k reported (of 1, 3, 5, 10)");
  b->add_option("--jobs", bench.jobs, "worker threads");
  b->add_option("--out", bench.out, "report path (.json, plus a .txt table)");
  b->add_flag("--timing", bench.timing, "record wall time per run");

  StudyArgs study;
  auto* st = app.add_subcommand("lookahead-study", "acceptance rate of lookahead verification against N");
  add_common(st, study.common, true);
  st->add_option("--corpus", study.corpus, "sentences, one per line (default: sampled from the grammar)");
  st->add_option("--corpus-size", study.corpus_size, "sampled sentences when no corpus is given");
  st->add_option("--sentence-length", study.sentence_length, "maximum sampled sentence length");
  st->add_option("--retain", study.retain, "probability of keeping each prefix token unmasked");
  st->add_option("--n-values", study.n_values, "lookahead sizes to sweep")->delimiter(',');
  st->add_option("--instances", study.instances, "masked prefixes to test");
  st->add_option("--out", study.out, "CSV path (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c->parsed()) return cmd_check(check);
    if (n->parsed()) return cmd_next_tokens(next);
    if (d->parsed()) return cmd_decode(dec);
    if (b->parsed()) return cmd_bench(bench);
    if (st->parsed()) return cmd_study(study);
  } catch (const UsageError& e) {
    std::cerr << "gcdk: " << e.what() << '\n';
    return kExitUsage;
  } catch (const BridgeError& e) {
    std::cerr << "gcdk: bridge: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "gcdk: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
