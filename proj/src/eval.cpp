#include "gcdk/eval.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "gcdk/earley.hpp"

namespace gcdk {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Suites

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

std::vector<std::string> string_list(const ojson& j, const std::string& what) {
  if (!j.is_array()) throw std::runtime_error(what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw std::runtime_error(what + " must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

Suite Suite::parse(const std::string& text, const std::string& base_dir) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw std::runtime_error(std::string("suite: ") + e.what());
  }
  if (!j.is_object() || !j.contains("problems") || !j["problems"].is_array()) {
    throw std::runtime_error("suite: expected an object with a \"problems\" array");
  }
  Suite s;
  s.name = j.value("name", "");
  std::set<std::string> ids;
  for (const auto& pj : j["problems"]) {
    Problem p;
    if (!pj.contains("id") || !pj["id"].is_string()) throw std::runtime_error("suite: problem without a string id");
    p.id = pj["id"].get<std::string>();
    const std::string where = "suite problem '" + p.id + "'";
    if (!ids.insert(p.id).second) throw std::runtime_error(where + ": duplicate id");
    if (!pj.contains("grammar") || !pj["grammar"].is_string()) throw std::runtime_error(where + ": missing grammar");
    p.grammar = resolve(base_dir, pj["grammar"].get<std::string>());
    if (pj.contains("vocab")) p.vocab = resolve(base_dir, pj["vocab"].get<std::string>());
    if (pj.contains("prompt")) p.prompt = string_list(pj["prompt"], where + ": prompt");
    if (pj.contains("checker")) {
      const auto& cj = pj["checker"];
      auto type = cj.value("type", "validity");
      if (type == "validity") {
        p.checker.kind = CheckerSpec::Kind::kValidity;
      } else if (type == "exact") {
        p.checker.kind = CheckerSpec::Kind::kExact;
        if (!cj.contains("target")) throw std::runtime_error(where + ": exact checker needs a target");
        p.checker.target = string_list(cj["target"], where + ": target");
      } else if (type == "command") {
        p.checker.kind = CheckerSpec::Kind::kCommand;
        p.checker.command = cj.value("command", "");
        if (p.checker.command.empty()) throw std::runtime_error(where + ": command checker needs a command");
        p.checker.joiner = cj.value("joiner", " ");
      } else {
        throw std::runtime_error(where + ": unknown checker type '" + type + "'");
      }
    }
    s.problems.push_back(std::move(p));
  }
  return s;
}

Suite Suite::load(const std::string& path) {
  return parse(read_file(path), fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

std::string Suite::to_text() const {
  ojson j;
  j["name"] = name;
  j["problems"] = ojson::array();
  for (const auto& p : problems) {
    ojson pj;
    pj["id"] = p.id;
    pj["grammar"] = p.grammar;
    if (!p.vocab.empty()) pj["vocab"] = p.vocab;
    pj["prompt"] = p.prompt;
    ojson cj;
    switch (p.checker.kind) {
      case CheckerSpec::Kind::kValidity: cj["type"] = "validity"; break;
      case CheckerSpec::Kind::kExact:
        cj["type"] = "exact";
        cj["target"] = p.checker.target;
        break;
      case CheckerSpec::Kind::kCommand:
        cj["type"] = "command";
        cj["command"] = p.checker.command;
        cj["joiner"] = p.checker.joiner;
        break;
    }
    pj["checker"] = std::move(cj);
    j["problems"].push_back(std::move(pj));
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Checkers

CheckOutcome run_checker(const CheckerSpec& spec, const std::vector<std::string>& output, bool syntactic) {
  if (!syntactic) return {};
  switch (spec.kind) {
    case CheckerSpec::Kind::kValidity: return {true, {}};
    case CheckerSpec::Kind::kExact: return {output == spec.target, {}};
    case CheckerSpec::Kind::kCommand: break;
  }

  auto tmpl = (fs::temp_directory_path() / "gcdk_output_XXXXXX").string();
  std::vector<char> name(tmpl.begin(), tmpl.end());
  name.push_back('\0');
  int fd = ::mkstemp(name.data());
  if (fd < 0) return {false, "cannot create a temporary output file"};
  std::string path(name.data());
  std::string body;
  for (std::size_t i = 0; i < output.size(); ++i) {
    if (i > 0) body += spec.joiner;
    body += output[i];
  }
  body += '\n';
  bool wrote = ::write(fd, body.data(), body.size()) == static_cast<ssize_t>(body.size());
  ::close(fd);
  if (!wrote) {
    fs::remove(path);
    return {false, "cannot write " + path};
  }

  std::string cmd = spec.command;
  const std::string placeholder = "{output_file}";
  for (auto pos = cmd.find(placeholder); pos != std::string::npos; pos = cmd.find(placeholder, pos + path.size())) {
    cmd.replace(pos, placeholder.size(), path);
  }
  int status = std::system(cmd.c_str());
  fs::remove(path);
  if (status == -1) return {false, "cannot run checker command"};
  if (WIFEXITED(status)) {
    int code = WEXITSTATUS(status);
    if (code == 0) return {true, {}};
    if (code == 127) return {false, "checker command not found: " + spec.command};
    return {false, {}};
  }
  return {false, "checker terminated abnormally"};
}

// ---------------------------------------------------------------------------
// Metrics

double syntactic_at_k(const std::vector<std::vector<bool>>& flags, std::size_t k) {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (flags.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& f : flags) {
    if (f.size() < k) {
      throw InsufficientSamplesError("need " + std::to_string(k) + " samples per problem, found " +
                                     std::to_string(f.size()));
    }
    if (std::any_of(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(k), [](bool b) { return b; })) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(flags.size());
}

namespace {

std::vector<std::vector<bool>> group_flags(const std::vector<RunResult>& results, bool functional) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<std::size_t, bool>>> by_problem;
  for (const auto& r : results) {
    auto [it, inserted] = by_problem.try_emplace(r.problem_id);
    if (inserted) order.push_back(r.problem_id);
    it->second.emplace_back(r.sample, functional ? r.functional : r.syntactic);
  }
  std::vector<std::vector<bool>> out;
  for (const auto& id : order) {
    auto v = by_problem[id];
    std::sort(v.begin(), v.end());
    std::vector<bool> flags;
    for (const auto& [s, f] : v) flags.push_back(f);
    out.push_back(std::move(flags));
  }
  return out;
}

}  // namespace

double functional_at_k(const std::vector<RunResult>& results, std::size_t k) {
  return syntactic_at_k(group_flags(results, true), k);
}

double syntactic_at_k(const std::vector<RunResult>& results, std::size_t k) {
  return syntactic_at_k(group_flags(results, false), k);
}

// ---------------------------------------------------------------------------
// Reports

namespace {

ojson by_k(const std::map<std::size_t, double>& m) {
  ojson j = ojson::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<std::size_t, double> from_by_k(const ojson& j) {
  std::map<std::size_t, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoul(k)] = v.get<double>();
  return m;
}

}  // namespace

std::string Report::to_json() const {
  ojson j;
  ojson m;
  m["suite"] = meta.suite;
  m["denoiser"] = meta.denoiser;
  m["seed"] = meta.seed;
  m["samples"] = meta.samples;
  m["max_length"] = meta.max_length;
  m["denoise_steps"] = meta.denoise_steps;
  m["block_size"] = meta.block_size;
  m["lookahead"] = meta.lookahead;
  m["attempt_budget"] = meta.attempt_budget;
  m["temperature"] = meta.temperature;
  m["include_timing"] = meta.include_timing;
  j["meta"] = std::move(m);

  j["strategies"] = ojson::array();
  for (const auto& s : strategies) {
    ojson sj;
    sj["strategy"] = s.strategy;
    sj["syntactic"] = by_k(s.syntactic);
    sj["functional"] = by_k(s.functional);
    sj["avg_seconds"] = s.avg_seconds;
    sj["runs"] = s.runs;
    sj["truncated"] = s.truncated;
    sj["valid_when_complete"] = s.valid_when_complete;
    sj["errors"] = s.errors;
    j["strategies"].push_back(std::move(sj));
  }

  j["runs"] = ojson::array();
  for (const auto& r : runs) {
    ojson rj;
    rj["problem"] = r.problem_id;
    rj["strategy"] = r.strategy;
    rj["sample"] = r.sample;
    rj["seed"] = r.seed;
    rj["output"] = r.output;
    rj["syntactic"] = r.syntactic;
    rj["functional"] = r.functional;
    rj["seconds"] = r.wall_seconds;
    rj["rejections"] = r.rejections;
    rj["recoveries"] = r.recoveries;
    rj["truncated"] = r.truncated;
    rj["error"] = r.error;
    j["runs"].push_back(std::move(rj));
  }
  return j.dump(2) + "\n";
}

Report Report::from_json(const std::string& text) {
  auto j = ojson::parse(text);
  Report r;
  const auto& m = j.at("meta");
  r.meta.suite = m.at("suite").get<std::string>();
  r.meta.denoiser = m.at("denoiser").get<std::string>();
  r.meta.seed = m.at("seed").get<std::uint64_t>();
  r.meta.samples = m.at("samples").get<std::size_t>();
  r.meta.max_length = m.at("max_length").get<std::size_t>();
  r.meta.denoise_steps = m.at("denoise_steps").get<std::size_t>();
  r.meta.block_size = m.at("block_size").get<std::size_t>();
  r.meta.lookahead = m.at("lookahead").get<std::size_t>();
  r.meta.attempt_budget = m.at("attempt_budget").get<std::size_t>();
  r.meta.temperature = m.at("temperature").get<double>();
  r.meta.include_timing = m.at("include_timing").get<bool>();
  for (const auto& sj : j.at("strategies")) {
    StrategySummary s;
    s.strategy = sj.at("strategy").get<std::string>();
    s.syntactic = from_by_k(sj.at("syntactic"));
    s.functional = from_by_k(sj.at("functional"));
    s.avg_seconds = sj.at("avg_seconds").get<double>();
    s.runs = sj.at("runs").get<std::size_t>();
    s.truncated = sj.at("truncated").get<std::size_t>();
    s.valid_when_complete = sj.at("valid_when_complete").get<double>();
    s.errors = sj.at("errors").get<std::size_t>();
    r.strategies.push_back(std::move(s));
  }
  for (const auto& rj : j.at("runs")) {
    RunResult x;
    x.problem_id = rj.at("problem").get<std::string>();
    x.strategy = rj.at("strategy").get<std::string>();
    x.sample = rj.at("sample").get<std::size_t>();
    x.seed = rj.at("seed").get<std::uint64_t>();
    x.output = rj.at("output").get<std::vector<std::string>>();
    x.syntactic = rj.at("syntactic").get<bool>();
    x.functional = rj.at("functional").get<bool>();
    x.wall_seconds = rj.at("seconds").get<double>();
    x.rejections = rj.at("rejections").get<std::size_t>();
    x.recoveries = rj.at("recoveries").get<std::size_t>();
    x.truncated = rj.at("truncated").get<bool>();
    x.error = rj.at("error").get<std::string>();
    r.runs.push_back(std::move(x));
  }
  return r;
}

std::string Report::to_table() const {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"strategy", "metric"});
  for (auto k : report_ks()) rows[0].push_back("k=" + std::to_string(k));
  rows[0].push_back("time (s)");

  auto pct = [](const std::map<std::size_t, double>& m, std::size_t k) {
    auto it = m.find(k);
    if (it == m.end()) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << it->second;
    return os.str();
  };
  for (const auto& s : strategies) {
    std::ostringstream t;
    t << std::fixed << std::setprecision(2) << s.avg_seconds;
    for (const auto* metric : {"syntactic", "functional"}) {
      const auto& m = std::string(metric) == "syntactic" ? s.syntactic : s.functional;
      std::vector<std::string> row{s.strategy, metric};
      for (auto k : report_ks()) row.push_back(pct(m, k));
      row.push_back(t.str());
      rows.push_back(std::move(row));
    }
  }

  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      // Text columns left-aligned, numbers right-aligned.
      bool left = c < 2;
      std::string cell = row[c];
      std::string pad(width[c] - cell.size(), ' ');
      line += left ? cell + pad : pad + cell;
      if (c + 1 < row.size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

void write_report(const Report& r, const std::string& path) {
  auto write = [](const std::string& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report " + p);
    out << body;
    if (!out) throw std::runtime_error("error writing report " + p);
  };
  write(path, r.to_json());
  auto table = fs::path(path);
  table.replace_extension(".txt");
  write(table.string(), r.to_table());
}

Report read_report(const std::string& path) {
  try {
    return Report::from_json(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("report " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Benchmark

std::uint64_t run_seed(std::uint64_t suite_seed, const std::string& problem_id, Strategy s, std::size_t sample) {
  // FNV-1a keeps the id hash stable across platforms.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : problem_id) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return derive_seed({suite_seed, h, static_cast<std::uint64_t>(s), sample});
}

StrategySummary summarize(const std::string& strategy, const std::vector<RunResult>& runs, std::size_t samples) {
  StrategySummary s;
  s.strategy = strategy;
  s.runs = runs.size();
  double total = 0.0;
  std::size_t complete = 0, complete_valid = 0;
  for (const auto& r : runs) {
    total += r.wall_seconds;
    if (r.truncated) ++s.truncated;
    if (!r.error.empty()) ++s.errors;
    if (!r.truncated && r.error.empty()) {
      ++complete;
      if (r.syntactic) ++complete_valid;
    }
  }
  s.avg_seconds = runs.empty() ? 0.0 : total / static_cast<double>(runs.size());
  s.valid_when_complete =
      complete == 0 ? 100.0 : 100.0 * static_cast<double>(complete_valid) / static_cast<double>(complete);
  if (!runs.empty()) {
    for (auto k : report_ks()) {
      if (k > samples) continue;
      s.syntactic[k] = syntactic_at_k(runs, k);
      s.functional[k] = functional_at_k(runs, k);
    }
  }
  return s;
}

Report run_benchmark(const Suite& suite, const BenchOptions& opts, const DenoiserFactory& factory) {
  if (opts.samples < 1) throw std::invalid_argument("bench: samples must be at least 1");
  opts.config.validate();

  Report report;
  report.meta.suite = suite.name;
  report.meta.denoiser = opts.denoiser_name;
  report.meta.seed = opts.seed;
  report.meta.samples = opts.samples;
  report.meta.max_length = opts.config.max_length;
  report.meta.denoise_steps = opts.config.denoise_steps;
  report.meta.block_size = opts.config.block_size;
  report.meta.lookahead = opts.config.lookahead;
  report.meta.attempt_budget = opts.config.attempt_budget;
  report.meta.temperature = opts.config.temperature;
  report.meta.include_timing = opts.include_timing;
  if (opts.strategies.empty() || suite.problems.empty()) return report;

  struct Prepared {
    std::shared_ptr<const Grammar> grammar;
    std::shared_ptr<const Denoiser> denoiser;
    std::vector<TokenId> prompt;
    std::string error;
  };
  std::vector<Prepared> prepared(suite.problems.size());
  std::map<std::pair<std::string, std::string>, std::shared_ptr<const Grammar>> grammars;
  for (std::size_t i = 0; i < suite.problems.size(); ++i) {
    const auto& p = suite.problems[i];
    auto& pp = prepared[i];
    try {
      auto key = std::make_pair(p.grammar, p.vocab);
      auto it = grammars.find(key);
      if (it == grammars.end()) it = grammars.emplace(key, load_reduced_grammar(p.grammar, p.vocab)).first;
      pp.grammar = it->second;
      pp.prompt = pp.grammar->vocab().encode(p.prompt);
      pp.denoiser = factory(p, pp.grammar);
    } catch (const std::exception& e) {
      pp.error = e.what();
    }
  }

  struct Cell {
    std::size_t problem, strategy, sample;
  };
  std::vector<Cell> cells;
  for (std::size_t si = 0; si < opts.strategies.size(); ++si) {
    for (std::size_t pi = 0; pi < suite.problems.size(); ++pi) {
      for (std::size_t k = 0; k < opts.samples; ++k) cells.push_back({pi, si, k});
    }
  }
  std::vector<RunResult> results(cells.size());

  auto run_cell = [&](std::size_t idx) {
    const auto& c = cells[idx];
    const auto& p = suite.problems[c.problem];
    const auto& pp = prepared[c.problem];
    const auto strategy = opts.strategies[c.strategy];
    RunResult& r = results[idx];
    r.problem_id = p.id;
    r.strategy = to_string(strategy);
    r.sample = c.sample;
    r.seed = run_seed(opts.seed, p.id, strategy, c.sample);
    if (!pp.error.empty()) {
      r.error = pp.error;
      r.truncated = true;
      return;
    }
    auto cfg = opts.config;
    cfg.strategy = strategy;
    cfg.seed = r.seed;
    cfg.record_timing = false;
    try {
      auto t0 = std::chrono::steady_clock::now();
      auto res = decode(cfg, *pp.grammar, *pp.denoiser, pp.prompt);
      auto t1 = std::chrono::steady_clock::now();
      if (opts.include_timing) r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
      r.output = pp.grammar->vocab().decode(res.tokens);
      r.syntactic = is_valid(*pp.grammar, res.tokens);
      r.rejections = res.stats.rejected;
      r.recoveries = res.stats.recoveries;
      r.truncated = res.truncated;
      auto chk = run_checker(p.checker, r.output, r.syntactic);
      r.functional = chk.functional;
      r.error = chk.error;
    } catch (const std::exception& e) {
      r.error = e.what();
      r.syntactic = false;
      r.functional = false;
      r.truncated = true;
    }
  };

  std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, cells.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  for (std::size_t si = 0; si < opts.strategies.size(); ++si) {
    auto name = to_string(opts.strategies[si]);
    std::vector<RunResult> mine;
    for (const auto& r : results) {
      if (r.strategy == name) mine.push_back(r);
    }
    report.strategies.push_back(summarize(name, mine, opts.samples));
  }
  report.runs = std::move(results);
  return report;
}

// ---------------------------------------------------------------------------
// Feasibility study

StudyResult prefix_mask_acceptance_study(const Grammar& g, const std::vector<std::vector<TokenId>>& corpus,
                                         const Denoiser& d, const StudyOptions& opts) {
  if (corpus.empty()) throw std::invalid_argument("study: empty corpus");
  if (!(opts.retain_prob >= 0.0 && opts.retain_prob <= 1.0)) {
    throw std::invalid_argument("study: retain_prob must lie in [0, 1]");
  }
  for (const auto& s : corpus) {
    if (s.empty()) throw std::invalid_argument("study: corpus sentences must be non-empty");
    if (!is_valid(g, s)) throw std::invalid_argument("study: corpus sentence is not valid");
  }
  auto ns = opts.n_values;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  if (!ns.empty() && ns.front() == 0) throw std::invalid_argument("study: N must be at least 1");

  StudyResult res;
  for (auto n : ns) res.points.push_back({n, 0, 0});
  if (opts.exhaustive) res.points.push_back({0, 0, 0});

  for (std::size_t i = 0; i < opts.instances; ++i) {
    Rng rng(derive_seed({opts.seed, i, 0x696e7374ull}));
    const auto& sentence = corpus[rng.below(corpus.size())];
    std::size_t plen = 1 + rng.below(sentence.size());
    auto st = SequenceState::all_masked({}, sentence.size(), sentence.size());
    std::vector<std::size_t> masked;
    for (std::size_t j = 0; j < plen; ++j) {
      if (rng.bernoulli(opts.retain_prob)) {
        st.output[j] = Slot::token(sentence[j]);
      } else {
        masked.push_back(j);
      }
    }
    DistributionSet dists;
    if (!masked.empty()) {
      ForwardRequest req;
      req.state = &st;
      req.positions = masked;
      req.temperature = opts.temperature;
      req.seed = derive_seed({opts.seed, i});
      dists = d.forward(req);
    }
    std::span<const Slot> prefix(st.output.data(), plen);

    std::vector<bool> row;
    const auto verify_seed = derive_seed({opts.seed, i, 0x76657269ull});
    for (std::size_t j = 0; j < res.points.size(); ++j) {
      Rng vr(verify_seed);
      auto& pt = res.points[j];
      LookaheadConfig lc{pt.n == 0 ? 1 : pt.n, pt.n == 0};
      bool ok = lookahead_verify(prefix, dists, lc, g, vr).accepted;
      ++pt.total;
      if (ok) ++pt.accepted;
      row.push_back(ok);
    }
    // Sampled points are sorted by N; exhaustive (last, if present) dominates all.
    bool seen = false;
    for (bool ok : row) {
      if (seen && !ok) {
        ++res.monotonicity_violations;
        break;
      }
      seen = seen || ok;
    }
    res.accepted.push_back(std::move(row));
  }
  return res;
}

std::string StudyResult::to_text() const {
  std::ostringstream os;
  os << "N,accepted,total,rate\n";
  for (const auto& p : points) {
    os << (p.n == 0 ? std::string("exhaustive") : std::to_string(p.n)) << ',' << p.accepted << ',' << p.total << ','
       << std::fixed << std::setprecision(2) << p.rate() << '\n';
  }
  return os.str();
}

std::vector<std::vector<TokenId>> sample_sentences(const Grammar& g, std::size_t count, std::size_t max_len,
                                                   std::uint64_t seed) {
  std::vector<std::vector<TokenId>> out;
  Rng rng(derive_seed({seed, 0x73656e74ull}));
  const std::size_t budget = 1000 * (count + 1);
  for (std::size_t attempt = 0; attempt < budget && out.size() < count; ++attempt) {
    std::size_t target = 1 + rng.below(max_len);
    auto chart = init_chart(g);
    std::vector<TokenId> s;
    for (;;) {
      auto next = chart.next_tokens();
      if (chart.accepting() && (s.size() >= target || next.empty())) {
        if (!s.empty()) out.push_back(s);
        break;
      }
      if (next.empty() || s.size() >= max_len) break;
      auto t = next[rng.below(next.size())];
      chart.advance_in_place(t);
      s.push_back(t);
    }
  }
  if (out.size() < count) throw std::runtime_error("could not sample enough sentences within the length bound");
  return out;
}

}  // namespace gcdk
