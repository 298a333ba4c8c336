#include "gcdk/denoiser.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gcdk/earley.hpp"

namespace gcdk {

using ojson = nlohmann::ordered_json;

DistributionSet Denoiser::forward(const ForwardRequest& request) const {
  if (request.state == nullptr) throw std::invalid_argument("forward: no sequence state");
  if (!(request.temperature > 0.0)) throw std::invalid_argument("forward: temperature must be positive");
  if (request.positions.empty()) throw NoMaskedPositionsError("no masked positions");
  const auto& out = request.state->output;
  for (std::size_t i = 0; i < request.positions.size(); ++i) {
    auto pos = request.positions[i];
    if (pos >= out.size() || !out[pos].is_mask()) {
      throw NoMaskedPositionsError("position " + std::to_string(pos) + " is not masked");
    }
    if (i > 0 && request.positions[i - 1] >= pos) {
      throw std::invalid_argument("forward: positions must be strictly ascending");
    }
  }

  auto result = predict(request);

  if (result.size() != request.positions.size()) {
    throw DenoiserError(name() + ": returned " + std::to_string(result.size()) +
                        " distributions for " + std::to_string(request.positions.size()) +
                        " positions");
  }
  for (auto pos : request.positions) {
    auto it = result.find(pos);
    if (it == result.end()) {
      throw DenoiserError(name() + ": no distribution for position " + std::to_string(pos));
    }
    if (it->second.outcome_count() != outcome_count() || !it->second.well_formed()) {
      throw DenoiserError(name() + ": malformed distribution for position " + std::to_string(pos));
    }
  }
  return result;
}

DistributionSet UniformDenoiser::predict(const ForwardRequest& request) const {
  // Temperature leaves a uniform distribution unchanged.
  auto d = Distribution::uniform(outcomes_);
  DistributionSet out;
  for (auto pos : request.positions) out.emplace(pos, d);
  return out;
}

DistributionSet FixedDenoiser::predict(const ForwardRequest& request) const {
  auto d = dist_.with_temperature(request.temperature);
  DistributionSet out;
  for (auto pos : request.positions) out.emplace(pos, d);
  return out;
}

NoisyOracleDenoiser::NoisyOracleDenoiser(std::shared_ptr<const Grammar> grammar, double epsilon)
    : grammar_(std::move(grammar)), epsilon_(epsilon) {
  if (!grammar_) throw std::invalid_argument("noisy-oracle: null grammar");
  if (!grammar_->reduced()) throw std::invalid_argument("noisy-oracle: grammar must be reduced");
  if (!(epsilon_ >= 0.0 && epsilon_ <= 1.0)) {
    throw std::invalid_argument("noisy-oracle: epsilon must lie in [0, 1]");
  }
}

std::string NoisyOracleDenoiser::name() const {
  std::ostringstream os;
  os << "noisy-oracle:" << epsilon_;
  return os.str();
}

std::vector<TokenId> NoisyOracleDenoiser::admissible(const SequenceState& state) const {
  auto chart = init_chart(*grammar_);
  for (const auto& slot : state.output) {
    if (!slot.is_token() || !chart.admits(slot.value)) break;
    chart.advance_in_place(slot.value);
  }
  auto out = chart.next_tokens();
  if (chart.accepting()) out.push_back(kEosToken);
  return out;
}

DistributionSet NoisyOracleDenoiser::predict(const ForwardRequest& request) const {
  const auto outcomes = outcome_count();
  std::vector<double> probs(outcomes, epsilon_ / static_cast<double>(outcomes));
  auto allowed = admissible(*request.state);
  if (!allowed.empty()) {
    double share = (1.0 - epsilon_) / static_cast<double>(allowed.size());
    auto shape = Distribution::uniform(outcomes);
    for (auto tok : allowed) probs[shape.index_of(tok)] += share;
  }
  auto d = Distribution::from_dense(std::move(probs)).with_temperature(request.temperature);
  DistributionSet out;
  for (auto pos : request.positions) out.emplace(pos, d);
  return out;
}

std::unique_ptr<Denoiser> make_noisy_oracle(std::shared_ptr<const Grammar> grammar, double epsilon) {
  return std::make_unique<NoisyOracleDenoiser>(std::move(grammar), epsilon);
}

// ---------------------------------------------------------------------------
// Recordings

namespace {

ojson probs_json(const Distribution& d) {
  ojson arr = ojson::array();
  for (double p : d.probs()) arr.push_back(p);
  return arr;
}

Distribution probs_from_json(const ojson& j, std::size_t outcomes, const std::string& where) {
  if (!j.is_array()) throw std::runtime_error(where + ": probabilities must be an array");
  std::vector<double> probs;
  for (const auto& v : j) {
    if (!v.is_number()) throw std::runtime_error(where + ": probability is not a number");
    probs.push_back(v.get<double>());
  }
  if (probs.size() != outcomes) {
    throw std::runtime_error(where + ": expected " + std::to_string(outcomes) + " probabilities, got " +
                             std::to_string(probs.size()));
  }
  try {
    return Distribution::exact(std::move(probs));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

}  // namespace

std::string Recording::to_text() const {
  std::string out;
  for (const auto& rec : steps) {
    ojson j;
    j["step"] = rec.step;
    j["masked"] = rec.masked;
    ojson probs = ojson::object();
    for (const auto& [pos, d] : rec.probs) probs[std::to_string(pos)] = probs_json(d);
    j["probs"] = std::move(probs);
    if (rec.fallback) j["default"] = probs_json(*rec.fallback);
    out += j.dump();
    out += '\n';
  }
  return out;
}

Recording Recording::parse(const std::string& text, std::size_t outcomes) {
  Recording rec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "recording line " + std::to_string(lineno);
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::parse_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("step") || !j["step"].is_number_unsigned()) {
      throw std::runtime_error(where + ": missing non-negative integer \"step\"");
    }
    StepRecord step;
    step.step = j["step"].get<std::size_t>();
    if (j.contains("masked")) {
      if (!j["masked"].is_array()) throw std::runtime_error(where + ": \"masked\" must be an array");
      for (const auto& v : j["masked"]) {
        if (!v.is_number_unsigned()) throw std::runtime_error(where + ": bad masked position");
        step.masked.push_back(v.get<std::size_t>());
      }
    }
    if (j.contains("probs")) {
      if (!j["probs"].is_object()) throw std::runtime_error(where + ": \"probs\" must be an object");
      for (const auto& [key, val] : j["probs"].items()) {
        std::size_t pos = 0;
        try {
          std::size_t used = 0;
          pos = std::stoul(key, &used);
          if (used != key.size()) throw std::invalid_argument(key);
        } catch (const std::exception&) {
          throw std::runtime_error(where + ": bad position key \"" + key + "\"");
        }
        step.probs.emplace(pos, probs_from_json(val, outcomes, where));
      }
    }
    if (j.contains("default")) step.fallback = probs_from_json(j["default"], outcomes, where);
    rec.steps.push_back(std::move(step));
  }
  return rec;
}

Recording Recording::load(const std::string& path, std::size_t outcomes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open recording " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), outcomes);
}

void Recording::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write recording " + path);
  out << to_text();
}

ScriptedDenoiser::ScriptedDenoiser(Recording recording, std::size_t outcomes)
    : recording_(std::move(recording)), outcomes_(outcomes) {
  if (recording_.steps.empty()) throw std::invalid_argument("replay: empty recording");
  for (const auto& s : recording_.steps) {
    for (const auto& [pos, d] : s.probs) {
      if (d.outcome_count() != outcomes_) throw std::invalid_argument("replay: alphabet size mismatch");
    }
    if (s.fallback && s.fallback->outcome_count() != outcomes_) {
      throw std::invalid_argument("replay: alphabet size mismatch");
    }
  }
}

DistributionSet ScriptedDenoiser::predict(const ForwardRequest& request) const {
  const StepRecord* chosen = &recording_.steps.front();
  for (const auto& s : recording_.steps) {
    if (s.step == request.step) {
      chosen = &s;
      break;
    }
    if (s.step < request.step) chosen = &s;
  }
  DistributionSet out;
  for (auto pos : request.positions) {
    auto it = chosen->probs.find(pos);
    if (it != chosen->probs.end()) {
      out.emplace(pos, it->second);
    } else if (chosen->fallback) {
      out.emplace(pos, *chosen->fallback);
    } else {
      throw DenoiserError("replay: step " + std::to_string(chosen->step) +
                          " has no distribution for position " + std::to_string(pos));
    }
  }
  return out;
}

DistributionSet RecordingDenoiser::predict(const ForwardRequest& request) const {
  auto out = inner_.forward(request);
  StepRecord rec;
  rec.step = request.step;
  rec.masked = request.positions;
  rec.probs = out;
  std::lock_guard lock(mu_);
  recording_.steps.push_back(std::move(rec));
  return out;
}

Recording RecordingDenoiser::recording() const {
  std::lock_guard lock(mu_);
  return recording_;
}

}  // namespace gcdk
