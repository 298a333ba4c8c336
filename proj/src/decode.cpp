#include "gcdk/decode.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <set>

#include <json.hpp>

namespace gcdk {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kNoCd: return "NO-CD";
    case Strategy::kFsCd: return "FS-CD";
    case Strategy::kLave: return "LAVE";
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  std::string k;
  for (char c : text) k += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (k == "lave") return Strategy::kLave;
  if (k == "fs-cd" || k == "fscd") return Strategy::kFsCd;
  if (k == "no-cd" || k == "nocd") return Strategy::kNoCd;
  throw std::invalid_argument("unknown strategy '" + text + "' (expected lave, fs-cd or no-cd)");
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kAccepted: return "accepted";
    case Verdict::kRejected: return "rejected";
    case Verdict::kRecovery: return "recovery";
    case Verdict::kUnverified: return "unmasked-unverified";
  }
  return "?";
}

void DecodeConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("decode config: " + m); };
  if (max_length < 1) fail("max_length must be at least 1");
  if (denoise_steps < 1 || denoise_steps > max_length) fail("denoise_steps must lie in [1, max_length]");
  if (block_size < 1 || block_size > max_length) fail("block_size must lie in [1, max_length]");
  if (lookahead < 1) fail("lookahead must be at least 1");
  if (attempt_budget < 1) fail("attempt_budget must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
}

std::size_t DecodeConfig::steps_per_block() const {
  auto s = (denoise_steps * block_size + max_length - 1) / max_length;
  return std::max<std::size_t>(1, s);
}

// ---------------------------------------------------------------------------

std::size_t rightmost_nonmask(std::span<const Slot> y) {
  for (std::size_t i = y.size(); i > 0; --i) {
    if (!y[i - 1].is_mask()) return i;
  }
  return 0;
}

std::vector<std::size_t> masked_positions(std::span<const Slot> y) {
  std::vector<std::size_t> out;
  auto r = rightmost_nonmask(y);
  for (std::size_t i = 0; i < r; ++i) {
    if (y[i].is_mask()) out.push_back(i);
  }
  return out;
}

std::vector<TokenId> fill(std::span<const Slot> prefix, const std::map<std::size_t, TokenId>& assignment) {
  auto masks = masked_positions(prefix);
  if (masks.size() != assignment.size() ||
      !std::equal(masks.begin(), masks.end(), assignment.begin(),
                  [](std::size_t m, const auto& kv) { return m == kv.first; })) {
    throw FillError("fill: assignment keys do not match the masked positions");
  }
  auto r = rightmost_nonmask(prefix);
  std::vector<TokenId> out;
  out.reserve(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto& s = prefix[i];
    if (s.is_eos()) throw FillError("fill: prefix contains EOS");
    if (s.is_mask()) {
      auto t = assignment.at(i);
      if (t < 0) throw FillError("fill: assignment must use alphabet tokens");
      out.push_back(t);
    } else {
      out.push_back(s.value);
    }
  }
  return out;
}

Slots eos_fill(Slots y) {
  auto it = std::find_if(y.begin(), y.end(), [](const Slot& s) { return s.is_eos(); });
  if (it != y.end()) std::fill(it, y.end(), Slot::eos());
  return y;
}

std::vector<std::size_t> select_unmask_positions(const DistributionSet& dists,
                                                 std::span<const std::size_t> candidates,
                                                 std::size_t quota) {
  if (quota < 1) throw std::invalid_argument("select_unmask_positions: quota must be at least 1");
  std::vector<std::pair<double, std::size_t>> ranked;
  for (auto pos : candidates) {
    auto it = dists.find(pos);
    if (it == dists.end()) throw std::invalid_argument("select_unmask_positions: no distribution for a candidate");
    ranked.emplace_back(it->second.max_prob(), pos);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ranked.size() && i < quota; ++i) out.push_back(ranked[i].second);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

/// Fixed tokens between consecutive masks of a prefix.
struct PrefixLayout {
  std::size_t r = 0;
  std::size_t lead = 0;  // first mask, or r
  std::vector<std::size_t> masks;
  std::vector<std::vector<TokenId>> segments;  // tokens after mask i, up to the next mask or r
};

PrefixLayout layout_of(std::span<const Slot> y) {
  PrefixLayout l;
  l.r = rightmost_nonmask(y);
  for (std::size_t i = 0; i < l.r; ++i) {
    if (y[i].is_eos()) throw std::invalid_argument("lookahead_verify: prefix contains EOS");
  }
  l.masks = masked_positions(y);
  l.lead = l.masks.empty() ? l.r : l.masks.front();
  for (std::size_t i = 0; i < l.masks.size(); ++i) {
    auto end = i + 1 < l.masks.size() ? l.masks[i + 1] : l.r;
    std::vector<TokenId> seg;
    for (auto j = l.masks[i] + 1; j < end; ++j) seg.push_back(y[j].value);
    l.segments.push_back(std::move(seg));
  }
  return l;
}

std::vector<TokenId> materialize(std::span<const Slot> y, const PrefixLayout& l, const std::vector<TokenId>& z) {
  std::vector<TokenId> out;
  out.reserve(l.r);
  std::size_t k = 0;
  for (std::size_t i = 0; i < l.r; ++i) {
    if (y[i].is_mask()) {
      out.push_back(z[k++]);
    } else {
      out.push_back(y[i].value);
    }
  }
  return out;
}

bool exhaustive_search(const PrefixLayout& l, std::size_t i, const ChartState& chart,
                       std::vector<TokenId>& z, std::size_t& leaves) {
  for (auto t : chart.next_tokens()) {
    auto next = chart.advance(t);
    next.advance_all(l.segments[i]);
    if (i + 1 == l.masks.size()) ++leaves;
    if (next.dead()) continue;
    z[i] = t;
    if (i + 1 == l.masks.size()) return true;
    if (exhaustive_search(l, i + 1, next, z, leaves)) return true;
  }
  return false;
}

}  // namespace

VerificationResult lookahead_verify(std::span<const Slot> y, const DistributionSet& dists,
                                    const LookaheadConfig& cfg, const Grammar& g, Rng& rng,
                                    PrefixChart base) {
  if (cfg.samples < 1) throw std::invalid_argument("lookahead_verify: need at least one sample");
  auto l = layout_of(y);

  ChartState start = (base.chart != nullptr && base.length <= l.lead) ? *base.chart : init_chart(g);
  std::size_t from = (base.chart != nullptr && base.length <= l.lead) ? base.length : 0;
  for (auto i = from; i < l.lead && !start.dead(); ++i) start.advance_in_place(y[i].value);

  VerificationResult res;
  if (l.masks.empty()) {
    res.samples_used = 1;
    res.accepted = start.extendable();
    if (res.accepted) res.witness = materialize(y, l, {});
    return res;
  }
  if (start.dead()) {
    // Every fill shares the dead leading run.
    res.samples_used = cfg.exhaustive ? 0 : 1;
    return res;
  }

  const std::size_t k = l.masks.size();
  std::vector<TokenId> z(k, 0);

  if (cfg.exhaustive) {
    std::size_t leaves = 0;
    res.accepted = exhaustive_search(l, 0, start, z, leaves);
    res.samples_used = leaves;
    if (res.accepted) res.witness = materialize(y, l, z);
    return res;
  }

  // Proposal distributions restricted to the alphabet.
  const std::size_t alphabet = g.vocab().size();
  std::vector<Distribution> per_mask;
  double joint = 1.0;
  for (auto pos : l.masks) {
    auto it = dists.find(pos);
    if (it == dists.end()) {
      throw std::invalid_argument("lookahead_verify: no distribution for masked position " + std::to_string(pos));
    }
    std::vector<TokenId> sigma(alphabet);
    for (std::size_t t = 0; t < alphabet; ++t) sigma[t] = static_cast<TokenId>(t);
    auto d = it->second.restricted_to(sigma);
    if (!d) {
      std::vector<double> u(alphabet + 1, 1.0);
      u.back() = 0.0;
      d = Distribution::from_dense(std::move(u));
    }
    joint *= static_cast<double>(d->support().size());
    per_mask.push_back(std::move(*d));
  }

  const std::size_t cap = 16 * cfg.samples + 64;
  std::set<std::vector<TokenId>> seen;
  // checkpoints[i]: chart after mask i and its following segment, for `prev`.
  std::vector<ChartState> checkpoints;
  checkpoints.reserve(k);
  std::vector<TokenId> prev;

  for (std::size_t attempt = 0; attempt < cap && res.samples_used < cfg.samples &&
                                static_cast<double>(res.samples_used) < joint;
       ++attempt) {
    for (std::size_t i = 0; i < k; ++i) z[i] = *sample_token(per_mask[i], {}, rng);
    if (!seen.insert(z).second) continue;
    ++res.samples_used;

    std::size_t keep = 0;
    while (keep < checkpoints.size() && keep < prev.size() && prev[keep] == z[keep]) ++keep;
    checkpoints.resize(keep, start);
    prev = z;
    bool alive = keep == 0 || checkpoints.back().extendable();
    for (std::size_t i = keep; alive && i < k; ++i) {
      auto next = (i == 0 ? start : checkpoints.back()).advance(z[i]);
      next.advance_all(l.segments[i]);
      alive = next.extendable();
      checkpoints.push_back(std::move(next));
    }
    if (alive && checkpoints.size() == k) {
      res.accepted = true;
      res.witness = materialize(y, l, z);
      return res;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

RecoveryOutcome recover(const Slots& y, const std::vector<TokenId>& cache, const Grammar& g,
                        const DistributionSet& dists, Rng& rng) {
  RecoveryOutcome out;
  out.output = y;
  out.cache = cache;
  out.info.cache_length = cache.size();
  out.info.prefix_length = rightmost_nonmask(y);
  if (cache.size() > y.size()) throw RecoveryError("recover: cache longer than the output");

  auto chart = init_chart(g);
  chart.advance_all(cache);
  if (chart.dead()) throw RecoveryError("recover: cache is not extendable");

  const auto r = out.info.prefix_length;
  bool identical = r == cache.size();
  for (std::size_t i = 0; identical && i < r; ++i) identical = y[i].is_token() && y[i].value == cache[i];

  if (!identical) {
    for (std::size_t i = 0; i < std::max(r, cache.size()); ++i) {
      Slot s = i < cache.size() ? Slot::token(cache[i]) : Slot::mask();
      if (!(out.output[i] == s)) {
        out.output[i] = s;
        ++out.info.replaced;
      }
    }
    return out;
  }

  const auto pos = cache.size();
  if (pos >= y.size()) throw RecoveryError("recover: no position left after the cache");
  out.info.appended = true;
  out.info.admissible = chart.next_tokens();
  if (out.info.admissible.empty()) {
    if (!chart.accepting()) throw RecoveryError("recover: cache admits no continuation and is not a sentence");
    out.output[pos] = Slot::eos();
    out.placed = pos;
    out.token = kEosToken;
    out.info.adjusted_support = {kEosToken};
    return out;
  }

  std::optional<Distribution> adjusted;
  if (auto it = dists.find(pos); it != dists.end()) adjusted = it->second.restricted_to(out.info.admissible);
  if (!adjusted && chart.accepting()) {
    // The model backs no admissible continuation and the cache is already a
    // sentence: end here.
    out.output[pos] = Slot::eos();
    out.placed = pos;
    out.token = kEosToken;
    out.info.eos_fallback = true;
    out.info.adjusted_support = {kEosToken};
    return out;
  }
  if (!adjusted) {
    std::vector<double> u(g.vocab().outcome_count(), 0.0);
    for (auto t : out.info.admissible) u[static_cast<std::size_t>(t)] = 1.0;
    adjusted = Distribution::from_dense(std::move(u));
    out.info.uniform_fallback = true;
  }
  out.info.adjusted_support = adjusted->support();
  auto t = *sample_token(*adjusted, {}, rng);
  out.output[pos] = Slot::token(t);
  out.cache.push_back(t);
  out.placed = pos;
  out.token = t;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Engine {
 public:
  Engine(const DecodeConfig& cfg, const Grammar& g, const Denoiser& d, const std::vector<TokenId>& prompt)
      : cfg_(cfg),
        g_(g),
        denoiser_(d),
        st_(SequenceState::all_masked(prompt, cfg.max_length, cfg.block_size)),
        rng_(derive_seed({cfg.seed, 0x70726f706f7365ull})),
        lead_chart_(init_chart(g)),
        start_(std::chrono::steady_clock::now()) {}

  DecodeResult run() {
    if (cfg_.strategy == Strategy::kFsCd) {
      run_left_to_right();
    } else {
      run_blocks();
    }
    DecodeResult res;
    res.final_output = st_.output;
    for (const auto& s : st_.output) {
      if (s.is_eos()) {
        res.ended_with_eos = true;
        break;
      }
      if (s.is_token()) res.tokens.push_back(s.value);
    }
    res.trace = std::move(trace_);
    res.stats = stats_;
    res.stats.steps = step_;
    res.truncated = stats_.forced > 0 || !res.ended_with_eos;
    return res;
  }

 private:
  bool finished() const { return st_.mask_count() == 0; }

  DistributionSet forward(const std::vector<std::size_t>& positions) {
    ForwardRequest req;
    req.state = &st_;
    req.positions = positions;
    req.temperature = cfg_.temperature;
    req.seed = derive_seed({cfg_.seed, step_});
    req.step = step_;
    ++stats_.forward_calls;
    return denoiser_.forward(req);
  }

  TraceEvent& emit(std::size_t pos, TokenId tok, Verdict v) {
    TraceEvent e;
    e.step = step_;
    e.position = pos;
    e.token = tok;
    e.verdict = v;
    if (cfg_.record_timing) {
      e.elapsed_us = std::chrono::duration_cast<std::chrono::microseconds>(
                         std::chrono::steady_clock::now() - start_)
                         .count();
    }
    trace_.events.push_back(std::move(e));
    return trace_.events.back();
  }

  void apply_eos_fill() { st_.output = eos_fill(std::move(st_.output)); }

  /// Extends the chart over the leading run of committed tokens.
  void sync_lead() {
    while (lead_len_ < st_.output.size() && st_.output[lead_len_].is_token() && !lead_chart_.dead()) {
      lead_chart_.advance_in_place(st_.output[lead_len_].value);
      ++lead_len_;
    }
  }

  // -- FS-CD ---------------------------------------------------------------

  void run_left_to_right() {
    auto chart = init_chart(g_);
    for (std::size_t p = 0; p < st_.output.size(); ++p) {
      st_.current_block = p / st_.block_size;
      auto dists = forward({p});
      auto allowed = chart.next_tokens();
      if (chart.accepting()) allowed.push_back(kEosToken);
      auto masked = dists.at(p).restricted_to(allowed);
      if (!masked) {
        std::vector<double> u(g_.vocab().outcome_count(), 0.0);
        for (auto t : allowed) u[dists.at(p).index_of(t)] = 1.0;
        masked = Distribution::from_dense(std::move(u));
      }
      auto t = *sample_token(*masked, {}, rng_);
      ++stats_.proposals;
      ++stats_.accepted;
      st_.output[p] = Slot{t};
      auto& e = emit(p, t, Verdict::kAccepted);
      e.witness_length = t == kEosToken ? p : p + 1;
      ++step_;
      if (t == kEosToken) {
        apply_eos_fill();
        return;
      }
      chart.advance_in_place(t);
    }
  }

  // -- LAVE and NO-CD --------------------------------------------------------

  void run_blocks() {
    const auto steps = cfg_.steps_per_block();
    for (std::size_t b = 0; b < st_.block_count() && !finished(); ++b) {
      st_.current_block = b;
      for (std::size_t s = 0; s < steps; ++s) {
        auto masked = st_.masked_in_block();
        if (masked.empty()) break;
        auto dists = forward(masked);
        auto quota = (masked.size() + (steps - s) - 1) / (steps - s);
        auto winners = select_unmask_positions(dists, masked, quota);
        exclusions_.clear();
        for (auto p : winners) {
          if (!st_.output[p].is_mask()) continue;
          if (cfg_.strategy == Strategy::kLave && verified_) {
            propose_verified(p, dists);
          } else {
            commit_unverified(p, dists);
          }
          if (finished()) break;
        }
        ++step_;
        if (finished()) break;
      }
      if (!st_.masked_in_block().empty()) force_finalize();
    }
  }

  void commit_unverified(std::size_t p, const DistributionSet& dists) {
    auto t = *sample_token(dists.at(p), {}, rng_);
    ++stats_.proposals;
    st_.output[p] = Slot{t};
    emit(p, t, Verdict::kUnverified);
    if (t == kEosToken) apply_eos_fill();
  }

  void propose_verified(std::size_t p, const DistributionSet& dists) {
    auto& excl = exclusions_[p];
    for (;;) {
      auto proposal = sample_token(dists.at(p), excl, rng_);
      if (!proposal) {
        // Exhausted support counts as a full budget of failures.
        c_fail_ += cfg_.attempt_budget;
        run_recovery(dists);
        return;
      }
      const TokenId t = *proposal;
      std::size_t samples = 0;
      ++stats_.proposals;

      if (t == kEosToken) {
        std::vector<TokenId> content;
        bool complete = true;
        for (std::size_t i = 0; i < p; ++i) {
          if (!st_.output[i].is_token()) {
            complete = false;
            break;
          }
          content.push_back(st_.output[i].value);
        }
        if (complete && is_valid(g_, content)) {
          st_.output[p] = Slot::eos();
          accept(p, t, content, 1);
          apply_eos_fill();
          return;
        }
      } else {
        st_.output[p] = Slot::token(t);
        Rng vrng(derive_seed({cfg_.seed, 0x766572696679ull, step_, p, stats_.proposals}));
        LookaheadConfig lc{cfg_.lookahead, cfg_.exhaustive_lookahead};
        auto res = lookahead_verify(st_.output, dists, lc, g_, vrng, PrefixChart{&lead_chart_, lead_len_});
        if (res.accepted) {
          accept(p, t, std::move(res.witness), res.samples_used);
          return;
        }
        st_.output[p] = Slot::mask();
        samples = res.samples_used;
      }

      excl.push_back(t);
      ++c_fail_;
      ++stats_.rejected;
      auto& e = emit(p, t, Verdict::kRejected);
      e.samples_used = samples;
      if (c_fail_ >= cfg_.attempt_budget) {
        run_recovery(dists);
        return;
      }
    }
  }

  void accept(std::size_t p, TokenId t, std::vector<TokenId> witness, std::size_t samples) {
    ++stats_.accepted;
    c_fail_ = 0;
    if (cfg_.check_invariants) check_witness(witness, t == kEosToken);
    auto& e = emit(p, t, Verdict::kAccepted);
    e.witness_length = witness.size();
    e.samples_used = samples;
    if (cfg_.record_snapshots) {
      auto r = t == kEosToken ? p : rightmost_nonmask(st_.output);
      e.snapshot.assign(st_.output.begin(), st_.output.begin() + static_cast<std::ptrdiff_t>(r));
    }
    if (cfg_.record_witnesses) e.witness = witness;
    cache_ = std::move(witness);
    sync_lead();
  }

  void check_witness(const std::vector<TokenId>& w, bool eos) const {
    if (eos ? !is_valid(g_, w) : !is_extendable(g_, w)) {
      throw std::logic_error("decode: accepted witness is not extendable");
    }
    if (eos) return;
    if (w.size() != rightmost_nonmask(st_.output)) throw std::logic_error("decode: witness length differs from r(y)");
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (st_.output[i].is_token() && st_.output[i].value != w[i]) {
        throw std::logic_error("decode: witness disagrees with a fixed token");
      }
    }
  }

  void run_recovery(const DistributionSet& dists) {
    auto out = recover(st_.output, cache_, g_, dists, rng_);
    ++stats_.recoveries;
    st_.output = std::move(out.output);
    cache_ = std::move(out.cache);
    c_fail_ = 0;
    exclusions_.clear();
    auto& e = emit(out.placed.value_or(out.info.cache_length), out.token, Verdict::kRecovery);
    e.witness_length = cache_.size();
    if (cfg_.record_witnesses) e.witness = cache_;
    e.recovery = std::move(out.info);
    if (out.token == kEosToken) apply_eos_fill();
    sync_lead();
  }

  void force_finalize() {
    auto masked = st_.masked_in_block();
    auto dists = forward(masked);
    for (auto p : masked) {
      if (!st_.output[p].is_mask()) continue;
      auto t = *sample_token(dists.at(p), {}, rng_);
      st_.output[p] = Slot{t};
      ++stats_.forced;
      emit(p, t, Verdict::kUnverified);
    }
    ++step_;
    apply_eos_fill();
    if (cfg_.strategy != Strategy::kLave || !verified_ || finished()) return;
    // Keep verifying if the now-complete prefix can still be extended.
    sync_lead();
    auto r = rightmost_nonmask(st_.output);
    if (lead_len_ == r && lead_chart_.extendable()) {
      cache_.clear();
      for (std::size_t i = 0; i < r; ++i) cache_.push_back(st_.output[i].value);
      c_fail_ = 0;
    } else {
      verified_ = false;
    }
  }

  const DecodeConfig& cfg_;
  const Grammar& g_;
  const Denoiser& denoiser_;
  SequenceState st_;
  Rng rng_;
  ChartState lead_chart_;
  std::size_t lead_len_ = 0;
  std::vector<TokenId> cache_;
  std::size_t c_fail_ = 0;
  std::map<std::size_t, std::vector<TokenId>> exclusions_;
  bool verified_ = true;
  std::size_t step_ = 0;
  DecodeTrace trace_;
  DecodeStats stats_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

DecodeResult decode(const DecodeConfig& cfg, const Grammar& g, const Denoiser& denoiser,
                    const std::vector<TokenId>& prompt) {
  cfg.validate();
  if (!g.reduced()) throw std::invalid_argument("decode: grammar must be reduced");
  if (denoiser.outcome_count() != g.vocab().outcome_count()) {
    throw std::invalid_argument("decode: denoiser alphabet does not match the grammar vocabulary");
  }
  return Engine(cfg, g, denoiser, prompt).run();
}

std::string trace_to_text(const DecodeTrace& trace, const Vocabulary& vocab) {
  using ojson = nlohmann::ordered_json;
  auto names = [&](const std::vector<TokenId>& ids) {
    ojson a = ojson::array();
    for (auto t : ids) a.push_back(vocab.display(t));
    return a;
  };
  std::string out;
  for (const auto& e : trace.events) {
    ojson j;
    j["step"] = e.step;
    j["position"] = e.position;
    j["token"] = vocab.display(e.token);
    j["verdict"] = to_string(e.verdict);
    j["witness_len"] = e.witness_length;
    j["samples"] = e.samples_used;
    if (!e.witness.empty()) j["witness"] = names(e.witness);
    if (!e.snapshot.empty()) {
      ojson a = ojson::array();
      for (const auto& s : e.snapshot) a.push_back(vocab.display(s.value));
      j["snapshot"] = std::move(a);
    }
    if (e.recovery) {
      const auto& r = *e.recovery;
      ojson rj;
      rj["cache_len"] = r.cache_length;
      rj["prefix_len"] = r.prefix_length;
      rj["replaced"] = r.replaced;
      rj["appended"] = r.appended;
      rj["admissible"] = names(r.admissible);
      rj["adjusted_support"] = names(r.adjusted_support);
      rj["uniform_fallback"] = r.uniform_fallback;
      rj["eos_fallback"] = r.eos_fallback;
      j["recovery"] = std::move(rj);
    }
    if (e.elapsed_us != 0) j["elapsed_us"] = e.elapsed_us;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace gcdk
