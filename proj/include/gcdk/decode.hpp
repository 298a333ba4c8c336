#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcdk/denoiser.hpp"
#include "gcdk/earley.hpp"
#include "gcdk/grammar.hpp"
#include "gcdk/random.hpp"
#include "gcdk/sequence.hpp"

namespace gcdk {

enum class Strategy { kNoCd, kFsCd, kLave };

std::string to_string(Strategy s);
/// Accepts "lave", "fs-cd", "no-cd" (case-insensitive, '_' or '-').
Strategy parse_strategy(const std::string& text);

struct DecodeConfig {
  std::size_t max_length = 256;
  std::size_t denoise_steps = 128;
  std::size_t block_size = 32;
  std::size_t lookahead = 10;
  /// Enumerate every fill of the prefix's masks instead of sampling N.
  bool exhaustive_lookahead = false;
  std::size_t attempt_budget = 5;
  double temperature = 0.2;
  Strategy strategy = Strategy::kLave;
  std::uint64_t seed = 0;

  /// Keep each accepted witness in the trace.
  bool record_witnesses = true;
  /// Keep a copy of the output prefix (up to r) with each accepted event.
  bool record_snapshots = false;
  /// Stamp events with elapsed wall time. Off keeps traces reproducible.
  bool record_timing = false;
  /// Re-check every accepted witness with a fresh recognizer.
  bool check_invariants =
#ifdef NDEBUG
      false;
#else
      true;
#endif

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Steps available to each block: ceil(T * B / L), at least 1.
  std::size_t steps_per_block() const;
};

enum class Verdict { kAccepted, kRejected, kRecovery, kUnverified };
std::string to_string(Verdict v);

struct RecoveryInfo {
  std::size_t cache_length = 0;
  /// r(y) immediately before the replacement.
  std::size_t prefix_length = 0;
  /// Masked slots overwritten from the cache.
  std::size_t replaced = 0;
  /// The prefix already equalled the cache, so one token was appended.
  bool appended = false;
  /// next_tokens(cache) used to mask the appended position's distribution.
  std::vector<TokenId> admissible;
  /// Support of that masked distribution.
  std::vector<TokenId> adjusted_support;
  /// The distribution had no mass on `admissible` and the cache is not a
  /// sentence; a uniform choice over `admissible` was made.
  bool uniform_fallback = false;
  /// The distribution had no mass on `admissible` and the cache is a
  /// sentence; EOS was placed.
  bool eos_fallback = false;

  friend bool operator==(const RecoveryInfo&, const RecoveryInfo&) = default;
};

struct TraceEvent {
  std::size_t step = 0;
  std::size_t position = 0;
  TokenId token = kMaskToken;
  Verdict verdict = Verdict::kUnverified;
  /// Length of the certifying witness; 0 when there is none.
  std::size_t witness_length = 0;
  std::size_t samples_used = 0;
  std::vector<TokenId> witness;
  Slots snapshot;
  std::optional<RecoveryInfo> recovery;
  std::int64_t elapsed_us = 0;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct DecodeTrace {
  std::vector<TraceEvent> events;
  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

struct DecodeStats {
  std::size_t steps = 0;
  std::size_t forward_calls = 0;
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t recoveries = 0;
  std::size_t forced = 0;
  friend bool operator==(const DecodeStats&, const DecodeStats&) = default;
};

struct DecodeResult {
  /// Content before the first EOS.
  std::vector<TokenId> tokens;
  Slots final_output;
  DecodeTrace trace;
  DecodeStats stats;
  /// Some slot was force-finalized, or the output never placed EOS.
  bool truncated = false;
  bool ended_with_eos = false;
};

// ---------------------------------------------------------------------------
// Prefix helpers. Positions are 0-based output indices.

/// r(y): length of the prefix ending at the rightmost non-MASK slot (EOS
/// counts as non-MASK); 0 when everything is masked.
std::size_t rightmost_nonmask(std::span<const Slot> y);

/// Masked positions strictly inside the prefix of length rightmost_nonmask(y).
std::vector<std::size_t> masked_positions(std::span<const Slot> y);

class FillError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Substitutes `assignment` into the masked slots of `prefix`. Throws
/// FillError unless the keys are exactly the masked positions, or if the
/// prefix contains EOS.
std::vector<TokenId> fill(std::span<const Slot> prefix, const std::map<std::size_t, TokenId>& assignment);

/// Every slot right of the first EOS becomes EOS.
Slots eos_fill(Slots y);

/// The `quota` positions among `candidates` with the largest maximum
/// probability, most confident first; ties go to the lower position.
std::vector<std::size_t> select_unmask_positions(const DistributionSet& dists,
                                                 std::span<const std::size_t> candidates,
                                                 std::size_t quota);

// ---------------------------------------------------------------------------
// Verification

struct LookaheadConfig {
  std::size_t samples = 10;
  bool exhaustive = false;
};

struct VerificationResult {
  bool accepted = false;
  std::vector<TokenId> witness;
  /// Candidates checked (sampled: distinct assignments drawn).
  std::size_t samples_used = 0;
};

/// Chart over a known-good leading run of tokens, reused as a starting
/// point by lookahead_verify.
struct PrefixChart {
  const ChartState* chart = nullptr;
  std::size_t length = 0;
};

/// Decides whether the prefix of `y` (up to r(y)) can be completed into an
/// extendable token string by filling its masks.
///
/// Sampled mode draws assignments from the product of the per-position
/// distributions restricted to the alphabet, keeps the first `samples`
/// distinct ones, and accepts on the first extendable fill. Draws consume
/// `rng` sequentially, so the candidates for N are a prefix of those for any
/// larger N. Exhaustive mode searches every fill over the whole alphabet.
/// `base`, when given, must be the chart of y[0, base.length), all tokens.
VerificationResult lookahead_verify(std::span<const Slot> y, const DistributionSet& dists,
                                    const LookaheadConfig& cfg, const Grammar& g, Rng& rng,
                                    PrefixChart base = {});

// ---------------------------------------------------------------------------
// Recovery

class RecoveryError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct RecoveryOutcome {
  Slots output;
  std::vector<TokenId> cache;
  RecoveryInfo info;
  /// Position that received the appended token, if any.
  std::optional<std::size_t> placed;
  TokenId token = kMaskToken;
};

/// Cache-enhanced recovery. Replaces y[0, r) by `cache`. If that prefix
/// already equalled the cache, samples one token for position r from
/// dists[r] masked to next_tokens(cache). EOS is placed instead when that
/// set is empty, or carries no mass, and the cache is a sentence. The returned cache includes an
/// appended token. Throws RecoveryError when the cache is not extendable or
/// is a dead end.
RecoveryOutcome recover(const Slots& y, const std::vector<TokenId>& cache, const Grammar& g,
                        const DistributionSet& dists, Rng& rng);

// ---------------------------------------------------------------------------

/// Runs one decode. The grammar must be reduced.
DecodeResult decode(const DecodeConfig& cfg, const Grammar& g, const Denoiser& denoiser,
                    const std::vector<TokenId>& prompt);

/// One JSON object per event, fixed key order, newline-terminated.
std::string trace_to_text(const DecodeTrace& trace, const Vocabulary& vocab);

}  // namespace gcdk
