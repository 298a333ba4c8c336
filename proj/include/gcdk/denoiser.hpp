#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcdk/distribution.hpp"
#include "gcdk/grammar.hpp"
#include "gcdk/sequence.hpp"

namespace gcdk {

class DenoiserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a forward call asks for no positions, or for a position
/// that is not masked.
class NoMaskedPositionsError : public DenoiserError {
 public:
  using DenoiserError::DenoiserError;
};

struct ForwardRequest {
  const SequenceState* state = nullptr;
  /// Masked output positions to predict, ascending.
  std::vector<std::size_t> positions;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Decode step that issued the request (0-based); replay keys on it.
  std::size_t step = 0;
};

/// The model: per-masked-position distributions for a canvas.
///
/// Implementations must be deterministic in the request and tolerate
/// concurrent calls on distinct states.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  /// Validates the request, then delegates to predict().
  DistributionSet forward(const ForwardRequest& request) const;

  virtual std::string name() const = 0;
  /// Number of outcomes (alphabet + EOS) every returned distribution has.
  virtual std::size_t outcome_count() const = 0;

 protected:
  virtual DistributionSet predict(const ForwardRequest& request) const = 0;
};

/// Every outcome equally likely.
class UniformDenoiser final : public Denoiser {
 public:
  explicit UniformDenoiser(std::size_t outcomes) : outcomes_(outcomes) {}
  std::string name() const override { return "uniform"; }
  std::size_t outcome_count() const override { return outcomes_; }

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  std::size_t outcomes_;
};

/// The same distribution at every position (temperature applied).
class FixedDenoiser final : public Denoiser {
 public:
  explicit FixedDenoiser(Distribution dist) : dist_(std::move(dist)) {}
  std::string name() const override { return "fixed"; }
  std::size_t outcome_count() const override { return dist_.outcome_count(); }

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  Distribution dist_;
};

/// Synthetic grammar-aware model. Each requested position gets
///   (1 - epsilon) * uniform(admissible) + epsilon * uniform(all outcomes)
/// where `admissible` is next_tokens of the longest extendable prefix of the
/// contiguous run of fixed tokens at the start of the canvas, plus EOS when
/// that prefix is a valid sentence. Tokens fixed further right are ignored.
class NoisyOracleDenoiser final : public Denoiser {
 public:
  NoisyOracleDenoiser(std::shared_ptr<const Grammar> grammar, double epsilon);
  std::string name() const override;
  std::size_t outcome_count() const override { return grammar_->vocab().outcome_count(); }
  double epsilon() const { return epsilon_; }

  /// The admissible outcomes used for `state` (ascending, EOS last).
  std::vector<TokenId> admissible(const SequenceState& state) const;

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  std::shared_ptr<const Grammar> grammar_;
  double epsilon_;
};

std::unique_ptr<Denoiser> make_noisy_oracle(std::shared_ptr<const Grammar> grammar, double epsilon);

/// One recorded forward call.
struct StepRecord {
  std::size_t step = 0;
  std::vector<std::size_t> masked;
  DistributionSet probs;
  /// Served for positions not listed in `probs`, when present.
  std::optional<Distribution> fallback;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Record/replay document: one JSON object per line, one line per step.
///   {"step":3,"masked":[4,5],"probs":{"4":[...],"5":[...]},"default":[...]}
/// Probability arrays are dense over the alphabet with EOS last.
struct Recording {
  std::vector<StepRecord> steps;

  std::string to_text() const;
  static Recording parse(const std::string& text, std::size_t outcomes);
  static Recording load(const std::string& path, std::size_t outcomes);
  void save(const std::string& path) const;

  friend bool operator==(const Recording&, const Recording&) = default;
};

/// Replays a Recording. The record for a request is the one with the
/// request's step, else the last record with a smaller step, else the
/// first. Distributions are returned exactly as recorded.
class ScriptedDenoiser final : public Denoiser {
 public:
  ScriptedDenoiser(Recording recording, std::size_t outcomes);
  std::string name() const override { return "replay"; }
  std::size_t outcome_count() const override { return outcomes_; }

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  Recording recording_;
  std::size_t outcomes_;
};

/// Forwards to an inner denoiser and appends every call to a Recording.
class RecordingDenoiser final : public Denoiser {
 public:
  explicit RecordingDenoiser(const Denoiser& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }
  std::size_t outcome_count() const override { return inner_.outcome_count(); }
  Recording recording() const;

 protected:
  DistributionSet predict(const ForwardRequest& request) const override;

 private:
  const Denoiser& inner_;
  mutable std::mutex mu_;
  mutable Recording recording_;
};

}  // namespace gcdk
