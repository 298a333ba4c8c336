#pragma once

#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gcdk/random.hpp"
#include "gcdk/vocabulary.hpp"

namespace gcdk {

/// Categorical distribution over the token alphabet plus EOS.
///
/// Stored dense: outcome i < |alphabet| is token i, the last outcome is EOS.
class Distribution {
 public:
  Distribution() = default;

  /// Throws std::invalid_argument on negative entries or a non-positive total;
  /// otherwise renormalizes to sum 1.
  static Distribution from_dense(std::vector<double> probs);
  /// Keeps the values bit-for-bit; throws unless they already form a
  /// distribution (sum within 1e-9). Used for replayed model output.
  static Distribution exact(std::vector<double> probs);
  static Distribution uniform(std::size_t outcomes);
  static Distribution point(std::size_t outcomes, TokenId token);
  /// Listed (token, prob) pairs; `rest_mass` is spread evenly over every
  /// unlisted outcome, then the whole vector is renormalized.
  static Distribution from_sparse(std::size_t outcomes,
                                  const std::vector<std::pair<TokenId, double>>& top,
                                  double rest_mass);

  std::size_t outcome_count() const { return probs_.size(); }
  std::size_t alphabet_size() const { return probs_.empty() ? 0 : probs_.size() - 1; }
  const std::vector<double>& probs() const { return probs_; }

  double prob(TokenId token) const { return probs_[index_of(token)]; }
  double max_prob() const;
  /// Outcomes with nonzero probability, ascending by id with EOS last.
  std::vector<TokenId> support() const;

  std::size_t index_of(TokenId token) const;
  TokenId token_at(std::size_t index) const;

  /// p^(1/temperature) / Z, computed in log space. temperature == 1 is the identity.
  Distribution with_temperature(double temperature) const;

  /// Renormalized restriction to `allowed`; nullopt when it carries no mass.
  std::optional<Distribution> restricted_to(std::span<const TokenId> allowed) const;

  /// Sum within tolerance and no negative entries.
  bool well_formed(double tolerance = 1e-9) const;

  friend bool operator==(const Distribution&, const Distribution&) = default;

 private:
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {}

  std::vector<double> probs_;
};

/// Masked output position -> predicted distribution.
using DistributionSet = std::map<std::size_t, Distribution>;

/// Samples from `dist` renormalized over the complement of `exclusions`.
/// Returns nullopt when every outcome with mass is excluded.
std::optional<TokenId> sample_token(const Distribution& dist, std::span<const TokenId> exclusions,
                                    Rng& rng);

}  // namespace gcdk
