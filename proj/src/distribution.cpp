#include "gcdk/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gcdk {

Distribution Distribution::from_dense(std::vector<double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("distribution: need at least one token and EOS");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("distribution: negative or non-finite probability");
    }
    total += p;
  }
  if (!(total > 0.0)) throw std::invalid_argument("distribution: zero total mass");
  if (total != 1.0) {
    for (double& p : probs) p /= total;
  }
  return Distribution(std::move(probs));
}

Distribution Distribution::exact(std::vector<double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("distribution: need at least one token and EOS");
  Distribution d(std::move(probs));
  for (double p : d.probs_) {
    if (!std::isfinite(p)) throw std::invalid_argument("distribution: non-finite probability");
  }
  if (!d.well_formed(1e-9)) throw std::invalid_argument("distribution: probabilities must sum to 1");
  return d;
}

Distribution Distribution::uniform(std::size_t outcomes) {
  return from_dense(std::vector<double>(outcomes, 1.0 / static_cast<double>(outcomes)));
}

Distribution Distribution::point(std::size_t outcomes, TokenId token) {
  std::vector<double> probs(outcomes, 0.0);
  Distribution d(std::move(probs));
  d.probs_[d.index_of(token)] = 1.0;
  return d;
}

Distribution Distribution::from_sparse(std::size_t outcomes,
                                       const std::vector<std::pair<TokenId, double>>& top,
                                       double rest_mass) {
  if (outcomes < 2) throw std::invalid_argument("distribution: need at least one token and EOS");
  if (!(rest_mass >= 0.0)) throw std::invalid_argument("distribution: negative rest mass");
  Distribution shape(std::vector<double>(outcomes, 0.0));
  std::vector<bool> listed(outcomes, false);
  for (const auto& [tok, p] : top) {
    auto i = shape.index_of(tok);
    if (listed[i]) throw std::invalid_argument("distribution: token listed twice");
    if (!(p >= 0.0)) throw std::invalid_argument("distribution: negative probability");
    listed[i] = true;
    shape.probs_[i] = p;
  }
  auto unlisted = static_cast<std::size_t>(std::count(listed.begin(), listed.end(), false));
  if (unlisted > 0) {
    double each = rest_mass / static_cast<double>(unlisted);
    for (std::size_t i = 0; i < outcomes; ++i) {
      if (!listed[i]) shape.probs_[i] = each;
    }
  }
  return from_dense(std::move(shape.probs_));
}

std::size_t Distribution::index_of(TokenId token) const {
  if (token == kEosToken) return probs_.size() - 1;
  if (token < 0 || static_cast<std::size_t>(token) + 1 >= probs_.size()) {
    throw std::out_of_range("distribution: token outside the alphabet");
  }
  return static_cast<std::size_t>(token);
}

TokenId Distribution::token_at(std::size_t index) const {
  return index + 1 == probs_.size() ? kEosToken : static_cast<TokenId>(index);
}

double Distribution::max_prob() const {
  return probs_.empty() ? 0.0 : *std::max_element(probs_.begin(), probs_.end());
}

std::vector<TokenId> Distribution::support() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] > 0.0) out.push_back(token_at(i));
  }
  return out;
}

Distribution Distribution::with_temperature(double temperature) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("distribution: temperature must be positive");
  if (temperature == 1.0) return *this;
  double log_max = std::log(max_prob());
  std::vector<double> out(probs_.size(), 0.0);
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] > 0.0) out[i] = std::exp((std::log(probs_[i]) - log_max) / temperature);
  }
  return from_dense(std::move(out));
}

std::optional<Distribution> Distribution::restricted_to(std::span<const TokenId> allowed) const {
  std::vector<double> out(probs_.size(), 0.0);
  double total = 0.0;
  for (auto tok : allowed) {
    auto i = index_of(tok);
    out[i] = probs_[i];
  }
  for (double p : out) total += p;
  if (!(total > 0.0)) return std::nullopt;
  return from_dense(std::move(out));
}

bool Distribution::well_formed(double tolerance) const {
  double total = 0.0;
  for (double p : probs_) {
    if (p < 0.0) return false;
    total += p;
  }
  return std::abs(total - 1.0) <= tolerance;
}

std::optional<TokenId> sample_token(const Distribution& dist, std::span<const TokenId> exclusions,
                                    Rng& rng) {
  const auto& probs = dist.probs();
  std::vector<bool> excluded(probs.size(), false);
  for (auto tok : exclusions) excluded[dist.index_of(tok)] = true;

  double mass = 0.0;
  std::size_t last = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!excluded[i] && probs[i] > 0.0) {
      mass += probs[i];
      last = i;
    }
  }
  if (last == probs.size()) return std::nullopt;

  double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (excluded[i] || probs[i] <= 0.0) continue;
    acc += probs[i];
    if (u < acc) return dist.token_at(i);
  }
  return dist.token_at(last);
}

}  // namespace gcdk
