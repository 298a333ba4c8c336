#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gcdk {

/// Dense index into a Vocabulary. Non-negative values are members of the
/// token alphabet; the two negative values are reserved sentinels.
using TokenId = std::int32_t;

inline constexpr TokenId kMaskToken = -1;
inline constexpr TokenId kEosToken = -2;

/// Ordered set of distinct token strings plus the EOS / MASK display markers.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Throws std::invalid_argument on duplicates, empty tokens, or a token
  /// that collides with one of the sentinel markers.
  explicit Vocabulary(std::vector<std::string> tokens, std::string eos_marker = "[EOS]",
                      std::string mask_marker = "[MASK]");

  /// One token per line, taken verbatim (trailing '\r' stripped). Empty lines are skipped.
  static Vocabulary parse(std::string_view text);
  static Vocabulary load(const std::string& path);

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }

  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  /// Like find() but throws std::out_of_range naming the token.
  TokenId at(std::string_view token) const;

  /// Display string for a token or a sentinel.
  std::string display(TokenId id) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& eos_marker() const { return eos_marker_; }
  const std::string& mask_marker() const { return mask_marker_; }

  /// Number of outcomes a Distribution ranges over: the alphabet plus EOS.
  std::size_t outcome_count() const { return tokens_.size() + 1; }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.eos_marker_ == b.eos_marker_ &&
           a.mask_marker_ == b.mask_marker_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::string eos_marker_ = "[EOS]";
  std::string mask_marker_ = "[MASK]";
};

}  // namespace gcdk
