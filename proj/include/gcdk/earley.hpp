#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gcdk/grammar.hpp"

namespace gcdk {

/// Dotted production with the chart column where it started.
struct Item {
  std::uint32_t production = 0;
  std::uint32_t dot = 0;
  std::uint32_t origin = 0;

  friend bool operator==(const Item&, const Item&) = default;
};

/// One closed chart column. Immutable after construction and shared
/// between cloned chart states.
struct ItemSet {
  std::vector<Item> items;
  /// (nonterminal, item index) for items whose dot precedes a nonterminal, sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> waiting;
  /// (terminal, item index) for items whose dot precedes a terminal, sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> scanning;
  /// Distinct origins of `waiting` items.
  std::vector<std::uint32_t> waiting_origins;
  /// Distinct origins of `scanning` items.
  std::vector<std::uint32_t> scanning_origins;
  bool accepting = false;
};

enum class ChartMode {
  /// Columns no longer reachable from the frontier are released.
  kCompact,
  /// Every column is retained.
  kFull,
};

class NotExtendableError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Incremental Earley recognizer state for a consumed token prefix.
///
/// A value type: copying is cheap (columns are shared) and advancing a copy
/// never affects the original. The grammar must outlive every state built
/// from it. A state whose frontier is empty is dead; dead is absorbing.
class ChartState {
 public:
  /// Throws std::invalid_argument if `g` is not reduced.
  explicit ChartState(const Grammar& g, ChartMode mode = ChartMode::kCompact);

  ChartState advance(TokenId token) const;
  void advance_in_place(TokenId token);
  void advance_all(std::span<const TokenId> tokens);

  bool dead() const { return dead_; }
  bool extendable() const { return !dead_; }
  bool accepting() const { return !dead_ && columns_.back()->accepting; }
  std::size_t consumed() const { return consumed_; }

  /// Tokens whose consumption keeps the state extendable, ascending.
  /// Throws NotExtendableError on a dead state.
  std::vector<TokenId> next_tokens() const;
  /// True iff advance(token) would be extendable.
  bool admits(TokenId token) const;

  const Grammar& grammar() const { return *grammar_; }
  ChartMode mode() const { return mode_; }
  /// Frontier column; empty when dead.
  const ItemSet& frontier() const;
  /// Number of columns currently held (compaction releases the rest).
  std::size_t live_columns() const;

 private:
  void close_column(std::vector<Item> seed);
  void compact();

  const Grammar* grammar_;
  ChartMode mode_;
  std::vector<std::shared_ptr<const ItemSet>> columns_;
  std::size_t consumed_ = 0;
  bool dead_ = false;
};

ChartState init_chart(const Grammar& g, ChartMode mode = ChartMode::kCompact);

bool is_valid(const Grammar& g, std::span<const TokenId> tokens);
bool is_extendable(const Grammar& g, std::span<const TokenId> tokens);
/// { t : is_extendable(g, tokens + t) }. Throws NotExtendableError when the
/// prefix itself is not extendable.
std::vector<TokenId> next_tokens(const Grammar& g, std::span<const TokenId> tokens);

}  // namespace gcdk
