#include "gcdk/earley.hpp"

#include <algorithm>
#include <unordered_set>

namespace gcdk {
namespace {

std::uint64_t item_key(const Item& it) {
  return (static_cast<std::uint64_t>(it.production) << 40) |
         (static_cast<std::uint64_t>(it.dot) << 32) | it.origin;
}

const ItemSet& empty_set() {
  static const ItemSet kEmpty;
  return kEmpty;
}

void sort_unique(std::vector<std::uint32_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

ChartState::ChartState(const Grammar& g, ChartMode mode) : grammar_(&g), mode_(mode) {
  if (!g.reduced()) {
    throw std::invalid_argument("earley: grammar must be reduced before building a chart");
  }
  std::vector<Item> seed;
  for (auto p : g.productions_of(g.start())) seed.push_back({p, 0, 0});
  close_column(std::move(seed));
}

// Builds column `consumed_` from its seed items: prediction, completion, and
// nullable skipping (a predicted nullable nonterminal also advances the
// predicting item, so completions with origin == this column never need a
// second pass).
void ChartState::close_column(std::vector<Item> seed) {
  const auto& g = *grammar_;
  const auto k = static_cast<std::uint32_t>(consumed_);
  auto col = std::make_shared<ItemSet>();
  auto& items = col->items;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(seed.size() * 4 + 16);
  std::vector<bool> predicted(g.nonterminals().size(), false);

  auto add = [&](const Item& it) {
    if (seen.insert(item_key(it)).second) items.push_back(it);
  };
  for (const auto& it : seed) add(it);

  for (std::size_t i = 0; i < items.size(); ++i) {
    const Item it = items[i];
    const auto& prod = g.productions()[it.production];
    if (it.dot == prod.rhs.size()) {
      if (it.origin == 0 && prod.lhs == g.start()) col->accepting = true;
      if (it.origin < k) {
        const auto& src = *columns_[it.origin];
        auto range = std::equal_range(
            src.waiting.begin(), src.waiting.end(), std::make_pair(prod.lhs, 0u),
            [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto w = range.first; w != range.second; ++w) {
          Item adv = src.items[w->second];
          ++adv.dot;
          add(adv);
        }
      }
      continue;
    }
    const Symbol next = prod.rhs[it.dot];
    if (next.is_terminal()) continue;
    if (!predicted[next.index]) {
      predicted[next.index] = true;
      for (auto p : g.productions_of(next.index)) add({p, 0, k});
    }
    if (g.nullable(next.index)) add({it.production, it.dot + 1, it.origin});
  }

  for (std::uint32_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const auto& prod = g.productions()[it.production];
    if (it.dot == prod.rhs.size()) continue;
    const Symbol next = prod.rhs[it.dot];
    if (next.is_terminal()) {
      col->scanning.emplace_back(next.index, i);
      col->scanning_origins.push_back(it.origin);
    } else {
      col->waiting.emplace_back(next.index, i);
      col->waiting_origins.push_back(it.origin);
    }
  }
  std::sort(col->waiting.begin(), col->waiting.end());
  std::sort(col->scanning.begin(), col->scanning.end());
  sort_unique(col->waiting_origins);
  sort_unique(col->scanning_origins);

  if (items.empty()) {
    dead_ = true;
    columns_.clear();
    return;
  }
  if (columns_.size() <= k) columns_.resize(k + 1);
  columns_[k] = std::move(col);
  if (mode_ == ChartMode::kCompact) compact();
}

// Keeps only columns that a future completion can still reach: origins of
// the frontier's pending items, then transitively the origins of waiting
// items in those columns.
void ChartState::compact() {
  const auto k = consumed_;
  std::vector<bool> live(k + 1, false);
  live[k] = true;
  for (auto o : columns_[k]->waiting_origins) live[o] = true;
  for (auto o : columns_[k]->scanning_origins) live[o] = true;
  for (std::size_t j = k; j-- > 0;) {
    if (!live[j] || !columns_[j]) continue;
    for (auto o : columns_[j]->waiting_origins) live[o] = true;
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (!live[j]) columns_[j].reset();
  }
}

void ChartState::advance_in_place(TokenId token) {
  if (dead_) {
    ++consumed_;
    return;
  }
  const auto& g = *grammar_;
  const auto& frontier = *columns_.back();
  std::vector<Item> seed;
  if (token >= 0 && static_cast<std::size_t>(token) < g.vocab().size()) {
    for (auto term : g.terminals_matching(token)) {
      auto range = std::equal_range(
          frontier.scanning.begin(), frontier.scanning.end(), std::make_pair(term, 0u),
          [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto s = range.first; s != range.second; ++s) {
        Item adv = frontier.items[s->second];
        ++adv.dot;
        seed.push_back(adv);
      }
    }
  }
  ++consumed_;
  if (seed.empty()) {
    dead_ = true;
    columns_.clear();
    return;
  }
  close_column(std::move(seed));
}

ChartState ChartState::advance(TokenId token) const {
  ChartState next = *this;
  next.advance_in_place(token);
  return next;
}

void ChartState::advance_all(std::span<const TokenId> tokens) {
  for (auto t : tokens) {
    if (dead_) {
      consumed_ += 1;
      continue;
    }
    advance_in_place(t);
  }
}

const ItemSet& ChartState::frontier() const {
  return dead_ ? empty_set() : *columns_.back();
}

std::size_t ChartState::live_columns() const {
  return static_cast<std::size_t>(
      std::count_if(columns_.begin(), columns_.end(), [](const auto& c) { return c != nullptr; }));
}

std::vector<TokenId> ChartState::next_tokens() const {
  if (dead_) throw NotExtendableError("next_tokens: prefix is not extendable");
  const auto& g = *grammar_;
  std::vector<bool> hit(g.vocab().size(), false);
  const auto& scanning = columns_.back()->scanning;
  for (std::size_t i = 0; i < scanning.size(); ++i) {
    if (i > 0 && scanning[i].first == scanning[i - 1].first) continue;
    for (auto tok : g.tokens_of(scanning[i].first)) hit[static_cast<std::size_t>(tok)] = true;
  }
  std::vector<TokenId> out;
  for (std::size_t t = 0; t < hit.size(); ++t) {
    if (hit[t]) out.push_back(static_cast<TokenId>(t));
  }
  return out;
}

bool ChartState::admits(TokenId token) const {
  if (dead_ || token < 0 || static_cast<std::size_t>(token) >= grammar_->vocab().size()) {
    return false;
  }
  const auto& scanning = columns_.back()->scanning;
  for (auto term : grammar_->terminals_matching(token)) {
    auto it = std::lower_bound(scanning.begin(), scanning.end(), std::make_pair(term, 0u));
    if (it != scanning.end() && it->first == term) return true;
  }
  return false;
}

ChartState init_chart(const Grammar& g, ChartMode mode) { return ChartState(g, mode); }

bool is_valid(const Grammar& g, std::span<const TokenId> tokens) {
  ChartState st(g);
  st.advance_all(tokens);
  return st.accepting();
}

bool is_extendable(const Grammar& g, std::span<const TokenId> tokens) {
  ChartState st(g);
  st.advance_all(tokens);
  return st.extendable();
}

std::vector<TokenId> next_tokens(const Grammar& g, std::span<const TokenId> tokens) {
  ChartState st(g);
  st.advance_all(tokens);
  return st.next_tokens();
}

}  // namespace gcdk
