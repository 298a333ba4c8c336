#include "gcdk/grammar.hpp"

#include <algorithm>
#include <sstream>

namespace gcdk {

GrammarError::GrammarError(Kind kind, std::string message, int line, int column)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ", column " +
                                        std::to_string(column) + ": " + message
                                  : message),
      kind_(kind),
      line_(line),
      column_(column) {}

TerminalSpec TerminalSpec::literal(std::string body) {
  TerminalSpec spec;
  spec.kind_ = Kind::kLiteral;
  spec.body_ = std::move(body);
  return spec;
}

TerminalSpec TerminalSpec::pattern(std::string body) {
  TerminalSpec spec;
  spec.kind_ = Kind::kPattern;
  try {
    spec.regex_ = std::make_shared<const std::regex>(body, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw GrammarError(GrammarError::Kind::kPatternCompile,
                       "pattern /" + body + "/ does not compile: " + e.what());
  }
  spec.body_ = std::move(body);
  return spec;
}

bool TerminalSpec::matches(std::string_view token) const {
  if (kind_ == Kind::kLiteral) return token == body_;
  return std::regex_match(token.begin(), token.end(), *regex_);
}

std::string TerminalSpec::describe() const {
  if (kind_ == Kind::kPattern) return "/" + body_ + "/";
  std::string out = "\"";
  for (char c : body_) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

bool terminal_matches(const TerminalSpec& spec, const Vocabulary& vocab, TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab.size()) return false;
  return spec.matches(vocab.token(token));
}

Grammar::Grammar(std::shared_ptr<const Vocabulary> vocab, std::vector<Nonterminal> nonterminals,
                 std::vector<TerminalSpec> terminals, std::vector<Production> productions,
                 std::uint32_t start, bool reduced)
    : vocab_(std::move(vocab)),
      nonterminals_(std::move(nonterminals)),
      terminals_(std::move(terminals)),
      productions_(std::move(productions)),
      start_(start),
      reduced_(reduced) {
  if (!vocab_) throw std::invalid_argument("grammar: null vocabulary");
  if (start_ >= nonterminals_.size()) throw std::invalid_argument("grammar: bad start symbol");

  by_lhs_.assign(nonterminals_.size(), {});
  for (std::uint32_t p = 0; p < productions_.size(); ++p) {
    const auto& prod = productions_[p];
    if (prod.lhs >= nonterminals_.size()) throw std::invalid_argument("grammar: bad lhs");
    if (prod.rhs.size() > 255) {
      throw std::invalid_argument("grammar: production longer than 255 symbols");
    }
    for (const auto& s : prod.rhs) {
      std::size_t limit = s.is_terminal() ? terminals_.size() : nonterminals_.size();
      if (s.index >= limit) throw std::invalid_argument("grammar: bad rhs symbol");
    }
    by_lhs_[prod.lhs].push_back(p);
  }

  terminal_tokens_.assign(terminals_.size(), {});
  token_terminals_.assign(vocab_->size(), {});
  for (std::uint32_t t = 0; t < terminals_.size(); ++t) {
    for (std::size_t tok = 0; tok < vocab_->size(); ++tok) {
      if (terminals_[t].matches(vocab_->tokens()[tok])) {
        terminal_tokens_[t].push_back(static_cast<TokenId>(tok));
        token_terminals_[tok].push_back(t);
      }
    }
  }

  nullable_.assign(nonterminals_.size(), false);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& prod : productions_) {
      if (nullable_[prod.lhs]) continue;
      bool all = std::all_of(prod.rhs.begin(), prod.rhs.end(), [&](const Symbol& s) {
        return s.is_nonterminal() && nullable_[s.index];
      });
      if (all) {
        nullable_[prod.lhs] = true;
        changed = true;
      }
    }
  }
}

std::optional<std::uint32_t> Grammar::find_nonterminal(std::string_view name) const {
  for (std::uint32_t i = 0; i < nonterminals_.size(); ++i) {
    if (nonterminals_[i].name == name) return i;
  }
  return std::nullopt;
}

bool Grammar::structurally_equal(const Grammar& other) const {
  return nonterminals_ == other.nonterminals_ && terminals_ == other.terminals_ &&
         productions_ == other.productions_ && start_ == other.start_ &&
         *vocab_ == *other.vocab_;
}

std::string Grammar::to_text() const {
  std::ostringstream out;
  auto emit = [&](std::uint32_t nt) {
    if (by_lhs_[nt].empty()) return;
    out << nonterminals_[nt].name << " ::=";
    bool first = true;
    for (auto p : by_lhs_[nt]) {
      if (!first) out << "\n    |";
      first = false;
      for (const auto& s : productions_[p].rhs) {
        out << ' ' << (s.is_terminal() ? terminals_[s.index].describe() : nonterminals_[s.index].name);
      }
    }
    out << '\n';
  };
  emit(start_);
  for (std::uint32_t nt = 0; nt < nonterminals_.size(); ++nt) {
    if (nt != start_) emit(nt);
  }
  return out.str();
}

std::vector<std::uint32_t> nullable_set(const Grammar& g) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t nt = 0; nt < g.nonterminals().size(); ++nt) {
    if (g.nullable(nt)) out.push_back(nt);
  }
  return out;
}

Grammar reduce_grammar(const Grammar& g) {
  const auto n_nt = g.nonterminals().size();
  const auto n_t = g.terminals().size();

  std::vector<bool> term_ok(n_t);
  for (std::uint32_t t = 0; t < n_t; ++t) term_ok[t] = !g.tokens_of(t).empty();

  auto symbol_ok = [&](const Symbol& s, const std::vector<bool>& productive) {
    return s.is_terminal() ? term_ok[s.index] : productive[s.index];
  };

  std::vector<bool> productive(n_nt, false);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& prod : g.productions()) {
      if (productive[prod.lhs]) continue;
      bool all = std::all_of(prod.rhs.begin(), prod.rhs.end(),
                             [&](const Symbol& s) { return symbol_ok(s, productive); });
      if (all) {
        productive[prod.lhs] = true;
        changed = true;
      }
    }
  }
  if (!productive[g.start()]) {
    throw GrammarError(GrammarError::Kind::kEmptyLanguage,
                       "start symbol '" + g.name_of(g.start()) + "' derives no token string");
  }

  std::vector<bool> keep_prod(g.productions().size(), false);
  for (std::uint32_t p = 0; p < g.productions().size(); ++p) {
    const auto& prod = g.productions()[p];
    keep_prod[p] = productive[prod.lhs] &&
                   std::all_of(prod.rhs.begin(), prod.rhs.end(),
                               [&](const Symbol& s) { return symbol_ok(s, productive); });
  }

  std::vector<bool> reach_nt(n_nt, false);
  std::vector<bool> reach_t(n_t, false);
  std::vector<std::uint32_t> work{g.start()};
  reach_nt[g.start()] = true;
  while (!work.empty()) {
    auto nt = work.back();
    work.pop_back();
    for (auto p : g.productions_of(nt)) {
      if (!keep_prod[p]) continue;
      for (const auto& s : g.productions()[p].rhs) {
        if (s.is_terminal()) {
          reach_t[s.index] = true;
        } else if (!reach_nt[s.index]) {
          reach_nt[s.index] = true;
          work.push_back(s.index);
        }
      }
    }
  }

  std::vector<std::uint32_t> nt_map(n_nt, UINT32_MAX);
  std::vector<Nonterminal> nts;
  for (std::uint32_t nt = 0; nt < n_nt; ++nt) {
    if (reach_nt[nt]) {
      nt_map[nt] = static_cast<std::uint32_t>(nts.size());
      nts.push_back(g.nonterminals()[nt]);
    }
  }
  std::vector<std::uint32_t> t_map(n_t, UINT32_MAX);
  std::vector<TerminalSpec> terms;
  for (std::uint32_t t = 0; t < n_t; ++t) {
    if (reach_t[t]) {
      t_map[t] = static_cast<std::uint32_t>(terms.size());
      terms.push_back(g.terminals()[t]);
    }
  }
  std::vector<Production> prods;
  for (std::uint32_t p = 0; p < g.productions().size(); ++p) {
    const auto& prod = g.productions()[p];
    if (!keep_prod[p] || !reach_nt[prod.lhs]) continue;
    Production out{nt_map[prod.lhs], {}};
    for (const auto& s : prod.rhs) {
      out.rhs.push_back(s.is_terminal() ? Symbol::terminal(t_map[s.index])
                                        : Symbol::nonterminal(nt_map[s.index]));
    }
    prods.push_back(std::move(out));
  }
  return Grammar(g.vocab_ptr(), std::move(nts), std::move(terms), std::move(prods),
                 nt_map[g.start()], /*reduced=*/true);
}

std::shared_ptr<const Grammar> load_reduced_grammar(const std::string& path,
                                                    const std::string& vocab_path) {
  return std::make_shared<const Grammar>(reduce_grammar(load_grammar_file(path, vocab_path)));
}

}  // namespace gcdk
