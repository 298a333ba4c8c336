#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gcdk/vocabulary.hpp"

namespace gcdk {

class GrammarError : public std::runtime_error {
 public:
  enum class Kind {
    kSyntax,
    kUndeclaredSymbol,
    kDuplicateRule,
    kPatternCompile,
    kUnknownLiteral,
    kEmptyLanguage,
    kIo,
  };

  GrammarError(Kind kind, std::string message, int line = 0, int column = 0);

  Kind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  Kind kind_;
  int line_;
  int column_;
};

/// A grammar symbol: either a nonterminal index or a terminal index.
struct Symbol {
  enum class Kind : std::uint8_t { kNonterminal, kTerminal };

  Kind kind = Kind::kNonterminal;
  std::uint32_t index = 0;

  static Symbol nonterminal(std::uint32_t i) { return {Kind::kNonterminal, i}; }
  static Symbol terminal(std::uint32_t i) { return {Kind::kTerminal, i}; }

  bool is_terminal() const { return kind == Kind::kTerminal; }
  bool is_nonterminal() const { return kind == Kind::kNonterminal; }

  friend bool operator==(const Symbol&, const Symbol&) = default;
};

/// A terminal matches exactly one whole token: by string equality (literal)
/// or by a full-string regular-expression match (pattern).
class TerminalSpec {
 public:
  enum class Kind : std::uint8_t { kLiteral, kPattern };

  static TerminalSpec literal(std::string body);
  /// Throws GrammarError(kPatternCompile) if the pattern does not compile.
  static TerminalSpec pattern(std::string body);

  Kind kind() const { return kind_; }
  const std::string& body() const { return body_; }

  bool matches(std::string_view token) const;

  /// Human readable form, `"lit"` or `/pat/`.
  std::string describe() const;

  friend bool operator==(const TerminalSpec& a, const TerminalSpec& b) {
    return a.kind_ == b.kind_ && a.body_ == b.body_;
  }

 private:
  Kind kind_ = Kind::kLiteral;
  std::string body_;
  std::shared_ptr<const std::regex> regex_;
};

struct Production {
  std::uint32_t lhs = 0;
  std::vector<Symbol> rhs;  // empty for an epsilon production

  friend bool operator==(const Production&, const Production&) = default;
};

struct Nonterminal {
  std::string name;
  /// Introduced while expanding `+ * ?` or parenthesized groups.
  bool synthetic = false;

  friend bool operator==(const Nonterminal&, const Nonterminal&) = default;
};

/// Context-free grammar over the token alphabet of a Vocabulary.
///
/// Immutable once constructed. The constructor derives per-terminal token
/// sets, the production index by left-hand side, and the nullable set.
class Grammar {
 public:
  Grammar(std::shared_ptr<const Vocabulary> vocab, std::vector<Nonterminal> nonterminals,
          std::vector<TerminalSpec> terminals, std::vector<Production> productions,
          std::uint32_t start, bool reduced = false);

  const Vocabulary& vocab() const { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const { return vocab_; }

  const std::vector<Nonterminal>& nonterminals() const { return nonterminals_; }
  const std::vector<TerminalSpec>& terminals() const { return terminals_; }
  const std::vector<Production>& productions() const { return productions_; }
  std::uint32_t start() const { return start_; }
  bool reduced() const { return reduced_; }

  const std::vector<std::uint32_t>& productions_of(std::uint32_t nonterminal) const {
    return by_lhs_[nonterminal];
  }
  bool nullable(std::uint32_t nonterminal) const { return nullable_[nonterminal]; }

  /// Tokens matched by a terminal, ascending.
  const std::vector<TokenId>& tokens_of(std::uint32_t terminal) const {
    return terminal_tokens_[terminal];
  }
  /// Terminals matching a token, ascending.
  const std::vector<std::uint32_t>& terminals_matching(TokenId token) const {
    return token_terminals_[static_cast<std::size_t>(token)];
  }

  std::optional<std::uint32_t> find_nonterminal(std::string_view name) const;
  const std::string& name_of(std::uint32_t nonterminal) const {
    return nonterminals_[nonterminal].name;
  }

  /// Same symbols, terminals, productions, and start symbol.
  bool structurally_equal(const Grammar& other) const;

  /// Renders the grammar back to the text format (one line per production).
  std::string to_text() const;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  std::vector<Nonterminal> nonterminals_;
  std::vector<TerminalSpec> terminals_;
  std::vector<Production> productions_;
  std::uint32_t start_;
  bool reduced_;

  std::vector<std::vector<std::uint32_t>> by_lhs_;
  std::vector<bool> nullable_;
  std::vector<std::vector<TokenId>> terminal_tokens_;
  std::vector<std::vector<std::uint32_t>> token_terminals_;
};

/// Parses grammar text against an explicit vocabulary. Every literal
/// terminal must be a vocabulary token.
Grammar load_grammar(std::string_view text, std::shared_ptr<const Vocabulary> vocab);

/// Parses grammar text and derives the vocabulary from its literal
/// terminals, in order of first appearance.
Grammar load_grammar(std::string_view text);

/// Reads a grammar file. When `vocab_path` is empty, a sibling file with
/// the `.vocab` extension is used if present, otherwise the vocabulary is
/// derived from the literals.
Grammar load_grammar_file(const std::string& path, const std::string& vocab_path = {});

/// Keeps exactly the productive and reachable fragment. Throws
/// GrammarError(kEmptyLanguage) when the start symbol is unproductive.
Grammar reduce_grammar(const Grammar& g);

/// Nonterminals deriving the empty string, ascending by index.
std::vector<std::uint32_t> nullable_set(const Grammar& g);

bool terminal_matches(const TerminalSpec& spec, const Vocabulary& vocab, TokenId token);

/// load_grammar_file + reduce_grammar, shared for concurrent readers.
std::shared_ptr<const Grammar> load_reduced_grammar(const std::string& path,
                                                    const std::string& vocab_path = {});

}  // namespace gcdk
