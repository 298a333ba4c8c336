// Recursive-descent loader for the `.gram` text format:
//
//   # comment
//   name ::= alt | alt
//            | continued alt
//   alt  := item*            (an empty alternative is epsilon)
//   item := primary [+ * ?]
//   primary := name | "literal" | /pattern/ | ( alt | alt )
//
// A rule runs until the next `name ::=` or end of input. The start symbol is
// the rule named `start` when present, otherwise the first rule.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "gcdk/grammar.hpp"

namespace gcdk {
namespace {

using Kind = GrammarError::Kind;

enum class Tok { kIdent, kDefine, kLiteral, kPattern, kBar, kLParen, kRParen, kPlus, kStar, kQuestion, kEnd };

struct Lexeme {
  Tok type;
  std::string text;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Lexeme> run() {
    std::vector<Lexeme> out;
    for (;;) {
      skip_space();
      if (pos_ >= src_.size()) {
        out.push_back({Tok::kEnd, "", line_, col_});
        return out;
      }
      int line = line_, col = col_;
      char c = src_[pos_];
      if (is_ident_char(c, true)) {
        std::string name;
        while (pos_ < src_.size() && is_ident_char(src_[pos_], false)) name += take();
        out.push_back({Tok::kIdent, std::move(name), line, col});
      } else if (src_.substr(pos_, 3) == "::=") {
        take(), take(), take();
        out.push_back({Tok::kDefine, "::=", line, col});
      } else if (c == '"') {
        out.push_back({Tok::kLiteral, read_literal(line, col), line, col});
      } else if (c == '/') {
        out.push_back({Tok::kPattern, read_pattern(line, col), line, col});
      } else {
        Tok t;
        switch (c) {
          case '|': t = Tok::kBar; break;
          case '(': t = Tok::kLParen; break;
          case ')': t = Tok::kRParen; break;
          case '+': t = Tok::kPlus; break;
          case '*': t = Tok::kStar; break;
          case '?': t = Tok::kQuestion; break;
          default:
            throw GrammarError(Kind::kSyntax, std::string("unexpected character '") + c + "'", line, col);
        }
        take();
        out.push_back({t, std::string(1, c), line, col});
      }
    }
  }

 private:
  static bool is_ident_char(char c, bool first) {
    return c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           (!first && c >= '0' && c <= '9');
  }

  char take() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        take();
      } else if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') take();
      } else {
        return;
      }
    }
  }

  std::string read_literal(int line, int col) {
    take();
    std::string body;
    for (;;) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw GrammarError(Kind::kSyntax, "unterminated string literal", line, col);
      }
      char c = take();
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= src_.size()) throw GrammarError(Kind::kSyntax, "dangling escape", line, col);
        char e = take();
        switch (e) {
          case 'n': body += '\n'; break;
          case 't': body += '\t'; break;
          case 'r': body += '\r'; break;
          case '"': body += '"'; break;
          case '\\': body += '\\'; break;
          default: body += '\\'; body += e;
        }
      } else {
        body += c;
      }
    }
    if (body.empty()) throw GrammarError(Kind::kSyntax, "empty string literal", line, col);
    return body;
  }

  // The pattern body is kept verbatim; `\/` does not terminate it.
  std::string read_pattern(int line, int col) {
    take();
    std::string body;
    for (;;) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        throw GrammarError(Kind::kSyntax, "unterminated pattern", line, col);
      }
      char c = take();
      if (c == '/') break;
      body += c;
      if (c == '\\' && pos_ < src_.size() && src_[pos_] != '\n') body += take();
    }
    if (body.empty()) throw GrammarError(Kind::kSyntax, "empty pattern", line, col);
    return body;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// Unresolved right-hand-side element: names are resolved after all rules are read.
struct RawSymbol {
  enum class Kind { kName, kTerminal, kNonterminal } kind;
  std::string name;
  std::uint32_t index = 0;
  int line = 0;
  int column = 0;
};

using RawAlt = std::vector<RawSymbol>;

class Parser {
 public:
  Parser(std::vector<Lexeme> lex, const Vocabulary* vocab) : lex_(std::move(lex)), vocab_(vocab) {}

  Grammar parse(std::shared_ptr<const Vocabulary> vocab_override) {
    while (peek().type != Tok::kEnd) parse_rule();
    if (rules_.empty()) throw GrammarError(Kind::kSyntax, "grammar has no rules", 1, 1);
    return finish(std::move(vocab_override));
  }

 private:
  const Lexeme& peek(std::size_t ahead = 0) const {
    return lex_[std::min(pos_ + ahead, lex_.size() - 1)];
  }
  const Lexeme& next() { return lex_[pos_++]; }

  bool at_rule_start() const {
    return peek().type == Tok::kIdent && peek(1).type == Tok::kDefine;
  }

  [[noreturn]] void fail(const Lexeme& at, const std::string& msg) {
    throw GrammarError(Kind::kSyntax, msg, at.line, at.column);
  }

  std::uint32_t declare(const std::string& name, bool synthetic, const Lexeme& at) {
    auto [it, inserted] = nt_index_.emplace(name, static_cast<std::uint32_t>(rules_.size()));
    if (!inserted) {
      throw GrammarError(Kind::kDuplicateRule, "duplicate rule name '" + name + "'", at.line, at.column);
    }
    rules_.push_back({Nonterminal{name, synthetic}, {}});
    return it->second;
  }

  std::uint32_t fresh(const std::string& base, const char* tag) {
    std::string name;
    do {
      name = base + "__" + tag + std::to_string(++fresh_counter_);
    } while (nt_index_.count(name));
    Lexeme dummy{Tok::kIdent, name, 0, 0};
    return declare(name, true, dummy);
  }

  void parse_rule() {
    if (!at_rule_start()) fail(peek(), "expected 'name ::='");
    const Lexeme& name = next();
    next();
    auto nt = declare(name.text, false, name);
    current_rule_ = name.text;

    // Whole-body repetition reuses the rule itself, e.g. `S ::= A+` gives S -> A | S A.
    if (peek(1).type == Tok::kPlus || peek(1).type == Tok::kStar || peek(1).type == Tok::kQuestion) {
      std::size_t save = pos_;
      if (peek().type != Tok::kLParen && peek().type != Tok::kBar) {
        RawSymbol item = parse_primary();
        Tok suffix = next().type;
        if (at_rule_end()) {
          add_repetition(nt, item, suffix);
          return;
        }
      }
      pos_ = save;
    }
    for (auto& alt : parse_alternatives()) rules_[nt].alts.push_back(std::move(alt));
  }

  bool at_rule_end() const { return peek().type == Tok::kEnd || at_rule_start(); }

  std::vector<RawAlt> parse_alternatives() {
    std::vector<RawAlt> alts;
    alts.push_back(parse_sequence());
    while (peek().type == Tok::kBar) {
      next();
      alts.push_back(parse_sequence());
    }
    return alts;
  }

  RawAlt parse_sequence() {
    RawAlt seq;
    for (;;) {
      Tok t = peek().type;
      if (t == Tok::kBar || t == Tok::kRParen || t == Tok::kEnd || at_rule_start()) return seq;
      RawSymbol item = parse_primary();
      Tok s = peek().type;
      if (s == Tok::kPlus || s == Tok::kStar || s == Tok::kQuestion) {
        next();
        auto wrapper = fresh(current_rule_, s == Tok::kQuestion ? "opt" : "rep");
        add_repetition(wrapper, item, s);
        item = RawSymbol{RawSymbol::Kind::kNonterminal, {}, wrapper};
      }
      seq.push_back(std::move(item));
    }
  }

  void add_repetition(std::uint32_t nt, const RawSymbol& item, Tok suffix) {
    RawSymbol self{RawSymbol::Kind::kNonterminal, {}, nt};
    auto& alts = rules_[nt].alts;
    switch (suffix) {
      case Tok::kPlus:
        alts.push_back({item});
        alts.push_back({self, item});
        break;
      case Tok::kStar:
        alts.push_back({});
        alts.push_back({self, item});
        break;
      default:
        alts.push_back({});
        alts.push_back({item});
        break;
    }
  }

  RawSymbol parse_primary() {
    const Lexeme& lx = next();
    switch (lx.type) {
      case Tok::kIdent:
        return RawSymbol{RawSymbol::Kind::kName, lx.text, 0, lx.line, lx.column};
      case Tok::kLiteral:
        return RawSymbol{RawSymbol::Kind::kTerminal, {}, intern_literal(lx), lx.line, lx.column};
      case Tok::kPattern:
        return RawSymbol{RawSymbol::Kind::kTerminal, {}, intern_pattern(lx), lx.line, lx.column};
      case Tok::kLParen: {
        auto alts = parse_alternatives();
        if (peek().type != Tok::kRParen) fail(peek(), "expected ')'");
        next();
        if (alts.size() == 1 && alts[0].size() == 1) return alts[0][0];
        auto grp = fresh(current_rule_, "grp");
        rules_[grp].alts = std::move(alts);
        return RawSymbol{RawSymbol::Kind::kNonterminal, {}, grp};
      }
      default:
        fail(lx, "expected a symbol, literal, pattern, or '('");
    }
  }

  std::uint32_t intern_literal(const Lexeme& lx) {
    if (vocab_ && !vocab_->find(lx.text)) {
      throw GrammarError(Kind::kUnknownLiteral,
                         "literal \"" + lx.text + "\" is not a vocabulary token", lx.line, lx.column);
    }
    auto key = "L" + lx.text;
    if (auto it = term_index_.find(key); it != term_index_.end()) return it->second;
    auto id = static_cast<std::uint32_t>(terminals_.size());
    terminals_.push_back(TerminalSpec::literal(lx.text));
    term_index_.emplace(key, id);
    literal_order_.push_back(lx.text);
    return id;
  }

  std::uint32_t intern_pattern(const Lexeme& lx) {
    auto key = "P" + lx.text;
    if (auto it = term_index_.find(key); it != term_index_.end()) return it->second;
    auto id = static_cast<std::uint32_t>(terminals_.size());
    try {
      terminals_.push_back(TerminalSpec::pattern(lx.text));
    } catch (const GrammarError& e) {
      throw GrammarError(Kind::kPatternCompile, e.what(), lx.line, lx.column);
    }
    term_index_.emplace(key, id);
    return id;
  }

  Grammar finish(std::shared_ptr<const Vocabulary> vocab) {
    if (!vocab) vocab = std::make_shared<const Vocabulary>(literal_order_);

    std::vector<Nonterminal> nts;
    std::vector<Production> prods;
    for (std::uint32_t nt = 0; nt < rules_.size(); ++nt) {
      nts.push_back(rules_[nt].info);
      for (const auto& alt : rules_[nt].alts) {
        Production prod{nt, {}};
        for (const auto& raw : alt) {
          switch (raw.kind) {
            case RawSymbol::Kind::kTerminal:
              prod.rhs.push_back(Symbol::terminal(raw.index));
              break;
            case RawSymbol::Kind::kNonterminal:
              prod.rhs.push_back(Symbol::nonterminal(raw.index));
              break;
            case RawSymbol::Kind::kName: {
              auto it = nt_index_.find(raw.name);
              if (it == nt_index_.end()) {
                throw GrammarError(Kind::kUndeclaredSymbol, "undeclared symbol '" + raw.name + "'",
                                   raw.line, raw.column);
              }
              prod.rhs.push_back(Symbol::nonterminal(it->second));
              break;
            }
          }
        }
        prods.push_back(std::move(prod));
      }
    }
    std::uint32_t start = 0;
    if (auto it = nt_index_.find("start"); it != nt_index_.end()) start = it->second;
    return Grammar(std::move(vocab), std::move(nts), terminals_, std::move(prods), start);
  }

  struct Rule {
    Nonterminal info;
    std::vector<RawAlt> alts;
  };

  std::vector<Lexeme> lex_;
  std::size_t pos_ = 0;
  const Vocabulary* vocab_;
  std::vector<Rule> rules_;
  std::unordered_map<std::string, std::uint32_t> nt_index_;
  std::vector<TerminalSpec> terminals_;
  std::unordered_map<std::string, std::uint32_t> term_index_;
  std::vector<std::string> literal_order_;
  std::string current_rule_;
  int fresh_counter_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GrammarError(Kind::kIo, "cannot open grammar file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Grammar load_grammar(std::string_view text, std::shared_ptr<const Vocabulary> vocab) {
  if (!vocab) return load_grammar(text);
  Parser parser(Lexer(text).run(), vocab.get());
  return parser.parse(std::move(vocab));
}

Grammar load_grammar(std::string_view text) {
  Parser parser(Lexer(text).run(), nullptr);
  return parser.parse(nullptr);
}

Grammar load_grammar_file(const std::string& path, const std::string& vocab_path) {
  auto text = read_file(path);
  std::string vpath = vocab_path;
  if (vpath.empty()) {
    auto sibling = std::filesystem::path(path).replace_extension(".vocab");
    if (std::filesystem::exists(sibling)) vpath = sibling.string();
  }
  if (vpath.empty()) return load_grammar(text);
  std::shared_ptr<const Vocabulary> vocab;
  try {
    vocab = std::make_shared<const Vocabulary>(Vocabulary::load(vpath));
  } catch (const std::exception& e) {
    throw GrammarError(Kind::kIo, e.what());
  }
  return load_grammar(text, std::move(vocab));
}

}  // namespace gcdk
