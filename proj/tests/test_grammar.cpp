#include <doctest.h>

#include <algorithm>

#include "gcdk/grammar.hpp"
#include "oracle.hpp"
#include "test_support.hpp"

using namespace gcdk;
using gcdk::testing::asset;
using gcdk::testing::grammar;
using gcdk::testing::toks;

namespace {

std::vector<std::string> nullable_names(const Grammar& g) {
  std::vector<std::string> out;
  for (auto nt : nullable_set(g)) out.push_back(g.name_of(nt));
  std::sort(out.begin(), out.end());
  return out;
}

GrammarError::Kind error_kind(const std::string& text) {
  try {
    (void)load_grammar(text);
  } catch (const GrammarError& e) {
    return e.kind();
  }
  FAIL("expected a GrammarError");
  return GrammarError::Kind::kIo;
}

}  // namespace

TEST_CASE("bracket grammar loads with two nonterminals and six literals") {
  auto g = load_grammar_file(asset("grammars/brackets.gram"));
  REQUIRE(g.nonterminals().size() == 2);
  CHECK(g.name_of(g.start()) == "S");
  CHECK(g.find_nonterminal("A").has_value());
  REQUIRE(g.terminals().size() == 6);
  for (const auto& t : g.terminals()) CHECK(t.kind() == TerminalSpec::Kind::kLiteral);
  CHECK(g.vocab().size() == 6);
  CHECK(g.vocab().token(0) == "(");
}

TEST_CASE("empty rule body is an epsilon production") {
  auto g = load_grammar("S ::= A \"x\"\nA ::= \n");
  auto a = *g.find_nonterminal("A");
  REQUIRE(g.productions_of(a).size() == 1);
  CHECK(g.productions()[g.productions_of(a)[0]].rhs.empty());
  CHECK(g.nullable(a));
  CHECK_FALSE(g.nullable(g.start()));
}

TEST_CASE("loader errors") {
  SUBCASE("undeclared symbol is named") {
    try {
      (void)load_grammar("S ::= \"a\" B\n");
      FAIL("no error");
    } catch (const GrammarError& e) {
      CHECK(e.kind() == GrammarError::Kind::kUndeclaredSymbol);
      CHECK(std::string(e.what()).find("'B'") != std::string::npos);
      CHECK(e.line() == 1);
      CHECK(e.column() == 11);
    }
  }
  SUBCASE("duplicate rule") {
    CHECK(error_kind("S ::= \"a\"\nS ::= \"b\"\n") == GrammarError::Kind::kDuplicateRule);
  }
  SUBCASE("syntax errors carry a position") {
    try {
      (void)load_grammar("S ::= \"a\"\n  ::= \"b\"\n");
      FAIL("no error");
    } catch (const GrammarError& e) {
      CHECK(e.kind() == GrammarError::Kind::kSyntax);
      CHECK(e.line() == 2);
    }
    CHECK(error_kind("S ::= \"a") == GrammarError::Kind::kSyntax);
    CHECK(error_kind("S ::= ( \"a\"") == GrammarError::Kind::kSyntax);
    CHECK(error_kind("S ::= \"\"") == GrammarError::Kind::kSyntax);
    CHECK(error_kind("") == GrammarError::Kind::kSyntax);
  }
  SUBCASE("bad pattern") {
    CHECK(error_kind("S ::= /a(/\n") == GrammarError::Kind::kPatternCompile);
  }
  SUBCASE("literal outside an explicit vocabulary") {
    auto vocab = std::make_shared<const Vocabulary>(std::vector<std::string>{"a"});
    try {
      (void)load_grammar("S ::= \"a\" \"b\"", vocab);
      FAIL("no error");
    } catch (const GrammarError& e) {
      CHECK(e.kind() == GrammarError::Kind::kUnknownLiteral);
    }
  }
  SUBCASE("missing file") {
    try {
      (void)load_grammar_file("/nonexistent/x.gram");
      FAIL("no error");
    } catch (const GrammarError& e) {
      CHECK(e.kind() == GrammarError::Kind::kIo);
      CHECK(std::string(e.what()).find("/nonexistent/x.gram") != std::string::npos);
    }
  }
}

TEST_CASE("comments, continuation lines, groups and suffix sugar") {
  auto g = load_grammar(R"(
# leading comment
start ::= "a" ( "b" | "c" )* "d"?   # trailing comment
        | "e"+
)");
  CHECK(g.name_of(g.start()) == "start");
  auto synthetic = std::count_if(g.nonterminals().begin(), g.nonterminals().end(),
                                 [](const Nonterminal& n) { return n.synthetic; });
  CHECK(synthetic == 4);  // group, its star, the optional, the plus
  auto r = reduce_grammar(g);
  auto t = [&](const char* s) { return gcdk::testing::toks(r, s); };
  CHECK(r.terminals().size() == 5);
  // membership through the brute-force oracle
  oracle::MembershipOracle m(r, 4);
  CHECK(m.contains(t("a")));
  CHECK(m.contains(t("a b c d")));
  CHECK(m.contains(t("e e e")));
  CHECK_FALSE(m.contains(t("a d d")));
}

TEST_CASE("start symbol defaults to the first rule") {
  auto g = load_grammar("X ::= Y\nY ::= \"y\"\n");
  CHECK(g.name_of(g.start()) == "X");
}

TEST_CASE("reduce removes unproductive and unreachable symbols") {
  auto g = load_grammar("S ::= \"a\" | B\nB ::= B \"b\"\nC ::= \"c\"\n");
  auto r = reduce_grammar(g);
  CHECK(r.reduced());
  REQUIRE(r.nonterminals().size() == 1);
  CHECK(r.name_of(r.start()) == "S");
  REQUIRE(r.productions().size() == 1);
  CHECK(r.productions()[0].rhs.size() == 1);
  REQUIRE(r.terminals().size() == 1);
  CHECK(r.terminals()[0].body() == "a");
}

TEST_CASE("reduce rejects an empty language") {
  auto g = load_grammar("S ::= B\nB ::= B\n");
  try {
    (void)reduce_grammar(g);
    FAIL("no error");
  } catch (const GrammarError& e) {
    CHECK(e.kind() == GrammarError::Kind::kEmptyLanguage);
  }
}

TEST_CASE("pattern terminals with no matching token are unproductive") {
  auto vocab = std::make_shared<const Vocabulary>(std::vector<std::string>{"x", "1"});
  auto g = load_grammar("S ::= \"x\" | /[a-c]+/ S\n", vocab);
  auto r = reduce_grammar(g);
  CHECK(r.productions().size() == 1);
}

TEST_CASE("reduce is idempotent and preserves small languages for shipped grammars") {
  for (const char* name : {"brackets", "mini_for", "json_schema_example", "smiles"}) {
    CAPTURE(name);
    auto g = load_grammar_file(asset(std::string("grammars/") + name + ".gram"));
    auto once = reduce_grammar(g);
    auto twice = reduce_grammar(once);
    CHECK(twice.structurally_equal(once));

    std::size_t len = std::string(name) == "smiles" ? 3 : 6;
    auto before = oracle::enumerate_language(g, len, 4 * len + 8);
    auto after = oracle::enumerate_language(once, len, 4 * len + 8);
    std::set<oracle::TokenString> b, a;
    for (auto& [s, steps] : before) b.insert(s);
    for (auto& [s, steps] : after) a.insert(s);
    CHECK(a == b);
  }
}

TEST_CASE("bracket grammar is already reduced") {
  auto g = load_grammar_file(asset("grammars/brackets.gram"));
  CHECK(reduce_grammar(g).structurally_equal(g));
}

TEST_CASE("nullable sets") {
  auto brackets = load_grammar_file(asset("grammars/brackets.gram"));
  CHECK(nullable_names(brackets) == std::vector<std::string>{"A", "S"});

  auto mini_for = load_grammar_file(asset("grammars/mini_for.gram"));
  CHECK(nullable_set(mini_for).empty());

  auto composed = load_grammar("S ::= A A\nA ::= \n");
  CHECK(nullable_names(composed) == std::vector<std::string>{"A", "S"});
}

TEST_CASE("nullable set agrees with bounded derivation search") {
  for (const char* name : {"brackets", "mini_for", "json_schema_example", "smiles"}) {
    CAPTURE(name);
    auto g = reduce_grammar(load_grammar_file(asset(std::string("grammars/") + name + ".gram")));
    for (std::uint32_t nt = 0; nt < g.nonterminals().size(); ++nt) {
      CAPTURE(g.name_of(nt));
      CHECK(g.nullable(nt) == oracle::derives_epsilon(g, nt, 2 * g.nonterminals().size()));
    }
  }
}

TEST_CASE("terminal matching is whole-token") {
  auto vocab = Vocabulary({"(", "42", "4 2", "042"});
  auto lit = TerminalSpec::literal("(");
  auto num = TerminalSpec::pattern(R"(0|[1-9]\d*)");
  CHECK(terminal_matches(lit, vocab, vocab.at("(")));
  CHECK(terminal_matches(num, vocab, vocab.at("42")));
  CHECK_FALSE(terminal_matches(num, vocab, vocab.at("4 2")));
  CHECK_FALSE(terminal_matches(num, vocab, vocab.at("042")));
  CHECK_FALSE(terminal_matches(num, vocab, kEosToken));
}

TEST_CASE("bounded repetition inside patterns") {
  auto g = reduce_grammar(load_grammar_file(asset("grammars/json_schema_example.gram")));
  auto integer = TerminalSpec::pattern("-?(0|[1-9][0-9]{0,15})");
  CHECK(integer.matches("1234567890123456"));
  CHECK_FALSE(integer.matches("12345678901234567"));
  auto str = g.terminals();
  auto it = std::find_if(str.begin(), str.end(), [](const TerminalSpec& t) {
    return t.kind() == TerminalSpec::Kind::kPattern && t.body().front() == '"';
  });
  REQUIRE(it != str.end());
  CHECK(it->matches("\"bolt\""));
  CHECK(it->matches("\"\\u00e9\""));
  CHECK_FALSE(it->matches("\"\\u00e\""));
  CHECK_FALSE(it->matches("bolt"));
}

TEST_CASE("vocabulary validation") {
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary({"[EOS]"}), std::invalid_argument);
  CHECK_THROWS_AS(Vocabulary({""}), std::invalid_argument);
  auto v = Vocabulary::parse("a\r\n\nb c\n");
  CHECK(v.tokens() == std::vector<std::string>{"a", "b c"});
  CHECK(v.display(kEosToken) == "[EOS]");
  CHECK(v.display(kMaskToken) == "[MASK]");
}

TEST_CASE("to_text round-trips through the loader") {
  auto g = reduce_grammar(load_grammar_file(asset("grammars/smiles.gram")));
  auto again = reduce_grammar(load_grammar(g.to_text(), g.vocab_ptr()));
  CHECK(again.productions().size() == g.productions().size());
  CHECK(again.terminals() == g.terminals());
}

TEST_CASE("the C++ grammar asset loads and recognizes small programs") {
  auto g = grammar("cpp");
  CHECK(g->vocab().size() == 125);
  CHECK(is_valid(*g, toks(*g, "int main ( ) { return 0 ; }")));
  CHECK(is_valid(*g, toks(*g, "# include < iostream > using namespace std ; int main ( ) { int x = 1 ; x ++ ; "
                              "for ( int i = 0 ; i < n ; i ++ ) { ans + = v [ i ] ; } return ans ; }")));
  // Comment tokens contain spaces, so this one is spelled out.
  auto program = toks(*g, "long long solve ( int n ) { if ( n < 2 ) return n ; else return solve ( n - 1 ) ; }");
  program.insert(program.begin(), g->vocab().at("// read input"));
  CHECK(is_valid(*g, program));
  CHECK(is_extendable(*g, toks(*g, "int main ( ) {")));
  CHECK_FALSE(is_valid(*g, toks(*g, "int main ( ) {")));
  CHECK_FALSE(is_extendable(*g, toks(*g, "int main ) (")));
  CHECK_FALSE(is_extendable(*g, toks(*g, ")")));
  // Keywords also match IDENTIFIER, so they can begin a type name.
  CHECK(is_extendable(*g, toks(*g, "return")));
}
