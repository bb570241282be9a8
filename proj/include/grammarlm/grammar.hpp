#pragma once

#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "grammarlm/io.hpp"
#include "grammarlm/wfst.hpp"

namespace grammarlm {

// Grammar DSL, a small thrax-like subset:
//
//   # comment
//   i_want_to = ("[i]" ("[want]" | "[need]" | ("[would]" "[like]")) "[to]");
//   food      = (["food"] | DISH_NAME);
//   weighted  = ("a":2 | "b" "c":1 | "d");
//
// Quoted literals may hold several words and have any [ ] inside the quotes
// stripped. [x] and x? are optional. Lower-case identifiers refer to rules;
// ALL_CAPS identifiers that are not rules name catalogs (non-terminals).

struct Expression;
struct Branch;

struct Sequence {
  std::vector<Expression> items;
};
struct Alternation {
  std::vector<Branch> branches;
};
struct Optional {
  std::shared_ptr<const Expression> inner;
};
struct Literal {
  std::string word;
};
struct RuleRef {
  std::string name;
};
struct NonTerminalRef {
  std::string name;
};

struct Expression {
  std::variant<Sequence, Alternation, Optional, Literal, RuleRef, NonTerminalRef> node;
};

struct Branch {
  Expression expr;
  std::optional<double> weight;
};

class GrammarAst {
 public:
  /// Rules in definition order.
  const std::vector<std::pair<std::string, Expression>>& rules() const { return rules_; }
  const Expression* find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }
  /// Catalog names referenced anywhere in the grammar.
  std::vector<std::string> nonterminals() const;

 private:
  friend GrammarAst parse_grammar(std::string_view text);
  std::vector<std::pair<std::string, Expression>> rules_;
  std::map<std::string, size_t, std::less<>> index_;
};

/// Throws Syntax (with line and column), DuplicateRule, UnresolvedRule or
/// CyclicRule.
GrammarAst parse_grammar(std::string_view text);

struct CatalogEntry {
  Words phrase;
  double weight = 1.0;
};

struct Catalog {
  std::string name;
  std::vector<CatalogEntry> entries;
};

/// One entry per line: "phrase words" optionally followed by TAB and a
/// weight (default 1.0). Blank lines are skipped.
Catalog load_catalog(std::istream& in, std::string name);
Catalog parse_catalog(std::string_view text, std::string name);

/// Two-state-plus-chains acceptor: one path per entry, weighted by the entry
/// weight on its first arc.
WeightedFst catalog_fst(const Catalog& catalog);

struct CompileOptions {
  /// Splice catalogs directly into the FST. When false, catalog references
  /// become non-terminal arcs for a later replace().
  bool inline_catalogs = false;
  double optional_weight = 0.5;
};

/// Inlines every rule reference reachable from `root`. Unweighted branches of
/// an unweighted alternation carry weight 1; an alternation with any explicit
/// weight is normalized to sum to one, unweighted branches first taking the
/// mean explicit weight.
WeightedFst compile(const GrammarAst& ast, std::string_view root,
                    const std::vector<Catalog>& catalogs = {},
                    const CompileOptions& options = {});

/// Branch weights of one alternation after the rules above.
std::vector<double> branch_weights(const Alternation& alt);

}  // namespace grammarlm
