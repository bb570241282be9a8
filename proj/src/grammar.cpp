#include "grammarlm/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "grammarlm/error.hpp"

namespace grammarlm {

namespace {

enum class Tok { Ident, String, Number, LParen, RParen, LBracket, RBracket, Bar, Semi, Colon,
                 Question, Equals, End };

struct Token {
  Tok kind;
  std::string text;
  int line;
  int column;
};

[[noreturn]] void syntax_error(int line, int column, const std::string& what) {
  throw Error(ErrorKind::Syntax,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what);
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space_and_comments();
      if (pos_ >= src_.size()) {
        out.push_back({Tok::End, "", line_, col_});
        return out;
      }
      out.push_back(next());
    }
  }

 private:
  char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
  char advance() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space_and_comments() {
    while (pos_ < src_.size()) {
      char c = peek();
      if (c == '#') {
        while (pos_ < src_.size() && peek() != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  Token next() {
    const int line = line_, col = col_;
    char c = peek();
    auto single = [&](Tok t) {
      advance();
      return Token{t, std::string(1, c), line, col};
    };
    switch (c) {
      case '(': return single(Tok::LParen);
      case ')': return single(Tok::RParen);
      case '[': return single(Tok::LBracket);
      case ']': return single(Tok::RBracket);
      case '|': return single(Tok::Bar);
      case ';': return single(Tok::Semi);
      case ':': return single(Tok::Colon);
      case '?': return single(Tok::Question);
      case '=': return single(Tok::Equals);
      case '"': {
        advance();
        std::string text;
        while (pos_ < src_.size() && peek() != '"') {
          if (peek() == '\n') syntax_error(line, col, "unterminated string literal");
          if (peek() == '\\' && pos_ + 1 < src_.size()) advance();
          text += advance();
        }
        if (pos_ >= src_.size()) syntax_error(line, col, "unterminated string literal");
        advance();
        return {Tok::String, std::move(text), line, col};
      }
      default: break;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string text;
      while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') text += advance();
      return {Tok::Ident, std::move(text), line, col};
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::string text;
      while (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.' || peek() == 'e' ||
             peek() == 'E' ||
             ((peek() == '-' || peek() == '+') && !text.empty() &&
              (text.back() == 'e' || text.back() == 'E')))
        text += advance();
      return {Tok::Number, std::move(text), line, col};
    }
    syntax_error(line, col, std::string("unexpected character '") + c + "'");
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// Literal words of a quoted string: brackets inside the quotes are dropped.
Words literal_words(const std::string& quoted) {
  std::string cleaned;
  for (char c : quoted)
    if (c != '[' && c != ']') cleaned += c;
  return split_words(cleaned);
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  template <class Sink>
  void rules(Sink&& sink) {
    while (cur().kind != Tok::End) {
      Token name = expect(Tok::Ident, "rule name");
      expect(Tok::Equals, "'='");
      Expression body = alternation();
      expect(Tok::Semi, "';' after rule");
      sink(name, std::move(body));
    }
  }

 private:
  const Token& cur() const { return toks_[pos_]; }
  bool at(Tok t) const { return cur().kind == t; }
  Token take() { return toks_[pos_++]; }
  Token expect(Tok t, const char* what) {
    if (!at(t)) {
      std::string got = cur().kind == Tok::End ? "end of input" : "'" + cur().text + "'";
      syntax_error(cur().line, cur().column, std::string("expected ") + what + ", got " + got);
    }
    return take();
  }

  bool starts_primary() const {
    return at(Tok::LParen) || at(Tok::LBracket) || at(Tok::String) || at(Tok::Ident);
  }

  Expression alternation() {
    std::vector<Branch> branches;
    branches.push_back(branch());
    while (at(Tok::Bar)) {
      take();
      branches.push_back(branch());
    }
    if (branches.size() == 1 && !branches.front().weight) return std::move(branches.front().expr);
    Alternation alt{std::move(branches)};
    double total = 0.0;
    bool any_unweighted = false;
    for (const auto& b : alt.branches) {
      if (b.weight)
        total += *b.weight;
      else
        any_unweighted = true;
    }
    if (!any_unweighted && total <= 0.0)
      syntax_error(cur().line, cur().column, "alternation has zero total weight");
    return {std::move(alt)};
  }

  Branch branch() {
    Branch b{sequence(), std::nullopt};
    if (at(Tok::Colon)) {
      take();
      Token num = expect(Tok::Number, "weight after ':'");
      double w = 0.0;
      auto [ptr, ec] = std::from_chars(num.text.data(), num.text.data() + num.text.size(), w);
      if (ec != std::errc() || ptr != num.text.data() + num.text.size())
        syntax_error(num.line, num.column, "malformed weight '" + num.text + "'");
      if (w < 0.0) syntax_error(num.line, num.column, "negative weight");
      b.weight = w;
    }
    return b;
  }

  Expression sequence() {
    if (!starts_primary())
      syntax_error(cur().line, cur().column,
                   "expected an expression, got '" + cur().text + "'");
    std::vector<Expression> items;
    while (starts_primary()) {
      Expression e = primary();
      while (at(Tok::Question)) {
        take();
        e = Expression{Optional{std::make_shared<const Expression>(std::move(e))}};
      }
      if (auto* seq = std::get_if<Sequence>(&e.node)) {
        for (auto& item : seq->items) items.push_back(std::move(item));
      } else {
        items.push_back(std::move(e));
      }
    }
    if (items.size() == 1) return std::move(items.front());
    return {Sequence{std::move(items)}};
  }

  Expression primary() {
    if (at(Tok::LParen)) {
      take();
      Expression e = alternation();
      expect(Tok::RParen, "')'");
      return e;
    }
    if (at(Tok::LBracket)) {
      take();
      Expression e = alternation();
      expect(Tok::RBracket, "']'");
      return {Optional{std::make_shared<const Expression>(std::move(e))}};
    }
    if (at(Tok::String)) {
      Token t = take();
      Words words = literal_words(t.text);
      if (words.empty()) syntax_error(t.line, t.column, "empty string literal");
      if (words.size() == 1) return {Literal{words.front()}};
      Sequence seq;
      for (auto& w : words) seq.items.push_back({Literal{std::move(w)}});
      return {std::move(seq)};
    }
    Token t = expect(Tok::Ident, "expression");
    return {RuleRef{t.text}};
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
};

bool looks_like_catalog(std::string_view name) {
  bool letter = false;
  for (char c : name) {
    if (std::islower(static_cast<unsigned char>(c))) return false;
    if (std::isupper(static_cast<unsigned char>(c))) letter = true;
  }
  return letter;
}

// Turns unresolved all-caps references into catalog references, rejects the
// rest, and collects rule-to-rule edges.
void resolve(Expression& e, const GrammarAst& ast, const std::string& owner,
             std::set<std::string>& edges) {
  std::visit(
      [&](auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Sequence>) {
          for (auto& item : node.items) resolve(item, ast, owner, edges);
        } else if constexpr (std::is_same_v<T, Alternation>) {
          for (auto& b : node.branches) resolve(b.expr, ast, owner, edges);
        } else if constexpr (std::is_same_v<T, Optional>) {
          Expression inner = *node.inner;
          resolve(inner, ast, owner, edges);
          node.inner = std::make_shared<const Expression>(std::move(inner));
        } else if constexpr (std::is_same_v<T, RuleRef>) {
          if (ast.contains(node.name)) {
            edges.insert(node.name);
          } else if (looks_like_catalog(node.name)) {
            std::string name = node.name;
            e.node = NonTerminalRef{std::move(name)};
          } else {
            throw Error(ErrorKind::UnresolvedRule,
                        "rule '" + owner + "' references undefined rule '" + node.name + "'");
          }
        }
      },
      e.node);
}

void collect_nonterminals(const Expression& e, std::set<std::string>& out) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Sequence>) {
          for (const auto& item : node.items) collect_nonterminals(item, out);
        } else if constexpr (std::is_same_v<T, Alternation>) {
          for (const auto& b : node.branches) collect_nonterminals(b.expr, out);
        } else if constexpr (std::is_same_v<T, Optional>) {
          collect_nonterminals(*node.inner, out);
        } else if constexpr (std::is_same_v<T, NonTerminalRef>) {
          out.insert(node.name);
        }
      },
      e.node);
}

}  // namespace

const Expression* GrammarAst::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &rules_[it->second].second;
}

std::vector<std::string> GrammarAst::nonterminals() const {
  std::set<std::string> names;
  for (const auto& [_, e] : rules_) collect_nonterminals(e, names);
  return {names.begin(), names.end()};
}

GrammarAst parse_grammar(std::string_view text) {
  GrammarAst ast;
  Parser parser(Lexer(text).run());
  parser.rules([&](const Token& name, Expression body) {
    if (ast.index_.count(name.text))
      throw Error(ErrorKind::DuplicateRule, "line " + std::to_string(name.line) +
                                                ": duplicate rule '" + name.text + "'");
    ast.index_.emplace(name.text, ast.rules_.size());
    ast.rules_.emplace_back(name.text, std::move(body));
  });

  std::map<std::string, std::set<std::string>> graph;
  for (auto& [name, body] : ast.rules_) resolve(body, ast, name, graph[name]);

  // Rules are inlined at compile time, so the reference graph must be a DAG.
  enum Mark { White, Grey, Black };
  std::map<std::string, Mark> mark;
  std::function<void(const std::string&)> dfs = [&](const std::string& r) {
    mark[r] = Grey;
    for (const auto& next : graph[r]) {
      if (mark[next] == Grey)
        throw Error(ErrorKind::CyclicRule, "cyclic rule reference through '" + next + "'");
      if (mark[next] == White) dfs(next);
    }
    mark[r] = Black;
  };
  for (const auto& [name, _] : ast.rules_)
    if (mark[name] == White) dfs(name);
  return ast;
}

// ---------------------------------------------------------------------------
// catalogs

Catalog parse_catalog(std::string_view text, std::string name) {
  Catalog cat{std::move(name), {}};
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;

    CatalogEntry entry;
    std::string_view phrase = line;
    if (auto tab = line.rfind('\t'); tab != std::string_view::npos) {
      std::string_view num = trim(line.substr(tab + 1));
      phrase = line.substr(0, tab);
      auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), entry.weight);
      if (num.empty() || ec != std::errc() || ptr != num.data() + num.size())
        throw Error(ErrorKind::MalformedLine, "catalog " + cat.name + " line " +
                                                  std::to_string(line_no) + ": bad weight '" +
                                                  std::string(num) + "'");
      if (entry.weight < 0.0)
        throw Error(ErrorKind::NegativeWeight,
                    "catalog " + cat.name + " line " + std::to_string(line_no) + ": negative weight");
    }
    entry.phrase = split_words(phrase);
    if (entry.phrase.empty())
      throw Error(ErrorKind::MalformedLine,
                  "catalog " + cat.name + " line " + std::to_string(line_no) + ": empty phrase");
    cat.entries.push_back(std::move(entry));
  }
  if (cat.entries.empty()) throw Error(ErrorKind::EmptyCatalog, "catalog " + cat.name + " is empty");
  bool positive = std::any_of(cat.entries.begin(), cat.entries.end(),
                              [](const CatalogEntry& e) { return e.weight > 0.0; });
  if (!positive) throw Error(ErrorKind::ZeroMass, "catalog " + cat.name + " has no positive weight");
  return cat;
}

Catalog load_catalog(std::istream& in, std::string name) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_catalog(ss.str(), std::move(name));
}

namespace {

void add_phrase(WeightedFst& f, StateId from, StateId to, const Words& phrase, double weight) {
  StateId s = from;
  for (size_t i = 0; i < phrase.size(); ++i) {
    StateId next = i + 1 == phrase.size() ? to : f.add_state();
    f.add_arc(s, {Label::word(phrase[i]), i == 0 ? weight : 1.0, next});
    s = next;
  }
}

}  // namespace

WeightedFst catalog_fst(const Catalog& catalog) {
  WeightedFst f;
  StateId start = f.add_state();
  StateId final = f.add_state();
  f.set_start(start);
  f.set_final(final, 1.0);
  for (const auto& e : catalog.entries) add_phrase(f, start, final, e.phrase, e.weight);
  return f;
}

// ---------------------------------------------------------------------------
// compilation

std::vector<double> branch_weights(const Alternation& alt) {
  double explicit_sum = 0.0;
  size_t explicit_count = 0;
  for (const auto& b : alt.branches)
    if (b.weight) {
      explicit_sum += *b.weight;
      ++explicit_count;
    }
  std::vector<double> out;
  out.reserve(alt.branches.size());
  if (explicit_count == 0) {
    out.assign(alt.branches.size(), 1.0);
    return out;
  }
  const double fill = explicit_sum / static_cast<double>(explicit_count);
  for (const auto& b : alt.branches) out.push_back(b.weight ? *b.weight : fill);
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& w : out) w /= total;
  return out;
}

namespace {

class Compiler {
 public:
  Compiler(const GrammarAst& ast, const std::vector<Catalog>& catalogs, const CompileOptions& opts)
      : ast_(ast), opts_(opts) {
    for (const auto& c : catalogs) catalogs_.emplace(c.name, &c);
  }

  WeightedFst run(const Expression& root) {
    StateId start = fst_.add_state();
    StateId final = fst_.add_state();
    fst_.set_start(start);
    fst_.set_final(final, 1.0);
    build(root, start, final, 1.0);
    return std::move(fst_);
  }

 private:
  // Adds paths for `e` between `from` and `to`; `weight` multiplies into the
  // first arc of every path.
  void build(const Expression& e, StateId from, StateId to, double weight) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Literal>) {
            fst_.add_arc(from, {Label::word(node.word), weight, to});
          } else if constexpr (std::is_same_v<T, Sequence>) {
            StateId s = from;
            for (size_t i = 0; i < node.items.size(); ++i) {
              StateId next = i + 1 == node.items.size() ? to : fst_.add_state();
              build(node.items[i], s, next, i == 0 ? weight : 1.0);
              s = next;
            }
          } else if constexpr (std::is_same_v<T, Alternation>) {
            auto ws = branch_weights(node);
            for (size_t i = 0; i < node.branches.size(); ++i)
              build(node.branches[i].expr, from, to, weight * ws[i]);
          } else if constexpr (std::is_same_v<T, Optional>) {
            build(*node.inner, from, to, weight * opts_.optional_weight);
            fst_.add_arc(from, {Label::epsilon(), weight * (1.0 - opts_.optional_weight), to});
          } else if constexpr (std::is_same_v<T, RuleRef>) {
            build(*ast_.find(node.name), from, to, weight);
          } else if constexpr (std::is_same_v<T, NonTerminalRef>) {
            if (!opts_.inline_catalogs) {
              fst_.add_arc(from, {Label::nonterminal(node.name), weight, to});
              return;
            }
            auto it = catalogs_.find(node.name);
            if (it == catalogs_.end())
              throw Error(ErrorKind::MissingCatalog, "no catalog for non-terminal " + node.name);
            for (const auto& entry : it->second->entries)
              add_phrase(fst_, from, to, entry.phrase, weight * entry.weight);
          }
        },
        e.node);
  }

  const GrammarAst& ast_;
  const CompileOptions& opts_;
  std::map<std::string, const Catalog*> catalogs_;
  WeightedFst fst_;
};

}  // namespace

WeightedFst compile(const GrammarAst& ast, std::string_view root,
                    const std::vector<Catalog>& catalogs, const CompileOptions& options) {
  const Expression* body = ast.find(root);
  if (!body) throw Error(ErrorKind::UnknownRoot, "unknown root rule '" + std::string(root) + "'");
  if (!(options.optional_weight >= 0.0 && options.optional_weight <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "optional weight must lie in [0, 1]");
  return Compiler(ast, catalogs, options).run(*body);
}

}  // namespace grammarlm
