#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grammarlm/io.hpp"

namespace grammarlm {

using StateId = std::int32_t;

enum class LabelKind : std::uint8_t { Word, Epsilon, NonTerminal };

struct Label {
  LabelKind kind = LabelKind::Epsilon;
  std::string name;

  static Label word(std::string w) { return {LabelKind::Word, std::move(w)}; }
  static Label epsilon() { return {LabelKind::Epsilon, {}}; }
  static Label nonterminal(std::string n) { return {LabelKind::NonTerminal, std::move(n)}; }

  bool is_word() const { return kind == LabelKind::Word; }
  bool is_epsilon() const { return kind == LabelKind::Epsilon; }
  bool is_nonterminal() const { return kind == LabelKind::NonTerminal; }

  friend bool operator==(const Label&, const Label&) = default;
};

struct Arc {
  Label label;
  double weight = 1.0;  // unnormalized, >= 0
  StateId next = 0;

  friend bool operator==(const Arc&, const Arc&) = default;
};

/// Weighted acceptor with word, epsilon and non-terminal arc labels. Weights
/// are unnormalized probabilities; path probabilities are always taken
/// relative to the total path mass.
class WeightedFst {
 public:
  StateId add_state();
  void set_start(StateId s);
  void set_final(StateId s, double weight);
  void add_arc(StateId from, Arc arc);

  StateId start() const { return start_; }
  double final_weight(StateId s) const { return states_.at(s).final; }
  bool is_final(StateId s) const { return final_weight(s) > 0.0; }
  std::span<const Arc> arcs(StateId s) const { return states_.at(s).arcs; }
  StateId num_states() const { return static_cast<StateId>(states_.size()); }
  size_t num_arcs() const;

  bool has_nonterminals() const;
  bool has_epsilons() const;
  std::set<std::string> nonterminals() const;
  /// Word labels appearing on any arc.
  std::set<std::string> vocabulary() const;

  friend bool operator==(const WeightedFst&, const WeightedFst&) = default;

 private:
  struct State {
    std::vector<Arc> arcs;
    double final = 0.0;
    friend bool operator==(const State&, const State&) = default;
  };
  std::vector<State> states_;
  StateId start_ = 0;
};

/// Per-state forward and backward path masses, kept in natural-log space.
struct ForwardBackward {
  std::vector<double> log_alpha;
  std::vector<double> log_beta;
  double log_z = 0.0;
  bool cyclic = false;
  int iterations = 0;  // fixpoint sweeps for cyclic input, 0 otherwise

  double alpha(StateId s) const;
  double beta(StateId s) const;
  double z() const;
};

inline constexpr int kDefaultReplaceDepth = 16;

/// Splices every non-terminal arc with a copy of its bound FST. The replaced
/// arc's weight enters the copy; copy final weights leave it. Bound FSTs may
/// themselves contain non-terminals, expanded up to max_depth levels.
WeightedFst replace(const WeightedFst& root,
                    const std::map<std::string, WeightedFst>& bindings,
                    int max_depth = kDefaultReplaceDepth);

/// Weighted epsilon-closure. The result has no epsilon arcs, accepts the same
/// weighted word sequences, and keeps only states on some positive path
/// (plus the start state).
WeightedFst remove_epsilons(const WeightedFst& f);

/// Throws CycleDetected when the arc graph has a cycle.
std::vector<StateId> topological_order(const WeightedFst& f);
bool is_acyclic(const WeightedFst& f);

/// Topological dynamic programming on acyclic input, Gauss-Seidel fixpoint
/// iteration (threshold 1e-12 in the log domain, at most 1e4 sweeps)
/// otherwise. Throws DivergentMass or ZeroMass.
ForwardBackward forward_backward(const WeightedFst& f);

inline constexpr double kFixpointTolerance = 1e-12;
inline constexpr int kFixpointMaxIterations = 10000;

/// Draws complete paths with probability weight / Z.
class PathSampler {
 public:
  explicit PathSampler(const WeightedFst& f);

  template <class Rng>
  Words sample(Rng& rng) const {
    return sample_with([&rng]() { return rng(); });
  }

 private:
  Words sample_with(const std::function<std::uint64_t()>& next) const;

  struct Choice {
    double cumulative;
    int arc;  // -1 means stop here
  };
  WeightedFst fst_;
  std::vector<std::vector<Choice>> choices_;
};

/// Deterministic in the seed: the engine is std::mt19937_64.
Words sample_path(const WeightedFst& f, std::uint64_t seed);

/// Visits every complete path (words and unnormalized weight) in depth-first
/// order. Throws CycleDetected on cyclic input and PathCapExceeded once more
/// than max_paths paths have been produced.
void for_each_path(const WeightedFst& f, std::uint64_t max_paths,
                   const std::function<void(const Words&, double)>& visit);

/// AT&T-style text: "src<TAB>dst<TAB>label<TAB>weight" per arc and
/// "state<TAB>final_weight" per final state. The first line names the start
/// state. Epsilon prints as <eps>, non-terminals as $NAME.
std::string write_fst_text(const WeightedFst& f);
WeightedFst read_fst_text(std::string_view text);

inline constexpr std::string_view kEpsilonSymbol = "<eps>";

}  // namespace grammarlm
