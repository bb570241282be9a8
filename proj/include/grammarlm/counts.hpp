#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "grammarlm/io.hpp"
#include "grammarlm/wfst.hpp"

namespace grammarlm {

inline const std::string kSentenceStart = "<s>";
inline const std::string kSentenceEnd = "</s>";

using NGram = Words;

/// Fractional n-gram counts for orders 1..order. The sentence-start symbol
/// only ever appears as context, so it has no unigram entry.
struct ExpectedCounts {
  int order = 0;
  std::map<NGram, double> table;
  std::vector<double> total_mass_by_order;  // index n-1

  double get(const NGram& g) const {
    auto it = table.find(g);
    return it == table.end() ? 0.0 : it->second;
  }
  void recompute_totals();
};

/// In-flight histories whose accumulated posterior mass falls below
/// `threshold` are neither extended nor propagated.
struct PruneConfig {
  double threshold = 1e-8;
  bool enabled = true;

  static PruneConfig off() { return {0.0, false}; }
  double effective() const { return enabled ? threshold : 0.0; }
};

/// Exact expected counts by history propagation over the (epsilon-free)
/// FST in topological order. Each state keeps a map from the last order-1
/// words to their accumulated posterior mass; extending along an arc scales
/// the mass by weight * beta(next) / beta(here). Cyclic FSTs are handled by
/// worklist propagation and need a positive prune threshold to terminate.
ExpectedCounts expected_counts(const WeightedFst& f, int order, bool boundaries = true,
                               const PruneConfig& prune = {});

inline constexpr std::uint64_t kDefaultPathCap = 1'000'000;

/// Enumerates every complete path and sums p(path) * occurrences.
ExpectedCounts brute_force_counts(const WeightedFst& f, int order, bool boundaries = true,
                                  std::uint64_t max_paths = kDefaultPathCap);

/// Adds weight * (occurrences in `sentence`) for every n-gram of order
/// 1..order, framing the sentence with <s> ... </s> when asked.
void add_sentence_ngrams(const Words& sentence, int order, bool boundaries, double weight,
                         std::map<NGram, double>& table);

struct IntegerCounts {
  int order = 0;
  std::map<NGram, std::int64_t> table;
  double scale = 1.0;  // factor applied to the fractional counts

  std::int64_t get(const NGram& g) const {
    auto it = table.find(g);
    return it == table.end() ? 0 : it->second;
  }
};

inline constexpr double kDefaultTargetMass = 1e6;

/// Multiplies every count by target_mass / (unigram mass) and rounds to the
/// nearest integer, dropping entries that round to zero.
IntegerCounts scale_counts(const ExpectedCounts& c, double target_mass = kDefaultTargetMass);

/// Integer counts of a corpus of sentences.
IntegerCounts count_sentences(const std::vector<Words>& sentences, int order,
                              bool boundaries = true);

/// "w1 ... wn<TAB>count" lines, counts with 17 significant digits (exact round trip), sorted.
std::string write_counts_text(const ExpectedCounts& c);
ExpectedCounts read_counts_text(std::string_view text);

}  // namespace grammarlm
