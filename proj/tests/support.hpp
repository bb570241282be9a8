// Shared fixtures and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "grammarlm/counts.hpp"
#include "grammarlm/io.hpp"
#include "grammarlm/lm.hpp"
#include "grammarlm/wfst.hpp"

namespace testsupport {

using grammarlm::Arc;
using grammarlm::Label;
using grammarlm::StateId;
using grammarlm::WeightedFst;
using grammarlm::Words;

inline bool close_rel(double a, double b, double rel) {
  if (a == b) return true;
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

// ---------------------------------------------------------------------------
// Path enumeration written independently of the library: plain recursion,
// linear-domain products, epsilons skipped.

struct Path {
  Words words;
  double weight;
};

inline void enumerate_from(const WeightedFst& f, StateId s, Words& words, double w,
                           std::vector<Path>& out) {
  if (f.final_weight(s) > 0.0) out.push_back({words, w * f.final_weight(s)});
  for (const Arc& a : f.arcs(s)) {
    if (a.weight == 0.0) continue;
    bool word = a.label.is_word();
    if (word) words.push_back(a.label.name);
    enumerate_from(f, a.next, words, w * a.weight, out);
    if (word) words.pop_back();
  }
}

inline std::vector<Path> enumerate_paths(const WeightedFst& f) {
  std::vector<Path> out;
  Words words;
  enumerate_from(f, f.start(), words, 1.0, out);
  return out;
}

inline double path_mass(const std::vector<Path>& paths) {
  double z = 0.0;
  for (const auto& p : paths) z += p.weight;
  return z;
}

/// Expected counts straight from the definition: every occurrence of every
/// n-gram in every path, weighted by the normalized path probability.
inline std::map<Words, double> reference_counts(const std::vector<Path>& paths, int order,
                                                bool boundaries) {
  const double z = path_mass(paths);
  std::map<Words, double> out;
  for (const auto& p : paths) {
    Words s;
    if (boundaries) s.push_back("<s>");
    s.insert(s.end(), p.words.begin(), p.words.end());
    if (boundaries) s.push_back("</s>");
    for (size_t i = 0; i < s.size(); ++i)
      for (int n = 1; n <= order && i + n <= s.size(); ++n) {
        if (n == 1 && s[i] == "<s>") continue;
        out[Words(s.begin() + i, s.begin() + i + n)] += p.weight / z;
      }
  }
  return out;
}

/// Number of complete paths, by DP over a topological order (acyclic only).
inline double count_paths(const WeightedFst& f) {
  auto order = grammarlm::topological_order(f);
  std::vector<double> n(f.num_states(), 0.0);
  n[f.start()] = 1.0;
  double total = 0.0;
  for (StateId s : order) {
    if (f.is_final(s)) total += n[s];
    for (const Arc& a : f.arcs(s))
      if (a.weight > 0.0) n[a.next] += n[s];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Random acyclic FSTs: layered DAG, arcs only go to later layers.

inline WeightedFst random_dag(std::mt19937_64& rng, int layers, int width, int vocab,
                              double epsilon_rate = 0.0) {
  WeightedFst f;
  std::vector<std::vector<StateId>> layer(layers);
  for (int l = 0; l < layers; ++l) {
    int w = l == 0 || l == layers - 1 ? 1 : 1 + static_cast<int>(rng() % width);
    for (int i = 0; i < w; ++i) layer[l].push_back(f.add_state());
  }
  f.set_start(layer[0][0]);
  std::uniform_real_distribution<double> weight(0.05, 1.0), coin(0.0, 1.0);
  auto word = [&] { return "w" + std::to_string(rng() % vocab); };
  for (int l = 0; l + 1 < layers; ++l)
    for (StateId s : layer[l]) {
      // Guarantee one outgoing arc into the next layer, then add extras.
      int extra = static_cast<int>(rng() % 3);
      for (int k = 0; k <= extra; ++k) {
        int target_layer = k == 0 ? l + 1 : std::min(layers - 1, l + 1 + static_cast<int>(rng() % 2));
        const auto& tl = layer[target_layer];
        StateId t = tl[rng() % tl.size()];
        Label lab = coin(rng) < epsilon_rate ? Label::epsilon() : Label::word(word());
        f.add_arc(s, {lab, weight(rng), t});
      }
    }
  // Every state of the next layer must be reachable for the DAG to be tidy;
  // unreachable ones are harmless, they just carry zero alpha.
  f.set_final(layer[layers - 1][0], 1.0);
  if (coin(rng) < 0.5 && layers > 2) f.set_final(layer[layers - 2][0], weight(rng));
  return f;
}

// ---------------------------------------------------------------------------
// Word-level edit distance with the full DP table, written separately from
// the library's rolling-row version. Returns the error count only.

inline int reference_edit_errors(const Words& hyp, const Words& ref) {
  std::vector<std::vector<int>> d(hyp.size() + 1, std::vector<int>(ref.size() + 1, 0));
  for (size_t i = 0; i <= hyp.size(); ++i) d[i][0] = static_cast<int>(i);
  for (size_t j = 0; j <= ref.size(); ++j) d[0][j] = static_cast<int>(j);
  for (size_t i = 1; i <= hyp.size(); ++i)
    for (size_t j = 1; j <= ref.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
  return d[hyp.size()][ref.size()];
}

// ---------------------------------------------------------------------------
// Models

/// Unigram model giving each of `words` and </s> the same probability.
inline std::string uniform_arpa(const std::vector<std::string>& words) {
  std::vector<std::string> vocab = words;
  vocab.push_back("</s>");
  std::sort(vocab.begin(), vocab.end());
  const double lp = -std::log10(static_cast<double>(vocab.size()));
  std::string out = "\\data\\\nngram 1=" + std::to_string(vocab.size() + 1) + "\n\n\\1-grams:\n";
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& w : vocab) entries.push_back({w, lp});
  entries.push_back({"<s>", -99.0});
  std::sort(entries.begin(), entries.end());
  for (const auto& [w, p] : entries) out += grammarlm::format_fixed(p, 6) + "\t" + w + "\n";
  return out + "\n\\end\\\n";
}

/// Sum over the vocabulary (minus <s>) of p(w | h) for every history that
/// has explicit continuations, plus the empty history. Returns the largest
/// deviation from one.
inline double max_normalization_error(const grammarlm::NGramModel& m) {
  using grammarlm::IdSeq;
  using grammarlm::WordId;
  std::vector<IdSeq> histories{IdSeq{}};
  for (int n = 2; n <= m.order(); ++n)
    for (const auto& [g, e] : m.ngrams(n)) {
      IdSeq h(g.begin(), g.end() - 1);
      if (histories.back() != h) histories.push_back(h);
    }
  std::sort(histories.begin(), histories.end());
  histories.erase(std::unique(histories.begin(), histories.end()), histories.end());
  const WordId bos = m.find_word("<s>");
  double worst = 0.0;
  for (const auto& h : histories) {
    double sum = 0.0;
    for (WordId w = 0; w < static_cast<WordId>(m.vocabulary().size()); ++w) {
      if (w == bos) continue;
      double lp = m.log10_prob(h, w);
      if (!std::isinf(lp)) sum += std::pow(10.0, lp);
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

}  // namespace testsupport
