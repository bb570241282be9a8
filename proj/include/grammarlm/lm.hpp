#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grammarlm/counts.hpp"
#include "grammarlm/io.hpp"
#include "grammarlm/wfst.hpp"

namespace grammarlm {

using WordId = std::int32_t;
using IdSeq = std::vector<WordId>;

inline const std::string kUnknown = "<unk>";
inline constexpr WordId kNoWord = -1;
/// ARPA stand-in for log10(0).
inline constexpr double kArpaLogZero = -99.0;

struct NGramEntry {
  double log10_prob = 0.0;
  std::optional<double> log10_bow;

  friend bool operator==(const NGramEntry&, const NGramEntry&) = default;
};

/// ARPA-style back-off model. Word ids follow the sorted vocabulary, so id
/// order equals string order.
class NGramModel {
 public:
  NGramModel() = default;
  NGramModel(int order, std::vector<std::string> sorted_vocab,
             std::vector<std::map<IdSeq, NGramEntry>> tables);

  int order() const { return order_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  const std::string& word(WordId id) const { return vocab_.at(id); }
  /// Exact lookup; kNoWord when absent.
  WordId find_word(std::string_view w) const;
  /// Like find_word, but out-of-vocabulary words map to <unk> when the model
  /// has one.
  WordId map_word(std::string_view w) const;
  IdSeq map_words(const Words& words) const;
  bool has_unk() const { return unk_ != kNoWord; }

  /// n in 1..order.
  const std::map<IdSeq, NGramEntry>& ngrams(int n) const { return tables_.at(n - 1); }
  const NGramEntry* find(std::span<const WordId> ngram) const;
  size_t num_entries() const;

  /// Back-off resolved log10 p(word | history); only the last order-1
  /// history words matter. -inf for words the model cannot produce.
  double log10_prob(std::span<const WordId> history, WordId word) const;
  double prob(const Words& history, std::string_view word) const;

  friend bool operator==(const NGramModel&, const NGramModel&) = default;

 private:
  int order_ = 0;
  std::vector<std::string> vocab_;
  std::vector<std::map<IdSeq, NGramEntry>> tables_;
  WordId unk_ = kNoWord;
};

struct KatzConfig {
  int order = 3;
  /// Minimum count kept per order (index n-1); missing entries mean 1.
  std::vector<std::int64_t> cutoffs;
  /// Adds an <unk> entry that receives left-over unigram mass.
  bool open_vocabulary = false;
  /// Extra zero-count vocabulary, e.g. every word a grammar can produce.
  std::vector<std::string> extra_vocabulary;
  /// Counts above this are not discounted.
  int max_discounted_count = 5;
  double fallback_discount = 0.5;
};

/// Katz back-off with Good-Turing discounts from the count-of-counts of each
/// order. An order whose count-of-counts are unusable, and any history whose
/// Good-Turing discounts leave no back-off mass, uses absolute discounting
/// instead. Probabilities are stored at ARPA precision and back-off weights
/// are fitted to the stored values, so a written and re-read model is the
/// same model.
NGramModel train_katz(const IntegerCounts& counts, const KatzConfig& config,
                      std::vector<std::string>* warnings = nullptr);

/// Samples `n_samples` sentences (std::mt19937_64 seeded with `seed`),
/// counts them and trains Katz over the FST's full vocabulary.
NGramModel train_from_samples(const WeightedFst& f, std::uint64_t n_samples, std::uint64_t seed,
                              const KatzConfig& config);

/// Keeps the `max_new_words` new words (absent from `baseline_vocab`) with
/// the largest unigram counts; n-grams with any other new word are dropped.
ExpectedCounts cap_new_vocabulary(const ExpectedCounts& counts,
                                  const std::vector<std::string>& baseline_vocab,
                                  size_t max_new_words);

struct EvalCorpus {
  std::vector<Words> sentences;
  size_t m = 0;  // scored tokens, one end symbol per sentence included

  static EvalCorpus from_sentences(std::vector<Words> sentences);
};

/// One sentence per line, whitespace tokenized; blank lines are skipped.
EvalCorpus read_corpus(std::string_view text);
std::string write_corpus(const std::vector<Words>& sentences);

/// log10 P(sentence). With boundaries the history starts at <s> and </s> is
/// scored at the end.
double sentence_logprob(const NGramModel& m, const Words& sentence, bool boundaries = true);

/// exp(-sum(ln p) / m). Throws InfinitePerplexity on a zero probability.
double perplexity(const NGramModel& m, const EvalCorpus& c);

/// Fixed ARPA layout, log10 values printed with 6 decimals.
std::string write_arpa(const NGramModel& m);
NGramModel read_arpa(std::string_view text);

}  // namespace grammarlm
