#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grammarlm/io.hpp"
#include "grammarlm/mixture.hpp"

namespace grammarlm {

struct Hypothesis {
  Words words;
  double acoustic_score = 0.0;  // log domain
  std::optional<double> lm_score;
};

struct NBestList {
  std::string utterance_id;
  Words reference;
  std::vector<Hypothesis> hypotheses;
};

struct EditStats {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int ref_len = 0;

  int errors() const { return substitutions + insertions + deletions; }
  friend bool operator==(const EditStats&, const EditStats&) = default;
};

/// Word-level Levenshtein alignment. Among minimal alignments the one with
/// the fewest insertions plus deletions wins. Throws EmptyReference.
EditStats edit_distance(const Words& hyp, const Words& ref);

struct Scales {
  double lm = 1.0;
  double acoustic = 1.0;
};

/// Softmax over acoustic * acoustic_score + lm * ln P_mix(words).
std::vector<double> posterior(const NBestList& nb, const MixtureModel& scorer, const Scales& scales);

/// Posterior-weighted errors summed over utterances, divided by the total
/// number of reference words.
double expected_wer_loss(std::span<const NBestList> lists, const MixtureModel& scorer,
                         const Scales& scales);

/// Errors of the best-scoring hypothesis per utterance over total reference
/// words. Ties go to the earlier hypothesis.
double one_best_wer(std::span<const NBestList> lists, const MixtureModel& scorer,
                    const Scales& scales);

/// Error rate when every utterance picks its least-wrong hypothesis.
double oracle_wer(std::span<const NBestList> lists);

/// N-best lists with their component token probabilities and edit errors
/// cached, so losses can be re-evaluated for any interpolation weights.
class PreparedNBest {
 public:
  PreparedNBest(std::span<const NBestList> lists,
                const std::vector<MixtureModel::Component>& components);

  const TokenProbs& token_probs() const { return probs_; }
  size_t num_utterances() const { return utt_offsets_.size() - 1; }

  /// q holds the mixture probability of every token (TokenProbs::mix).
  double expected_wer(std::span<const double> q, const Scales& scales) const;
  double one_best_wer(std::span<const double> q, const Scales& scales) const;
  std::vector<double> posterior(size_t utterance, std::span<const double> q,
                                const Scales& scales) const;

 private:
  std::vector<double> combined_scores(size_t utterance, std::span<const double> q,
                                      const Scales& scales) const;

  TokenProbs probs_;
  std::vector<size_t> utt_offsets_;  // hypothesis index ranges
  std::vector<double> acoustic_;
  std::vector<int> errors_;
  long total_ref_words_ = 0;
};

/// N-best records "utt_id<TAB>rank<TAB>acoustic_score<TAB>words" and
/// references "utt_id<TAB>words". Hypotheses are ordered by rank; utterances
/// follow their first appearance in the n-best text.
std::vector<NBestList> read_nbest(std::string_view nbest_text, std::string_view reference_text);
std::string write_nbest(std::span<const NBestList> lists);
std::string write_references(std::span<const NBestList> lists);

}  // namespace grammarlm
