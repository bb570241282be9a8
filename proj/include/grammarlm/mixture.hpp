#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "grammarlm/lm.hpp"

namespace grammarlm {

inline constexpr double kSimplexTolerance = 1e-9;

/// Throws NegativeWeight or NotSimplex.
void validate_simplex(std::span<const double> lambda);

/// Linear interpolation of component models: p(w|h) = sum_k lambda_k p_k(w|h).
/// Component 0 is the baseline by convention; in the two-component case
/// lambda = (1 - lambda_app, lambda_app).
class MixtureModel {
 public:
  using Component = std::shared_ptr<const NGramModel>;

  MixtureModel(std::vector<Component> components, std::vector<double> lambda);
  /// Single model with weight one.
  explicit MixtureModel(Component model);

  const std::vector<Component>& components() const { return components_; }
  const std::vector<double>& weights() const { return lambda_; }
  size_t size() const { return components_.size(); }

 private:
  std::vector<Component> components_;
  std::vector<double> lambda_;
};

/// Same components, new weights.
MixtureModel set_weights(const MixtureModel& m, std::vector<double> lambda);

/// Each component resolves its own back-off.
double mix_prob(const MixtureModel& m, const Words& history, std::string_view word);

/// log10 of the mixture sentence probability, <s> as context and </s>
/// scored.
double sentence_logprob(const MixtureModel& m, const Words& sentence);

/// Component probabilities for every scored token (words plus </s>) of a
/// list of sentences, row-major tokens x components. Lets the weights change
/// without rescoring.
class TokenProbs {
 public:
  TokenProbs() = default;
  TokenProbs(const std::vector<MixtureModel::Component>& components,
             const std::vector<Words>& sentences);

  size_t num_components() const { return k_; }
  size_t num_tokens() const { return offsets_.empty() ? 0 : offsets_.back(); }
  size_t num_sentences() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  /// Token range [begin, end) of sentence i.
  std::pair<size_t, size_t> sentence(size_t i) const { return {offsets_[i], offsets_[i + 1]}; }
  double at(size_t token, size_t component) const { return p_[token * k_ + component]; }

  /// Mixture probability of every token.
  std::vector<double> mix(std::span<const double> lambda) const;
  /// Column difference p_i - p_j for every token.
  std::vector<double> difference(size_t i, size_t j) const;

 private:
  size_t k_ = 0;
  std::vector<double> p_;
  std::vector<size_t> offsets_;
};

/// exp(-sum(ln q) / m); +inf when some q is zero.
double perplexity_from_token_probs(std::span<const double> q, size_t m);

/// Throws InfinitePerplexity on a zero probability.
double perplexity(const MixtureModel& m, const EvalCorpus& c);

/// Mixture spec file: "model_path<TAB>weight" per line.
std::vector<std::pair<std::string, double>> parse_mixture_spec(std::string_view text);

}  // namespace grammarlm
