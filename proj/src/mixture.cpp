#include "grammarlm/mixture.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "grammarlm/error.hpp"

namespace grammarlm {

void validate_simplex(std::span<const double> lambda) {
  if (lambda.empty()) throw Error(ErrorKind::NotSimplex, "weight vector is empty");
  for (double l : lambda) {
    if (!std::isfinite(l)) throw Error(ErrorKind::NotSimplex, "weight is not finite");
    if (l < 0.0) throw Error(ErrorKind::NegativeWeight, "negative interpolation weight " + format_general(l, 6));
  }
  const double sum = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  if (std::abs(sum - 1.0) > kSimplexTolerance)
    throw Error(ErrorKind::NotSimplex, "interpolation weights sum to " + format_general(sum, 12));
}

MixtureModel::MixtureModel(std::vector<Component> components, std::vector<double> lambda)
    : components_(std::move(components)), lambda_(std::move(lambda)) {
  if (components_.empty()) throw Error(ErrorKind::InvalidArgument, "mixture needs a component");
  for (const auto& c : components_)
    if (!c) throw Error(ErrorKind::InvalidArgument, "null mixture component");
  if (lambda_.size() != components_.size())
    throw Error(ErrorKind::InvalidArgument, "one weight per component required");
  validate_simplex(lambda_);
}

MixtureModel::MixtureModel(Component model) : MixtureModel({std::move(model)}, {1.0}) {}

MixtureModel set_weights(const MixtureModel& m, std::vector<double> lambda) {
  return MixtureModel(m.components(), std::move(lambda));
}

double mix_prob(const MixtureModel& m, const Words& history, std::string_view word) {
  double p = 0.0;
  for (size_t k = 0; k < m.size(); ++k) {
    if (m.weights()[k] == 0.0) continue;
    p += m.weights()[k] * m.components()[k]->prob(history, word);
  }
  return p;
}

TokenProbs::TokenProbs(const std::vector<MixtureModel::Component>& components,
                       const std::vector<Words>& sentences)
    : k_(components.size()) {
  offsets_.reserve(sentences.size() + 1);
  offsets_.push_back(0);
  size_t tokens = 0;
  for (const auto& s : sentences) {
    tokens += s.size() + 1;
    offsets_.push_back(tokens);
  }
  p_.assign(tokens * k_, 0.0);
  for (size_t k = 0; k < k_; ++k) {
    const NGramModel& model = *components[k];
    const WordId bos = model.find_word(kSentenceStart);
    const WordId eos = model.find_word(kSentenceEnd);
    IdSeq hist;
    for (size_t i = 0; i < sentences.size(); ++i) {
      hist.assign(1, bos);
      size_t t = offsets_[i];
      for (const auto& w : sentences[i]) {
        WordId id = model.map_word(w);
        double lp = model.log10_prob(hist, id);
        p_[t++ * k_ + k] = std::isinf(lp) ? 0.0 : std::pow(10.0, lp);
        hist.push_back(id);
        if (static_cast<int>(hist.size()) >= model.order() && model.order() > 1)
          hist.erase(hist.begin());
      }
      double lp = model.log10_prob(hist, eos);
      p_[t * k_ + k] = std::isinf(lp) ? 0.0 : std::pow(10.0, lp);
    }
  }
}

std::vector<double> TokenProbs::mix(std::span<const double> lambda) const {
  std::vector<double> q(num_tokens(), 0.0);
  for (size_t t = 0; t < q.size(); ++t) {
    double acc = 0.0;
    for (size_t k = 0; k < k_; ++k) acc += lambda[k] * p_[t * k_ + k];
    q[t] = acc;
  }
  return q;
}

std::vector<double> TokenProbs::difference(size_t i, size_t j) const {
  std::vector<double> d(num_tokens());
  for (size_t t = 0; t < d.size(); ++t) d[t] = p_[t * k_ + i] - p_[t * k_ + j];
  return d;
}

double perplexity_from_token_probs(std::span<const double> q, size_t m) {
  if (m == 0) throw Error(ErrorKind::InvalidArgument, "corpus has no tokens");
  double ln_sum = 0.0;
  for (double p : q) {
    if (!(p > 0.0)) return std::numeric_limits<double>::infinity();
    ln_sum += std::log(p);
  }
  return std::exp(-ln_sum / static_cast<double>(m));
}

double sentence_logprob(const MixtureModel& m, const Words& sentence) {
  TokenProbs tp(m.components(), {sentence});
  double total = 0.0;
  for (double q : tp.mix(m.weights())) total += q > 0.0 ? std::log10(q) : -std::numeric_limits<double>::infinity();
  return total;
}

double perplexity(const MixtureModel& m, const EvalCorpus& c) {
  TokenProbs tp(m.components(), c.sentences);
  double ppl = perplexity_from_token_probs(tp.mix(m.weights()), c.m);
  if (std::isinf(ppl)) throw Error(ErrorKind::InfinitePerplexity, "mixture assigns zero probability to a token");
  return ppl;
}

std::vector<std::pair<std::string, double>> parse_mixture_spec(std::string_view text) {
  std::vector<std::pair<std::string, double>> out;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    Words f = split_words(line);
    double w = 0.0;
    if (f.size() != 2)
      throw Error(ErrorKind::MalformedLine, "mixture spec line " + std::to_string(line_no) + ": expected path and weight");
    auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), w);
    if (ec != std::errc() || ptr != f[1].data() + f[1].size())
      throw Error(ErrorKind::MalformedLine, "mixture spec line " + std::to_string(line_no) + ": bad weight");
    out.emplace_back(f[0], w);
  }
  return out;
}

}  // namespace grammarlm
