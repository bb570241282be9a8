// Synthetic optimization problems and a grid-search oracle that evaluates
// the penalized objective from its own per-token probabilities.
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"
#include "grammarlm/asr_eval.hpp"
#include "grammarlm/lm.hpp"
#include "grammarlm/optimizer.hpp"

namespace testsupport {

using grammarlm::ConstraintKind;
using grammarlm::ConstraintSpec;
using grammarlm::EvalCorpus;
using grammarlm::LossKind;
using grammarlm::LossSpec;
using grammarlm::MixtureModel;
using grammarlm::NBestList;
using grammarlm::NGramModel;

/// Draws sentences from a random bigram source over a word list.
class BigramSource {
 public:
  BigramSource(std::mt19937_64& rng, std::vector<std::string> words, double concentration)
      : words_(std::move(words)) {
    std::gamma_distribution<double> g(concentration, 1.0);
    const size_t v = words_.size() + 1;  // last slot ends the sentence
    for (size_t h = 0; h <= words_.size(); ++h) {
      std::vector<double> row(v);
      for (auto& x : row) x = g(rng) + 1e-3;
      row.back() += 0.15 * std::accumulate(row.begin(), row.end(), 0.0);
      rows_.emplace_back(row.begin(), row.end());
    }
  }

  Words sentence(std::mt19937_64& rng, size_t max_len = 12) {
    Words s;
    size_t h = words_.size();  // start context shares the end slot's row
    while (s.size() < max_len) {
      size_t next = rows_[h](rng);
      if (next == words_.size()) {
        if (!s.empty()) break;
        continue;
      }
      s.push_back(words_[next]);
      h = next;
    }
    return s;
  }

  std::vector<Words> corpus(std::mt19937_64& rng, size_t n) {
    std::vector<Words> out;
    for (size_t i = 0; i < n; ++i) out.push_back(sentence(rng));
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::discrete_distribution<size_t>> rows_;
};

inline std::shared_ptr<const NGramModel> train_model(const std::vector<Words>& corpus, int order,
                                                     const std::vector<std::string>& vocab, bool open) {
  grammarlm::KatzConfig cfg;
  cfg.order = order;
  cfg.open_vocabulary = open;
  cfg.extra_vocabulary = vocab;
  return std::make_shared<NGramModel>(grammarlm::train_katz(grammarlm::count_sentences(corpus, order), cfg));
}

/// Scripted noisy channel: hypotheses are corrupted copies of the reference
/// (substitutions, deletions, insertions); acoustic scores penalize errors
/// with noise, so the acoustic 1-best is often wrong.
inline NBestList noisy_nbest(std::mt19937_64& rng, std::string id, const Words& ref,
                             const std::vector<std::string>& confusions, size_t n_hyps, double noise) {
  NBestList nb{std::move(id), ref, {}};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, noise);
  std::vector<Words> seen;
  for (size_t attempt = 0; nb.hypotheses.size() < n_hyps && attempt < 20 * n_hyps; ++attempt) {
    Words h;
    const double rate = nb.hypotheses.empty() ? 0.0 : 0.12 + 0.2 * u(rng);
    for (const auto& w : ref) {
      double r = u(rng);
      if (r < rate * 0.6) {
        h.push_back(confusions[rng() % confusions.size()]);
      } else if (r < rate * 0.8) {
        continue;
      } else {
        h.push_back(w);
      }
      if (u(rng) < rate * 0.2) h.push_back(confusions[rng() % confusions.size()]);
    }
    if (h.empty() || std::find(seen.begin(), seen.end(), h) != seen.end()) continue;
    seen.push_back(h);
    const int errors = testsupport::reference_edit_errors(h, ref);
    nb.hypotheses.push_back({h, -1.5 * errors - 0.4 * static_cast<double>(h.size()) + gauss(rng), std::nullopt});
  }
  // Shuffle so the reference is not always first.
  std::shuffle(nb.hypotheses.begin(), nb.hypotheses.end(), rng);
  return nb;
}

inline std::vector<NBestList> nbest_set(std::mt19937_64& rng, const std::string& prefix,
                                        const std::vector<Words>& refs,
                                        const std::vector<std::string>& confusions, size_t n_hyps,
                                        double noise) {
  std::vector<NBestList> out;
  for (size_t i = 0; i < refs.size(); ++i)
    out.push_back(noisy_nbest(rng, prefix + std::to_string(i), refs[i], confusions, n_hyps, noise));
  return out;
}

/// Random two-component problem: a baseline trained on a "past" source and
/// an application model trained on a different source.
struct TwoComponentProblem {
  std::shared_ptr<const NGramModel> baseline, app;
  std::shared_ptr<const EvalCorpus> app_corpus, past_corpus;
  std::shared_ptr<const std::vector<NBestList>> app_nbest, past_nbest;
  ConstraintKind constraint = ConstraintKind::Perplexity;
};

inline TwoComponentProblem random_two_component(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> shared, past_only, app_only;
  for (int i = 0; i < 6; ++i) shared.push_back("s" + std::to_string(i));
  for (int i = 0; i < 8; ++i) past_only.push_back("p" + std::to_string(i));
  for (int i = 0; i < 6; ++i) app_only.push_back("a" + std::to_string(i));
  std::vector<std::string> past_words = shared, app_words = shared, all = shared;
  past_words.insert(past_words.end(), past_only.begin(), past_only.end());
  app_words.insert(app_words.end(), app_only.begin(), app_only.end());
  all.insert(all.end(), past_only.begin(), past_only.end());
  all.insert(all.end(), app_only.begin(), app_only.end());

  std::uniform_real_distribution<double> u(0.0, 1.0);
  BigramSource past(rng, past_words, 0.3 + 0.7 * u(rng));
  BigramSource app(rng, app_words, 0.3 + 0.7 * u(rng));
  // A little app text leaks into the baseline's training data.
  auto base_train = past.corpus(rng, 150);
  for (auto& s : app.corpus(rng, static_cast<size_t>(5 + rng() % 25))) base_train.push_back(s);
  TwoComponentProblem p;
  p.baseline = train_model(base_train, 2, all, true);
  p.app = train_model(app.corpus(rng, 120), 2, all, true);
  p.app_corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences(app.corpus(rng, 30)));
  p.past_corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences(past.corpus(rng, 30)));
  p.app_nbest = std::make_shared<std::vector<NBestList>>(nbest_set(rng, "app", app.corpus(rng, 12), all, 5, 1.0));
  p.past_nbest = std::make_shared<std::vector<NBestList>>(nbest_set(rng, "past", past.corpus(rng, 12), all, 5, 1.0));
  p.constraint = u(rng) < 0.5 ? ConstraintKind::Perplexity : ConstraintKind::ExpectedWer;
  return p;
}

// ---------------------------------------------------------------------------
// Oracle: the objective for lambda = (1 - a, a), from per-token component
// probabilities computed with NGramModel::prob directly.

class OracleObjective {
 public:
  OracleObjective(const TwoComponentProblem& p, LossKind loss, double sigma = 1000.0) : loss_(loss), sigma_(sigma) {
    models_ = {p.baseline, p.app};
    if (loss == LossKind::Perplexity) app_ = tokens(p.app_corpus->sentences);
    if (loss == LossKind::ExpectedWer) app_nb_ = prepare(*p.app_nbest);
    constraint_ = p.constraint;
    if (constraint_ == ConstraintKind::Perplexity) past_ = tokens(p.past_corpus->sentences);
    else past_nb_ = prepare(*p.past_nbest);
    bound_ = constraint_loss(0.0);
  }

  double bound() const { return bound_; }

  double operator()(double a) const {
    double l = 0.0;
    switch (loss_) {
      case LossKind::NegSquared: l = -a * a; break;
      case LossKind::Perplexity: l = ppl(app_, a); break;
      case LossKind::ExpectedWer: l = ewer(app_nb_, a); break;
    }
    const double v = std::max(0.0, constraint_loss(a) - bound_);
    return l + sigma_ * v * v;
  }

  double constraint_loss(double a) const {
    return constraint_ == ConstraintKind::Perplexity ? ppl(past_, a) : ewer(past_nb_, a);
  }

  /// argmin and min over a = k * step.
  std::pair<double, double> grid(double step = 1e-4) const {
    const int n = static_cast<int>(std::lround(1.0 / step));
    double best_a = 0.0, best = (*this)(0.0);
    for (int k = 1; k <= n; ++k) {
      double a = static_cast<double>(k) / n;
      double v = (*this)(a);
      if (v < best) {
        best = v;
        best_a = a;
      }
    }
    return {best_a, best};
  }

 private:
  struct Tok {
    std::vector<double> p0, p1;
  };
  struct Hyp {
    double acoustic;
    int errors;
    Tok tok;
  };
  struct Utt {
    std::vector<Hyp> hyps;
    size_t ref_len;
  };

  Tok tokens(const std::vector<Words>& sentences) const {
    Tok t;
    for (const auto& s : sentences) {
      Words hist{"<s>"};
      Words ext = s;
      ext.push_back("</s>");
      for (const auto& w : ext) {
        t.p0.push_back(models_[0]->prob(hist, w));
        t.p1.push_back(models_[1]->prob(hist, w));
        hist.push_back(w);
      }
    }
    return t;
  }

  std::vector<Utt> prepare(const std::vector<NBestList>& lists) const {
    std::vector<Utt> out;
    for (const auto& nb : lists) {
      Utt u{{}, nb.reference.size()};
      for (const auto& h : nb.hypotheses)
        u.hyps.push_back({h.acoustic_score, reference_edit_errors(h.words, nb.reference), tokens({h.words})});
      out.push_back(std::move(u));
    }
    return out;
  }

  static double ppl(const Tok& t, double a) {
    double s = 0.0;
    for (size_t i = 0; i < t.p0.size(); ++i) s += std::log((1.0 - a) * t.p0[i] + a * t.p1[i]);
    return std::exp(-s / static_cast<double>(t.p0.size()));
  }

  static double ewer(const std::vector<Utt>& utts, double a) {
    double errors = 0.0, words = 0.0;
    for (const auto& u : utts) {
      std::vector<double> s;
      for (const auto& h : u.hyps) {
        double lm = 0.0;
        for (size_t i = 0; i < h.tok.p0.size(); ++i) lm += std::log((1.0 - a) * h.tok.p0[i] + a * h.tok.p1[i]);
        s.push_back(h.acoustic + lm);
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double v : s) z += std::exp(v - mx);
      for (size_t i = 0; i < s.size(); ++i) errors += std::exp(s[i] - mx) / z * u.hyps[i].errors;
      words += static_cast<double>(u.ref_len);
    }
    return errors / words;
  }

  LossKind loss_;
  double sigma_;
  std::vector<std::shared_ptr<const NGramModel>> models_;
  ConstraintKind constraint_;
  Tok app_, past_;
  std::vector<Utt> app_nb_, past_nb_;
  double bound_;
};

inline grammarlm::OptimizationProblem make_problem(const TwoComponentProblem& p, LossKind loss,
                                                   bool constrained = true) {
  grammarlm::OptimizationProblem op{MixtureModel({p.baseline, p.app}, {1.0, 0.0}), {}, std::nullopt, {}};
  switch (loss) {
    case LossKind::NegSquared: op.losses.push_back(LossSpec::neg_squared(1)); break;
    case LossKind::Perplexity: op.losses.push_back(LossSpec::perplexity(p.app_corpus)); break;
    case LossKind::ExpectedWer: op.losses.push_back(LossSpec::expected_wer(p.app_nbest)); break;
  }
  if (constrained) {
    ConstraintSpec c;
    c.kind = p.constraint;
    c.corpus = p.past_corpus;
    c.nbest = p.past_nbest;
    op.constraint = c;
  }
  return op;
}

}  // namespace testsupport
