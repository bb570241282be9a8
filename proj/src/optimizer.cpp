#include "grammarlm/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "grammarlm/error.hpp"
#include "grammarlm/logmath.hpp"

namespace grammarlm {

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::NegSquared: return "neg_squared";
    case LossKind::Perplexity: return "perplexity";
    case LossKind::ExpectedWer: return "expected_wer";
  }
  return "?";
}

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "neg_squared") return LossKind::NegSquared;
  if (s == "perplexity") return LossKind::Perplexity;
  if (s == "expected_wer") return LossKind::ExpectedWer;
  throw Error(ErrorKind::InvalidArgument, "unknown loss kind '" + std::string(s) + "'");
}

std::string_view to_string(ConstraintKind k) {
  return k == ConstraintKind::Perplexity ? "perplexity" : "expected_wer";
}

ConstraintKind constraint_kind_from_string(std::string_view s) {
  if (s == "perplexity") return ConstraintKind::Perplexity;
  if (s == "expected_wer") return ConstraintKind::ExpectedWer;
  throw Error(ErrorKind::InvalidArgument, "unknown constraint kind '" + std::string(s) + "'");
}

LossSpec LossSpec::neg_squared(size_t target) {
  LossSpec s;
  s.kind = LossKind::NegSquared;
  s.target = target;
  return s;
}

LossSpec LossSpec::perplexity(std::shared_ptr<const EvalCorpus> corpus) {
  LossSpec s;
  s.kind = LossKind::Perplexity;
  s.corpus = std::move(corpus);
  return s;
}

LossSpec LossSpec::expected_wer(std::shared_ptr<const std::vector<NBestList>> nbest, Scales scales) {
  LossSpec s;
  s.kind = LossKind::ExpectedWer;
  s.nbest = std::move(nbest);
  s.scales = scales;
  return s;
}

LossSpec ConstraintSpec::as_loss() const {
  return kind == ConstraintKind::Perplexity ? LossSpec::perplexity(corpus)
                                            : LossSpec::expected_wer(nbest, scales);
}

namespace {

// A loss with its data scored once by every component.
class PreparedLoss {
 public:
  PreparedLoss(const LossSpec& spec, const std::vector<MixtureModel::Component>& comps)
      : kind_(spec.kind), target_(spec.target), scales_(spec.scales) {
    switch (kind_) {
      case LossKind::NegSquared:
        if (target_ >= comps.size())
          throw Error(ErrorKind::InvalidArgument, "neg_squared target outside the mixture");
        break;
      case LossKind::Perplexity:
        if (!spec.corpus || spec.corpus->m == 0)
          throw Error(ErrorKind::InvalidArgument, "perplexity loss needs a non-empty corpus");
        tokens_ = TokenProbs(comps, spec.corpus->sentences);
        m_ = spec.corpus->m;
        break;
      case LossKind::ExpectedWer:
        if (!spec.nbest || spec.nbest->empty())
          throw Error(ErrorKind::InvalidArgument, "expected_wer loss needs n-best lists");
        nbest_ = std::make_shared<PreparedNBest>(*spec.nbest, comps);
        break;
    }
  }

  const TokenProbs* tokens() const {
    if (kind_ == LossKind::Perplexity) return &tokens_;
    if (kind_ == LossKind::ExpectedWer) return &nbest_->token_probs();
    return nullptr;
  }

  /// q: mixture token probabilities under lambda (unused for NegSquared).
  double eval(std::span<const double> q, std::span<const double> lambda) const {
    switch (kind_) {
      case LossKind::NegSquared: return -lambda[target_] * lambda[target_];
      case LossKind::Perplexity: return perplexity_from_token_probs(q, m_);
      case LossKind::ExpectedWer: return nbest_->expected_wer(q, scales_);
    }
    return 0.0;
  }

 private:
  LossKind kind_;
  size_t target_;
  Scales scales_;
  TokenProbs tokens_;
  size_t m_ = 0;
  std::shared_ptr<PreparedNBest> nbest_;
};

std::string describe(std::span<const double> lambda) {
  std::string s = "(";
  for (size_t i = 0; i < lambda.size(); ++i) s += (i ? ", " : "") + format_general(lambda[i], 10);
  return s + ")";
}

struct Breakdown {
  std::vector<double> losses;
  double constraint_loss = 0.0;
  double penalty = 0.0;
  double objective = 0.0;
};

class Objective {
 public:
  explicit Objective(const OptimizationProblem& p) : k_(p.mixture.size()) {
    if (p.losses.empty()) throw Error(ErrorKind::InvalidArgument, "at least one loss is required");
    const auto& comps = p.mixture.components();
    for (const auto& l : p.losses) losses_.emplace_back(l, comps);
    if (p.constraint) {
      if (!(p.constraint->sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
      sigma_ = p.constraint->sigma;
      constraint_.emplace(p.constraint->as_loss(), comps);
      std::vector<double> anchor(k_, 0.0);
      anchor[0] = 1.0;
      bound_ = p.constraint->bound ? *p.constraint->bound : constraint_loss_at(anchor);
      if (!std::isfinite(bound_))
        throw Error(ErrorKind::NonFiniteLoss, "baseline loss on past data is not finite");
    }
  }

  size_t size() const { return k_; }
  double bound() const { return bound_; }

  Breakdown at(std::span<const double> lambda) const {
    Breakdown b;
    for (const auto& l : losses_) {
      const TokenProbs* t = l.tokens();
      std::vector<double> q = t ? t->mix(lambda) : std::vector<double>{};
      b.losses.push_back(l.eval(q, lambda));
    }
    if (constraint_) {
      b.constraint_loss = constraint_loss_at(lambda);
      b.penalty = penalty(b.constraint_loss);
    }
    b.objective = b.penalty;
    for (double l : b.losses) b.objective += l;
    check(b.objective, lambda);
    return b;
  }

  double penalty(double constraint_loss) const {
    double v = std::max(0.0, constraint_loss - bound_);
    return sigma_ * v * v;
  }

  static void check(double value, std::span<const double> lambda) {
    if (std::isnan(value))
      throw Error(ErrorKind::NonFiniteLoss, "objective is NaN at lambda = " + describe(lambda));
  }

  /// The objective along lambda(t) = base + t * (e_i - e_j), with token
  /// probabilities updated linearly instead of re-mixed.
  class Line {
   public:
    Line(const Objective& o, std::vector<double> base, size_t i, size_t j)
        : o_(o), base_(std::move(base)), i_(i), j_(j) {
      auto add = [&](const PreparedLoss& l) {
        const TokenProbs* t = l.tokens();
        q0_.push_back(t ? t->mix(base_) : std::vector<double>{});
        d_.push_back(t ? t->difference(i, j) : std::vector<double>{});
      };
      for (const auto& l : o.losses_) add(l);
      if (o.constraint_) add(*o.constraint_);
    }

    std::vector<double> lambda(double t) const {
      std::vector<double> l = base_;
      l[i_] += t;
      l[j_] -= t;
      if (l[i_] < 0.0) l[i_] = 0.0;
      if (l[j_] < 0.0) l[j_] = 0.0;
      return l;
    }

    double operator()(double t) const {
      auto l = lambda(t);
      double total = 0.0;
      size_t idx = 0;
      std::vector<double> q;
      auto eval = [&](const PreparedLoss& loss) {
        const auto& q0 = q0_[idx];
        const auto& d = d_[idx];
        q.resize(q0.size());
        for (size_t k = 0; k < q0.size(); ++k) q[k] = q0[k] + t * d[k];
        ++idx;
        return loss.eval(q, l);
      };
      for (const auto& loss : o_.losses_) total += eval(loss);
      if (o_.constraint_) total += o_.penalty(eval(*o_.constraint_));
      check(total, l);
      return total;
    }

   private:
    const Objective& o_;
    std::vector<double> base_;
    size_t i_, j_;
    std::vector<std::vector<double>> q0_, d_;
  };

 private:
  double constraint_loss_at(std::span<const double> lambda) const {
    const TokenProbs* t = constraint_->tokens();
    return constraint_->eval(t->mix(lambda), lambda);
  }

  size_t k_;
  std::vector<PreparedLoss> losses_;
  std::optional<PreparedLoss> constraint_;
  double sigma_ = 0.0;
  double bound_ = std::numeric_limits<double>::infinity();
};

constexpr double kGolden = 0.6180339887498949;

struct LineResult {
  double t;
  double value;
  int evaluations;
  double width;
};

// Golden-section refinement on [lo, hi]; returns the best point seen.
LineResult golden(const std::function<double(double)>& f, double lo, double hi, double min_width) {
  double x1 = hi - kGolden * (hi - lo), x2 = lo + kGolden * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  int evals = 2;
  while (hi - lo > min_width && evals < 200) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kGolden * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kGolden * (hi - lo);
      f2 = f(x2);
    }
    ++evals;
  }
  return f1 <= f2 ? LineResult{x1, f1, evals, hi - lo} : LineResult{x2, f2, evals, hi - lo};
}

// Scans [lo, hi] at n+1 evenly spaced points plus t = 0, then refines around
// the best scan point. Refinements are only taken when strictly better.
LineResult line_search(const std::function<double(double)>& f, double lo, double hi, int n,
                       double min_width) {
  double best_t = 0.0, best = f(0.0);
  int evals = 1;
  const double h = (hi - lo) / n;
  for (int k = 0; k <= n; ++k) {
    double t = k == n ? hi : lo + k * h;
    double v = f(t);
    ++evals;
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  double width = h;
  if (h > 0.0 && std::isfinite(best)) {
    auto r = golden(f, std::max(lo, best_t - h), std::min(hi, best_t + h), min_width);
    evals += r.evaluations;
    width = r.width;
    if (r.value < best) {
      best = r.value;
      best_t = r.t;
    }
  }
  return {best_t, best, evals, width};
}

Solution finish(const Objective& obj, std::vector<double> lambda, int iterations, bool converged) {
  Breakdown b = obj.at(lambda);
  for (double l : b.losses)
    if (!std::isfinite(l))
      throw Error(ErrorKind::NonFiniteLoss, "loss is not finite at lambda = " + describe(lambda));
  if (!std::isfinite(b.objective))
    throw Error(ErrorKind::NonFiniteLoss, "objective is not finite at lambda = " + describe(lambda));
  Solution s;
  s.lambda = std::move(lambda);
  s.losses = std::move(b.losses);
  s.constraint_loss = b.constraint_loss;
  s.bound = obj.bound();
  s.penalty = b.penalty;
  s.objective = b.objective;
  s.iterations = iterations;
  s.converged = converged;
  s.feasible = b.constraint_loss <= obj.bound() * (1.0 + kFeasibilitySlack);
  return s;
}

constexpr double kRefineWidth = 1e-10;

// Two components: lambda_app lives on the lattice k * tolerance. A coarse
// scan picks the best point at coarse_step spacing, then every lattice point
// within one coarse step of it is evaluated. The result is exact on the
// lattice; no finer resolution than the tolerance is claimed.
Solution optimize_two(const Objective& obj, const SolverConfig& cfg) {
  const double h = std::min(cfg.tolerance, cfg.coarse_step);
  const long n = std::max(1L, std::lround(1.0 / h));
  const long stride = std::max(1L, std::lround(cfg.coarse_step / h));
  Objective::Line line(obj, {1.0, 0.0}, 1, 0);
  auto at = [&](long k) { return line(static_cast<double>(k) / static_cast<double>(n)); };
  int evaluations = 0;
  long best_k = 0;
  double best = kLogZero;
  auto consider = [&](long k) {
    const double v = at(k);
    ++evaluations;
    if (evaluations == 1 || v < best || (v == best && k < best_k)) {
      best = v;
      best_k = k;
    }
  };
  for (long k = 0; k < n; k += stride) consider(k);
  consider(n);
  const long lo = std::max(0L, best_k - stride), hi = std::min(n, best_k + stride);
  for (long k = lo; k <= hi; ++k)
    if (k % stride != 0 && k != n) consider(k);
  return finish(obj, line.lambda(static_cast<double>(best_k) / static_cast<double>(n)), evaluations, true);
}

std::pair<std::vector<double>, std::pair<int, bool>> descend(const Objective& obj,
                                                              std::vector<double> lambda,
                                                              const SolverConfig& cfg) {
  const size_t k = obj.size();
  double current = obj.at(lambda).objective;
  int sweeps = 0;
  bool converged = false;
  while (sweeps < cfg.max_iterations && !converged) {
    ++sweeps;
    double moved = 0.0;
    for (size_t i = 0; i < k; ++i)
      for (size_t j = i + 1; j < k; ++j) {
        if (lambda[i] == 0.0 && lambda[j] == 0.0) continue;
        Objective::Line line(obj, lambda, i, j);
        std::function<double(double)> f = [&](double t) { return line(t); };
        auto r = line_search(f, -lambda[i], lambda[j], cfg.line_points, kRefineWidth);
        if (r.value < current && r.t != 0.0) {
          moved = std::max(moved, std::abs(r.t));
          lambda = line.lambda(r.t);
          current = r.value;
        }
      }
    converged = moved < cfg.tolerance;
  }
  // Keep the weights summing to one despite rounding.
  double sum = 0.0;
  for (double l : lambda) sum += l;
  for (double& l : lambda) l /= sum;
  return {lambda, {sweeps, converged}};
}

}  // namespace

double eval_loss(const LossSpec& spec, const MixtureModel& m) {
  PreparedLoss l(spec, m.components());
  const TokenProbs* t = l.tokens();
  std::vector<double> q = t ? t->mix(m.weights()) : std::vector<double>{};
  return l.eval(q, m.weights());
}

double compute_bound(const ConstraintSpec& c, const MixtureModel& m) {
  std::vector<double> anchor(m.size(), 0.0);
  anchor[0] = 1.0;
  return eval_loss(c.as_loss(), set_weights(m, anchor));
}

double eval_penalty(const ConstraintSpec& c, const MixtureModel& m) {
  if (!(c.sigma > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
  const double bound = c.bound ? *c.bound : compute_bound(c, m);
  const double v = std::max(0.0, eval_loss(c.as_loss(), m) - bound);
  return c.sigma * v * v;
}

Solution evaluate_at(const OptimizationProblem& p, std::vector<double> lambda) {
  validate_simplex(lambda);
  if (lambda.size() != p.mixture.size())
    throw Error(ErrorKind::InvalidArgument, "one weight per component required");
  Objective obj(p);
  return finish(obj, std::move(lambda), 0, true);
}

Solution optimize(const OptimizationProblem& p) {
  const SolverConfig& cfg = p.solver;
  if (!(cfg.coarse_step > 0.0 && cfg.coarse_step <= 1.0) || !(cfg.tolerance > 0.0) ||
      cfg.line_points < 1 || cfg.max_iterations < 1)
    throw Error(ErrorKind::InvalidArgument, "invalid solver configuration");
  Objective obj(p);
  const size_t k = obj.size();
  if (k == 1) return finish(obj, {1.0}, 0, true);
  if (k == 2) return optimize_two(obj, cfg);

  std::vector<double> anchor(k, 0.0);
  anchor[0] = 1.0;
  auto [lambda, info] = descend(obj, std::vector<double>(k, 1.0 / static_cast<double>(k)), cfg);
  Solution best = finish(obj, lambda, info.first, info.second);
  Solution at_anchor = finish(obj, anchor, 0, true);
  if (at_anchor.objective < best.objective) {
    auto [l2, info2] = descend(obj, anchor, cfg);
    Solution second = finish(obj, l2, info.first + info2.first, info2.second);
    best = second.objective <= at_anchor.objective ? second : at_anchor;
    best.iterations = info.first + info2.first;
  }
  return best;
}

Solution multi_app_optimize(const MixtureModel& mixture, const std::vector<LossSpec>& losses,
                            const std::optional<ConstraintSpec>& constraint,
                            const SolverConfig& solver) {
  if (losses.empty()) throw Error(ErrorKind::InvalidArgument, "at least one application is required");
  if (mixture.size() != losses.size() + 1)
    throw Error(ErrorKind::InvalidArgument, "mixture must hold the baseline plus one model per application");
  return optimize({mixture, losses, constraint, solver});
}

}  // namespace grammarlm
