#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grammarlm/asr_eval.hpp"
#include "grammarlm/lm.hpp"
#include "grammarlm/mixture.hpp"

namespace grammarlm {

enum class LossKind { NegSquared, Perplexity, ExpectedWer };
std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

struct LossSpec {
  LossKind kind = LossKind::NegSquared;
  /// Component whose weight NegSquared rewards.
  size_t target = 1;
  std::shared_ptr<const EvalCorpus> corpus;
  std::shared_ptr<const std::vector<NBestList>> nbest;
  Scales scales;

  static LossSpec neg_squared(size_t target);
  static LossSpec perplexity(std::shared_ptr<const EvalCorpus> corpus);
  static LossSpec expected_wer(std::shared_ptr<const std::vector<NBestList>> nbest,
                               Scales scales = {});
};

enum class ConstraintKind { Perplexity, ExpectedWer };
std::string_view to_string(ConstraintKind k);
ConstraintKind constraint_kind_from_string(std::string_view s);

inline constexpr double kDefaultSigma = 1000.0;
/// Relative slack before a solution is reported infeasible.
inline constexpr double kFeasibilitySlack = 1e-3;

struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::Perplexity;
  std::shared_ptr<const EvalCorpus> corpus;
  std::shared_ptr<const std::vector<NBestList>> nbest;
  Scales scales;
  double sigma = kDefaultSigma;
  /// Loss of the baseline alone on the past data; filled in by the solver.
  std::optional<double> bound;

  LossSpec as_loss() const;
};

struct SolverConfig {
  /// First scan resolution for the two-component case.
  double coarse_step = 1e-3;
  /// Scan points per line search with more than two components.
  int line_points = 24;
  double tolerance = 1e-4;
  int max_iterations = 100;
};

struct OptimizationProblem {
  MixtureModel mixture;  // component 0 is the baseline; weights ignored
  std::vector<LossSpec> losses;
  std::optional<ConstraintSpec> constraint;
  SolverConfig solver;
};

struct Solution {
  std::vector<double> lambda;
  std::vector<double> losses;
  double constraint_loss = 0.0;  // 0 without a constraint
  double bound = std::numeric_limits<double>::infinity();
  double penalty = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool feasible = true;
};

double eval_loss(const LossSpec& spec, const MixtureModel& m);
/// Loss of component 0 alone on the constraint data.
double compute_bound(const ConstraintSpec& c, const MixtureModel& m);
/// sigma * max(0, loss - C)^2; C is computed when `c.bound` is unset.
double eval_penalty(const ConstraintSpec& c, const MixtureModel& m);

/// Minimizes the summed losses plus the past-data penalty over the simplex.
/// Two components: a scan of lambda_app at `coarse_step`, refined on the
/// lattice of multiples of `tolerance`. More components: coordinate descent
/// that trades weight between pairs of components, starting from uniform
/// weights.
Solution optimize(const OptimizationProblem& p);

/// One loss per application; the mixture holds the baseline followed by one
/// component per application.
Solution multi_app_optimize(const MixtureModel& mixture, const std::vector<LossSpec>& losses,
                            const std::optional<ConstraintSpec>& constraint,
                            const SolverConfig& solver = {});

/// Direct evaluation of the penalized objective at `lambda`.
Solution evaluate_at(const OptimizationProblem& p, std::vector<double> lambda);

}  // namespace grammarlm
