#include <doctest.h>

#include <cmath>
#include <memory>

#include "../fixtures.hpp"
#include "grammarlm/error.hpp"
#include "grammarlm/optimizer.hpp"

using namespace grammarlm;
using testsupport::make_problem;
using testsupport::OracleObjective;
using testsupport::random_two_component;

namespace {

std::shared_ptr<const NGramModel> uniform(const std::vector<std::string>& words) {
  return std::make_shared<NGramModel>(read_arpa(testsupport::uniform_arpa(words)));
}

template <class F>
ErrorKind error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

double simplex_gap(const std::vector<double>& l) {
  double s = 0.0;
  for (double x : l) s += x;
  return std::abs(s - 1.0);
}

const std::vector<std::string> kNine = {"a", "b", "c", "d", "e", "f", "g", "h", "i"};

}  // namespace

TEST_CASE("loss and constraint names round trip") {
  for (auto k : {LossKind::NegSquared, LossKind::Perplexity, LossKind::ExpectedWer})
    CHECK(loss_kind_from_string(to_string(k)) == k);
  for (auto k : {ConstraintKind::Perplexity, ConstraintKind::ExpectedWer})
    CHECK(constraint_kind_from_string(to_string(k)) == k);
  CHECK(error_of([] { loss_kind_from_string("wer"); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("neg_squared loss") {
  auto m = uniform(kNine);
  CHECK(eval_loss(LossSpec::neg_squared(1), MixtureModel({m, m}, {0.5, 0.5})) == -0.25);
  CHECK(eval_loss(LossSpec::neg_squared(1), MixtureModel({m, m}, {1.0, 0.0})) == 0.0);
  CHECK(eval_loss(LossSpec::neg_squared(1), MixtureModel({m, m}, {0.0, 1.0})) == -1.0);
}

TEST_CASE("perplexity loss on a uniform model") {
  auto m = uniform(kNine);
  auto corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences({{"a", "b", "c"}, {"i"}, {"d", "d"}}));
  CHECK(eval_loss(LossSpec::perplexity(corpus), MixtureModel(m)) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("perplexity loss is infinite when a token has no mass") {
  auto m = uniform({"a", "b"});
  auto corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences({{"a", "zzz"}}));
  CHECK(std::isinf(eval_loss(LossSpec::perplexity(corpus), MixtureModel(m))));
}

TEST_CASE("quadratic penalty") {
  auto a = uniform(kNine);
  auto b = uniform({"a", "b", "c", "d"});
  auto corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences({{"a", "b"}, {"c"}}));
  MixtureModel mix({a, b}, {0.6, 0.4});
  const double loss = eval_loss(LossSpec::perplexity(corpus), mix);
  ConstraintSpec c;
  c.corpus = corpus;
  c.bound = loss;
  CHECK(eval_penalty(c, mix) == 0.0);
  c.bound = loss + 1.0;
  CHECK(eval_penalty(c, mix) == 0.0);
  c.bound = loss - 0.1;
  CHECK(eval_penalty(c, mix) == doctest::Approx(10.0).epsilon(1e-9));
  c.bound.reset();
  CHECK(compute_bound(c, mix) == doctest::Approx(10.0).epsilon(1e-9));
  c.sigma = 0.0;
  CHECK(error_of([&] { eval_penalty(c, mix); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("neg_squared without a constraint drives lambda_app to one") {
  auto p = random_two_component(7);
  auto s = optimize(make_problem(p, LossKind::NegSquared, false));
  CHECK(s.lambda[1] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(s.objective == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(s.converged);
  CHECK(s.feasible);
}

TEST_CASE("a loose constraint does not bind") {
  auto p = random_two_component(8);
  auto op = make_problem(p, LossKind::NegSquared);
  op.constraint->bound = 1e9;
  auto s = optimize(op);
  CHECK(s.lambda[1] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(s.penalty == 0.0);
}

TEST_CASE("identical components leave the loss unchanged") {
  auto p = random_two_component(9);
  p.app = p.baseline;
  for (auto k : {LossKind::Perplexity, LossKind::ExpectedWer}) {
    auto op = make_problem(p, k);
    auto s = optimize(op);
    auto base = evaluate_at(op, {1.0, 0.0});
    CHECK(s.objective == doctest::Approx(base.objective).epsilon(1e-12));
    CHECK(s.penalty == doctest::Approx(0.0));
    CHECK(s.converged);
  }
}

TEST_CASE("two-component solver matches an independent grid search") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto p = random_two_component(seed);
    for (auto k : {LossKind::NegSquared, LossKind::Perplexity, LossKind::ExpectedWer}) {
      OracleObjective oracle(p, k);
      auto [a, f] = oracle.grid();
      auto s = optimize(make_problem(p, k));
      INFO("seed " << seed << " loss " << to_string(k));
      CHECK(std::abs(s.lambda[1] - a) <= 1e-3);
      CHECK(std::abs(s.objective - f) <= 1e-6);
      CHECK(s.bound == doctest::Approx(oracle.bound()).epsilon(1e-12));
    }
  }
}

TEST_CASE("solutions are on the simplex and reproducible") {
  auto p = random_two_component(21);
  for (auto k : {LossKind::Perplexity, LossKind::ExpectedWer}) {
    auto op = make_problem(p, k);
    auto s = optimize(op);
    CHECK(simplex_gap(s.lambda) <= 1e-9);
    for (double l : s.lambda) CHECK(l >= 0.0);
    CHECK(s.feasible == (s.constraint_loss <= s.bound * (1.0 + kFeasibilitySlack)));
    CHECK(s.penalty == doctest::Approx(1000.0 * std::pow(std::max(0.0, s.constraint_loss - s.bound), 2)));
    auto again = evaluate_at(op, s.lambda);
    CHECK(again.objective == s.objective);
    CHECK(again.losses == s.losses);
    CHECK(again.penalty == s.penalty);
    auto twice = optimize(op);
    CHECK(twice.lambda == s.lambda);
    CHECK(twice.objective == s.objective);
  }
}

TEST_CASE("a larger sigma never loosens the past-data loss") {
  auto p = random_two_component(22);
  p.constraint = ConstraintKind::Perplexity;
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 1.0, 100.0, 1000.0}) {
    auto op = make_problem(p, LossKind::Perplexity);
    op.constraint->sigma = sigma;
    auto s = optimize(op);
    CHECK(s.constraint_loss <= prev + 1e-9);
    prev = s.constraint_loss;
  }
}

TEST_CASE("a single application reduces to the two-component problem") {
  auto p = random_two_component(31);
  auto op = make_problem(p, LossKind::Perplexity);
  auto direct = optimize(op);
  auto multi = multi_app_optimize(op.mixture, op.losses, op.constraint);
  CHECK(multi.lambda == direct.lambda);
  CHECK(multi.objective == direct.objective);
}

TEST_CASE("a duplicated application doubles its loss") {
  auto p = random_two_component(32);
  auto op = make_problem(p, LossKind::Perplexity);
  OptimizationProblem dup{MixtureModel({p.baseline, p.app, p.app}, {1.0, 0.0, 0.0}),
                          {op.losses[0], op.losses[0]}, op.constraint, {}};
  auto one = evaluate_at(op, {0.7, 0.3});
  auto two = evaluate_at(dup, {0.7, 0.1, 0.2});
  CHECK(two.losses[0] == doctest::Approx(one.losses[0]).epsilon(1e-12));
  CHECK(two.objective == doctest::Approx(2.0 * one.losses[0] + one.penalty).epsilon(1e-12));
}

TEST_CASE("three components improve on the uniform and baseline weights") {
  auto p = random_two_component(41);
  auto q = random_two_component(42);
  MixtureModel mix({p.baseline, p.app, q.app}, {1.0, 0.0, 0.0});
  std::vector<LossSpec> losses = {LossSpec::perplexity(p.app_corpus), LossSpec::expected_wer(q.app_nbest)};
  ConstraintSpec c;
  c.kind = ConstraintKind::Perplexity;
  c.corpus = p.past_corpus;
  auto s = multi_app_optimize(mix, losses, c);
  OptimizationProblem op{mix, losses, c, {}};
  CHECK(s.objective <= evaluate_at(op, {1.0 / 3, 1.0 / 3, 1.0 / 3}).objective + 1e-12);
  CHECK(s.objective <= evaluate_at(op, {1.0, 0.0, 0.0}).objective + 1e-12);
  CHECK(simplex_gap(s.lambda) <= 1e-9);
  CHECK(s.losses.size() == 2);
  CHECK(evaluate_at(op, s.lambda).objective == s.objective);
}

TEST_CASE("invalid problems are rejected") {
  auto p = random_two_component(51);
  auto op = make_problem(p, LossKind::Perplexity);
  CHECK(error_of([&] { multi_app_optimize(op.mixture, {op.losses[0], op.losses[0]}, op.constraint); }) ==
        ErrorKind::InvalidArgument);
  auto bad = op;
  bad.solver.coarse_step = 0.0;
  CHECK(error_of([&] { optimize(bad); }) == ErrorKind::InvalidArgument);
  bad = op;
  bad.losses.clear();
  CHECK(error_of([&] { optimize(bad); }) == ErrorKind::InvalidArgument);
  bad = op;
  bad.constraint->sigma = -1.0;
  CHECK(error_of([&] { optimize(bad); }) == ErrorKind::InvalidArgument);
  CHECK(error_of([&] { evaluate_at(op, {0.5, 0.6}); }) == ErrorKind::NotSimplex);
  CHECK(error_of([&] { evaluate_at(op, {0.5, 0.25, 0.25}); }) == ErrorKind::InvalidArgument);
  bad = op;
  bad.losses[0] = LossSpec::neg_squared(5);
  CHECK(error_of([&] { optimize(bad); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("an infinite baseline loss on past data is a numeric error") {
  auto a = uniform({"a", "b"});
  auto corpus = std::make_shared<EvalCorpus>(EvalCorpus::from_sentences({{"a", "zzz"}}));
  ConstraintSpec c;
  c.corpus = corpus;
  OptimizationProblem op{MixtureModel({a, a}, {1.0, 0.0}), {LossSpec::neg_squared(1)}, c, {}};
  CHECK(error_of([&] { optimize(op); }) == ErrorKind::NonFiniteLoss);
}
