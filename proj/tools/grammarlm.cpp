// grammarlm: compile -> counts -> train -> optimize -> evaluate.
//
// Exit status: 0 ok, 1 usage or other failure, 2 parse error, 3 compile
// error, 4 numeric failure, 5 infeasible solution.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "grammarlm/asr_eval.hpp"
#include "grammarlm/counts.hpp"
#include "grammarlm/error.hpp"
#include "grammarlm/grammar.hpp"
#include "grammarlm/io.hpp"
#include "grammarlm/lm.hpp"
#include "grammarlm/mixture.hpp"
#include "grammarlm/optimizer.hpp"
#include "grammarlm/report.hpp"
#include "grammarlm/wfst.hpp"

namespace fs = std::filesystem;
using namespace grammarlm;

namespace {

enum Exit { kOk = 0, kOther = 1, kParse = 2, kCompile = 3, kNumeric = 4, kInfeasible = 5 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Syntax:
    case ErrorKind::DuplicateRule:
    case ErrorKind::UnresolvedRule:
    case ErrorKind::CyclicRule:
    case ErrorKind::EmptyCatalog:
    case ErrorKind::NegativeWeight:
    case ErrorKind::MalformedLine:
    case ErrorKind::MalformedArpa:
      return kParse;
    case ErrorKind::UnknownRoot:
    case ErrorKind::MissingCatalog:
    case ErrorKind::UnboundNonTerminal:
    case ErrorKind::RecursionTooDeep:
      return kCompile;
    case ErrorKind::DivergentMass:
    case ErrorKind::ZeroMass:
    case ErrorKind::CycleDetected:
    case ErrorKind::DeadEnd:
    case ErrorKind::PathCapExceeded:
    case ErrorKind::AllCountsZero:
    case ErrorKind::EmptyCounts:
    case ErrorKind::InfinitePerplexity:
    case ErrorKind::NonFiniteLoss:
      return kNumeric;
    default:
      return kOther;
  }
}

void init_logging() {
  auto logger = spdlog::stderr_color_st("grammarlm");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("GRAMMARLM_LOG")) {
    auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("GRAMMARLM_LOG={} is not a log level; keeping 'warn'", env);
    else
      spdlog::set_level(level);
  }
}

// NAME=PATH
std::pair<std::string, fs::path> split_binding(const std::string& arg) {
  auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
    throw Error(ErrorKind::InvalidArgument, "catalog binding must be NAME=PATH, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void write_output(const fs::path& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  write_file_atomic(path, text);
  spdlog::info("wrote {}", path.string());
}

// ---------------------------------------------------------------------------

struct CompileArgs {
  fs::path grammar, out;
  std::string root;
  std::vector<std::string> catalogs;
  bool keep_nonterminals = false;
};

int run_compile(const CompileArgs& a) {
  GrammarAst ast = parse_grammar(read_file(a.grammar));
  std::string root = a.root;
  if (root.empty()) {
    if (ast.rules().empty()) throw Error(ErrorKind::UnknownRoot, "grammar defines no rules");
    root = ast.rules().back().first;
  }
  std::vector<Catalog> catalogs;
  for (const auto& b : a.catalogs) {
    auto [name, path] = split_binding(b);
    catalogs.push_back(parse_catalog(read_file(path), name));
  }
  WeightedFst f = compile(ast, root, catalogs);
  if (!a.keep_nonterminals) {
    std::map<std::string, WeightedFst> bindings;
    for (const auto& c : catalogs) bindings.emplace(c.name, catalog_fst(c));
    f = remove_epsilons(replace(f, bindings));
  }
  spdlog::info("{}: {} states, {} arcs", root, f.num_states(), f.num_arcs());
  write_output(a.out, write_fst_text(f));
  return kOk;
}

struct CountsArgs {
  fs::path fst, out;
  int order = 3;
  double prune = PruneConfig{}.threshold;
};

PruneConfig prune_config(double threshold) {
  return threshold > 0.0 ? PruneConfig{threshold, true} : PruneConfig::off();
}

int run_counts(const CountsArgs& a) {
  WeightedFst f = read_fst_text(read_file(a.fst));
  ExpectedCounts c = expected_counts(f, a.order, true, prune_config(a.prune));
  spdlog::info("{} n-grams up to order {}", c.table.size(), c.order);
  write_output(a.out, write_counts_text(c));
  return kOk;
}

struct TrainArgs {
  std::optional<fs::path> counts, fst, corpus;
  std::optional<std::uint64_t> sample;
  std::uint64_t seed = 0;
  std::optional<int> order;
  double prune = PruneConfig{}.threshold;
  double scale_mass = kDefaultTargetMass;
  bool unk = false;
  fs::path out;
};

int run_train(const TrainArgs& a) {
  KatzConfig cfg;
  cfg.order = a.order.value_or(3);
  cfg.open_vocabulary = a.unk;
  std::vector<std::string> warnings;
  NGramModel model;
  if (a.counts) {
    ExpectedCounts c = read_counts_text(read_file(*a.counts));
    if (!a.order) cfg.order = c.order;
    model = train_katz(scale_counts(c, a.scale_mass), cfg, &warnings);
  } else if (a.fst && a.sample) {
    model = train_from_samples(read_fst_text(read_file(*a.fst)), *a.sample, a.seed, cfg);
  } else if (a.fst) {
    ExpectedCounts c = expected_counts(read_fst_text(read_file(*a.fst)), cfg.order, true, prune_config(a.prune));
    model = train_katz(scale_counts(c, a.scale_mass), cfg, &warnings);
  } else {
    EvalCorpus c = read_corpus(read_file(*a.corpus));
    model = train_katz(count_sentences(c.sentences, cfg.order), cfg, &warnings);
  }
  for (const auto& w : warnings) spdlog::warn("{}", w);
  write_output(a.out, write_arpa(model));
  return kOk;
}

struct SampleArgs {
  fs::path fst, out;
  std::uint64_t n = 1000, seed = 0;
};

int run_sample(const SampleArgs& a) {
  PathSampler sampler(read_fst_text(read_file(a.fst)));
  std::mt19937_64 rng(a.seed);
  std::vector<Words> sentences;
  sentences.reserve(a.n);
  for (std::uint64_t i = 0; i < a.n; ++i) sentences.push_back(sampler.sample(rng));
  write_output(a.out, write_corpus(sentences));
  return kOk;
}

struct OptimizeArgs {
  fs::path spec;
  std::optional<double> sigma, lm_scale, acoustic_scale;
  bool allow_infeasible = false;
  std::optional<fs::path> report, solution;
};

int run_optimize(const OptimizeArgs& a) {
  RunSpec spec = load_run_spec(a.spec);
  if (a.sigma) spec.sigma = *a.sigma;
  if (a.lm_scale) spec.scales.lm = *a.lm_scale;
  if (a.acoustic_scale) spec.scales.acoustic = *a.acoustic_scale;
  Report r = run_optimization(spec);
  spdlog::info("objective {} after {} iterations", r.solution.objective, r.solution.iterations);
  if (a.solution) write_output(*a.solution, report_to_json(r));
  write_output(a.report.value_or("-"), render_text(r));
  if (!r.solution.feasible) {
    if (!a.allow_infeasible) {
      spdlog::error("past-data loss {} exceeds the bound {} by more than {} relative",
                    r.solution.constraint_loss, r.solution.bound, kFeasibilitySlack);
      return kInfeasible;
    }
    spdlog::warn("solution is infeasible; accepted by --allow-infeasible");
  }
  return kOk;
}

struct EvaluateArgs {
  std::vector<fs::path> models;
  std::vector<double> weights;
  std::optional<fs::path> corpus, nbest, references;
  double lm_scale = 1.0, acoustic_scale = 1.0;
};

int run_evaluate(const EvaluateArgs& a) {
  std::vector<MixtureModel::Component> comps;
  for (const auto& m : a.models) comps.push_back(std::make_shared<NGramModel>(read_arpa(read_file(m))));
  std::vector<double> weights = a.weights;
  if (weights.empty()) weights.assign(comps.size(), 1.0 / static_cast<double>(comps.size()));
  if (weights.size() != comps.size())
    throw Error(ErrorKind::InvalidArgument, "one weight per model required");
  MixtureModel mix(comps, weights);
  if (a.corpus) {
    EvalCorpus c = read_corpus(read_file(*a.corpus));
    std::cout << "ppl\t" << format_general(perplexity(mix, c), 10) << "\n";
  }
  if (a.nbest) {
    auto lists = read_nbest(read_file(*a.nbest), read_file(*a.references));
    Scales s{a.lm_scale, a.acoustic_scale};
    std::cout << "expected_wer\t" << format_general(expected_wer_loss(lists, mix, s), 10) << "\n";
    std::cout << "wer\t" << format_general(one_best_wer(lists, mix, s), 10) << "\n";
    std::cout << "oracle_wer\t" << format_general(oracle_wer(lists), 10) << "\n";
  }
  return kOk;
}

struct ReportArgs {
  fs::path solution, out = "-";
};

int run_report(const ReportArgs& a) {
  write_output(a.out, render_text(report_from_json(read_file(a.solution))));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"Grammar-derived n-gram language models and constrained interpolation"};
  app.require_subcommand(1);

  CompileArgs compile_args;
  auto* compile_cmd = app.add_subcommand("compile", "compile a grammar rule to a textual FST");
  compile_cmd->add_option("grammar", compile_args.grammar, "grammar file")->required()->check(CLI::ExistingFile);
  compile_cmd->add_option("-r,--root", compile_args.root, "root rule (default: the last rule)");
  compile_cmd->add_option("-c,--catalog", compile_args.catalogs, "NAME=PATH catalog binding");
  compile_cmd->add_flag("--keep-nonterminals", compile_args.keep_nonterminals, "leave catalog arcs unexpanded");
  compile_cmd->add_option("-o,--out", compile_args.out, "output FST ('-' for stdout)")->required();

  CountsArgs counts_args;
  auto* counts_cmd = app.add_subcommand("counts", "exact expected n-gram counts of an FST");
  counts_cmd->add_option("fst", counts_args.fst, "FST file")->required()->check(CLI::ExistingFile);
  counts_cmd->add_option("--order", counts_args.order, "n-gram order")->capture_default_str();
  counts_cmd->add_option("--prune", counts_args.prune, "history pruning threshold, 0 disables")->capture_default_str();
  counts_cmd->add_option("-o,--out", counts_args.out, "output counts ('-' for stdout)")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a Katz back-off model");
  auto* src_counts = train_cmd->add_option("--counts", train_args.counts, "expected counts file");
  auto* src_fst = train_cmd->add_option("--fst", train_args.fst, "FST file (exact counts, or samples with --sample)");
  auto* src_corpus = train_cmd->add_option("--corpus", train_args.corpus, "text corpus, one sentence per line");
  src_counts->check(CLI::ExistingFile)->excludes(src_fst)->excludes(src_corpus);
  src_fst->check(CLI::ExistingFile)->excludes(src_corpus);
  src_corpus->check(CLI::ExistingFile);
  train_cmd->add_option("--sample", train_args.sample, "train on N sampled sentences")->needs(src_fst);
  train_cmd->add_option("--seed", train_args.seed, "sampling seed")->capture_default_str();
  train_cmd->add_option("--order", train_args.order, "model order (default: counts order, else 3)");
  train_cmd->add_option("--prune", train_args.prune, "count pruning threshold with --fst, 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--scale-mass", train_args.scale_mass, "total mass of scaled fractional counts")
      ->capture_default_str();
  train_cmd->add_flag("--unk", train_args.unk, "open vocabulary with <unk>");
  train_cmd->add_option("-o,--out", train_args.out, "output ARPA ('-' for stdout)")->required();

  SampleArgs sample_args;
  auto* sample_cmd = app.add_subcommand("sample", "sample sentences from an FST");
  sample_cmd->add_option("fst", sample_args.fst, "FST file")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("-n,--count", sample_args.n, "number of sentences")->capture_default_str();
  sample_cmd->add_option("--seed", sample_args.seed, "sampling seed")->capture_default_str();
  sample_cmd->add_option("-o,--out", sample_args.out, "output corpus ('-' for stdout)")->required();

  OptimizeArgs opt_args;
  auto* opt_cmd = app.add_subcommand("optimize", "optimize interpolation weights for a run spec");
  opt_cmd->add_option("--spec", opt_args.spec, "run spec (JSON)")->required()->check(CLI::ExistingFile);
  opt_cmd->add_option("--sigma", opt_args.sigma, "penalty strength");
  opt_cmd->add_option("--lm-scale", opt_args.lm_scale, "LM scale in n-best posteriors");
  opt_cmd->add_option("--acoustic-scale", opt_args.acoustic_scale, "acoustic scale in n-best posteriors");
  opt_cmd->add_flag("--allow-infeasible", opt_args.allow_infeasible, "exit 0 even if the constraint is violated");
  opt_cmd->add_option("--report", opt_args.report, "text report (default: stdout)");
  opt_cmd->add_option("--solution", opt_args.solution, "solution and metrics as JSON");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "perplexity and WER metrics of a model or mixture");
  eval_cmd->add_option("-m,--model", eval_args.models, "ARPA model; repeat for a mixture")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("-w,--weights", eval_args.weights, "mixture weights (default: uniform)")->delimiter(',');
  auto* eval_corpus = eval_cmd->add_option("--corpus", eval_args.corpus, "text corpus");
  auto* eval_nbest = eval_cmd->add_option("--nbest", eval_args.nbest, "n-best lists");
  auto* eval_refs = eval_cmd->add_option("--references", eval_args.references, "reference transcripts");
  eval_corpus->check(CLI::ExistingFile);
  eval_nbest->check(CLI::ExistingFile)->needs(eval_refs);
  eval_refs->check(CLI::ExistingFile)->needs(eval_nbest);
  eval_cmd->add_option("--lm-scale", eval_args.lm_scale, "LM scale")->capture_default_str();
  eval_cmd->add_option("--acoustic-scale", eval_args.acoustic_scale, "acoustic scale")->capture_default_str();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "render the text report of a stored solution");
  report_cmd->add_option("solution", report_args.solution, "solution JSON")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("-o,--out", report_args.out, "output ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kOther;
  }

  try {
    if (*compile_cmd) return run_compile(compile_args);
    if (*counts_cmd) return run_counts(counts_args);
    if (*train_cmd) {
      if (!train_args.counts && !train_args.fst && !train_args.corpus)
        throw Error(ErrorKind::InvalidArgument, "train needs one of --counts, --fst or --corpus");
      return run_train(train_args);
    }
    if (*sample_cmd) return run_sample(sample_args);
    if (*opt_cmd) return run_optimize(opt_args);
    if (*eval_cmd) {
      if (!eval_args.corpus && !eval_args.nbest)
        throw Error(ErrorKind::InvalidArgument, "evaluate needs --corpus or --nbest");
      return run_evaluate(eval_args);
    }
    if (*report_cmd) return run_report(report_args);
  } catch (const Error& e) {
    spdlog::error("{} ({})", e.what(), to_string(e.kind()));
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
  return kOther;
}
