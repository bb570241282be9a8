#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grammarlm/optimizer.hpp"

namespace grammarlm {

/// Evaluation data: a corpus, n-best lists with references, or both.
struct DataRef {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> nbest;
  std::optional<std::filesystem::path> references;

  bool has_corpus() const { return corpus.has_value(); }
  bool has_nbest() const { return nbest.has_value(); }
};

struct AppSpec {
  std::string name;
  std::filesystem::path model;
  LossKind loss = LossKind::ExpectedWer;
  DataRef tune;  // what the loss is computed on
  std::optional<DataRef> test;  // reporting data; defaults to `tune`
};

/// Declarative optimization run, loaded from JSON. Relative paths resolve
/// against the directory of the run spec file.
struct RunSpec {
  std::filesystem::path baseline;
  std::vector<AppSpec> apps;
  DataRef past;
  std::optional<ConstraintKind> constraint;
  double sigma = kDefaultSigma;
  Scales scales;
  SolverConfig solver;
};

/// Throws InvalidArgument with the offending key, or Io for missing files.
RunSpec parse_run_spec(std::string_view json_text, const std::filesystem::path& base_dir);
RunSpec load_run_spec(const std::filesystem::path& path);

struct Metrics {
  std::optional<double> ppl_before, ppl_after;
  std::optional<double> expected_wer_before, expected_wer_after;
  std::optional<double> wer_before, wer_after;
};

struct AppReport {
  std::string name;
  std::string loss;
  double lambda = 0.0;
  Metrics metrics;
};

/// Optimized weights with before (baseline only) and after metrics per app
/// and on past data.
struct Report {
  std::vector<std::string> components;
  std::string constraint;  // kind or "none"
  double sigma = kDefaultSigma;
  Solution solution;
  std::vector<AppReport> apps;
  Metrics past;
};

Report run_optimization(const RunSpec& spec);

std::string report_to_json(const Report& r);
Report report_from_json(std::string_view text);
/// Fixed-width table; values printed at fixed precision.
std::string render_text(const Report& r);

/// Relative change (after - before) / before.
double relative_delta(double before, double after);

}  // namespace grammarlm
