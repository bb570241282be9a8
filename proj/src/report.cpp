#include "grammarlm/report.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include <json.hpp>

#include "grammarlm/error.hpp"
#include "grammarlm/io.hpp"

namespace grammarlm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorKind::InvalidArgument, "run spec: '" + key + "' " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) bad(where + key, "is required");
  return *it;
}

fs::path path_field(const json& obj, const char* key, const std::string& where, const fs::path& base) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) bad(where + key, "must be a string");
  fs::path p = v.get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) throw Error(ErrorKind::Io, "run spec: '" + where + key + "' names missing file " + p.string());
  return p;
}

std::optional<fs::path> optional_path(const json& obj, const char* key, const std::string& where,
                                      const fs::path& base) {
  if (!obj.contains(key)) return std::nullopt;
  return path_field(obj, key, where, base);
}

double number_field(const json& obj, const char* key, const std::string& where, double fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number()) bad(where + key, "must be a number");
  return it->get<double>();
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) bad(where.empty() ? "spec" : where, "must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) bad(where + it.key(), "is not a known key");
  }
}

DataRef data_ref(const json& obj, const std::string& where, const fs::path& base) {
  check_keys(obj, {"corpus", "nbest", "references"}, where);
  DataRef d;
  d.corpus = optional_path(obj, "corpus", where, base);
  d.nbest = optional_path(obj, "nbest", where, base);
  d.references = optional_path(obj, "references", where, base);
  if (d.nbest.has_value() != d.references.has_value())
    bad(where + "nbest", "and 'references' must be given together");
  return d;
}

}  // namespace

RunSpec parse_run_spec(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Syntax, std::string("run spec is not valid JSON: ") + e.what());
  }
  check_keys(doc, {"baseline", "apps", "past", "constraint", "sigma", "lm_scale", "acoustic_scale", "solver"}, "");
  RunSpec s;
  s.baseline = path_field(doc, "baseline", "", base_dir);
  const json& apps = require(doc, "apps", "");
  if (!apps.is_array() || apps.empty()) bad("apps", "must be a non-empty array");
  for (size_t i = 0; i < apps.size(); ++i) {
    const std::string where = "apps[" + std::to_string(i) + "].";
    check_keys(apps[i], {"name", "model", "loss", "tune", "test"}, where);
    AppSpec a;
    const json& name = require(apps[i], "name", where);
    if (!name.is_string() || name.get<std::string>().empty()) bad(where + "name", "must be a non-empty string");
    a.name = name.get<std::string>();
    a.model = path_field(apps[i], "model", where, base_dir);
    const json& loss = require(apps[i], "loss", where);
    if (!loss.is_string()) bad(where + "loss", "must be a string");
    try {
      a.loss = loss_kind_from_string(loss.get<std::string>());
    } catch (const Error& e) {
      bad(where + "loss", e.what());
    }
    if (apps[i].contains("tune")) a.tune = data_ref(apps[i]["tune"], where + "tune.", base_dir);
    if (apps[i].contains("test")) a.test = data_ref(apps[i]["test"], where + "test.", base_dir);
    if (a.loss == LossKind::Perplexity && !a.tune.has_corpus()) bad(where + "tune.corpus", "is required by the perplexity loss");
    if (a.loss == LossKind::ExpectedWer && !a.tune.has_nbest()) bad(where + "tune.nbest", "is required by the expected_wer loss");
    s.apps.push_back(std::move(a));
  }
  if (doc.contains("past")) s.past = data_ref(doc["past"], "past.", base_dir);
  if (doc.contains("constraint") && !doc["constraint"].is_null()) {
    const json& c = doc["constraint"];
    if (!c.is_string()) bad("constraint", "must be a string");
    try {
      s.constraint = constraint_kind_from_string(c.get<std::string>());
    } catch (const Error& e) {
      bad("constraint", e.what());
    }
    if (*s.constraint == ConstraintKind::Perplexity && !s.past.has_corpus())
      bad("past.corpus", "is required by the perplexity constraint");
    if (*s.constraint == ConstraintKind::ExpectedWer && !s.past.has_nbest())
      bad("past.nbest", "is required by the expected_wer constraint");
  }
  s.sigma = number_field(doc, "sigma", "", kDefaultSigma);
  if (!(s.sigma > 0.0)) bad("sigma", "must be positive");
  s.scales.lm = number_field(doc, "lm_scale", "", 1.0);
  s.scales.acoustic = number_field(doc, "acoustic_scale", "", 1.0);
  if (!(s.scales.lm > 0.0) || !(s.scales.acoustic > 0.0)) bad("lm_scale", "and 'acoustic_scale' must be positive");
  if (doc.contains("solver")) {
    const json& sv = doc["solver"];
    check_keys(sv, {"coarse_step", "line_points", "tolerance", "max_iterations"}, "solver.");
    s.solver.coarse_step = number_field(sv, "coarse_step", "solver.", s.solver.coarse_step);
    s.solver.tolerance = number_field(sv, "tolerance", "solver.", s.solver.tolerance);
    s.solver.line_points = static_cast<int>(number_field(sv, "line_points", "solver.", s.solver.line_points));
    s.solver.max_iterations = static_cast<int>(number_field(sv, "max_iterations", "solver.", s.solver.max_iterations));
  }
  return s;
}

RunSpec load_run_spec(const fs::path& path) {
  return parse_run_spec(read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------

namespace {

struct LoadedData {
  std::shared_ptr<const EvalCorpus> corpus;
  std::shared_ptr<const std::vector<NBestList>> nbest;
};

LoadedData load_data(const DataRef& d) {
  LoadedData out;
  if (d.corpus) out.corpus = std::make_shared<EvalCorpus>(read_corpus(read_file(*d.corpus)));
  if (d.nbest)
    out.nbest = std::make_shared<std::vector<NBestList>>(read_nbest(read_file(*d.nbest), read_file(*d.references)));
  return out;
}

Metrics metrics(const LoadedData& d, const MixtureModel& before, const MixtureModel& after, const Scales& sc) {
  Metrics m;
  if (d.corpus) {
    auto spec = LossSpec::perplexity(d.corpus);
    m.ppl_before = eval_loss(spec, before);
    m.ppl_after = eval_loss(spec, after);
  }
  if (d.nbest) {
    auto spec = LossSpec::expected_wer(d.nbest, sc);
    m.expected_wer_before = eval_loss(spec, before);
    m.expected_wer_after = eval_loss(spec, after);
    m.wer_before = one_best_wer(*d.nbest, before, sc);
    m.wer_after = one_best_wer(*d.nbest, after, sc);
  }
  return m;
}

}  // namespace

Report run_optimization(const RunSpec& spec) {
  std::vector<MixtureModel::Component> comps;
  comps.push_back(std::make_shared<NGramModel>(read_arpa(read_file(spec.baseline))));
  for (const auto& a : spec.apps) comps.push_back(std::make_shared<NGramModel>(read_arpa(read_file(a.model))));
  std::vector<double> baseline_only(comps.size(), 0.0);
  baseline_only[0] = 1.0;
  MixtureModel before(comps, baseline_only);

  std::vector<LossSpec> losses;
  std::vector<LoadedData> tune, test;
  for (size_t i = 0; i < spec.apps.size(); ++i) {
    const auto& a = spec.apps[i];
    tune.push_back(load_data(a.tune));
    test.push_back(a.test ? load_data(*a.test) : tune.back());
    switch (a.loss) {
      case LossKind::NegSquared: losses.push_back(LossSpec::neg_squared(i + 1)); break;
      case LossKind::Perplexity: losses.push_back(LossSpec::perplexity(tune.back().corpus)); break;
      case LossKind::ExpectedWer: losses.push_back(LossSpec::expected_wer(tune.back().nbest, spec.scales)); break;
    }
  }
  LoadedData past = load_data(spec.past);
  std::optional<ConstraintSpec> constraint;
  if (spec.constraint) {
    ConstraintSpec c;
    c.kind = *spec.constraint;
    c.corpus = past.corpus;
    c.nbest = past.nbest;
    c.scales = spec.scales;
    c.sigma = spec.sigma;
    constraint = c;
  }

  Report r;
  r.components.push_back("baseline");
  for (const auto& a : spec.apps) r.components.push_back(a.name);
  r.constraint = spec.constraint ? std::string(to_string(*spec.constraint)) : "none";
  r.sigma = spec.sigma;
  r.solution = optimize({before, losses, constraint, spec.solver});
  MixtureModel after(comps, r.solution.lambda);
  for (size_t i = 0; i < spec.apps.size(); ++i)
    r.apps.push_back({spec.apps[i].name, std::string(to_string(spec.apps[i].loss)), r.solution.lambda[i + 1],
                      metrics(test[i], before, after, spec.scales)});
  r.past = metrics(past, before, after, spec.scales);
  return r;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

double to_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw Error(ErrorKind::Syntax, "report: expected a number, got " + j.dump());
}

json optional_number(const std::optional<double>& v) { return v ? number(*v) : json(nullptr); }

std::optional<double> to_optional(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return to_number(*it);
}

json metrics_json(const Metrics& m) {
  return {{"ppl_before", optional_number(m.ppl_before)},
          {"ppl_after", optional_number(m.ppl_after)},
          {"expected_wer_before", optional_number(m.expected_wer_before)},
          {"expected_wer_after", optional_number(m.expected_wer_after)},
          {"wer_before", optional_number(m.wer_before)},
          {"wer_after", optional_number(m.wer_after)}};
}

Metrics metrics_from(const json& j) {
  return {to_optional(j, "ppl_before"),          to_optional(j, "ppl_after"),
          to_optional(j, "expected_wer_before"), to_optional(j, "expected_wer_after"),
          to_optional(j, "wer_before"),          to_optional(j, "wer_after")};
}

}  // namespace

std::string report_to_json(const Report& r) {
  json lambda = json::array(), losses = json::array(), apps = json::array();
  for (double l : r.solution.lambda) lambda.push_back(number(l));
  for (double l : r.solution.losses) losses.push_back(number(l));
  for (const auto& a : r.apps)
    apps.push_back({{"name", a.name}, {"loss", a.loss}, {"lambda", number(a.lambda)}, {"metrics", metrics_json(a.metrics)}});
  json doc = {
      {"components", r.components},
      {"constraint", r.constraint},
      {"sigma", number(r.sigma)},
      {"solution",
       {{"lambda", lambda},
        {"losses", losses},
        {"constraint_loss", number(r.solution.constraint_loss)},
        {"bound", number(r.solution.bound)},
        {"penalty", number(r.solution.penalty)},
        {"objective", number(r.solution.objective)},
        {"iterations", r.solution.iterations},
        {"converged", r.solution.converged},
        {"feasible", r.solution.feasible}}},
      {"apps", apps},
      {"past", metrics_json(r.past)},
  };
  return doc.dump(2) + "\n";
}

Report report_from_json(std::string_view text) {
  try {
    json doc = json::parse(text);
    Report r;
    r.components = doc.at("components").get<std::vector<std::string>>();
    r.constraint = doc.at("constraint").get<std::string>();
    r.sigma = to_number(doc.at("sigma"));
    const json& s = doc.at("solution");
    for (const auto& l : s.at("lambda")) r.solution.lambda.push_back(to_number(l));
    for (const auto& l : s.at("losses")) r.solution.losses.push_back(to_number(l));
    r.solution.constraint_loss = to_number(s.at("constraint_loss"));
    r.solution.bound = to_number(s.at("bound"));
    r.solution.penalty = to_number(s.at("penalty"));
    r.solution.objective = to_number(s.at("objective"));
    r.solution.iterations = s.at("iterations").get<int>();
    r.solution.converged = s.at("converged").get<bool>();
    r.solution.feasible = s.at("feasible").get<bool>();
    for (const auto& a : doc.at("apps"))
      r.apps.push_back({a.at("name").get<std::string>(), a.at("loss").get<std::string>(), to_number(a.at("lambda")),
                        metrics_from(a.at("metrics"))});
    r.past = metrics_from(doc.at("past"));
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Syntax, std::string("malformed report: ") + e.what());
  }
}

double relative_delta(double before, double after) {
  if (before == 0.0) return after == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (after - before) / before;
}

namespace {

std::string cell(const std::optional<double>& v, int decimals = 4) {
  if (!v) return "-";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return format_fixed(*v, decimals);
}

std::string pad(std::string s, size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string row(const std::vector<std::string>& cols, const std::vector<size_t>& widths) {
  std::string out;
  for (size_t i = 0; i < cols.size(); ++i) out += i + 1 == cols.size() ? cols[i] : pad(cols[i], widths[i]) + "  ";
  return out + "\n";
}

std::optional<double> rel(const std::optional<double>& before, const std::optional<double>& after) {
  if (!before || !after) return std::nullopt;
  return 100.0 * relative_delta(*before, *after);
}

}  // namespace

std::string render_text(const Report& r) {
  const Solution& s = r.solution;
  std::string out = "Interpolation weight report\n\n";
  out += "constraint   " + r.constraint + "\n";
  out += "sigma        " + format_general(r.sigma, 6) + "\n";
  if (r.constraint != "none") {
    out += "bound C      " + cell(s.bound, 6) + "\n";
    out += "past loss    " + cell(s.constraint_loss, 6) + "\n";
  }
  out += "penalty      " + cell(s.penalty, 6) + "\n";
  out += "objective    " + cell(s.objective, 6) + "\n";
  out += std::string("feasible     ") + (s.feasible ? "yes" : "no") + "\n";
  out += std::string("converged    ") + (s.converged ? "yes" : "no") + " (" + std::to_string(s.iterations) + " iterations)\n\n";

  size_t name_w = 10;
  for (const auto& c : r.components) name_w = std::max(name_w, c.size());
  std::vector<size_t> wl = {name_w, 8};
  out += row({"component", "lambda"}, wl);
  for (size_t i = 0; i < r.components.size() && i < s.lambda.size(); ++i)
    out += row({r.components[i], cell(s.lambda[i], 6)}, wl);
  out += "\n";

  std::vector<size_t> w = {name_w, 12, 10, 10, 11, 11, 10, 10, 9};
  out += row({"app", "loss", "PPL base", "PPL opt", "EWER base", "EWER opt", "WER base", "WER opt", "rel. WER%"}, w);
  auto pct = [](const std::optional<double>& v) -> std::optional<double> {
    if (v) return 100.0 * *v;
    return std::nullopt;
  };
  for (const auto& a : r.apps) {
    const Metrics& m = a.metrics;
    out += row({a.name, a.loss, cell(m.ppl_before), cell(m.ppl_after), cell(pct(m.expected_wer_before), 2),
                cell(pct(m.expected_wer_after), 2), cell(pct(m.wer_before), 2), cell(pct(m.wer_after), 2),
                cell(rel(m.wer_before, m.wer_after), 2)},
               w);
  }
  const Metrics& p = r.past;
  out += row({"past data", "-", cell(p.ppl_before), cell(p.ppl_after), cell(pct(p.expected_wer_before), 2),
              cell(pct(p.expected_wer_after), 2), cell(pct(p.wer_before), 2), cell(pct(p.wer_after), 2),
              cell(rel(p.wer_before, p.wer_after), 2)},
             w);
  return out;
}

}  // namespace grammarlm
