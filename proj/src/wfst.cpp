#include "grammarlm/wfst.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "grammarlm/error.hpp"
#include "grammarlm/logmath.hpp"

namespace grammarlm {

StateId WeightedFst::add_state() {
  states_.emplace_back();
  return static_cast<StateId>(states_.size() - 1);
}

void WeightedFst::set_start(StateId s) {
  if (s < 0 || s >= num_states())
    throw Error(ErrorKind::InvalidArgument, "start state out of range");
  start_ = s;
}

void WeightedFst::set_final(StateId s, double weight) {
  if (!(weight >= 0.0)) throw Error(ErrorKind::NegativeWeight, "final weight must be >= 0");
  states_.at(s).final = weight;
}

void WeightedFst::add_arc(StateId from, Arc arc) {
  if (!(arc.weight >= 0.0)) throw Error(ErrorKind::NegativeWeight, "arc weight must be >= 0");
  if (arc.next < 0 || arc.next >= num_states() || from < 0 || from >= num_states())
    throw Error(ErrorKind::InvalidArgument, "arc endpoint out of range");
  states_[from].arcs.push_back(std::move(arc));
}

size_t WeightedFst::num_arcs() const {
  size_t n = 0;
  for (const auto& s : states_) n += s.arcs.size();
  return n;
}

bool WeightedFst::has_nonterminals() const {
  for (const auto& s : states_)
    for (const auto& a : s.arcs)
      if (a.label.is_nonterminal()) return true;
  return false;
}

bool WeightedFst::has_epsilons() const {
  for (const auto& s : states_)
    for (const auto& a : s.arcs)
      if (a.label.is_epsilon()) return true;
  return false;
}

std::set<std::string> WeightedFst::nonterminals() const {
  std::set<std::string> out;
  for (const auto& s : states_)
    for (const auto& a : s.arcs)
      if (a.label.is_nonterminal()) out.insert(a.label.name);
  return out;
}

std::set<std::string> WeightedFst::vocabulary() const {
  std::set<std::string> out;
  for (const auto& s : states_)
    for (const auto& a : s.arcs)
      if (a.label.is_word()) out.insert(a.label.name);
  return out;
}

double ForwardBackward::alpha(StateId s) const { return std::exp(log_alpha.at(s)); }
double ForwardBackward::beta(StateId s) const { return std::exp(log_beta.at(s)); }
double ForwardBackward::z() const { return std::exp(log_z); }

// ---------------------------------------------------------------------------
// replace

namespace {

struct Expansion {
  StateId start;
  std::vector<std::pair<StateId, double>> finals;
};

class Replacer {
 public:
  Replacer(const std::map<std::string, WeightedFst>& bindings, int max_depth)
      : bindings_(bindings), max_depth_(max_depth) {}

  WeightedFst run(const WeightedFst& root) {
    auto top = expand(root, 0);
    out_.set_start(top.start);
    for (auto [s, w] : top.finals) out_.set_final(s, w);
    return std::move(out_);
  }

 private:
  Expansion expand(const WeightedFst& f, int depth) {
    const StateId offset = out_.num_states();
    for (StateId s = 0; s < f.num_states(); ++s) out_.add_state();
    for (StateId s = 0; s < f.num_states(); ++s) {
      for (const Arc& arc : f.arcs(s)) {
        if (!arc.label.is_nonterminal()) {
          out_.add_arc(offset + s, {arc.label, arc.weight, offset + arc.next});
          continue;
        }
        auto it = bindings_.find(arc.label.name);
        if (it == bindings_.end())
          throw Error(ErrorKind::UnboundNonTerminal,
                      "unbound non-terminal " + arc.label.name);
        if (depth + 1 > max_depth_)
          throw Error(ErrorKind::RecursionTooDeep,
                      "non-terminal " + arc.label.name + " nests deeper than " +
                          std::to_string(max_depth_) + " levels");
        Expansion sub = expand(it->second, depth + 1);
        out_.add_arc(offset + s, {Label::epsilon(), arc.weight, sub.start});
        for (auto [fs, fw] : sub.finals)
          out_.add_arc(fs, {Label::epsilon(), fw, offset + arc.next});
      }
    }
    Expansion e{offset + f.start(), {}};
    for (StateId s = 0; s < f.num_states(); ++s)
      if (f.is_final(s)) e.finals.emplace_back(offset + s, f.final_weight(s));
    return e;
  }

  const std::map<std::string, WeightedFst>& bindings_;
  int max_depth_;
  WeightedFst out_;
};

}  // namespace

WeightedFst replace(const WeightedFst& root,
                    const std::map<std::string, WeightedFst>& bindings, int max_depth) {
  if (max_depth < 1) throw Error(ErrorKind::InvalidArgument, "max_depth must be positive");
  if (root.num_states() == 0) return root;
  return Replacer(bindings, max_depth).run(root);
}

// ---------------------------------------------------------------------------
// epsilon removal

namespace {

// Sum of all epsilon-only path weights from `source`, by residual propagation.
std::map<StateId, double> epsilon_closure(const WeightedFst& f, StateId source) {
  std::map<StateId, double> dist{{source, 1.0}};
  std::map<StateId, double> residual{{source, 1.0}};
  std::deque<StateId> queue{source};
  std::vector<char> queued(f.num_states(), 0);
  queued[source] = 1;
  long steps = 0;
  while (!queue.empty()) {
    if (++steps > 10'000'000)
      throw Error(ErrorKind::DivergentMass, "epsilon cycle does not converge");
    StateId q = queue.front();
    queue.pop_front();
    queued[q] = 0;
    double r = residual[q];
    residual[q] = 0.0;
    for (const Arc& arc : f.arcs(q)) {
      if (!arc.label.is_epsilon() || arc.weight <= 0.0) continue;
      double add = r * arc.weight;
      double& d = dist[arc.next];
      if (add <= 1e-17 * d) continue;
      d += add;
      if (!std::isfinite(d))
        throw Error(ErrorKind::DivergentMass, "epsilon cycle mass diverges");
      residual[arc.next] += add;
      if (!queued[arc.next]) {
        queued[arc.next] = 1;
        queue.push_back(arc.next);
      }
    }
  }
  return dist;
}

std::vector<char> reachable(const WeightedFst& f) {
  std::vector<char> seen(f.num_states(), 0);
  if (f.num_states() == 0) return seen;
  std::vector<StateId> stack{f.start()};
  seen[f.start()] = 1;
  while (!stack.empty()) {
    StateId s = stack.back();
    stack.pop_back();
    for (const Arc& a : f.arcs(s))
      if (a.weight > 0.0 && !seen[a.next]) {
        seen[a.next] = 1;
        stack.push_back(a.next);
      }
  }
  return seen;
}

std::vector<char> coreachable(const WeightedFst& f) {
  std::vector<std::vector<StateId>> incoming(f.num_states());
  for (StateId s = 0; s < f.num_states(); ++s)
    for (const Arc& a : f.arcs(s))
      if (a.weight > 0.0) incoming[a.next].push_back(s);
  std::vector<char> seen(f.num_states(), 0);
  std::vector<StateId> stack;
  for (StateId s = 0; s < f.num_states(); ++s)
    if (f.is_final(s)) {
      seen[s] = 1;
      stack.push_back(s);
    }
  while (!stack.empty()) {
    StateId s = stack.back();
    stack.pop_back();
    for (StateId p : incoming[s])
      if (!seen[p]) {
        seen[p] = 1;
        stack.push_back(p);
      }
  }
  return seen;
}

}  // namespace

WeightedFst remove_epsilons(const WeightedFst& f) {
  if (f.num_states() == 0) return f;
  WeightedFst closed;
  for (StateId s = 0; s < f.num_states(); ++s) closed.add_state();
  closed.set_start(f.start());
  for (StateId s = 0; s < f.num_states(); ++s) {
    double final = 0.0;
    for (auto [t, d] : epsilon_closure(f, s)) {
      final += d * f.final_weight(t);
      for (const Arc& arc : f.arcs(t))
        if (!arc.label.is_epsilon()) closed.add_arc(s, {arc.label, d * arc.weight, arc.next});
    }
    closed.set_final(s, final);
  }

  auto fwd = reachable(closed);
  auto bwd = coreachable(closed);
  std::vector<StateId> remap(closed.num_states(), -1);
  WeightedFst out;
  for (StateId s = 0; s < closed.num_states(); ++s)
    if ((fwd[s] && bwd[s]) || s == closed.start()) remap[s] = out.add_state();
  out.set_start(remap[closed.start()]);
  for (StateId s = 0; s < closed.num_states(); ++s) {
    if (remap[s] < 0) continue;
    out.set_final(remap[s], closed.final_weight(s));
    for (const Arc& arc : closed.arcs(s))
      if (arc.weight > 0.0 && remap[arc.next] >= 0)
        out.add_arc(remap[s], {arc.label, arc.weight, remap[arc.next]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ordering and forward-backward

std::vector<StateId> topological_order(const WeightedFst& f) {
  const StateId n = f.num_states();
  std::vector<int> indegree(n, 0);
  for (StateId s = 0; s < n; ++s)
    for (const Arc& a : f.arcs(s)) ++indegree[a.next];
  std::deque<StateId> ready;
  for (StateId s = 0; s < n; ++s)
    if (indegree[s] == 0) ready.push_back(s);
  std::vector<StateId> order;
  order.reserve(n);
  while (!ready.empty()) {
    StateId s = ready.front();
    ready.pop_front();
    order.push_back(s);
    for (const Arc& a : f.arcs(s))
      if (--indegree[a.next] == 0) ready.push_back(a.next);
  }
  if (static_cast<StateId>(order.size()) != n)
    throw Error(ErrorKind::CycleDetected, "FST contains a cycle");
  return order;
}

bool is_acyclic(const WeightedFst& f) {
  try {
    topological_order(f);
    return true;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CycleDetected) return false;
    throw;
  }
}

namespace {

double log_weight(double w) { return safe_log(w); }

void acyclic_tables(const WeightedFst& f, const std::vector<StateId>& order,
                    ForwardBackward& fb) {
  fb.log_alpha[f.start()] = 0.0;
  for (StateId s : order) {
    if (fb.log_alpha[s] == kLogZero) continue;
    for (const Arc& a : f.arcs(s))
      fb.log_alpha[a.next] = log_add(fb.log_alpha[a.next], fb.log_alpha[s] + log_weight(a.weight));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    StateId s = *it;
    double acc = log_weight(f.final_weight(s));
    for (const Arc& a : f.arcs(s)) acc = log_add(acc, log_weight(a.weight) + fb.log_beta[a.next]);
    fb.log_beta[s] = acc;
  }
}

double change(double before, double after) {
  if (before == after) return 0.0;
  if (before == kLogZero || after == kLogZero) return std::numeric_limits<double>::infinity();
  return std::abs(after - before);
}

void cyclic_tables(const WeightedFst& f, ForwardBackward& fb) {
  const StateId n = f.num_states();
  struct In {
    StateId from;
    double log_w;
  };
  std::vector<std::vector<In>> incoming(n);
  for (StateId s = 0; s < n; ++s)
    for (const Arc& a : f.arcs(s)) incoming[a.next].push_back({s, log_weight(a.weight)});

  int sweep = 0;
  for (;; ++sweep) {
    if (sweep >= kFixpointMaxIterations)
      throw Error(ErrorKind::DivergentMass, "forward pass did not converge; cycle mass >= 1?");
    double delta = 0.0;
    for (StateId s = 0; s < n; ++s) {
      double acc = s == f.start() ? 0.0 : kLogZero;
      for (const In& in : incoming[s]) acc = log_add(acc, fb.log_alpha[in.from] + in.log_w);
      delta = std::max(delta, change(fb.log_alpha[s], acc));
      fb.log_alpha[s] = acc;
    }
    if (delta < kFixpointTolerance) break;
  }
  int back = 0;
  for (;; ++back) {
    if (back >= kFixpointMaxIterations)
      throw Error(ErrorKind::DivergentMass, "backward pass did not converge; cycle mass >= 1?");
    double delta = 0.0;
    for (StateId s = n - 1; s >= 0; --s) {
      double acc = log_weight(f.final_weight(s));
      for (const Arc& a : f.arcs(s)) acc = log_add(acc, log_weight(a.weight) + fb.log_beta[a.next]);
      delta = std::max(delta, change(fb.log_beta[s], acc));
      fb.log_beta[s] = acc;
    }
    if (delta < kFixpointTolerance) break;
  }
  fb.iterations = std::max(sweep, back) + 1;
}

}  // namespace

ForwardBackward forward_backward(const WeightedFst& f) {
  if (f.num_states() == 0) throw Error(ErrorKind::ZeroMass, "FST has no states");
  ForwardBackward fb;
  fb.log_alpha.assign(f.num_states(), kLogZero);
  fb.log_beta.assign(f.num_states(), kLogZero);
  std::vector<StateId> order;
  try {
    order = topological_order(f);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::CycleDetected) throw;
    fb.cyclic = true;
  }
  if (fb.cyclic)
    cyclic_tables(f, fb);
  else
    acyclic_tables(f, order, fb);

  fb.log_z = fb.log_beta[f.start()];
  if (fb.log_z == kLogZero) throw Error(ErrorKind::ZeroMass, "FST has no positive-weight path");
  if (!std::isfinite(fb.log_z)) throw Error(ErrorKind::DivergentMass, "total path mass is not finite");
  return fb;
}

// ---------------------------------------------------------------------------
// sampling

PathSampler::PathSampler(const WeightedFst& f) : fst_(f) {
  if (f.has_nonterminals())
    throw Error(ErrorKind::InvalidArgument, "cannot sample from an FST with non-terminal arcs");
  const ForwardBackward fb = forward_backward(f);
  choices_.resize(f.num_states());
  for (StateId s = 0; s < f.num_states(); ++s) {
    const double lb = fb.log_beta[s];
    if (lb == kLogZero) continue;
    double cum = 0.0;
    auto& cs = choices_[s];
    const auto arcs = f.arcs(s);
    for (size_t i = 0; i < arcs.size(); ++i) {
      double p = std::exp(log_weight(arcs[i].weight) + fb.log_beta[arcs[i].next] - lb);
      if (p <= 0.0) continue;
      cum += p;
      cs.push_back({cum, static_cast<int>(i)});
    }
    double stop = std::exp(log_weight(f.final_weight(s)) - lb);
    if (stop > 0.0) {
      cum += stop;
      cs.push_back({cum, -1});
    }
  }
}

Words PathSampler::sample_with(const std::function<std::uint64_t()>& next) const {
  Words words;
  StateId s = fst_.start();
  for (;;) {
    const auto& cs = choices_[s];
    if (cs.empty())
      throw Error(ErrorKind::DeadEnd, "sampler reached state " + std::to_string(s) +
                                          " with no continuation mass");
    // 53 random bits mapped onto [0, total).
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53 * cs.back().cumulative;
    auto it = std::upper_bound(cs.begin(), cs.end(), u,
                               [](double x, const Choice& c) { return x < c.cumulative; });
    if (it == cs.end()) --it;
    if (it->arc < 0) return words;
    const Arc& arc = fst_.arcs(s)[it->arc];
    if (arc.label.is_word()) words.push_back(arc.label.name);
    s = arc.next;
  }
}

Words sample_path(const WeightedFst& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return PathSampler(f).sample(rng);
}

// ---------------------------------------------------------------------------
// path enumeration

void for_each_path(const WeightedFst& f, std::uint64_t max_paths,
                   const std::function<void(const Words&, double)>& visit) {
  topological_order(f);  // rejects cycles
  if (f.has_nonterminals())
    throw Error(ErrorKind::InvalidArgument, "cannot enumerate paths through non-terminal arcs");
  std::uint64_t produced = 0;
  Words words;
  std::function<void(StateId, double)> walk = [&](StateId s, double weight) {
    if (f.is_final(s)) {
      if (++produced > max_paths)
        throw Error(ErrorKind::PathCapExceeded,
                    "more than " + std::to_string(max_paths) + " paths");
      visit(words, weight * f.final_weight(s));
    }
    for (const Arc& a : f.arcs(s)) {
      if (a.label.is_word()) words.push_back(a.label.name);
      walk(a.next, weight * a.weight);
      if (a.label.is_word()) words.pop_back();
    }
  };
  if (f.num_states() > 0) walk(f.start(), 1.0);
}

// ---------------------------------------------------------------------------
// text format

namespace {

std::string label_text(const Label& l) {
  switch (l.kind) {
    case LabelKind::Epsilon: return std::string(kEpsilonSymbol);
    case LabelKind::NonTerminal: return "$" + l.name;
    case LabelKind::Word: return l.name;
  }
  return {};
}

Label parse_label(std::string_view t) {
  if (t == kEpsilonSymbol) return Label::epsilon();
  if (t.size() > 1 && t.front() == '$') return Label::nonterminal(std::string(t.substr(1)));
  return Label::word(std::string(t));
}

double parse_double(std::string_view t, int line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw Error(ErrorKind::MalformedLine,
                "line " + std::to_string(line) + ": bad number '" + std::string(t) + "'");
  return v;
}

StateId parse_state(std::string_view t, int line) {
  StateId v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || v < 0)
    throw Error(ErrorKind::MalformedLine,
                "line " + std::to_string(line) + ": bad state id '" + std::string(t) + "'");
  return v;
}

}  // namespace

std::string write_fst_text(const WeightedFst& f) {
  std::string out;
  auto emit_state = [&](StateId s) {
    for (const Arc& a : f.arcs(s)) {
      out += std::to_string(s) + '\t' + std::to_string(a.next) + '\t' + label_text(a.label) +
             '\t' + format_general(a.weight, 17) + '\n';
    }
    if (f.is_final(s)) out += std::to_string(s) + '\t' + format_general(f.final_weight(s), 17) + '\n';
  };
  if (f.num_states() == 0) return out;
  // The start state goes first; it must own at least one line.
  if (f.arcs(f.start()).empty() && !f.is_final(f.start()))
    out += std::to_string(f.start()) + "\t0\n";
  emit_state(f.start());
  for (StateId s = 0; s < f.num_states(); ++s)
    if (s != f.start()) emit_state(s);
  return out;
}

WeightedFst read_fst_text(std::string_view text) {
  struct Line {
    int number;
    Words fields;
  };
  std::vector<Line> lines;
  StateId max_state = -1;
  int number = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    Words fields = split_words(text.substr(pos, end - pos));
    pos = end + 1;
    if (fields.empty()) continue;
    if (fields.size() != 2 && fields.size() != 4)
      throw Error(ErrorKind::MalformedLine,
                  "line " + std::to_string(number) + ": expected 2 or 4 fields");
    max_state = std::max(max_state, parse_state(fields[0], number));
    if (fields.size() == 4) max_state = std::max(max_state, parse_state(fields[1], number));
    lines.push_back({number, std::move(fields)});
  }
  WeightedFst f;
  if (lines.empty()) return f;
  for (StateId s = 0; s <= max_state; ++s) f.add_state();
  f.set_start(parse_state(lines.front().fields[0], lines.front().number));
  for (const Line& l : lines) {
    StateId src = parse_state(l.fields[0], l.number);
    if (l.fields.size() == 2) {
      f.set_final(src, parse_double(l.fields[1], l.number));
    } else {
      f.add_arc(src, {parse_label(l.fields[2]), parse_double(l.fields[3], l.number),
                      parse_state(l.fields[1], l.number)});
    }
  }
  return f;
}

}  // namespace grammarlm
