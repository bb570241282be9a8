#include "grammarlm/counts.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <unordered_map>

#include "grammarlm/error.hpp"
#include "grammarlm/logmath.hpp"

namespace grammarlm {

void ExpectedCounts::recompute_totals() {
  total_mass_by_order.assign(order, 0.0);
  for (const auto& [g, c] : table)
    if (!g.empty() && static_cast<int>(g.size()) <= order) total_mass_by_order[g.size() - 1] += c;
}

void add_sentence_ngrams(const Words& sentence, int order, bool boundaries, double weight,
                         std::map<NGram, double>& table) {
  Words framed;
  framed.reserve(sentence.size() + 2);
  if (boundaries) framed.push_back(kSentenceStart);
  framed.insert(framed.end(), sentence.begin(), sentence.end());
  if (boundaries) framed.push_back(kSentenceEnd);
  const size_t first = boundaries ? 1 : 0;  // <s> is never a predicted word
  for (size_t end = first; end < framed.size(); ++end) {
    for (int n = 1; n <= order && static_cast<size_t>(n) <= end + 1; ++n) {
      NGram g(framed.begin() + static_cast<long>(end + 1 - n), framed.begin() + static_cast<long>(end + 1));
      table[g] += weight;
    }
  }
}

namespace {

using Key = std::vector<std::int32_t>;

struct KeyHash {
  size_t operator()(const Key& k) const noexcept {
    size_t h = 0xcbf29ce484222325ULL;
    for (auto v : k) h = (h ^ static_cast<size_t>(v)) * 0x100000001b3ULL;
    return h;
  }
};

class Interner {
 public:
  std::int32_t id(const std::string& w) {
    auto [it, fresh] = ids_.try_emplace(w, static_cast<std::int32_t>(words_.size()));
    if (fresh) words_.push_back(w);
    return it->second;
  }
  const std::string& word(std::int32_t id) const { return words_[id]; }

 private:
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> words_;
};

class CountPropagator {
 public:
  CountPropagator(const WeightedFst& f, int order, bool boundaries, double threshold)
      : f_(f), fb_(forward_backward(f)), order_(order), boundaries_(boundaries),
        threshold_(threshold) {
    end_id_ = interner_.id(kSentenceEnd);
    start_id_ = interner_.id(kSentenceStart);
    arc_ids_.resize(f.num_states());
    for (StateId s = 0; s < f.num_states(); ++s)
      for (const Arc& a : f.arcs(s)) arc_ids_[s].push_back(interner_.id(a.label.name));
    pending_.resize(f.num_states());
    Key seed;
    if (boundaries_ && order_ > 1) seed.push_back(start_id_);
    pending_[f.start()][seed] = 1.0;  // beta(start) / Z
  }

  void run_topological(const std::vector<StateId>& order) {
    for (StateId s : order) process(s);
  }

  void run_worklist() {
    std::deque<StateId> queue{f_.start()};
    std::vector<char> queued(f_.num_states(), 0);
    queued[f_.start()] = 1;
    while (!queue.empty()) {
      StateId s = queue.front();
      queue.pop_front();
      queued[s] = 0;
      for (StateId t : process(s))
        if (!queued[t]) {
          queued[t] = 1;
          queue.push_back(t);
        }
    }
  }

  ExpectedCounts result() const {
    ExpectedCounts out;
    out.order = order_;
    for (const auto& [key, c] : counts_) {
      NGram g;
      g.reserve(key.size());
      for (auto id : key) g.push_back(interner_.word(id));
      out.table.emplace(std::move(g), c);
    }
    out.recompute_totals();
    return out;
  }

 private:
  // Extends every pending history at `s` one arc further. Returns the states
  // that received mass.
  std::vector<StateId> process(StateId s) {
    std::vector<StateId> touched;
    auto histories = std::move(pending_[s]);
    pending_[s].clear();
    const double lb = fb_.log_beta[s];
    if (histories.empty() || lb == kLogZero) return touched;

    // Deterministic order for the floating-point merges below.
    std::vector<std::pair<Key, double>> items(histories.begin(), histories.end());
    std::sort(items.begin(), items.end());

    const auto arcs = f_.arcs(s);
    std::vector<double> ratio(arcs.size());
    for (size_t i = 0; i < arcs.size(); ++i)
      ratio[i] = std::exp(safe_log(arcs[i].weight) + fb_.log_beta[arcs[i].next] - lb);
    const double stop = std::exp(safe_log(f_.final_weight(s)) - lb);

    Key ext;
    for (const auto& [hist, mass] : items) {
      if (mass <= 0.0 || mass < threshold_) continue;
      for (size_t i = 0; i < arcs.size(); ++i) {
        if (ratio[i] <= 0.0) continue;
        const double p = mass * ratio[i];
        ext = hist;
        ext.push_back(arc_ids_[s][i]);
        count_suffixes(ext, p);
        if (static_cast<int>(ext.size()) > order_ - 1)
          ext.erase(ext.begin(), ext.begin() + static_cast<long>(ext.size() - (order_ - 1)));
        double& slot = pending_[arcs[i].next][ext];
        if (slot == 0.0) touched.push_back(arcs[i].next);
        slot += p;
      }
      if (boundaries_ && stop > 0.0) {
        ext = hist;
        ext.push_back(end_id_);
        count_suffixes(ext, mass * stop);
      }
    }
    return touched;
  }

  void count_suffixes(const Key& ext, double p) {
    const int len = static_cast<int>(ext.size());
    for (int n = 1; n <= std::min(order_, len); ++n) {
      Key g(ext.end() - n, ext.end());
      counts_[g] += p;
    }
  }

  const WeightedFst& f_;
  ForwardBackward fb_;
  int order_;
  bool boundaries_;
  double threshold_;
  Interner interner_;
  std::int32_t start_id_ = 0, end_id_ = 0;
  std::vector<std::vector<std::int32_t>> arc_ids_;
  std::vector<std::unordered_map<Key, double, KeyHash>> pending_;
  std::map<Key, double> counts_;
};

}  // namespace

ExpectedCounts expected_counts(const WeightedFst& f, int order, bool boundaries,
                               const PruneConfig& prune) {
  if (order < 1) throw Error(ErrorKind::InvalidOrder, "n-gram order must be >= 1");
  if (f.has_nonterminals())
    throw Error(ErrorKind::InvalidArgument, "expand non-terminals before counting");
  if (prune.threshold < 0.0) throw Error(ErrorKind::InvalidArgument, "prune threshold must be >= 0");
  const WeightedFst g = f.has_epsilons() ? remove_epsilons(f) : f;
  const double threshold = prune.effective();
  CountPropagator prop(g, order, boundaries, threshold);
  if (is_acyclic(g)) {
    prop.run_topological(topological_order(g));
  } else {
    if (threshold <= 0.0)
      throw Error(ErrorKind::InvalidArgument,
                  "counting a cyclic FST needs a positive prune threshold");
    prop.run_worklist();
  }
  return prop.result();
}

ExpectedCounts brute_force_counts(const WeightedFst& f, int order, bool boundaries,
                                  std::uint64_t max_paths) {
  if (order < 1) throw Error(ErrorKind::InvalidOrder, "n-gram order must be >= 1");
  std::map<NGram, double> raw;
  double z = 0.0;
  for_each_path(f, max_paths, [&](const Words& words, double weight) {
    if (weight <= 0.0) return;
    z += weight;
    add_sentence_ngrams(words, order, boundaries, weight, raw);
  });
  if (z <= 0.0) throw Error(ErrorKind::ZeroMass, "FST has no positive-weight path");
  ExpectedCounts out;
  out.order = order;
  for (auto& [g, c] : raw) out.table.emplace(g, c / z);
  out.recompute_totals();
  return out;
}

IntegerCounts scale_counts(const ExpectedCounts& c, double target_mass) {
  if (c.table.empty()) throw Error(ErrorKind::EmptyCounts, "no counts to scale");
  if (!(target_mass > 0.0)) throw Error(ErrorKind::InvalidArgument, "target mass must be positive");
  double unigram_mass = 0.0;
  for (const auto& [g, v] : c.table)
    if (g.size() == 1) unigram_mass += v;
  if (!(unigram_mass > 0.0)) throw Error(ErrorKind::EmptyCounts, "no unigram mass to scale");
  IntegerCounts out;
  out.order = c.order;
  out.scale = target_mass / unigram_mass;
  for (const auto& [g, v] : c.table) {
    auto n = static_cast<std::int64_t>(std::llround(v * out.scale));
    if (n > 0) out.table.emplace(g, n);
  }
  if (out.table.empty()) throw Error(ErrorKind::AllCountsZero, "every count rounds to zero");
  return out;
}

IntegerCounts count_sentences(const std::vector<Words>& sentences, int order, bool boundaries) {
  if (order < 1) throw Error(ErrorKind::InvalidOrder, "n-gram order must be >= 1");
  std::map<NGram, double> raw;
  for (const auto& s : sentences) add_sentence_ngrams(s, order, boundaries, 1.0, raw);
  IntegerCounts out;
  out.order = order;
  for (auto& [g, v] : raw) out.table.emplace(g, static_cast<std::int64_t>(std::llround(v)));
  return out;
}

std::string write_counts_text(const ExpectedCounts& c) {
  std::string out;
  for (const auto& [g, v] : c.table) {
    out += join_words(g);
    out += '\t';
    out += format_general(v, 17);
    out += '\n';
  }
  return out;
}

ExpectedCounts read_counts_text(std::string_view text) {
  ExpectedCounts out;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string_view::npos)
      throw Error(ErrorKind::MalformedLine, "counts line " + std::to_string(line_no) + ": no tab");
    NGram g = split_words(line.substr(0, tab));
    std::string_view num = trim(line.substr(tab + 1));
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (g.empty() || ec != std::errc() || ptr != num.data() + num.size() || v < 0.0)
      throw Error(ErrorKind::MalformedLine, "counts line " + std::to_string(line_no) + " is malformed");
    out.order = std::max(out.order, static_cast<int>(g.size()));
    out.table[std::move(g)] += v;
  }
  out.recompute_totals();
  return out;
}

}  // namespace grammarlm
