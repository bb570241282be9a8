#include "grammarlm/lm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <unordered_map>

#include "grammarlm/error.hpp"
#include "grammarlm/logmath.hpp"

namespace grammarlm {

namespace {

using Tables = std::vector<std::map<IdSeq, NGramEntry>>;

const NGramEntry* lookup(const Tables& tables, std::span<const WordId> ngram) {
  const size_t n = ngram.size();
  if (n == 0 || n > tables.size()) return nullptr;
  const auto& t = tables[n - 1];
  auto it = t.find(IdSeq(ngram.begin(), ngram.end()));
  return it == t.end() ? nullptr : &it->second;
}

// Standard back-off resolution over the first `usable_orders` tables.
double backoff_log10(const Tables& tables, size_t usable_orders, std::span<const WordId> history,
                     WordId word) {
  if (word == kNoWord) return -std::numeric_limits<double>::infinity();
  const size_t max_ctx = std::min(history.size(), usable_orders - 1);
  IdSeq key;
  double bow = 0.0;
  for (size_t ctx = max_ctx + 1; ctx-- > 0;) {
    auto context = history.subspan(history.size() - ctx);
    key.assign(context.begin(), context.end());
    key.push_back(word);
    if (const NGramEntry* e = lookup(tables, key)) return bow + e->log10_prob;
    if (ctx > 0) {
      if (const NGramEntry* h = lookup(tables, context); h && h->log10_bow) bow += *h->log10_bow;
    }
  }
  return -std::numeric_limits<double>::infinity();
}

constexpr double kGrid = 1e6;  // ARPA values carry 6 decimals

long long to_grid(double log10_value) {
  double v = std::max(log10_value, kArpaLogZero);
  return std::llround(v * kGrid);
}

double from_grid(long long q) { return q == 0 ? 0.0 : static_cast<double>(q) / kGrid; }

struct GridTerm {
  double coef;
  long long q;
  double value() const { return coef * std::pow(10.0, from_grid(q)); }
};

// Nudges grid values one step at a time until sum(coef * 10^q) is as close
// to `target` as single steps can bring it.
void fit_to_target(std::vector<GridTerm>& terms, double target = 1.0) {
  double sum = 0.0;
  for (const auto& t : terms) sum += t.value();
  for (int iter = 0; iter < 256; ++iter) {
    const double r = target - sum;
    const long long step = r > 0 ? 1 : -1;
    double best = std::abs(r);
    size_t best_i = terms.size();
    double best_delta = 0.0;
    for (size_t i = 0; i < terms.size(); ++i) {
      if (terms[i].coef <= 0.0 || terms[i].q <= to_grid(kArpaLogZero)) continue;
      const double before = terms[i].value();
      const double after = terms[i].coef * std::pow(10.0, from_grid(terms[i].q + step));
      const double delta = after - before;
      if (std::abs(r - delta) < best) {
        best = std::abs(r - delta);
        best_i = i;
        best_delta = delta;
      }
    }
    if (best_i == terms.size()) break;
    terms[best_i].q += step;
    sum += best_delta;
  }
}

struct Discounter {
  bool good_turing = false;
  std::vector<double> ratio;  // ratio[c] for 1 <= c <= k
  int k = 5;
  double absolute = 0.5;

  double discounted(std::int64_t c, bool force_absolute) const {
    const double cd = static_cast<double>(c);
    if (force_absolute || !good_turing) return std::max(cd - absolute, 0.0);
    if (c > k) return cd;
    return ratio[static_cast<size_t>(c)] * cd;
  }
};

Discounter make_discounter(const std::map<IdSeq, std::int64_t>& counts, const KatzConfig& cfg,
                           int n, std::vector<std::string>* warnings) {
  Discounter d;
  d.k = cfg.max_discounted_count;
  d.absolute = cfg.fallback_discount;
  const int k = d.k;
  std::vector<double> coc(static_cast<size_t>(k) + 2, 0.0);
  for (const auto& [_, c] : counts)
    if (c >= 1 && c <= k + 1) coc[static_cast<size_t>(c)] += 1.0;

  bool ok = coc[1] > 0.0;
  const double common = ok ? (k + 1) * coc[k + 1] / coc[1] : 0.0;
  if (common >= 1.0) ok = false;
  d.ratio.assign(static_cast<size_t>(k) + 1, 1.0);
  for (int r = 1; ok && r <= k; ++r) {
    if (coc[r] <= 0.0 || coc[r + 1] <= 0.0) {
      ok = false;
      break;
    }
    const double gt = (r + 1) * coc[r + 1] / (r * coc[r]);
    const double dr = (gt - common) / (1.0 - common);
    if (!(dr > 0.0 && dr <= 1.0)) {
      ok = false;
      break;
    }
    d.ratio[r] = dr;
  }
  d.good_turing = ok;
  if (!ok && warnings)
    warnings->push_back("order " + std::to_string(n) +
                        ": count-of-counts unusable for Good-Turing, using absolute discount " +
                        format_general(cfg.fallback_discount, 6));
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// NGramModel

NGramModel::NGramModel(int order, std::vector<std::string> sorted_vocab, Tables tables)
    : order_(order), vocab_(std::move(sorted_vocab)), tables_(std::move(tables)) {
  if (order_ < 1 || static_cast<int>(tables_.size()) != order_)
    throw Error(ErrorKind::InvalidOrder, "model order does not match its tables");
  if (!std::is_sorted(vocab_.begin(), vocab_.end()))
    throw Error(ErrorKind::InvalidArgument, "vocabulary must be sorted");
  unk_ = find_word(kUnknown);
}

WordId NGramModel::find_word(std::string_view w) const {
  auto it = std::lower_bound(vocab_.begin(), vocab_.end(), w);
  if (it == vocab_.end() || *it != w) return kNoWord;
  return static_cast<WordId>(it - vocab_.begin());
}

WordId NGramModel::map_word(std::string_view w) const {
  WordId id = find_word(w);
  return id == kNoWord ? unk_ : id;
}

IdSeq NGramModel::map_words(const Words& words) const {
  IdSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(map_word(w));
  return out;
}

const NGramEntry* NGramModel::find(std::span<const WordId> ngram) const {
  return lookup(tables_, ngram);
}

size_t NGramModel::num_entries() const {
  size_t n = 0;
  for (const auto& t : tables_) n += t.size();
  return n;
}

double NGramModel::log10_prob(std::span<const WordId> history, WordId word) const {
  return backoff_log10(tables_, static_cast<size_t>(order_), history, word);
}

double NGramModel::prob(const Words& history, std::string_view word) const {
  IdSeq h = map_words(history);
  double lp = log10_prob(h, map_word(word));
  return std::isinf(lp) ? 0.0 : std::pow(10.0, lp);
}

// ---------------------------------------------------------------------------
// Katz training

NGramModel train_katz(const IntegerCounts& counts, const KatzConfig& cfg,
                      std::vector<std::string>* warnings) {
  if (cfg.order < 1) throw Error(ErrorKind::InvalidOrder, "order must be >= 1");
  if (counts.table.empty()) throw Error(ErrorKind::EmptyCounts, "no counts to train on");
  const int order = cfg.order;

  std::set<std::string> vocab_set{kSentenceStart, kSentenceEnd};
  for (const auto& [g, c] : counts.table)
    if (c > 0 && static_cast<int>(g.size()) <= order) vocab_set.insert(g.begin(), g.end());
  vocab_set.insert(cfg.extra_vocabulary.begin(), cfg.extra_vocabulary.end());
  if (cfg.open_vocabulary) vocab_set.insert(kUnknown);
  std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());
  std::unordered_map<std::string, WordId> ids;
  for (size_t i = 0; i < vocab.size(); ++i) ids.emplace(vocab[i], static_cast<WordId>(i));
  const WordId bos = ids.at(kSentenceStart);

  std::vector<std::map<IdSeq, std::int64_t>> raw(order);
  for (const auto& [g, c] : counts.table) {
    if (c <= 0 || g.empty() || static_cast<int>(g.size()) > order) continue;
    if (g.size() == 1 && g.front() == kSentenceStart) continue;
    IdSeq key;
    for (const auto& w : g) key.push_back(ids.at(w));
    raw[g.size() - 1][key] += c;
  }
  if (raw[0].empty()) throw Error(ErrorKind::EmptyCounts, "no unigram counts");

  std::vector<Discounter> disc;
  for (int n = 1; n <= order; ++n) disc.push_back(make_discounter(raw[n - 1], cfg, n, warnings));

  auto cutoff = [&](int n) -> std::int64_t {
    return static_cast<size_t>(n - 1) < cfg.cutoffs.size() ? cfg.cutoffs[n - 1] : 1;
  };
  std::vector<std::map<IdSeq, std::int64_t>> kept(order);
  for (int n = 1; n <= order; ++n) {
    for (const auto& [g, c] : raw[n - 1]) {
      if (c < cutoff(n)) continue;
      if (n >= 2) {
        IdSeq hist(g.begin(), g.end() - 1);
        const bool bos_only = n == 2 && hist.front() == bos;
        if (!bos_only && !kept[n - 2].count(hist)) continue;
      }
      kept[n - 1].emplace(g, c);
    }
  }
  if (kept[0].empty()) throw Error(ErrorKind::EmptyCounts, "every unigram was cut off");

  Tables tables(order);

  // Unigrams.
  {
    double total = 0.0;
    for (const auto& [_, c] : kept[0]) total += static_cast<double>(c);
    std::vector<WordId> unseen;
    for (WordId w = 0; w < static_cast<WordId>(vocab.size()); ++w)
      if (w != bos && !kept[0].count(IdSeq{w})) unseen.push_back(w);

    auto estimate = [&](bool absolute) {
      std::map<WordId, double> p;
      double mass = 0.0;
      for (const auto& [g, c] : kept[0]) {
        p[g.front()] = disc[0].discounted(c, absolute) / total;
        mass += p[g.front()];
      }
      return std::pair{p, 1.0 - mass};
    };
    auto [p, leftover] = estimate(false);
    if (leftover <= 1e-12 && !unseen.empty()) std::tie(p, leftover) = estimate(true);
    leftover = std::max(leftover, 0.0);
    if (!unseen.empty()) {
      for (WordId w : unseen) p[w] = leftover / static_cast<double>(unseen.size());
    } else {
      for (auto& [_, v] : p) v += leftover / static_cast<double>(p.size());
    }
    std::vector<WordId> words;
    std::vector<GridTerm> terms;
    for (const auto& [w, v] : p) {
      words.push_back(w);
      terms.push_back({1.0, to_grid(v > 0.0 ? std::log10(v) : kArpaLogZero)});
    }
    fit_to_target(terms);
    for (size_t i = 0; i < words.size(); ++i)
      tables[0][IdSeq{words[i]}] = {from_grid(terms[i].q), std::nullopt};
    tables[0][IdSeq{bos}] = {kArpaLogZero, std::nullopt};
  }

  // Higher orders, one history at a time. Entries of order n-1 get their
  // back-off weights here, fitted against the already stored lower orders.
  for (int n = 2; n <= order; ++n) {
    std::map<IdSeq, double> lower_totals;
    const auto& group_counts = kept[n - 1];
    auto it = group_counts.begin();
    while (it != group_counts.end()) {
      IdSeq hist(it->first.begin(), it->first.end() - 1);
      auto end = it;
      std::vector<std::pair<WordId, std::int64_t>> cont;
      double total = 0.0;
      while (end != group_counts.end() &&
             std::equal(hist.begin(), hist.end(), end->first.begin())) {
        cont.emplace_back(end->first.back(), end->second);
        total += static_cast<double>(end->second);
        ++end;
      }
      it = end;

      auto estimate = [&](bool absolute) {
        std::vector<double> p;
        double mass = 0.0;
        for (auto [w, c] : cont) {
          p.push_back(disc[n - 1].discounted(c, absolute) / total);
          mass += p.back();
        }
        return std::pair{p, 1.0 - mass};
      };
      auto [p, leftover] = estimate(false);
      if (leftover <= 1e-12) std::tie(p, leftover) = estimate(true);

      std::span<const WordId> lower_hist(hist.data() + 1, hist.size() - 1);
      double lower_seen = 0.0;
      for (auto [w, _] : cont) {
        double lp = backoff_log10(tables, static_cast<size_t>(n - 1), lower_hist, w);
        if (!std::isinf(lp)) lower_seen += std::pow(10.0, lp);
      }
      // The stored lower order sums to one only up to ARPA rounding, so the
      // back-off mass is measured rather than assumed to be 1 - seen.
      auto [cached, fresh] = lower_totals.try_emplace(IdSeq(lower_hist.begin(), lower_hist.end()), 0.0);
      if (fresh) {
        double sum = 0.0;
        for (WordId w = 0; w < static_cast<WordId>(vocab.size()); ++w) {
          if (w == bos) continue;
          double lp = backoff_log10(tables, static_cast<size_t>(n - 1), lower_hist, w);
          if (!std::isinf(lp)) sum += std::pow(10.0, lp);
        }
        cached->second = sum;
      }
      const double unseen_lower = cached->second - lower_seen;

      std::vector<GridTerm> terms;
      long long bow_q = to_grid(kArpaLogZero);
      bool can_back_off = unseen_lower > 1e-12 && leftover > 1e-12;
      if (!can_back_off) {
        double mass = 0.0;
        for (double v : p) mass += v;
        for (double& v : p) v /= mass;
      }
      for (double v : p) terms.push_back({1.0, to_grid(v > 0.0 ? std::log10(v) : kArpaLogZero)});
      fit_to_target(terms, can_back_off ? 1.0 - leftover : 1.0);
      if (can_back_off) {
        // The back-off weight absorbs whatever the stored explicit values
        // leave over; its own rounding error is relative to that small mass.
        double explicit_mass = 0.0;
        for (const auto& t : terms) explicit_mass += t.value();
        const double rest = 1.0 - explicit_mass;
        if (rest > 1e-12) {
          bow_q = to_grid(std::log10(rest / unseen_lower));
        } else {
          fit_to_target(terms, 1.0);
        }
      }
      for (size_t i = 0; i < cont.size(); ++i) {
        IdSeq g = hist;
        g.push_back(cont[i].first);
        tables[n - 1][g] = {from_grid(terms[i].q), std::nullopt};
      }
      tables[n - 2].at(hist).log10_bow = from_grid(bow_q);
    }
  }
  return NGramModel(order, std::move(vocab), std::move(tables));
}

NGramModel train_from_samples(const WeightedFst& f, std::uint64_t n_samples, std::uint64_t seed,
                              const KatzConfig& config) {
  if (n_samples == 0) throw Error(ErrorKind::InvalidArgument, "need at least one sample");
  PathSampler sampler(f);
  std::mt19937_64 rng(seed);
  std::vector<Words> sentences;
  sentences.reserve(n_samples);
  for (std::uint64_t i = 0; i < n_samples; ++i) sentences.push_back(sampler.sample(rng));
  KatzConfig cfg = config;
  for (const auto& w : f.vocabulary()) cfg.extra_vocabulary.push_back(w);
  return train_katz(count_sentences(sentences, cfg.order), cfg);
}

ExpectedCounts cap_new_vocabulary(const ExpectedCounts& counts,
                                  const std::vector<std::string>& baseline_vocab,
                                  size_t max_new_words) {
  std::set<std::string> known(baseline_vocab.begin(), baseline_vocab.end());
  known.insert(kSentenceStart);
  known.insert(kSentenceEnd);
  std::vector<std::pair<double, std::string>> fresh;
  for (const auto& [g, c] : counts.table)
    if (g.size() == 1 && !known.count(g.front())) fresh.emplace_back(c, g.front());
  std::sort(fresh.begin(), fresh.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  if (fresh.size() > max_new_words) fresh.resize(max_new_words);
  for (auto& [_, w] : fresh) known.insert(w);

  ExpectedCounts out;
  out.order = counts.order;
  for (const auto& [g, c] : counts.table)
    if (std::all_of(g.begin(), g.end(), [&](const std::string& w) { return known.count(w) > 0; }))
      out.table.emplace(g, c);
  out.recompute_totals();
  return out;
}

// ---------------------------------------------------------------------------
// scoring

EvalCorpus EvalCorpus::from_sentences(std::vector<Words> sentences) {
  EvalCorpus c;
  for (const auto& s : sentences) c.m += s.size() + 1;
  c.sentences = std::move(sentences);
  return c;
}

EvalCorpus read_corpus(std::string_view text) {
  std::vector<Words> sentences;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    Words w = split_words(text.substr(pos, end - pos));
    pos = end + 1;
    if (!w.empty()) sentences.push_back(std::move(w));
  }
  return EvalCorpus::from_sentences(std::move(sentences));
}

std::string write_corpus(const std::vector<Words>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    out += join_words(s);
    out += '\n';
  }
  return out;
}

double sentence_logprob(const NGramModel& m, const Words& sentence, bool boundaries) {
  IdSeq hist;
  if (boundaries) hist.push_back(m.find_word(kSentenceStart));
  double total = 0.0;
  for (const auto& w : sentence) {
    WordId id = m.map_word(w);
    total += m.log10_prob(hist, id);
    hist.push_back(id);
  }
  if (boundaries) total += m.log10_prob(hist, m.find_word(kSentenceEnd));
  return total;
}

double perplexity(const NGramModel& m, const EvalCorpus& c) {
  if (c.m == 0) throw Error(ErrorKind::InvalidArgument, "corpus has no tokens");
  double ln_sum = 0.0;
  for (const auto& s : c.sentences) {
    const double lp = sentence_logprob(m, s);
    if (std::isinf(lp))
      throw Error(ErrorKind::InfinitePerplexity,
                  "zero probability for sentence '" + join_words(s) + "'");
    ln_sum += lp * std::log(10.0);
  }
  return std::exp(-ln_sum / static_cast<double>(c.m));
}

// ---------------------------------------------------------------------------
// ARPA

std::string write_arpa(const NGramModel& m) {
  if (m.order() < 1 || m.ngrams(1).empty()) throw Error(ErrorKind::EmptyModel, "model is empty");
  std::string out = "\\data\\\n";
  for (int n = 1; n <= m.order(); ++n)
    out += "ngram " + std::to_string(n) + "=" + std::to_string(m.ngrams(n).size()) + "\n";
  for (int n = 1; n <= m.order(); ++n) {
    out += "\n\\" + std::to_string(n) + "-grams:\n";
    for (const auto& [g, e] : m.ngrams(n)) {
      out += format_fixed(e.log10_prob, 6);
      out += '\t';
      for (size_t i = 0; i < g.size(); ++i) {
        if (i) out += ' ';
        out += m.word(g[i]);
      }
      if (e.log10_bow) {
        out += '\t';
        out += format_fixed(*e.log10_bow, 6);
      }
      out += '\n';
    }
  }
  out += "\n\\end\\\n";
  return out;
}

namespace {

[[noreturn]] void arpa_error(int line, const std::string& what) {
  throw Error(ErrorKind::MalformedArpa, "ARPA line " + std::to_string(line) + ": " + what);
}

double arpa_number(std::string_view t, int line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) arpa_error(line, "bad number '" + std::string(t) + "'");
  return v;
}

}  // namespace

NGramModel read_arpa(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view l = text.substr(pos, end - pos);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    lines.push_back(l);
    pos = end + 1;
  }

  size_t i = 0;
  while (i < lines.size() && trim(lines[i]) != "\\data\\") ++i;
  if (i == lines.size()) throw Error(ErrorKind::MalformedArpa, "missing \\data\\ header");
  ++i;
  std::vector<size_t> declared;
  for (; i < lines.size(); ++i) {
    auto l = trim(lines[i]);
    if (l.empty()) {
      if (!declared.empty()) break;
      continue;
    }
    if (l.substr(0, 6) != "ngram ") break;
    auto eq = l.find('=');
    if (eq == std::string_view::npos) arpa_error(static_cast<int>(i + 1), "bad ngram count line");
    int n = static_cast<int>(arpa_number(trim(l.substr(6, eq - 6)), static_cast<int>(i + 1)));
    if (n != static_cast<int>(declared.size()) + 1) arpa_error(static_cast<int>(i + 1), "ngram orders out of sequence");
    declared.push_back(static_cast<size_t>(arpa_number(trim(l.substr(eq + 1)), static_cast<int>(i + 1))));
  }
  if (declared.empty() || declared[0] == 0) throw Error(ErrorKind::EmptyModel, "ARPA file declares no unigrams");
  const int order = static_cast<int>(declared.size());

  struct Raw {
    Words words;
    NGramEntry entry;
  };
  std::vector<std::vector<Raw>> sections(order);
  int current = 0;
  bool ended = false;
  for (; i < lines.size() && !ended; ++i) {
    auto l = trim(lines[i]);
    if (l.empty()) continue;
    if (l == "\\end\\") {
      ended = true;
      break;
    }
    if (l.front() == '\\') {
      if (l.size() < 8 || l.substr(l.size() - 7) != "-grams:") arpa_error(static_cast<int>(i + 1), "unknown section");
      int n = static_cast<int>(arpa_number(l.substr(1, l.size() - 8), static_cast<int>(i + 1)));
      if (n != current + 1 || n > order) arpa_error(static_cast<int>(i + 1), "section out of sequence");
      current = n;
      continue;
    }
    if (current == 0) arpa_error(static_cast<int>(i + 1), "entry outside a section");
    Words f = split_words(l);
    const size_t n = static_cast<size_t>(current);
    if (f.size() != n + 1 && f.size() != n + 2) arpa_error(static_cast<int>(i + 1), "wrong field count");
    Raw r;
    r.entry.log10_prob = arpa_number(f[0], static_cast<int>(i + 1));
    r.words.assign(f.begin() + 1, f.begin() + 1 + static_cast<long>(n));
    if (f.size() == n + 2) r.entry.log10_bow = arpa_number(f.back(), static_cast<int>(i + 1));
    sections[n - 1].push_back(std::move(r));
  }
  if (!ended) throw Error(ErrorKind::MalformedArpa, "missing \\end\\ marker");
  for (int n = 1; n <= order; ++n)
    if (sections[n - 1].size() != declared[n - 1])
      throw Error(ErrorKind::MalformedArpa, "order " + std::to_string(n) + " declares " +
                                                std::to_string(declared[n - 1]) + " entries, found " +
                                                std::to_string(sections[n - 1].size()));

  std::vector<std::string> vocab;
  for (const auto& r : sections[0]) vocab.push_back(r.words.front());
  std::sort(vocab.begin(), vocab.end());
  if (std::adjacent_find(vocab.begin(), vocab.end()) != vocab.end())
    throw Error(ErrorKind::MalformedArpa, "duplicate unigram");
  auto id_of = [&](const std::string& w) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), w);
    if (it == vocab.end() || *it != w) throw Error(ErrorKind::MalformedArpa, "word '" + w + "' has no unigram");
    return static_cast<WordId>(it - vocab.begin());
  };
  Tables tables(order);
  for (int n = 1; n <= order; ++n)
    for (auto& r : sections[n - 1]) {
      IdSeq key;
      for (const auto& w : r.words) key.push_back(id_of(w));
      if (!tables[n - 1].emplace(std::move(key), r.entry).second)
        throw Error(ErrorKind::MalformedArpa, "duplicate " + std::to_string(n) + "-gram");
    }
  return NGramModel(order, std::move(vocab), std::move(tables));
}

}  // namespace grammarlm
