#include "grammarlm/asr_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>

#include "grammarlm/error.hpp"
#include "grammarlm/logmath.hpp"

namespace grammarlm {

EditStats edit_distance(const Words& hyp, const Words& ref) {
  if (ref.empty()) throw Error(ErrorKind::EmptyReference, "reference is empty");
  // Cost is (errors, insertions + deletions), compared lexicographically.
  struct Cell {
    int errors = 0;
    int indels = 0;
    int sub = 0, ins = 0, del = 0;
    bool better_than(const Cell& o) const {
      return errors != o.errors ? errors < o.errors : indels < o.indels;
    }
  };
  const size_t n = hyp.size(), m = ref.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (size_t j = 1; j <= m; ++j) prev[j] = {static_cast<int>(j), static_cast<int>(j), 0, 0, static_cast<int>(j)};
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<int>(i), static_cast<int>(i), 0, static_cast<int>(i), 0};
    for (size_t j = 1; j <= m; ++j) {
      Cell diag = prev[j - 1];
      if (hyp[i - 1] != ref[j - 1]) {
        ++diag.errors;
        ++diag.sub;
      }
      Cell ins = prev[j];  // hypothesis word with no reference counterpart
      ++ins.errors;
      ++ins.indels;
      ++ins.ins;
      Cell del = cur[j - 1];
      ++del.errors;
      ++del.indels;
      ++del.del;
      Cell best = diag;
      if (ins.better_than(best)) best = ins;
      if (del.better_than(best)) best = del;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return {c.sub, c.ins, c.del, static_cast<int>(m)};
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Words> hypothesis_sentences(std::span<const NBestList> lists) {
  std::vector<Words> out;
  for (const auto& nb : lists)
    for (const auto& h : nb.hypotheses) out.push_back(h.words);
  return out;
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  const double norm = log_sum_exp(scores);
  if (norm == kLogZero) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(scores.size()));
    return out;
  }
  for (size_t i = 0; i < scores.size(); ++i) out[i] = std::exp(scores[i] - norm);
  return out;
}

}  // namespace

PreparedNBest::PreparedNBest(std::span<const NBestList> lists,
                             const std::vector<MixtureModel::Component>& components)
    : probs_(components, hypothesis_sentences(lists)) {
  if (lists.empty()) throw Error(ErrorKind::InvalidArgument, "no n-best lists");
  utt_offsets_.push_back(0);
  for (const auto& nb : lists) {
    if (nb.hypotheses.empty())
      throw Error(ErrorKind::InvalidArgument, "utterance " + nb.utterance_id + " has no hypotheses");
    for (const auto& h : nb.hypotheses) {
      if (!std::isfinite(h.acoustic_score))
        throw Error(ErrorKind::InvalidArgument, "non-finite acoustic score in " + nb.utterance_id);
      acoustic_.push_back(h.acoustic_score);
      errors_.push_back(edit_distance(h.words, nb.reference).errors());
    }
    total_ref_words_ += static_cast<long>(nb.reference.size());
    utt_offsets_.push_back(acoustic_.size());
  }
}

std::vector<double> PreparedNBest::combined_scores(size_t u, std::span<const double> q,
                                                   const Scales& scales) const {
  std::vector<double> scores;
  for (size_t h = utt_offsets_[u]; h < utt_offsets_[u + 1]; ++h) {
    auto [b, e] = probs_.sentence(h);
    double ln_p = 0.0;
    for (size_t t = b; t < e; ++t) ln_p += safe_log(q[t]);
    scores.push_back(scales.acoustic * acoustic_[h] + scales.lm * ln_p);
  }
  return scores;
}

std::vector<double> PreparedNBest::posterior(size_t u, std::span<const double> q,
                                             const Scales& scales) const {
  return softmax(combined_scores(u, q, scales));
}

double PreparedNBest::expected_wer(std::span<const double> q, const Scales& scales) const {
  double expected_errors = 0.0;
  for (size_t u = 0; u + 1 < utt_offsets_.size(); ++u) {
    auto post = posterior(u, q, scales);
    for (size_t i = 0; i < post.size(); ++i) expected_errors += post[i] * errors_[utt_offsets_[u] + i];
  }
  return expected_errors / static_cast<double>(total_ref_words_);
}

double PreparedNBest::one_best_wer(std::span<const double> q, const Scales& scales) const {
  long errors = 0;
  for (size_t u = 0; u + 1 < utt_offsets_.size(); ++u) {
    auto scores = combined_scores(u, q, scales);
    auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
    errors += errors_[utt_offsets_[u] + static_cast<size_t>(best)];
  }
  return static_cast<double>(errors) / static_cast<double>(total_ref_words_);
}

std::vector<double> posterior(const NBestList& nb, const MixtureModel& scorer, const Scales& scales) {
  PreparedNBest prepared(std::span<const NBestList>(&nb, 1), scorer.components());
  return prepared.posterior(0, prepared.token_probs().mix(scorer.weights()), scales);
}

double expected_wer_loss(std::span<const NBestList> lists, const MixtureModel& scorer,
                         const Scales& scales) {
  PreparedNBest prepared(lists, scorer.components());
  return prepared.expected_wer(prepared.token_probs().mix(scorer.weights()), scales);
}

double one_best_wer(std::span<const NBestList> lists, const MixtureModel& scorer,
                    const Scales& scales) {
  PreparedNBest prepared(lists, scorer.components());
  return prepared.one_best_wer(prepared.token_probs().mix(scorer.weights()), scales);
}

double oracle_wer(std::span<const NBestList> lists) {
  long errors = 0, words = 0;
  for (const auto& nb : lists) {
    int best = std::numeric_limits<int>::max();
    for (const auto& h : nb.hypotheses) best = std::min(best, edit_distance(h.words, nb.reference).errors());
    errors += best;
    words += static_cast<long>(nb.reference.size());
  }
  if (words == 0) throw Error(ErrorKind::EmptyReference, "no reference words");
  return static_cast<double>(errors) / static_cast<double>(words);
}

// ---------------------------------------------------------------------------
// files

namespace {

std::vector<std::string_view> tab_fields(std::string_view line, size_t max_fields) {
  std::vector<std::string_view> out;
  while (out.size() + 1 < max_fields) {
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) break;
    out.push_back(line.substr(0, tab));
    line.remove_prefix(tab + 1);
  }
  out.push_back(line);
  return out;
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  int no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++no;
    if (!trim(line).empty()) f(line, no);
  }
}

}  // namespace

std::vector<NBestList> read_nbest(std::string_view nbest_text, std::string_view reference_text) {
  std::map<std::string, Words> refs;
  for_each_line(reference_text, [&](std::string_view line, int no) {
    auto f = tab_fields(line, 2);
    if (f.size() != 2 || trim(f[0]).empty())
      throw Error(ErrorKind::MalformedLine, "reference line " + std::to_string(no) + " is malformed");
    refs[std::string(trim(f[0]))] = split_words(f[1]);
  });

  std::vector<NBestList> lists;
  std::map<std::string, size_t> index;
  std::vector<std::vector<std::pair<long, Hypothesis>>> ranked;
  for_each_line(nbest_text, [&](std::string_view line, int no) {
    auto f = tab_fields(line, 4);
    if (f.size() != 4)
      throw Error(ErrorKind::MalformedLine, "n-best line " + std::to_string(no) + ": expected 4 tab-separated fields");
    std::string id(trim(f[0]));
    long rank = 0;
    double ac = 0.0;
    auto r = trim(f[1]);
    auto a = trim(f[2]);
    auto [p1, e1] = std::from_chars(r.data(), r.data() + r.size(), rank);
    auto [p2, e2] = std::from_chars(a.data(), a.data() + a.size(), ac);
    if (e1 != std::errc() || p1 != r.data() + r.size() || e2 != std::errc() || p2 != a.data() + a.size() ||
        !std::isfinite(ac))
      throw Error(ErrorKind::MalformedLine, "n-best line " + std::to_string(no) + ": bad rank or score");
    auto [it, fresh] = index.try_emplace(id, lists.size());
    if (fresh) {
      auto ref = refs.find(id);
      if (ref == refs.end()) throw Error(ErrorKind::MalformedLine, "no reference for utterance " + id);
      lists.push_back({id, ref->second, {}});
      ranked.emplace_back();
    }
    ranked[it->second].push_back({rank, {split_words(f[3]), ac, std::nullopt}});
  });
  for (size_t i = 0; i < lists.size(); ++i) {
    std::stable_sort(ranked[i].begin(), ranked[i].end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    for (auto& [_, h] : ranked[i]) lists[i].hypotheses.push_back(std::move(h));
  }
  return lists;
}

std::string write_nbest(std::span<const NBestList> lists) {
  std::string out;
  for (const auto& nb : lists)
    for (size_t i = 0; i < nb.hypotheses.size(); ++i)
      out += nb.utterance_id + '\t' + std::to_string(i + 1) + '\t' +
             format_general(nb.hypotheses[i].acoustic_score, 17) + '\t' +
             join_words(nb.hypotheses[i].words) + '\n';
  return out;
}

std::string write_references(std::span<const NBestList> lists) {
  std::string out;
  for (const auto& nb : lists) out += nb.utterance_id + '\t' + join_words(nb.reference) + '\n';
  return out;
}

}  // namespace grammarlm
