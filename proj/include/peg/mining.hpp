#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "peg/error.hpp"
#include "peg/eval.hpp"
#include "peg/records.hpp"
#include "peg/sim.hpp"

namespace peg::mining {

// ---------------------------------------------------------------------------
// Passage splitting
// ---------------------------------------------------------------------------

/// Half-open byte range into the source text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

inline Span trim(std::string_view text, Span s) {
  while (s.begin < s.end && is_space(text[s.begin])) ++s.begin;
  while (s.end > s.begin && is_space(text[s.end - 1])) --s.end;
  return s;
}

/// Code points in text[s.begin, s.end).
inline std::size_t length(std::string_view text, Span s) {
  std::size_t n = 0;
  for (std::size_t i = s.begin; i < s.end; ++i) n += is_continuation(text[i]) ? 0 : 1;
  return n;
}

/// Paragraphs are separated by lines containing only whitespace.
inline std::vector<Span> paragraphs(std::string_view text) {
  std::vector<Span> out;
  std::size_t start = 0;
  std::size_t line_begin = 0;
  auto close = [&](std::size_t end) {
    const Span s = trim(text, {start, end});
    if (s.begin < s.end) out.push_back(s);
  };
  while (line_begin <= text.size()) {
    std::size_t line_end = text.find('\n', line_begin);
    if (line_end == std::string_view::npos) line_end = text.size();
    const Span line = trim(text, {line_begin, line_end});
    if (line.begin == line.end) {
      close(line_begin);
      start = line_end;
    }
    if (line_end == text.size()) break;
    line_begin = line_end + 1;
  }
  close(text.size());
  return out;
}

/// A sentence ends after '.', '!' or '?' followed by whitespace or the end.
inline std::vector<Span> sentences(std::string_view text, Span para) {
  std::vector<Span> out;
  std::size_t start = para.begin;
  for (std::size_t i = para.begin; i < para.end; ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == para.end || is_space(text[i + 1]))) {
      const Span s = trim(text, {start, i + 1});
      if (s.begin < s.end) out.push_back(s);
      start = i + 1;
    }
  }
  const Span tail = trim(text, {start, para.end});
  if (tail.begin < tail.end) out.push_back(tail);
  return out;
}

/// Cuts an over-long span into pieces of at most max_chars code points,
/// preferring to break at whitespace.
inline std::vector<Span> hard_split(std::string_view text, Span s, std::size_t max_chars) {
  std::vector<Span> out;
  std::size_t pos = s.begin;
  while (pos < s.end) {
    std::size_t cut = pos;
    std::size_t count = 0;
    while (cut < s.end && count < max_chars) {
      ++cut;
      while (cut < s.end && is_continuation(text[cut])) ++cut;
      ++count;
    }
    if (cut < s.end) {
      std::size_t ws = cut;
      while (ws > pos && !is_space(text[ws])) --ws;
      if (ws > pos) cut = ws;
    }
    const Span piece = trim(text, {pos, cut});
    if (piece.begin < piece.end) out.push_back(piece);
    pos = cut;
  }
  return out;
}

/// Greedy left-to-right packing of units into groups of at most max_chars.
inline void pack(std::string_view text, const std::vector<Span>& units, std::size_t max_chars,
                 std::vector<Span>& out) {
  std::optional<Span> current;
  for (const Span& u : units) {
    if (current && length(text, {current->begin, u.end}) <= max_chars) {
      current->end = u.end;
      continue;
    }
    if (current) out.push_back(*current);
    current = u;
  }
  if (current) out.push_back(*current);
}

}  // namespace detail

/// Passage boundaries as trimmed spans of `raw`. Whole paragraphs are packed
/// greedily; a paragraph longer than max_chars is packed on its own from its
/// sentences, and an over-long sentence is cut at whitespace.
inline std::vector<Span> split_spans(std::string_view raw, std::size_t max_chars) {
  require(max_chars >= 1, "split_passages: max_chars must be >= 1");
  std::vector<Span> out;
  std::vector<Span> pending;
  for (const Span& para : detail::paragraphs(raw)) {
    if (detail::length(raw, para) <= max_chars) {
      pending.push_back(para);
      continue;
    }
    detail::pack(raw, pending, max_chars, out);
    pending.clear();
    std::vector<Span> units;
    for (const Span& s : detail::sentences(raw, para)) {
      if (detail::length(raw, s) <= max_chars) {
        units.push_back(s);
      } else {
        for (const Span& piece : detail::hard_split(raw, s, max_chars)) units.push_back(piece);
      }
    }
    detail::pack(raw, units, max_chars, out);
  }
  detail::pack(raw, pending, max_chars, out);
  return out;
}

inline std::vector<Passage> split_passages(std::string_view raw, std::size_t max_chars,
                                           std::string_view doc_id = "doc") {
  std::vector<Passage> out;
  for (const Span& s : split_spans(raw, max_chars)) {
    out.push_back({std::string(doc_id) + "#" + std::to_string(out.size()),
                   std::string(raw.substr(s.begin, s.end - s.begin)), std::string(doc_id)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Query generation
// ---------------------------------------------------------------------------

class QueryGenerator {
 public:
  virtual ~QueryGenerator() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::string> generate(const Passage& passage) = 0;
};

/// Deterministic stand-in: the passage's first sentence.
class FirstSentenceGenerator final : public QueryGenerator {
 public:
  std::string name() const override { return "first_sentence"; }
  std::vector<std::string> generate(const Passage& passage) override {
    const auto& text = passage.text;
    const auto units = detail::sentences(text, detail::trim(text, {0, text.size()}));
    if (units.empty()) return {};
    return {text.substr(units.front().begin, units.front().end - units.front().begin)};
  }
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> generate_queries(const Passage& passage, QueryGenerator& generator) {
  try {
    return generator.generate(passage);
  } catch (const std::exception& e) {
    throw GenerationError("query generation failed for passage '" + passage.id + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hard-negative mining
// ---------------------------------------------------------------------------

struct MinedCandidate {
  std::string passage_id;
  double similarity = 0.0;
  std::optional<bool> judged_relevant;
  bool judge_failed = false;

  friend bool operator==(const MinedCandidate&, const MinedCandidate&) = default;
};

using EmbeddedCorpus = eval::Gallery;

/// Exact top-k by cosine over the corpus minus the positives. Sorted by
/// similarity descending, ties by ascending id.
inline std::vector<MinedCandidate> mine_hard_negatives(std::span<const double> query, const EmbeddedCorpus& corpus,
                                                       const std::set<std::string>& positive_ids,
                                                       std::size_t k = 5) {
  if (k == 0) throw DomainError("mine_hard_negatives: k must be >= 1");
  require(corpus.ids.size() == corpus.embeddings.rows(), "mine_hard_negatives: corpus ids/rows mismatch");
  if (corpus.size() > 0 && corpus.embeddings.cols() != query.size()) {
    throw DomainError("mine_hard_negatives: dimension mismatch (" + std::to_string(query.size()) + " vs " +
                      std::to_string(corpus.embeddings.cols()) + ")");
  }
  std::vector<MinedCandidate> all;
  all.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (positive_ids.count(corpus.ids[i])) continue;
    all.push_back({corpus.ids[i], cosine(query, corpus.embeddings.row(i)), std::nullopt, false});
  }
  const auto before = [](const MinedCandidate& a, const MinedCandidate& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.passage_id < b.passage_id;
  };
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);
  all.resize(keep);
  return all;
}

// ---------------------------------------------------------------------------
// False-negative filtering
// ---------------------------------------------------------------------------

struct JudgeRequest {
  std::string_view query;
  std::string_view candidate_text;
  const MinedCandidate& candidate;
};

/// Decides whether a mined candidate is actually relevant to the query (a
/// false negative). Must be deterministic within a run.
class RelevanceJudge {
 public:
  virtual ~RelevanceJudge() = default;
  virtual bool is_relevant(const JudgeRequest& request) = 0;
  virtual bool thread_safe() const { return false; }
};

class NeverRelevantJudge final : public RelevanceJudge {
 public:
  bool is_relevant(const JudgeRequest&) override { return false; }
  bool thread_safe() const override { return true; }
};

class AlwaysRelevantJudge final : public RelevanceJudge {
 public:
  bool is_relevant(const JudgeRequest&) override { return true; }
  bool thread_safe() const override { return true; }
};

/// Relevant iff the mined similarity exceeds the threshold.
class SimilarityThresholdJudge final : public RelevanceJudge {
 public:
  explicit SimilarityThresholdJudge(double threshold) : threshold_(threshold) {}
  bool is_relevant(const JudgeRequest& r) override { return r.candidate.similarity > threshold_; }
  bool thread_safe() const override { return true; }

 private:
  double threshold_;
};

inline constexpr std::string_view kReasonRelevant = "judged_relevant";
inline constexpr std::string_view kReasonJudgeFailed = "judge_failed_kept";

/// Removes candidates the judge marks relevant, preserving order. A judge
/// failure keeps the candidate, flags it, and logs it.
inline std::vector<MinedCandidate> filter_false_negatives(
    std::string_view query_id, std::string_view query_text, const std::vector<MinedCandidate>& candidates,
    const std::function<std::string_view(const std::string&)>& text_of, RelevanceJudge& judge,
    std::vector<AuditRecord>& audit) {
  std::vector<MinedCandidate> kept;
  for (const auto& c : candidates) {
    MinedCandidate out = c;
    try {
      out.judged_relevant = judge.is_relevant({query_text, text_of(c.passage_id), c});
    } catch (const std::exception&) {
      out.judge_failed = true;
      audit.push_back({std::string(query_id), c.passage_id, std::string(kReasonJudgeFailed)});
      kept.push_back(std::move(out));
      continue;
    }
    if (*out.judged_relevant) {
      audit.push_back({std::string(query_id), c.passage_id, std::string(kReasonRelevant)});
      continue;
    }
    kept.push_back(std::move(out));
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// One generated query with its positive and its surviving candidates.
struct MinedQuery {
  std::string query_id;
  std::string query;
  std::string positive_id;
  std::string source_doc;
  std::size_t mined = 0;
  std::vector<MinedCandidate> survivors;
};

struct AssemblyStats {
  std::size_t examples = 0;
  std::size_t negatives = 0;
  std::size_t negatives_dropped = 0;      // removed by the judge
  std::size_t zero_negative_queries = 0;  // written with an empty negative list
};

inline std::vector<DatasetRecord> to_dataset_records(const std::vector<MinedQuery>& queries,
                                                     std::string_view generator, AssemblyStats* stats = nullptr) {
  std::unordered_set<std::string> seen;
  std::vector<DatasetRecord> out;
  AssemblyStats s;
  for (const auto& q : queries) {
    if (!seen.insert(q.query_id).second) throw ValidationError("duplicate query id '" + q.query_id + "'");
    if (q.positive_id.empty()) throw ValidationError("query '" + q.query_id + "' has no positive");
    DatasetRecord r;
    r.query = q.query;
    r.positive_id = q.positive_id;
    for (const auto& c : q.survivors) {
      if (r.negative_ids.size() == 5) break;
      if (c.passage_id != q.positive_id) r.negative_ids.push_back(c.passage_id);
    }
    r.provenance = {q.query_id, q.source_doc, std::string(generator), q.mined, q.mined - q.survivors.size()};
    s.negatives += r.negative_ids.size();
    s.negatives_dropped += r.provenance.removed;
    s.zero_negative_queries += r.negative_ids.empty() ? 1 : 0;
    out.push_back(std::move(r));
  }
  s.examples = out.size();
  if (stats != nullptr) *stats = s;
  return out;
}

/// Writes one dataset line per query (queries left without negatives are kept).
inline AssemblyStats assemble_dataset(const std::vector<MinedQuery>& queries, std::string_view generator,
                                      const std::filesystem::path& output_path) {
  AssemblyStats stats;
  const auto records = to_dataset_records(queries, generator, &stats);
  write_dataset(output_path, records);
  return stats;
}

}  // namespace peg::mining
