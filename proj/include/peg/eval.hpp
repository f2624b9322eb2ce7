#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "peg/error.hpp"
#include "peg/matrix.hpp"
#include "peg/sim.hpp"

namespace peg::eval {

/// query_id -> (doc_id -> grade >= 1).
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RankedEntry {
  std::string doc_id;
  double score = 0.0;
};

/// Descending score, ties by ascending doc id.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
};

struct Gallery {
  std::vector<std::string> ids;
  Matrix embeddings;  // one row per id

  std::size_t size() const noexcept { return ids.size(); }
};

inline bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

/// Exact brute-force cosine retrieval of the top `depth` gallery items.
inline RankedList rank_gallery(const std::string& query_id, std::span<const double> query,
                               const Gallery& gallery, std::size_t depth) {
  if (depth == 0) throw DomainError("rank_gallery: depth must be >= 1");
  require(gallery.ids.size() == gallery.embeddings.rows(), "rank_gallery: gallery ids/rows mismatch");
  if (gallery.size() > 0 && gallery.embeddings.cols() != query.size()) {
    throw DomainError("rank_gallery: dimension mismatch (" + std::to_string(query.size()) + " vs " +
                      std::to_string(gallery.embeddings.cols()) + ")");
  }
  RankedList out{query_id, {}};
  out.entries.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    out.entries.push_back({gallery.ids[i], cosine(query, gallery.embeddings.row(i))});
  }
  const std::size_t keep = std::min(depth, out.entries.size());
  std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(keep),
                    out.entries.end(), ranks_before);
  out.entries.resize(keep);
  return out;
}

namespace detail {

inline const std::map<std::string, int>* judged(const RankedList& ranked, const Qrels& qrels) {
  auto it = qrels.find(ranked.query_id);
  if (it == qrels.end()) return nullptr;
  return &it->second;
}

inline int grade_of(const std::map<std::string, int>* rel, const std::string& doc) {
  if (rel == nullptr) return 0;
  auto it = rel->find(doc);
  return it == rel->end() ? 0 : std::max(it->second, 0);
}

inline std::size_t relevant_count(const std::map<std::string, int>* rel) {
  if (rel == nullptr) return 0;
  return static_cast<std::size_t>(
      std::count_if(rel->begin(), rel->end(), [](const auto& kv) { return kv.second > 0; }));
}

inline double gain(int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; }
inline double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

}  // namespace detail

/// NDCG@k with gain 2^rel - 1 and discount 1/log2(rank + 1). The ideal DCG
/// uses every judged relevant document, retrieved or not. 0 when the query
/// has no relevant documents.
inline double ndcg_at_k(const RankedList& ranked, const Qrels& qrels, std::size_t k = 10) {
  if (k == 0) throw DomainError("ndcg_at_k: k must be >= 1");
  const auto* rel = detail::judged(ranked, qrels);
  std::vector<int> grades;
  if (rel != nullptr) {
    for (const auto& [doc, g] : *rel) {
      if (g > 0) grades.push_back(g);
    }
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<>());
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) ideal += detail::gain(grades[i]) * detail::discount(i + 1);
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.entries.size()); ++i) {
    const int g = detail::grade_of(rel, ranked.entries[i].doc_id);
    if (g > 0) dcg += detail::gain(g) * detail::discount(i + 1);
  }
  return dcg / ideal;
}

inline double mrr_at_k(const RankedList& ranked, const Qrels& qrels, std::size_t k = 10) {
  if (k == 0) throw DomainError("mrr_at_k: k must be >= 1");
  const auto* rel = detail::judged(ranked, qrels);
  for (std::size_t i = 0; i < std::min(k, ranked.entries.size()); ++i) {
    if (detail::grade_of(rel, ranked.entries[i].doc_id) > 0) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

/// nullopt when the query has no relevant documents.
inline std::optional<double> recall_at_k(const RankedList& ranked, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw DomainError("recall_at_k: k must be >= 1");
  const auto* rel = detail::judged(ranked, qrels);
  const std::size_t total = detail::relevant_count(rel);
  if (total == 0) return std::nullopt;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.entries.size()); ++i) {
    hits += detail::grade_of(rel, ranked.entries[i].doc_id) > 0 ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Sum of precision at each relevant retrieved rank, over the total number
/// of relevant documents. nullopt when there are none.
inline std::optional<double> average_precision(const RankedList& ranked, const Qrels& qrels) {
  const auto* rel = detail::judged(ranked, qrels);
  const std::size_t total = detail::relevant_count(rel);
  if (total == 0) return std::nullopt;
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < ranked.entries.size(); ++i) {
    if (detail::grade_of(rel, ranked.entries[i].doc_id) > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total);
}

struct EvalConfig {
  std::size_t ndcg_k = 10;
  std::size_t mrr_k = 10;
  std::vector<std::size_t> recall_ks{1, 10, 50};
  std::size_t depth = 0;  // 0 ranks the whole gallery
  // Score queries without relevant documents as 0 for NDCG and MRR instead of
  // excluding them. They never enter MAP or recall.
  bool include_unjudged = false;
};

struct QueryInput {
  std::string id;
  std::optional<Vector> embedding;  // nullopt when the embedding could not be produced
};

struct QueryMetrics {
  std::string query_id;
  double ndcg = 0.0;
  double mrr = 0.0;
  std::optional<double> ap;
  std::vector<std::optional<double>> recall;  // parallel to EvalConfig::recall_ks
};

struct MacroMetrics {
  double ndcg = 0.0;
  double mrr = 0.0;
  double map = 0.0;
  std::vector<double> recall;
  std::size_t ranked_queries = 0;   // queries entering NDCG/MRR
  std::size_t judged_queries = 0;   // queries entering MAP/recall
};

struct QueryIssue {
  std::string query_id;
  std::string reason;
};

struct MetricReport {
  EvalConfig config;
  std::vector<QueryMetrics> per_query;  // sorted by query id
  MacroMetrics macro;
  std::vector<QueryIssue> excluded;     // no relevant documents
  std::vector<QueryIssue> errors;       // could not be ranked

  std::optional<double> macro_recall(std::size_t k) const {
    for (std::size_t i = 0; i < config.recall_ks.size(); ++i) {
      if (config.recall_ks[i] == k) return macro.recall[i];
    }
    return std::nullopt;
  }
};

inline MetricReport evaluate_run(const std::vector<QueryInput>& queries, const Gallery& gallery,
                                 const Qrels& qrels, const EvalConfig& config = {}) {
  if (gallery.size() == 0) throw DomainError("evaluate_run: empty gallery");
  require(gallery.ids.size() == gallery.embeddings.rows(), "evaluate_run: gallery ids/rows mismatch");
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : gallery.ids) {
      if (!seen.insert(id).second) throw DomainError("evaluate_run: duplicate gallery id '" + id + "'");
    }
  }
  for (std::size_t k : config.recall_ks) require(k >= 1, "evaluate_run: recall cutoffs must be >= 1");
  require(config.ndcg_k >= 1 && config.mrr_k >= 1, "evaluate_run: metric cutoffs must be >= 1");

  MetricReport report;
  report.config = config;
  const std::size_t depth = config.depth == 0 ? gallery.size() : config.depth;

  std::vector<const QueryInput*> ordered;
  for (const auto& q : queries) ordered.push_back(&q);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });

  for (const auto* q : ordered) {
    if (!q->embedding) {
      report.errors.push_back({q->id, "missing embedding"});
      continue;
    }
    auto it = qrels.find(q->id);
    const bool has_relevant = it != qrels.end() && detail::relevant_count(&it->second) > 0;
    if (!has_relevant) {
      report.excluded.push_back({q->id, it == qrels.end() ? "no qrels entry" : "no relevant documents"});
      if (!config.include_unjudged) continue;
    }
    RankedList ranked;
    try {
      ranked = rank_gallery(q->id, *q->embedding, gallery, depth);
    } catch (const DomainError& e) {
      report.errors.push_back({q->id, e.what()});
      continue;
    }
    QueryMetrics m;
    m.query_id = q->id;
    m.ndcg = ndcg_at_k(ranked, qrels, config.ndcg_k);
    m.mrr = mrr_at_k(ranked, qrels, config.mrr_k);
    m.ap = average_precision(ranked, qrels);
    for (std::size_t k : config.recall_ks) m.recall.push_back(recall_at_k(ranked, qrels, k));
    report.per_query.push_back(std::move(m));
  }

  MacroMetrics& macro = report.macro;
  macro.recall.assign(config.recall_ks.size(), 0.0);
  for (const auto& m : report.per_query) {
    macro.ndcg += m.ndcg;
    macro.mrr += m.mrr;
    ++macro.ranked_queries;
    if (m.ap) {
      macro.map += *m.ap;
      ++macro.judged_queries;
      for (std::size_t i = 0; i < m.recall.size(); ++i) macro.recall[i] += m.recall[i].value_or(0.0);
    }
  }
  if (macro.ranked_queries > 0) {
    macro.ndcg /= static_cast<double>(macro.ranked_queries);
    macro.mrr /= static_cast<double>(macro.ranked_queries);
  }
  if (macro.judged_queries > 0) {
    macro.map /= static_cast<double>(macro.judged_queries);
    for (double& r : macro.recall) r /= static_cast<double>(macro.judged_queries);
  }
  return report;
}

}  // namespace peg::eval
