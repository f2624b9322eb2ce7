#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "peg/checkpoint.hpp"
#include "peg/config.hpp"
#include "peg/encoder.hpp"
#include "peg/error.hpp"
#include "peg/eval.hpp"
#include "peg/mining.hpp"
#include "peg/records.hpp"
#include "peg/synthetic.hpp"
#include "peg/tokenizer.hpp"
#include "peg/trainer.hpp"

namespace peg::cli {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointFile = "checkpoint.txt";
inline constexpr const char* kLossCurveFile = "loss_curve.jsonl";
inline constexpr const char* kPassagesFile = "passages.jsonl";
inline constexpr const char* kDatasetFile = "dataset.jsonl";
inline constexpr const char* kMiningAuditFile = "mining_audit.jsonl";
inline constexpr const char* kFinetuneAuditFile = "finetune_audit.jsonl";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kGalleryEmbeddingsFile = "gallery_embeddings.bin";
inline constexpr const char* kBenchFile = "bench.jsonl";

namespace detail {

inline const std::string& require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ValidationError("config: '" + std::string(key) + "' is required for this command");
  return value;
}

inline void require_file(const std::string& value, const char* key) {
  require_path(value, key);
  if (!fs::exists(value)) throw IoError(std::string(key) + " file '" + value + "' does not exist");
}

inline void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
}

inline std::unique_ptr<mining::RelevanceJudge> make_judge(const RunConfig& cfg) {
  if (cfg.judge == "always") return std::make_unique<mining::AlwaysRelevantJudge>();
  if (cfg.judge == "threshold") return std::make_unique<mining::SimilarityThresholdJudge>(cfg.judge_threshold);
  return std::make_unique<mining::NeverRelevantJudge>();
}

inline std::string query_text(const RunConfig& cfg, const std::string& query) { return cfg.query_prefix + query; }

inline eval::EvalConfig eval_config(const RunConfig& cfg) {
  eval::EvalConfig e;
  e.ndcg_k = cfg.ndcg_k;
  e.mrr_k = cfg.mrr_k;
  e.recall_ks = cfg.recall_ks;
  e.depth = cfg.eval_depth;
  e.include_unjudged = cfg.include_unjudged;
  return e;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json metrics_json(const eval::QueryMetrics& m, const eval::EvalConfig& cfg) {
  Json row = {{"kind", "query"},
              {"query_id", m.query_id},
              {"ndcg@" + std::to_string(cfg.ndcg_k), m.ndcg},
              {"map", optional_json(m.ap)},
              {"mrr@" + std::to_string(cfg.mrr_k), m.mrr}};
  for (std::size_t i = 0; i < cfg.recall_ks.size(); ++i) {
    row["recall@" + std::to_string(cfg.recall_ks[i])] = optional_json(m.recall[i]);
  }
  return row;
}

inline Json macro_json(const eval::MetricReport& r) {
  const auto& cfg = r.config;
  Json row = {{"kind", "macro"},
              {"ndcg@" + std::to_string(cfg.ndcg_k), r.macro.ndcg},
              {"map", r.macro.map},
              {"mrr@" + std::to_string(cfg.mrr_k), r.macro.mrr},
              {"ranked_queries", r.macro.ranked_queries},
              {"judged_queries", r.macro.judged_queries},
              {"excluded", r.excluded.size()},
              {"errors", r.errors.size()}};
  for (std::size_t i = 0; i < cfg.recall_ks.size(); ++i) {
    row["recall@" + std::to_string(cfg.recall_ks[i])] = r.macro.recall[i];
  }
  return row;
}

inline void print_report_table(std::ostream& os, const eval::MetricReport& r) {
  const auto& cfg = r.config;
  std::vector<std::string> headers = {"query", "ndcg@" + std::to_string(cfg.ndcg_k), "map",
                                      "mrr@" + std::to_string(cfg.mrr_k)};
  for (auto k : cfg.recall_ks) headers.push_back("recall@" + std::to_string(k));
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  std::size_t width = 8;
  for (const auto& m : r.per_query) width = std::max(width, m.query_id.size() + 1);
  os << std::left << std::setw(static_cast<int>(width)) << headers[0];
  for (std::size_t i = 1; i < headers.size(); ++i) os << std::setw(11) << headers[i];
  os << '\n';
  auto row = [&](const std::string& name, double ndcg, std::optional<double> map, double mrr,
                 const std::vector<std::optional<double>>& recall) {
    os << std::setw(static_cast<int>(width)) << name << std::setw(11) << cell(ndcg) << std::setw(11) << cell(map)
       << std::setw(11) << cell(mrr);
    for (const auto& v : recall) os << std::setw(11) << cell(v);
    os << '\n';
  };
  for (const auto& m : r.per_query) row(m.query_id, m.ndcg, m.ap, m.mrr, m.recall);
  std::vector<std::optional<double>> macro_recall(r.macro.recall.begin(), r.macro.recall.end());
  row("MACRO", r.macro.ndcg, r.macro.map, r.macro.mrr, macro_recall);
  if (!r.excluded.empty()) {
    os << "excluded:\n";
    for (const auto& e : r.excluded) os << "  " << e.query_id << ": " << e.reason << '\n';
  }
  if (!r.errors.empty()) {
    os << "errors:\n";
    for (const auto& e : r.errors) os << "  " << e.query_id << ": " << e.reason << '\n';
  }
}

inline void write_report(const fs::path& path, const eval::MetricReport& r, const Json& extra_header = Json::object()) {
  RecordWriter w(path, formats::kMetrics, extra_header);
  for (const auto& m : r.per_query) w.write(metrics_json(m, r.config));
  for (const auto& e : r.excluded) w.write({{"kind", "excluded"}, {"query_id", e.query_id}, {"reason", e.reason}});
  for (const auto& e : r.errors) w.write({{"kind", "error"}, {"query_id", e.query_id}, {"reason", e.reason}});
  w.write(macro_json(r));
}

/// Embeds the gallery; rows whose text tokenizes to nothing are skipped.
inline eval::Gallery embed_passages(const Checkpoint& ckpt, const std::vector<Passage>& passages,
                                    std::size_t max_len, std::ostream& log) {
  eval::Gallery g;
  std::vector<Vector> rows;
  for (const auto& p : passages) {
    const TokenSequence seq = ckpt.vocab.encode(p.text, max_len);
    if (seq.empty()) {
      log << "warning: passage '" << p.id << "' has no tokens; skipped\n";
      continue;
    }
    g.ids.push_back(p.id);
    rows.push_back(encode(ckpt.encoder, seq));
  }
  g.embeddings = rows.empty() ? Matrix(0, ckpt.encoder.dim()) : Matrix::from_rows(rows);
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOutcome {
  fs::path checkpoint;
  fs::path loss_curve;
  std::vector<double> curve;
};

inline PretrainOutcome cmd_pretrain(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  detail::require_file(cfg.corpus, "corpus");
  const auto passages = read_corpus(cfg.corpus);
  if (passages.empty()) throw ValidationError("corpus '" + cfg.corpus + "' contains no passages");
  std::vector<std::string> texts;
  for (const auto& p : passages) texts.push_back(p.text);
  Vocabulary vocab = Vocabulary::build(texts, cfg.max_vocab);
  std::vector<TokenSequence> seqs;
  for (const auto& t : texts) {
    auto s = vocab.encode(t, cfg.max_passage_len);
    if (!s.empty()) seqs.push_back(std::move(s));
  }
  if (seqs.empty()) throw ValidationError("corpus '" + cfg.corpus + "' has no tokenizable text");

  Checkpoint ckpt{vocab, ToyEncoder::random(vocab.size(), cfg.dim, mix_seed(cfg.seed, 1)),
                  MaeDecoder::random(cfg.max_passage_len, cfg.dim, vocab.size(), mix_seed(cfg.seed, 2))};
  PretrainConfig pc;
  pc.mask_ratio = cfg.mask_ratio;
  pc.batch_size = cfg.batch_size;
  pc.epochs = cfg.epochs;
  pc.optimizer = cfg.optimizer_config();
  pc.seed = cfg.seed;

  detail::prepare_out(out);
  PretrainOutcome result;
  result.curve = pretrain(seqs, ckpt.encoder, ckpt.decoder, pc);
  result.checkpoint = out / kCheckpointFile;
  result.loss_curve = out / kLossCurveFile;
  save_checkpoint(result.checkpoint, ckpt);
  RecordWriter curve(result.loss_curve, formats::kLossCurve,
                     {{"sequences", seqs.size()}, {"vocab_size", vocab.size()}, {"seed", cfg.seed}});
  for (std::size_t e = 0; e < result.curve.size(); ++e) curve.write({{"epoch", e + 1}, {"loss", result.curve[e]}});
  log << "pretrain: " << seqs.size() << " sequences, vocab " << vocab.size() << ", " << cfg.epochs << " epochs";
  if (!result.curve.empty()) log << ", loss " << result.curve.front() << " -> " << result.curve.back();
  log << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// mine
// ---------------------------------------------------------------------------

struct MineOutcome {
  std::size_t passages = 0;
  std::size_t queries = 0;
  std::size_t skipped_passages = 0;  // no generated query
  std::size_t negatives_mined = 0;
  mining::AssemblyStats assembly;
  fs::path dataset;
  fs::path audit;
  fs::path passages_file;
};

/// split -> generate -> mine -> filter -> assemble.
inline MineOutcome cmd_mine(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  detail::require_file(cfg.corpus, "corpus");
  detail::require_file(cfg.checkpoint, "checkpoint");
  const auto raw = read_corpus(cfg.corpus);
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);

  std::vector<Passage> passages;
  for (const auto& doc : raw) {
    auto pieces = mining::split_passages(doc.text, cfg.max_chars, doc.id);
    if (pieces.size() == 1) {
      pieces.front().id = doc.id;
    }
    for (auto& p : pieces) {
      p.source_doc = doc.source_doc.empty() ? doc.id : doc.source_doc;
      passages.push_back(std::move(p));
    }
  }
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (!by_id.emplace(passages[i].id, i).second) {
      throw ValidationError("passage id '" + passages[i].id + "' produced twice by splitting");
    }
  }

  MineOutcome result;
  result.passages = passages.size();
  const eval::Gallery corpus = detail::embed_passages(ckpt, passages, cfg.max_passage_len, log);

  mining::FirstSentenceGenerator generator;
  auto judge = detail::make_judge(cfg);
  std::vector<AuditRecord> audit;
  std::vector<mining::MinedQuery> mined;
  auto text_of = [&](const std::string& id) -> std::string_view { return passages[by_id.at(id)].text; };

  for (const auto& p : passages) {
    const auto queries = mining::generate_queries(p, generator);
    if (queries.empty()) {
      ++result.skipped_passages;
      continue;
    }
    for (std::size_t k = 0; k < queries.size(); ++k) {
      mining::MinedQuery mq;
      mq.query_id = p.id + "/q" + std::to_string(k);
      mq.query = queries[k];
      mq.positive_id = p.id;
      mq.source_doc = p.source_doc;
      const TokenSequence seq = ckpt.vocab.encode(detail::query_text(cfg, mq.query), cfg.max_query_len);
      if (!seq.empty() && corpus.size() > 0) {
        const Vector q = encode(ckpt.encoder, seq);
        const auto candidates = mining::mine_hard_negatives(q, corpus, {p.id}, cfg.mine_k);
        mq.mined = candidates.size();
        mq.survivors = mining::filter_false_negatives(mq.query_id, mq.query, candidates, text_of, *judge, audit);
      }
      result.negatives_mined += mq.mined;
      mined.push_back(std::move(mq));
    }
  }
  result.queries = mined.size();

  detail::prepare_out(out);
  result.passages_file = out / kPassagesFile;
  result.dataset = out / kDatasetFile;
  result.audit = out / kMiningAuditFile;
  write_corpus(result.passages_file, passages);
  result.assembly = mining::assemble_dataset(mined, generator.name(), result.dataset);
  write_audit(result.audit, audit);
  log << "mine: " << result.passages << " passages, " << result.queries << " queries, "
      << result.assembly.negatives << " negatives kept, " << result.assembly.negatives_dropped
      << " dropped by judge, " << result.assembly.zero_negative_queries << " queries without negatives\n";
  return result;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

/// Resolves dataset records into token sequences using the passage corpus.
inline std::vector<TrainingExample> build_examples(const RunConfig& cfg, const Vocabulary& vocab,
                                                   const std::vector<DatasetRecord>& records,
                                                   const std::vector<Passage>& passages) {
  std::unordered_map<std::string, const Passage*> by_id;
  for (const auto& p : passages) by_id[p.id] = &p;
  auto passage_tokens = [&](const std::string& id, const std::string& context) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError(context + ": passage '" + id + "' not found in corpus");
    TokenSequence seq = vocab.encode(it->second->text, cfg.max_passage_len);
    if (seq.empty()) throw ValidationError(context + ": passage '" + id + "' has no tokens");
    return seq;
  };
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string context = "dataset record " + std::to_string(i + 1);
    TrainingExample ex;
    ex.query_id = r.provenance.query_id.empty() ? "#" + std::to_string(i) : r.provenance.query_id;
    ex.query = vocab.encode(detail::query_text(cfg, r.query), cfg.max_query_len);
    if (ex.query.empty()) throw ValidationError(context + ": query has no tokens");
    ex.positive_id = r.positive_id;
    ex.positive = passage_tokens(r.positive_id, context);
    for (const auto& n : r.negative_ids) {
      if (n == r.positive_id) continue;
      if (ex.negative_ids.size() == kMaxHardNegatives) break;
      ex.negative_ids.push_back(n);
      ex.hard_negatives.push_back(passage_tokens(n, context));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline FinetuneConfig finetune_config(const RunConfig& cfg) {
  FinetuneConfig fc;
  fc.hyper = cfg.hyper();
  fc.mode = cfg.mode();
  fc.reduction = cfg.reduction_mode();
  fc.optimizer = cfg.optimizer_config();
  fc.batch_size = cfg.batch_size;
  fc.epochs = cfg.epochs;
  fc.seed = cfg.seed;
  return fc;
}

struct FinetuneOutcome {
  fs::path checkpoint;
  fs::path audit;
  std::size_t steps = 0;
  MomentumState momentum;
};

inline FinetuneOutcome cmd_finetune(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  detail::require_file(cfg.dataset, "dataset");
  detail::require_file(cfg.corpus, "corpus");
  detail::require_file(cfg.checkpoint, "checkpoint");
  Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  const auto records = read_dataset(cfg.dataset);
  const auto passages = read_corpus(cfg.corpus);
  const auto examples = build_examples(cfg, ckpt.vocab, records, passages);
  if (examples.empty()) throw ValidationError("dataset '" + cfg.dataset + "' has no examples");

  detail::prepare_out(out);
  FinetuneOutcome result;
  result.checkpoint = out / kCheckpointFile;
  result.audit = out / kFinetuneAuditFile;
  const FinetuneConfig fc = finetune_config(cfg);
  RecordWriter audit(result.audit, formats::kFinetuneAudit,
                     {{"loss_mode", std::string(to_string(fc.mode))},
                      {"alpha", fc.hyper.alpha},
                      {"beta", fc.hyper.beta},
                      {"tau", fc.hyper.tau},
                      {"reduction", cfg.reduction},
                      {"optimizer", cfg.optimizer},
                      {"lr", cfg.lr},
                      {"batch_size", cfg.batch_size},
                      {"epochs", cfg.epochs},
                      {"seed", cfg.seed},
                      {"examples", examples.size()}});
  const auto trained = finetune(examples, ckpt.encoder, fc, [&](const StepRecord& s) {
    audit.write({{"step", s.step},
                 {"epoch", s.epoch},
                 {"batch", s.batch},
                 {"loss", s.loss},
                 {"sigma", s.sigma},
                 {"mean_w", s.mean_weight},
                 {"t", s.t},
                 {"mean_pos", s.mean_pos}});
  });
  save_checkpoint(result.checkpoint, ckpt);
  result.steps = trained.audit.size();
  result.momentum = trained.momentum;
  log << "finetune (" << to_string(fc.mode) << "): " << examples.size() << " examples, " << result.steps
      << " steps, final t " << result.momentum.t;
  if (!trained.audit.empty()) log << ", last loss " << trained.audit.back().loss;
  log << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOutcome {
  eval::MetricReport report;
  fs::path metrics;
  fs::path embeddings;
};

inline EvaluateOutcome cmd_evaluate(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  const std::string& gallery_path = cfg.gallery.empty() ? cfg.corpus : cfg.gallery;
  detail::require_file(cfg.checkpoint, "checkpoint");
  detail::require_file(gallery_path, "gallery");
  detail::require_file(cfg.queries, "queries");
  detail::require_file(cfg.qrels, "qrels");
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  const auto passages = read_corpus(gallery_path);
  const auto queries = read_queries(cfg.queries);
  const auto qrels = read_qrels(cfg.qrels);

  const eval::Gallery gallery = detail::embed_passages(ckpt, passages, cfg.max_passage_len, log);
  std::vector<eval::QueryInput> inputs;
  for (const auto& q : queries) {
    eval::QueryInput in{q.id, std::nullopt};
    const TokenSequence seq = ckpt.vocab.encode(detail::query_text(cfg, q.text), cfg.max_query_len);
    if (!seq.empty()) {
      try {
        in.embedding = encode(ckpt.encoder, seq);
      } catch (const DomainError& e) {
        log << "warning: query '" << q.id << "': " << e.what() << "\n";
      }
    }
    inputs.push_back(std::move(in));
  }

  EvaluateOutcome result;
  result.report = eval::evaluate_run(inputs, gallery, qrels, detail::eval_config(cfg));
  detail::prepare_out(out);
  result.metrics = out / kMetricsFile;
  result.embeddings = out / kGalleryEmbeddingsFile;
  detail::write_report(result.metrics, result.report, {{"queries", queries.size()}, {"gallery", gallery.size()}});
  save_embeddings(result.embeddings, gallery);
  detail::print_report_table(log, result.report);
  return result;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchRun {
  std::size_t seed = 0;
  LossMode mode = LossMode::kProgressive;
  eval::MetricReport report;
  MomentumState momentum;
};

inline SyntheticConfig synthetic_config(const RunConfig& cfg, std::size_t seed) {
  SyntheticConfig s;
  s.clusters = cfg.synth_clusters;
  s.latent_dim = cfg.synth_latent_dim;
  s.gallery = cfg.synth_gallery;
  s.train_queries = cfg.synth_train;
  s.heldout_queries = cfg.synth_heldout;
  s.bins = cfg.synth_bins;
  s.center_scale = cfg.synth_center_scale;
  s.passage_noise = cfg.synth_passage_noise;
  s.query_noise = cfg.synth_query_noise;
  s.noise_rate = cfg.noise_rate;
  s.seed = seed;
  return s;
}

/// Trains one encoder per loss mode on the same synthetic corpus, from the
/// same initial weights and the same mined negatives, and evaluates each on
/// the held-out queries.
inline std::vector<BenchRun> bench_seed(const RunConfig& cfg, std::size_t seed, const std::vector<LossMode>& modes) {
  const SyntheticCorpus data = make_synthetic_corpus(synthetic_config(cfg, seed));
  std::vector<std::string> texts;
  for (const auto& p : data.passages) texts.push_back(p.text);
  for (const auto& q : data.train) texts.push_back(q.query.text);
  for (const auto& q : data.heldout) texts.push_back(q.query.text);
  const Vocabulary vocab = Vocabulary::build(texts);
  const ToyEncoder initial = ToyEncoder::random(vocab.size(), cfg.dim, mix_seed(seed, 1));

  Checkpoint ckpt{vocab, initial, MaeDecoder(1, cfg.dim, vocab.size())};
  const eval::Gallery corpus = detail::embed_passages(ckpt, data.passages, cfg.max_passage_len, std::cerr);
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < data.passages.size(); ++i) by_id[data.passages[i].id] = i;

  std::vector<TrainingExample> examples;
  for (const auto& q : data.train) {
    TrainingExample ex;
    ex.query_id = q.query.id;
    ex.query = vocab.encode(detail::query_text(cfg, q.query.text), cfg.max_query_len);
    ex.positive_id = q.positive_id;
    ex.positive = vocab.encode(data.passages[by_id.at(q.positive_id)].text, cfg.max_passage_len);
    if (cfg.bench_hard_negatives > 0) {
      const auto mined = mining::mine_hard_negatives(encode(initial, ex.query), corpus, {q.positive_id},
                                                     cfg.bench_hard_negatives);
      for (const auto& c : mined) {
        ex.negative_ids.push_back(c.passage_id);
        ex.hard_negatives.push_back(vocab.encode(data.passages[by_id.at(c.passage_id)].text, cfg.max_passage_len));
      }
    }
    examples.push_back(std::move(ex));
  }

  std::vector<BenchRun> runs;
  for (LossMode mode : modes) {
    RunConfig run_cfg = cfg;
    run_cfg.loss_mode = std::string(to_string(mode));
    FinetuneConfig fc = finetune_config(run_cfg);
    fc.seed = seed;
    Checkpoint trained = ckpt;
    const auto res = finetune(examples, trained.encoder, fc);
    std::vector<eval::QueryInput> inputs;
    for (const auto& q : data.heldout) {
      inputs.push_back({q.query.id, encode(trained.encoder, vocab.encode(detail::query_text(cfg, q.query.text),
                                                                         cfg.max_query_len))});
    }
    const eval::Gallery gallery = detail::embed_passages(trained, data.passages, cfg.max_passage_len, std::cerr);
    runs.push_back({seed, mode, eval::evaluate_run(inputs, gallery, data.heldout_qrels, detail::eval_config(cfg)),
                    res.momentum});
  }
  return runs;
}

struct BenchOutcome {
  std::vector<BenchRun> runs;
  std::map<std::string, double> progressive_mean;
  std::map<std::string, double> infonce_mean;
  fs::path report;
};

namespace detail {

inline std::map<std::string, double> headline(const eval::MetricReport& r) {
  std::map<std::string, double> m;
  m["ndcg@" + std::to_string(r.config.ndcg_k)] = r.macro.ndcg;
  m["map"] = r.macro.map;
  m["mrr@" + std::to_string(r.config.mrr_k)] = r.macro.mrr;
  for (std::size_t i = 0; i < r.config.recall_ks.size(); ++i) {
    m["recall@" + std::to_string(r.config.recall_ks[i])] = r.macro.recall[i];
  }
  return m;
}

}  // namespace detail

inline BenchOutcome cmd_bench(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  BenchOutcome result;
  detail::prepare_out(out);
  result.report = out / kBenchFile;
  RecordWriter w(result.report, formats::kBench,
                 {{"seeds", cfg.bench_seeds},
                  {"noise_rate", cfg.noise_rate},
                  {"epochs", cfg.epochs},
                  {"alpha", cfg.alpha},
                  {"beta", cfg.beta},
                  {"tau", cfg.tau}});
  for (std::size_t r = 0; r < cfg.bench_seeds; ++r) {
    const std::size_t seed = cfg.seed + r;
    const auto runs = bench_seed(cfg, seed, {LossMode::kProgressive, LossMode::kInfoNce});
    std::map<std::string, double> delta;
    for (const auto& run : runs) {
      const auto m = detail::headline(run.report);
      auto& mean = run.mode == LossMode::kProgressive ? result.progressive_mean : result.infonce_mean;
      Json row = {{"kind", "run"}, {"seed", seed}, {"loss_mode", std::string(to_string(run.mode))}, {"t", run.momentum.t}};
      for (const auto& [k, v] : m) {
        row[k] = v;
        mean[k] += v / static_cast<double>(cfg.bench_seeds);
        delta[k] += run.mode == LossMode::kProgressive ? v : -v;
      }
      w.write(row);
      log << "bench seed " << seed << " " << std::setw(11) << std::left << to_string(run.mode);
      for (const auto& [k, v] : m) log << " " << k << "=" << std::fixed << std::setprecision(4) << v;
      log << std::defaultfloat << "\n";
    }
    Json drow = {{"kind", "delta"}, {"seed", seed}};
    for (const auto& [k, v] : delta) drow[k] = v;
    w.write(drow);
    result.runs.insert(result.runs.end(), runs.begin(), runs.end());
  }
  Json summary = {{"kind", "summary"}, {"seeds", cfg.bench_seeds}, {"runs", result.runs.size()}};
  Json delta = Json::object();
  for (const auto& [k, v] : result.progressive_mean) {
    delta[k] = v - result.infonce_mean[k];
  }
  summary["progressive"] = result.progressive_mean;
  summary["infonce"] = result.infonce_mean;
  summary["delta"] = delta;
  w.write(summary);
  log << "bench summary over " << cfg.bench_seeds << " seed(s):\n";
  for (const auto& [k, v] : result.progressive_mean) {
    log << "  " << std::setw(10) << std::left << k << " progressive " << std::fixed << std::setprecision(4) << v
        << "  infonce " << result.infonce_mean[k] << "  delta " << v - result.infonce_mean[k] << std::defaultfloat
        << "\n";
  }
  return result;
}

}  // namespace peg::cli
