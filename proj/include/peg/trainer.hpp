#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "peg/encoder.hpp"
#include "peg/error.hpp"
#include "peg/optimizer.hpp"
#include "peg/progressive_loss.hpp"
#include "peg/sim.hpp"

namespace peg {

inline constexpr std::size_t kMaxHardNegatives = 5;

/// One query with its positive passage and up to five mined hard negatives.
struct TrainingExample {
  std::string query_id;
  TokenSequence query;
  std::string positive_id;
  TokenSequence positive;
  std::vector<std::string> negative_ids;
  std::vector<TokenSequence> hard_negatives;

  void validate() const {
    if (hard_negatives.size() > kMaxHardNegatives) {
      throw DomainError("example '" + query_id + "' has " + std::to_string(hard_negatives.size()) +
                        " hard negatives (max 5)");
    }
    if (negative_ids.size() != hard_negatives.size()) {
      throw DomainError("example '" + query_id + "': negative id/sequence count mismatch");
    }
    if (std::find(negative_ids.begin(), negative_ids.end(), positive_id) != negative_ids.end()) {
      throw DomainError("example '" + query_id + "': positive appears among its negatives");
    }
  }
};

/// SplitMix64 finalizer; derives independent seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Encoded batch. The candidate pool holds every positive and every hard
/// negative of the batch, deduplicated by id; `mask` marks, per query, the
/// candidates that act as its negatives.
struct Batch {
  std::vector<const TokenSequence*> query_seqs;
  std::vector<const TokenSequence*> positive_seqs;
  std::vector<const TokenSequence*> candidate_seqs;
  std::vector<std::string> candidate_ids;
  std::vector<EncodeCache> query_cache;
  std::vector<EncodeCache> positive_cache;
  std::vector<EncodeCache> candidate_cache;
  Matrix queries;
  Matrix positives;
  Matrix candidates;
  NegativeMask mask;
  Vector pos;  // cosine(query_i, positive_i)
  Matrix neg;  // cosine(query_i, candidate_j); only masked-in entries are negatives
  // Pairs excluded because a candidate from another example shares the
  // query's positive id.
  std::size_t duplicate_exclusions = 0;

  std::size_t negatives_for(std::size_t i) const { return mask.count_row(i); }
};

namespace detail {

inline Matrix stack(const std::vector<EncodeCache>& caches, std::size_t dim) {
  Matrix m(caches.size(), dim);
  for (std::size_t i = 0; i < caches.size(); ++i) {
    std::copy(caches[i].embedding.begin(), caches[i].embedding.end(), m.row(i).begin());
  }
  return m;
}

}  // namespace detail

inline Batch build_batch(std::span<const TrainingExample> examples, const ToyEncoder& enc) {
  if (examples.empty()) throw DomainError("build_batch: empty batch");
  Batch batch;
  std::unordered_map<std::string, std::size_t> pool_index;
  auto add_candidate = [&](const std::string& id, const TokenSequence& seq) {
    if (pool_index.emplace(id, batch.candidate_ids.size()).second) {
      batch.candidate_ids.push_back(id);
      batch.candidate_seqs.push_back(&seq);
    }
  };
  for (const auto& ex : examples) add_candidate(ex.positive_id, ex.positive);
  for (const auto& ex : examples) {
    for (std::size_t n = 0; n < ex.hard_negatives.size(); ++n) add_candidate(ex.negative_ids[n], ex.hard_negatives[n]);
  }
  for (const auto& ex : examples) {
    batch.query_seqs.push_back(&ex.query);
    batch.positive_seqs.push_back(&ex.positive);
    batch.query_cache.push_back(encode_cached(enc, ex.query));
    batch.positive_cache.push_back(encode_cached(enc, ex.positive));
  }
  for (const auto* seq : batch.candidate_seqs) batch.candidate_cache.push_back(encode_cached(enc, *seq));

  const std::size_t b = examples.size();
  const std::size_t m = batch.candidate_ids.size();
  batch.mask = NegativeMask(b, m, true);
  for (std::size_t i = 0; i < b; ++i) {
    const std::string& own = examples[i].positive_id;
    batch.mask.set(i, pool_index.at(own), false);
    for (std::size_t k = 0; k < b; ++k) {
      if (k != i && examples[k].positive_id == own) ++batch.duplicate_exclusions;
      for (const auto& id : examples[k].negative_ids) batch.duplicate_exclusions += id == own ? 1 : 0;
    }
  }
  batch.queries = detail::stack(batch.query_cache, enc.dim());
  batch.positives = detail::stack(batch.positive_cache, enc.dim());
  batch.candidates = detail::stack(batch.candidate_cache, enc.dim());
  batch.pos.resize(b);
  for (std::size_t i = 0; i < b; ++i) batch.pos[i] = cosine(batch.queries.row(i), batch.positives.row(i));
  batch.neg = sim_matrix(batch.queries, batch.candidates);
  return batch;
}

struct PretrainConfig {
  double mask_ratio = 0.3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  OptimizerConfig optimizer;
  std::uint64_t seed = 42;
};

/// MAE-style pretraining. Each sequence keeps one static mask derived from
/// (seed, sequence index); batches are reshuffled every epoch. Returns the
/// mean per-sequence loss of each epoch, measured during that epoch.
inline std::vector<double> pretrain(const std::vector<TokenSequence>& corpus, ToyEncoder& enc,
                                    MaeDecoder& dec, const PretrainConfig& config) {
  if (corpus.empty()) throw DomainError("pretrain: empty corpus");
  require(config.batch_size >= 1, "pretrain: batch_size must be >= 1");
  std::vector<TokenSequence> corrupted;
  corrupted.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    corrupted.push_back(corrupt(corpus[i], config.mask_ratio, mix_seed(config.seed, i)));
  }
  Optimizer opt(config.optimizer);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(config.seed, 0xB17C4));
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      EncoderGrads eg(enc);
      DecoderGrads dg(dec);
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        epoch_loss += mae_loss_and_grad(enc, dec, corpus[i], corrupted[i], eg, dg);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto* m : {&eg.token_table, &eg.projection, &dg.position_table, &dg.output}) {
        for (double& x : m->values()) x *= inv;
      }
      const ParamBlock blocks[] = {
          {enc.token_table().values(), eg.token_table.values()},
          {enc.projection().values(), eg.projection.values()},
          {dec.position_table().values(), dg.position_table.values()},
          {dec.output().values(), dg.output.values()},
      };
      opt.step(blocks);
    }
    curve.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  return curve;
}

struct FinetuneConfig {
  HyperParams hyper;
  LossMode mode = LossMode::kProgressive;
  Reduction reduction = Reduction::kSum;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
};

/// Audit row for one optimizer step. `t` is the bias after the step's
/// momentum update; `mean_pos` is measured before the parameter update.
struct StepRecord {
  std::int64_t step = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double sigma = 0.0;
  double mean_weight = 0.0;
  double t = 0.0;
  double mean_pos = 0.0;
};

struct FinetuneResult {
  std::vector<StepRecord> audit;
  std::vector<MomentumState> momentum_history;  // state after every step
  MomentumState momentum;
};

/// Contrastive fine-tuning. Per step: build the batch, derive sigma, w and a
/// from the current similarities and the previous t, take one optimizer step
/// on the loss with those coefficients frozen, then advance t.
inline FinetuneResult finetune(std::span<const TrainingExample> dataset, ToyEncoder& enc,
                               const FinetuneConfig& config,
                               const std::function<void(const StepRecord&)>& on_step = {}) {
  if (dataset.empty()) throw DomainError("finetune: empty dataset");
  config.hyper.validate();
  require(config.batch_size >= 1, "finetune: batch_size must be >= 1");
  for (const auto& ex : dataset) ex.validate();

  Optimizer opt(config.optimizer);
  FinetuneResult result;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(config.seed, 0xF17E));
  const LossOptions loss_opts{config.hyper, config.mode, config.reduction};
  std::vector<TrainingExample> chunk;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      chunk.clear();
      for (std::size_t k = start; k < end; ++k) chunk.push_back(dataset[order[k]]);

      Batch batch;
      LossGradients lg;
      try {
        batch = build_batch(chunk, enc);
        const double sigma = batch_threshold(batch.pos, config.hyper.beta);
        lg = loss_gradients(batch.queries, batch.positives, batch.candidates, sigma, result.momentum.t,
                            loss_opts, batch.mask);
      } catch (const DomainError& e) {
        throw DomainError("finetune: epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                          ": " + e.what());
      }

      EncoderGrads grads(enc);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        backprop_encode(enc, *batch.query_seqs[i], batch.query_cache[i], lg.grad_queries.row(i), grads);
        backprop_encode(enc, *batch.positive_seqs[i], batch.positive_cache[i], lg.grad_positives.row(i),
                        grads);
      }
      for (std::size_t j = 0; j < batch.candidate_seqs.size(); ++j) {
        backprop_encode(enc, *batch.candidate_seqs[j], batch.candidate_cache[j], lg.grad_negatives.row(j),
                        grads);
      }
      const ParamBlock blocks[] = {
          {enc.token_table().values(), grads.token_table.values()},
          {enc.projection().values(), grads.projection.values()},
      };
      opt.step(blocks);

      result.momentum = update_momentum(result.momentum, lg.sims.pos, config.hyper.alpha);
      result.momentum_history.push_back(result.momentum);
      StepRecord rec;
      rec.step = result.momentum.step;
      rec.epoch = epoch;
      rec.batch = b;
      rec.loss = lg.loss;
      rec.sigma = lg.sims.sigma;
      rec.mean_weight = lg.sims.mean_weight();
      rec.t = result.momentum.t;
      rec.mean_pos = std::accumulate(lg.sims.pos.begin(), lg.sims.pos.end(), 0.0) /
                     static_cast<double>(lg.sims.pos.size());
      result.audit.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return result;
}

}  // namespace peg
