#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "peg/error.hpp"
#include "peg/eval.hpp"
#include "peg/matrix.hpp"
#include "peg/records.hpp"

namespace peg {

/// Clustered retrieval corpus rendered as text. Each passage has a latent
/// point drawn from one of `clusters` isotropic Gaussians; its text names each
/// latent coordinate's quantization bin at two resolutions ("p3r16x7 p3r8x3").
/// A query is a noisier copy of its passage's latent point rendered the same
/// way.
struct SyntheticConfig {
  std::size_t clusters = 8;
  std::size_t latent_dim = 16;
  std::size_t gallery = 2000;
  std::size_t train_queries = 1600;
  std::size_t heldout_queries = 200;
  std::size_t bins = 16;
  double center_scale = 1.0;
  double passage_noise = 0.5;
  double query_noise = 0.1;
  double noise_rate = 0.0;  // fraction of training queries paired with a wrong positive
  std::uint64_t seed = 42;
};

struct SyntheticQuery {
  QueryRecord query;
  std::string positive_id;       // label used for training (possibly corrupted)
  std::string true_positive_id;  // passage the query was generated from
};

struct SyntheticCorpus {
  std::vector<Passage> passages;
  std::vector<std::size_t> cluster_of;  // per passage
  Matrix latent;                        // per passage
  std::vector<SyntheticQuery> train;
  std::vector<SyntheticQuery> heldout;
  eval::Qrels heldout_qrels;
  std::size_t corrupted_pairs = 0;
};

namespace detail {

inline std::string render(std::span<const double> x, std::size_t bins, double range) {
  std::string text;
  for (std::size_t j = 0; j < x.size(); ++j) {
    for (std::size_t res = bins; res >= std::max<std::size_t>(2, bins / 2); res /= 2) {
      const double width = 2.0 * range / static_cast<double>(res);
      const double b = std::floor((x[j] + range) / width);
      const auto bin = static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(res - 1)));
      if (!text.empty()) text.push_back(' ');
      text += 'p' + std::to_string(j) + "r" + std::to_string(res) + "x" + std::to_string(bin);
    }
  }
  return text;
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& cfg) {
  require(cfg.clusters >= 1 && cfg.latent_dim >= 1 && cfg.bins >= 2, "synthetic: invalid shape");
  require(cfg.train_queries + cfg.heldout_queries <= cfg.gallery, "synthetic: more queries than passages");
  require(cfg.noise_rate >= 0.0 && cfg.noise_rate <= 1.0, "synthetic: noise_rate outside [0, 1]");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double range = 2.5 * std::sqrt(cfg.center_scale * cfg.center_scale + cfg.passage_noise * cfg.passage_noise);

  SyntheticCorpus out;
  Matrix centers(cfg.clusters, cfg.latent_dim);
  for (double& x : centers.values()) x = cfg.center_scale * normal(rng);

  std::uniform_int_distribution<std::size_t> pick_cluster(0, cfg.clusters - 1);
  out.latent = Matrix(cfg.gallery, cfg.latent_dim);
  for (std::size_t i = 0; i < cfg.gallery; ++i) {
    const std::size_t c = pick_cluster(rng);
    out.cluster_of.push_back(c);
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
      out.latent(i, j) = centers(c, j) + cfg.passage_noise * normal(rng);
    }
    out.passages.push_back({"s" + std::to_string(i), detail::render(out.latent.row(i), cfg.bins, range),
                            "cluster" + std::to_string(c)});
  }

  std::vector<std::size_t> order(cfg.gallery);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Vector point(cfg.latent_dim);
  auto make_query = [&](std::size_t passage, const std::string& id) {
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) point[j] = out.latent(passage, j) + cfg.query_noise * normal(rng);
    const std::string& pid = out.passages[passage].id;
    return SyntheticQuery{{id, detail::render(point, cfg.bins, range)}, pid, pid};
  };
  for (std::size_t i = 0; i < cfg.train_queries; ++i) out.train.push_back(make_query(order[i], "tq" + std::to_string(i)));
  for (std::size_t i = 0; i < cfg.heldout_queries; ++i) {
    auto q = make_query(order[cfg.train_queries + i], "hq" + std::to_string(i));
    out.heldout_qrels[q.query.id][q.positive_id] = 1;
    out.heldout.push_back(std::move(q));
  }

  // Label noise: re-pair a fixed fraction of training queries with a random
  // other passage.
  const auto noisy = static_cast<std::size_t>(std::llround(cfg.noise_rate * static_cast<double>(cfg.train_queries)));
  if (noisy > 0 && cfg.gallery > 1) {
    std::vector<std::size_t> idx(cfg.train_queries);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_int_distribution<std::size_t> pick_passage(0, cfg.gallery - 1);
    for (std::size_t k = 0; k < noisy; ++k) {
      auto& q = out.train[idx[k]];
      std::string wrong;
      do {
        wrong = out.passages[pick_passage(rng)].id;
      } while (wrong == q.true_positive_id);
      q.positive_id = wrong;
    }
    out.corrupted_pairs = noisy;
  }
  return out;
}

}  // namespace peg
