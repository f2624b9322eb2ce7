#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>

#include "peg/error.hpp"
#include "peg/matrix.hpp"
#include "peg/sim.hpp"
#include "peg/tokenizer.hpp"

namespace peg {

/// Mean-pooled token embeddings followed by a d x d linear projection and L2
/// normalization.
class ToyEncoder {
 public:
  ToyEncoder() = default;
  ToyEncoder(std::size_t vocab_size, std::size_t dim)
      : token_table_(vocab_size, dim), projection_(dim, dim) {
    require(vocab_size >= 1 && dim >= 1, "ToyEncoder: vocab size and dimension must be >= 1");
    for (std::size_t i = 0; i < dim; ++i) projection_(i, i) = 1.0;
  }

  /// Gaussian token table with standard deviation 1/sqrt(dim), identity projection.
  static ToyEncoder random(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
    ToyEncoder enc(vocab_size, dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    for (double& x : enc.token_table_.values()) x = normal(rng);
    return enc;
  }

  std::size_t vocab_size() const noexcept { return token_table_.rows(); }
  std::size_t dim() const noexcept { return token_table_.cols(); }

  Matrix& token_table() noexcept { return token_table_; }
  const Matrix& token_table() const noexcept { return token_table_; }
  Matrix& projection() noexcept { return projection_; }
  const Matrix& projection() const noexcept { return projection_; }

  friend bool operator==(const ToyEncoder&, const ToyEncoder&) = default;

 private:
  Matrix token_table_;  // V x d
  Matrix projection_;   // d x d, applied as row-vector times matrix
};

/// Intermediate values of one forward pass, needed for backpropagation.
struct EncodeCache {
  Vector pooled;     // mean of token rows
  Vector projected;  // pooled * projection
  double norm = 0.0;
  Vector embedding;  // projected / norm
};

inline void check_tokens(const ToyEncoder& enc, const TokenSequence& seq) {
  if (seq.empty()) throw DomainError("encode: empty token sequence");
  for (TokenId id : seq.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= enc.vocab_size()) {
      throw DomainError("encode: token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(enc.vocab_size()));
    }
  }
}

inline EncodeCache encode_cached(const ToyEncoder& enc, const TokenSequence& seq) {
  check_tokens(enc, seq);
  const std::size_t d = enc.dim();
  EncodeCache c;
  c.pooled.assign(d, 0.0);
  for (TokenId id : seq.tokens) {
    const auto row = enc.token_table().row(static_cast<std::size_t>(id));
    for (std::size_t k = 0; k < d; ++k) c.pooled[k] += row[k];
  }
  const double inv_len = 1.0 / static_cast<double>(seq.size());
  for (double& x : c.pooled) x *= inv_len;
  c.projected.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double h = c.pooled[i];
    if (h == 0.0) continue;
    const auto prow = enc.projection().row(i);
    for (std::size_t j = 0; j < d; ++j) c.projected[j] += h * prow[j];
  }
  c.norm = l2_norm(c.projected);
  if (c.norm == 0.0) throw DomainError("encode: projected embedding has zero norm");
  c.embedding = c.projected;
  for (double& x : c.embedding) x /= c.norm;
  return c;
}

inline Vector encode(const ToyEncoder& enc, const TokenSequence& seq) {
  return encode_cached(enc, seq).embedding;
}

inline Matrix encode_all(const ToyEncoder& enc, const std::vector<TokenSequence>& seqs) {
  Matrix out(seqs.size(), enc.dim());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Vector e = encode(enc, seqs[i]);
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

struct EncoderGrads {
  Matrix token_table;
  Matrix projection;

  explicit EncoderGrads(const ToyEncoder& enc)
      : token_table(enc.vocab_size(), enc.dim()), projection(enc.dim(), enc.dim()) {}
};

/// Accumulates d loss / d parameters given d loss / d embedding.
inline void backprop_encode(const ToyEncoder& enc, const TokenSequence& seq, const EncodeCache& c,
                            std::span<const double> grad_embedding, EncoderGrads& grads) {
  const std::size_t d = enc.dim();
  const double proj = dot(c.embedding, grad_embedding);
  Vector dz(d);
  for (std::size_t j = 0; j < d; ++j) dz[j] = (grad_embedding[j] - c.embedding[j] * proj) / c.norm;
  Vector dh(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const auto prow = enc.projection().row(i);
    auto grow = grads.projection.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grow[j] += c.pooled[i] * dz[j];
      acc += prow[j] * dz[j];
    }
    dh[i] = acc;
  }
  const double inv_len = 1.0 / static_cast<double>(seq.size());
  for (TokenId id : seq.tokens) {
    auto grow = grads.token_table.row(static_cast<std::size_t>(id));
    for (std::size_t k = 0; k < d; ++k) grow[k] += dh[k] * inv_len;
  }
}

/// Replaces ceil(mask_ratio * len) positions, drawn without replacement, with
/// the MASK id.
inline TokenSequence corrupt(const TokenSequence& seq, double mask_ratio, std::uint64_t rng_seed) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw DomainError("corrupt: mask_ratio must lie in [0, 1)");
  }
  TokenSequence out = seq;
  const std::size_t n = seq.size();
  const auto count = static_cast<std::size_t>(std::ceil(mask_ratio * static_cast<double>(n)));
  if (count == 0) return out;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(rng_seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.tokens[idx[i]] = kMaskId;
  }
  return out;
}

/// Lightweight reconstruction head: logits_i = (e + position_i) * output.
class MaeDecoder {
 public:
  MaeDecoder() = default;
  MaeDecoder(std::size_t max_positions, std::size_t dim, std::size_t vocab_size)
      : position_table_(max_positions, dim), output_(dim, vocab_size) {}

  static MaeDecoder random(std::size_t max_positions, std::size_t dim, std::size_t vocab_size,
                           std::uint64_t seed) {
    MaeDecoder dec(max_positions, dim, vocab_size);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (double& x : dec.position_table_.values()) x = normal(rng);
    for (double& x : dec.output_.values()) x = normal(rng);
    return dec;
  }

  std::size_t max_positions() const noexcept { return position_table_.rows(); }
  std::size_t dim() const noexcept { return output_.rows(); }
  std::size_t vocab_size() const noexcept { return output_.cols(); }

  Matrix& position_table() noexcept { return position_table_; }
  const Matrix& position_table() const noexcept { return position_table_; }
  Matrix& output() noexcept { return output_; }
  const Matrix& output() const noexcept { return output_; }

  friend bool operator==(const MaeDecoder&, const MaeDecoder&) = default;

 private:
  Matrix position_table_;  // P x d
  Matrix output_;          // d x V
};

struct DecoderGrads {
  Matrix position_table;
  Matrix output;

  explicit DecoderGrads(const MaeDecoder& dec)
      : position_table(dec.max_positions(), dec.dim()), output(dec.dim(), dec.vocab_size()) {}
};

namespace detail {

inline void check_mae_inputs(const ToyEncoder& enc, const MaeDecoder& dec, const TokenSequence& clean,
                             const TokenSequence& corrupted) {
  if (clean.size() != corrupted.size()) throw DomainError("mae_loss: clean/corrupted length mismatch");
  if (clean.size() > dec.max_positions()) {
    throw DomainError("mae_loss: sequence length " + std::to_string(clean.size()) +
                      " exceeds decoder positions " + std::to_string(dec.max_positions()));
  }
  if (dec.dim() != enc.dim() || dec.vocab_size() != enc.vocab_size()) {
    throw DomainError("mae_loss: encoder/decoder shape mismatch");
  }
  for (TokenId id : clean.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= dec.vocab_size()) {
      throw DomainError("mae_loss: clean token id out of range");
    }
  }
}

// Shared forward/backward pass; grads are accumulated only when non-null.
inline double mae_pass(const ToyEncoder& enc, const MaeDecoder& dec, const TokenSequence& clean,
                       const TokenSequence& corrupted, EncoderGrads* enc_grads, DecoderGrads* dec_grads) {
  check_mae_inputs(enc, dec, clean, corrupted);
  const EncodeCache c = encode_cached(enc, corrupted);
  const std::size_t d = enc.dim();
  const std::size_t v = dec.vocab_size();
  Vector hidden(d), logits(v), grad_e(d, 0.0), dhidden(d);
  double loss = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto prow = dec.position_table().row(i);
    for (std::size_t k = 0; k < d; ++k) hidden[k] = c.embedding[k] + prow[k];
    std::fill(logits.begin(), logits.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const auto orow = dec.output().row(k);
      for (std::size_t j = 0; j < v; ++j) logits[j] += hidden[k] * orow[j];
    }
    const double lse = log_sum_exp(logits);
    const auto target = static_cast<std::size_t>(clean.tokens[i]);
    loss += lse - logits[target];
    if (enc_grads == nullptr && dec_grads == nullptr) continue;
    // logits now hold d loss / d logits = softmax - onehot
    for (double& x : logits) x = std::exp(x - lse);
    logits[target] -= 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      const auto orow = dec.output().row(k);
      double acc = 0.0;
      for (std::size_t j = 0; j < v; ++j) acc += orow[j] * logits[j];
      dhidden[k] = acc;
    }
    if (dec_grads != nullptr) {
      for (std::size_t k = 0; k < d; ++k) {
        auto grow = dec_grads->output.row(k);
        for (std::size_t j = 0; j < v; ++j) grow[j] += hidden[k] * logits[j];
      }
      auto gpos = dec_grads->position_table.row(i);
      for (std::size_t k = 0; k < d; ++k) gpos[k] += dhidden[k];
    }
    for (std::size_t k = 0; k < d; ++k) grad_e[k] += dhidden[k];
  }
  if (enc_grads != nullptr) backprop_encode(enc, corrupted, c, grad_e, *enc_grads);
  return loss;
}

}  // namespace detail

/// Reconstruction loss: sum over positions of -log softmax(logits_i)[clean_i],
/// with the embedding taken from the corrupted sequence.
inline double mae_loss(const ToyEncoder& enc, const MaeDecoder& dec, const TokenSequence& clean,
                       const TokenSequence& corrupted) {
  return detail::mae_pass(enc, dec, clean, corrupted, nullptr, nullptr);
}

inline double mae_loss_and_grad(const ToyEncoder& enc, const MaeDecoder& dec, const TokenSequence& clean,
                                const TokenSequence& corrupted, EncoderGrads& enc_grads,
                                DecoderGrads& dec_grads) {
  return detail::mae_pass(enc, dec, clean, corrupted, &enc_grads, &dec_grads);
}

}  // namespace peg
