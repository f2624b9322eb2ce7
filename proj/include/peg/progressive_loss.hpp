#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peg/error.hpp"
#include "peg/matrix.hpp"
#include "peg/sim.hpp"

namespace peg {

struct HyperParams {
  double alpha = 0.5;  // momentum coefficient for the bias t
  double beta = 0.1;   // margin subtracted from the mean positive similarity
  double tau = 0.01;   // temperature

  void validate() const {
    if (!(tau > 0.0)) throw DomainError("tau must be > 0, got " + std::to_string(tau));
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw DomainError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(beta >= 0.0)) throw DomainError("beta must be >= 0, got " + std::to_string(beta));
  }
};

struct MomentumState {
  double t = 0.0;
  std::int64_t step = 0;

  friend bool operator==(const MomentumState&, const MomentumState&) = default;
};

enum class LossMode { kProgressive, kInfoNce };
enum class Reduction { kSum, kMean };

inline std::string_view to_string(LossMode m) {
  return m == LossMode::kProgressive ? "progressive" : "infonce";
}

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "progressive") return LossMode::kProgressive;
  if (s == "infonce") return LossMode::kInfoNce;
  throw ValidationError("unknown loss mode '" + std::string(s) + "' (expected progressive|infonce)");
}

/// Which (query, candidate) pairs count as negatives. An empty mask means
/// every candidate is a negative for every query.
class NegativeMask {
 public:
  NegativeMask() = default;
  NegativeMask(std::size_t rows, std::size_t cols, bool value = true)
      : rows_(rows), cols_(cols), bits_(rows * cols, value ? 1 : 0) {}

  bool empty() const noexcept { return bits_.empty(); }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool allowed(std::size_t i, std::size_t j) const noexcept {
    return bits_.empty() || bits_[i * cols_ + j] != 0;
  }
  void set(std::size_t i, std::size_t j, bool value) { bits_[i * cols_ + j] = value ? 1 : 0; }

  std::size_t count_row(std::size_t i) const {
    if (bits_.empty()) return cols_;
    std::size_t n = 0;
    for (std::size_t j = 0; j < cols_; ++j) n += bits_[i * cols_ + j];
    return n;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Per-batch similarities plus the coefficients derived from them. Kept for
/// the fine-tuning audit log.
struct BatchSimilarities {
  Vector pos;            // B
  Matrix neg;            // B x N
  NegativeMask mask;     // empty = all entries of neg are negatives
  double sigma = 0.0;
  double t = 0.0;        // bias used for the scales
  Vector weights;        // B
  Matrix scales;         // B x N

  double mean_weight() const {
    if (weights.empty()) return 0.0;
    return std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(weights.size());
  }
};

namespace detail {

inline void check_shapes(std::span<const double> pos, const Matrix& neg, const NegativeMask& mask,
                         std::string_view who) {
  if (neg.rows() != pos.size() && !(neg.empty() && neg.rows() == 0)) {
    throw DomainError(std::string(who) + ": negative matrix has " + std::to_string(neg.rows()) +
                      " rows, expected " + std::to_string(pos.size()));
  }
  if (!mask.empty() && (mask.rows() != neg.rows() || mask.cols() != neg.cols())) {
    throw DomainError(std::string(who) + ": mask shape does not match negative matrix");
  }
}

inline void check_tau(double tau, std::string_view who) {
  if (!(tau > 0.0)) throw DomainError(std::string(who) + ": tau must be > 0");
}

inline std::size_t negative_count(const Matrix& neg) { return neg.rows() == 0 ? 0 : neg.cols(); }

// -log softmax(logits)[0]. When logits[0] is the largest this is
// log1p(sum_k exp(l_k - l_0)), which stays accurate as the loss approaches 0.
inline double anchor_nll(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  if (top == logits[0]) {
    double rest = 0.0;
    for (std::size_t k = 1; k < logits.size(); ++k) rest += std::exp(logits[k] - logits[0]);
    return std::log1p(rest);
  }
  return log_sum_exp(logits) - logits[0];
}

}  // namespace detail

/// Sum over queries of -w_q * log(h_p / (h_p + sum_n exp(a_qn * neg_qn / tau))), evaluated
/// with log-sum-exp. Empty weights/scales mean all ones.
inline double weighted_info_nce(std::span<const double> pos, const Matrix& neg,
                                std::span<const double> weights, const Matrix& scales, double tau,
                                const NegativeMask& mask = {}, Reduction reduction = Reduction::kSum) {
  detail::check_tau(tau, "weighted_info_nce");
  detail::check_shapes(pos, neg, mask, "weighted_info_nce");
  const std::size_t n_neg = detail::negative_count(neg);
  if (!weights.empty()) require(weights.size() == pos.size(), "weighted_info_nce: weight count mismatch");
  if (!scales.empty()) {
    require(scales.rows() == neg.rows() && scales.cols() == neg.cols(),
            "weighted_info_nce: scale shape mismatch");
  }
  Vector logits;
  logits.reserve(n_neg + 1);
  double total = 0.0;
  for (std::size_t q = 0; q < pos.size(); ++q) {
    logits.clear();
    const double anchor = pos[q] / tau;
    logits.push_back(anchor);
    for (std::size_t n = 0; n < n_neg; ++n) {
      if (!mask.allowed(q, n)) continue;
      const double a = scales.empty() ? 1.0 : scales(q, n);
      logits.push_back(a * neg(q, n) / tau);
    }
    const double w = weights.empty() ? 1.0 : weights[q];
    total += w * detail::anchor_nll(logits);
  }
  if (reduction == Reduction::kMean && !pos.empty()) total /= static_cast<double>(pos.size());
  return total;
}

/// Vanilla InfoNCE over in-batch similarities.
inline double info_nce(std::span<const double> pos, const Matrix& neg, double tau,
                       const NegativeMask& mask = {}, Reduction reduction = Reduction::kSum) {
  return weighted_info_nce(pos, neg, {}, Matrix{}, tau, mask, reduction);
}

/// sigma = mean(pos) - beta.
inline double batch_threshold(std::span<const double> pos, double beta) {
  if (pos.empty()) throw DomainError("batch_threshold: empty batch");
  return std::accumulate(pos.begin(), pos.end(), 0.0) / static_cast<double>(pos.size()) - beta;
}

/// w_q = 1 above the threshold, pos_q / sigma below it, clamped to [0, 1].
/// A non-positive sigma leaves the ratio undefined, so every weight is 1.
inline Vector positive_weights(std::span<const double> pos, double sigma) {
  Vector w(pos.size(), 1.0);
  if (sigma <= 0.0) return w;
  for (std::size_t q = 0; q < pos.size(); ++q) {
    if (pos[q] < sigma) w[q] = std::clamp(pos[q] / sigma, 0.0, 1.0);
  }
  return w;
}

/// a_n = 1 when the positive is below threshold or the negative is easier than
/// the positive; otherwise t + pos_q. Note that t + pos_q < 1 shrinks a hard
/// negative's logit, which happens early in training while t is small.
inline Vector negative_scales(double pos_q, std::span<const double> neg_q, double sigma, double t) {
  Vector a(neg_q.size(), 1.0);
  if (pos_q < sigma) return a;
  for (std::size_t n = 0; n < neg_q.size(); ++n) {
    if (!(neg_q[n] < pos_q)) a[n] = t + pos_q;
  }
  return a;
}

/// Fills weights and scales of `sims` for the given mode. InfoNCE mode uses
/// unit coefficients everywhere.
inline void assign_coefficients(BatchSimilarities& sims, LossMode mode) {
  const std::size_t b = sims.pos.size();
  const std::size_t n_neg = detail::negative_count(sims.neg);
  sims.weights.assign(b, 1.0);
  sims.scales = Matrix(b, n_neg, 1.0);
  if (mode == LossMode::kInfoNce) return;
  sims.weights = positive_weights(sims.pos, sims.sigma);
  for (std::size_t q = 0; q < b; ++q) {
    const auto row = negative_scales(sims.pos[q], sims.neg.row(q), sims.sigma, sims.t);
    std::copy(row.begin(), row.end(), sims.scales.row(q).begin());
  }
}

struct LossValue {
  double loss = 0.0;
  BatchSimilarities sims;
};

/// Progressive InfoNCE: positive weights w_q and negative scales a_n derived
/// from the given sigma and bias t. The coefficients are returned for audit.
inline LossValue progressive_loss(std::span<const double> pos, const Matrix& neg, double sigma,
                                  double t, double tau, const NegativeMask& mask = {},
                                  Reduction reduction = Reduction::kSum) {
  detail::check_tau(tau, "progressive_loss");
  detail::check_shapes(pos, neg, mask, "progressive_loss");
  LossValue out;
  out.sims.pos.assign(pos.begin(), pos.end());
  out.sims.neg = neg.rows() == 0 ? Matrix(pos.size(), 0) : neg;
  out.sims.mask = mask;
  out.sims.sigma = sigma;
  out.sims.t = t;
  assign_coefficients(out.sims, LossMode::kProgressive);
  out.loss = weighted_info_nce(out.sims.pos, out.sims.neg, out.sims.weights, out.sims.scales, tau,
                               mask, reduction);
  return out;
}

/// Value-style Eq. t <- alpha * mean(pos) + (1 - alpha) * t.
inline MomentumState update_momentum(const MomentumState& state, std::span<const double> pos,
                                     double alpha) {
  if (pos.empty()) throw DomainError("update_momentum: empty batch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("update_momentum: alpha outside [0, 1]");
  const double mean = std::accumulate(pos.begin(), pos.end(), 0.0) / static_cast<double>(pos.size());
  return {alpha * mean + (1.0 - alpha) * state.t, state.step + 1};
}

struct LossOptions {
  HyperParams hyper;
  LossMode mode = LossMode::kProgressive;
  Reduction reduction = Reduction::kSum;
};

/// Loss plus its gradient with respect to each similarity, with w, a, sigma
/// and t held constant.
struct SimilarityGradients {
  double loss = 0.0;
  Vector d_pos;  // B
  Matrix d_neg;  // B x N, zero where masked
};

inline SimilarityGradients similarity_gradients(const BatchSimilarities& sims, double tau,
                                                Reduction reduction) {
  detail::check_tau(tau, "similarity_gradients");
  const std::size_t b = sims.pos.size();
  const std::size_t n_neg = detail::negative_count(sims.neg);
  SimilarityGradients g;
  g.d_pos.assign(b, 0.0);
  g.d_neg = Matrix(b, n_neg, 0.0);
  const double scale = reduction == Reduction::kMean && b > 0 ? 1.0 / static_cast<double>(b) : 1.0;
  Vector logits;
  for (std::size_t q = 0; q < b; ++q) {
    logits.clear();
    logits.push_back(sims.pos[q] / tau);
    for (std::size_t n = 0; n < n_neg; ++n) {
      if (sims.mask.allowed(q, n)) logits.push_back(sims.scales(q, n) * sims.neg(q, n) / tau);
    }
    const double lse = log_sum_exp(logits);
    const double w = sims.weights[q] * scale;
    g.loss += w * detail::anchor_nll(logits);
    // d/d pos = -(1 - p_0) / tau, with 1 - p_0 summed over the negatives.
    double rest = 0.0;
    std::size_t k = 1;
    for (std::size_t n = 0; n < n_neg; ++n) {
      if (!sims.mask.allowed(q, n)) continue;
      const double p = std::exp(logits[k++] - lse);
      rest += p;
      g.d_neg(q, n) = w * p * sims.scales(q, n) / tau;
    }
    g.d_pos[q] = -w * rest / tau;
  }
  return g;
}

struct LossGradients {
  double loss = 0.0;
  BatchSimilarities sims;
  Matrix grad_queries;    // B x d
  Matrix grad_positives;  // B x d
  Matrix grad_negatives;  // M x d
};

namespace detail {

// d cos(a, b) / d a = b / (|a||b|) - cos(a, b) * a / |a|^2, accumulated with factor g.
inline void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b, double na,
                                   double nb, double cos_ab, double g, std::span<double> out) {
  const double inv = 1.0 / (na * nb);
  const double self = cos_ab / (na * na);
  for (std::size_t k = 0; k < a.size(); ++k) out[k] += g * (b[k] * inv - self * a[k]);
}

inline Vector row_norms(const Matrix& m, std::string_view who) {
  Vector n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    n[i] = l2_norm(m.row(i));
    if (n[i] == 0.0) {
      throw DomainError("loss_gradients: " + std::string(who) + " row " + std::to_string(i) +
                        " has zero norm");
    }
  }
  return n;
}

}  // namespace detail

/// Analytic gradients of the (progressive or vanilla) contrastive loss with
/// respect to query, positive and candidate-negative embeddings. Negatives are
/// a shared candidate pool of M rows; `mask` selects which candidates are
/// negatives for which query. Coefficients are computed from the current
/// similarities with the supplied sigma and t, then treated as constants.
inline LossGradients loss_gradients(const Matrix& queries, const Matrix& positives,
                                    const Matrix& negatives, double sigma, double t,
                                    const LossOptions& options, const NegativeMask& mask = {}) {
  options.hyper.validate();
  require(queries.rows() == positives.rows(), "loss_gradients: query/positive count mismatch");
  require(queries.cols() == positives.cols(), "loss_gradients: query/positive dimension mismatch");
  require(negatives.rows() == 0 || negatives.cols() == queries.cols(),
          "loss_gradients: negative dimension mismatch");
  if (!mask.empty()) {
    require(mask.rows() == queries.rows() && mask.cols() == negatives.rows(),
            "loss_gradients: mask shape mismatch");
  }
  const std::size_t b = queries.rows();
  const std::size_t m = negatives.rows();
  const std::size_t d = queries.cols();
  const Vector qn = detail::row_norms(queries, "query");
  const Vector pn = detail::row_norms(positives, "positive");
  const Vector nn = detail::row_norms(negatives, "negative");

  LossGradients out;
  BatchSimilarities& s = out.sims;
  s.pos.resize(b);
  for (std::size_t q = 0; q < b; ++q) {
    s.pos[q] = dot(queries.row(q), positives.row(q)) / (qn[q] * pn[q]);
  }
  s.neg = Matrix(b, m);
  for (std::size_t q = 0; q < b; ++q) {
    for (std::size_t j = 0; j < m; ++j) {
      s.neg(q, j) = dot(queries.row(q), negatives.row(j)) / (qn[q] * nn[j]);
    }
  }
  s.mask = mask;
  s.sigma = sigma;
  s.t = t;
  assign_coefficients(s, options.mode);

  const SimilarityGradients g = similarity_gradients(s, options.hyper.tau, options.reduction);
  out.loss = g.loss;
  out.grad_queries = Matrix(b, d);
  out.grad_positives = Matrix(b, d);
  out.grad_negatives = Matrix(m, d);
  for (std::size_t q = 0; q < b; ++q) {
    if (g.d_pos[q] != 0.0) {
      detail::accumulate_cosine_grad(queries.row(q), positives.row(q), qn[q], pn[q], s.pos[q],
                                     g.d_pos[q], out.grad_queries.row(q));
      detail::accumulate_cosine_grad(positives.row(q), queries.row(q), pn[q], qn[q], s.pos[q],
                                     g.d_pos[q], out.grad_positives.row(q));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double gj = g.d_neg(q, j);
      if (gj == 0.0) continue;
      detail::accumulate_cosine_grad(queries.row(q), negatives.row(j), qn[q], nn[j], s.neg(q, j), gj,
                                     out.grad_queries.row(q));
      detail::accumulate_cosine_grad(negatives.row(j), queries.row(q), nn[j], qn[q], s.neg(q, j), gj,
                                     out.grad_negatives.row(j));
    }
  }
  return out;
}

}  // namespace peg
