#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "peg/error.hpp"
#include "peg/matrix.hpp"

namespace peg {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity clamped to [-1, 1]. Zero-norm inputs are rejected rather
/// than mapped to 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DomainError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0) throw DomainError("cosine: first vector has zero norm");
  if (nb == 0.0) throw DomainError("cosine: second vector has zero norm");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Entry (i, j) is cosine(queries.row(i), candidates.row(j)).
inline Matrix sim_matrix(const Matrix& queries, const Matrix& candidates) {
  if (queries.cols() != candidates.cols()) {
    throw DomainError("sim_matrix: dimension mismatch (" + std::to_string(queries.cols()) +
                      " vs " + std::to_string(candidates.cols()) + ")");
  }
  Vector qn(queries.rows()), cn(candidates.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    qn[i] = l2_norm(queries.row(i));
    if (qn[i] == 0.0) throw DomainError("sim_matrix: query row " + std::to_string(i) + " has zero norm");
  }
  for (std::size_t j = 0; j < candidates.rows(); ++j) {
    cn[j] = l2_norm(candidates.row(j));
    if (cn[j] == 0.0) {
      throw DomainError("sim_matrix: candidate row " + std::to_string(j) + " has zero norm");
    }
  }
  Matrix out(queries.rows(), candidates.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    for (std::size_t j = 0; j < candidates.rows(); ++j) {
      out(i, j) = std::clamp(dot(queries.row(i), candidates.row(j)) / (qn[i] * cn[j]), -1.0, 1.0);
    }
  }
  return out;
}

inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log_sum_exp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

inline void normalize_in_place(std::span<double> v) {
  const double n = l2_norm(v);
  if (n == 0.0) throw DomainError("normalize: zero-norm vector");
  for (double& x : v) x /= n;
}

}  // namespace peg
