#ifndef VPROTO_CORE_MATH_HPP
#define VPROTO_CORE_MATH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vproto/error.hpp"
#include "vproto/matrix.hpp"
#include "vproto/rng.hpp"

namespace vproto {

inline constexpr double kZeroRowTol = 1e-12;
inline constexpr double kLogFloor = 1e-300;

/// ln(max(x, 1e-300)).
inline double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

inline Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = norm2(row);
    require(n > kZeroRowTol, ErrorCode::ZeroRow, "row " + std::to_string(r) + " has norm " + std::to_string(n));
    for (double& v : row) v /= n;
  }
  return out;
}

inline std::vector<double> normalized(std::span<const double> v) {
  const double n = norm2(v);
  require(n > kZeroRowTol, ErrorCode::ZeroRow, "vector has norm " + std::to_string(n));
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline void check_temperature(double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::InvalidTemperature,
          "temperature must be positive, got " + std::to_string(tau));
}

/// Writes softmax(logits / tau) into out (which may alias logits).
inline void softmax_into(std::span<const double> logits, double tau, std::span<double> out) {
  check_temperature(tau);
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

inline std::vector<double> softmax(std::span<const double> logits, double tau = 1.0) {
  std::vector<double> out(logits.size());
  softmax_into(logits, tau, out);
  return out;
}

inline std::vector<double> log_softmax(std::span<const double> logits, double tau = 1.0) {
  check_temperature(tau);
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (logits[i] - mx) / tau;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

inline Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          "cosine_similarity_matrix: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + " columns");
  return matmul_bt(l2_normalize_rows(a), l2_normalize_rows(b));
}

/// Orthonormal basis of the row space of m (modified Gram-Schmidt, two passes
/// per row). Rows whose residual norm is <= tol are treated as dependent.
inline Matrix orthonormal_basis(const Matrix& m, double tol = 1e-9) {
  std::vector<std::vector<double>> basis;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<double> v(m.row(r).begin(), m.row(r).end());
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) {
        const double c = dot(v, q);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= c * q[j];
      }
    }
    const double n = norm2(v);
    if (n <= tol) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  Matrix q(basis.size(), m.cols());
  for (std::size_t i = 0; i < basis.size(); ++i) std::copy(basis[i].begin(), basis[i].end(), q.row(i).begin());
  return q;
}

/// Central-difference gradient of f at x.
template <typename F>
std::vector<double> finite_diff_gradient(F&& f, std::span<const double> x, double h = 1e-6) {
  require(h > 0.0, ErrorCode::ConfigInvalid, "finite difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const double fp = f(std::span<const double>(probe));
    probe[j] = orig - h;
    const double fm = f(std::span<const double>(probe));
    probe[j] = orig;
    require(std::isfinite(fp) && std::isfinite(fm), ErrorCode::NonFiniteEvaluation,
            "non-finite evaluation at coordinate " + std::to_string(j));
    grad[j] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

inline std::vector<double> gaussian_sample(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.gaussian();
  return out;
}

inline Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, gaussian_sample(rng, rows * cols));
}

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  const double diff = std::sqrt(squared_distance(a, b));
  return diff / std::max({norm2(a), norm2(b), floor});
}

}  // namespace vproto

#endif  // VPROTO_CORE_MATH_HPP
