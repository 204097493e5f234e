#ifndef VPROTO_GAP_ANALYSIS_HPP
#define VPROTO_GAP_ANALYSIS_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/types.hpp"

namespace vproto {

struct SpanProjection {
  std::vector<double> in_span;
  std::vector<double> orth;
  double epsilon_hat = 0.0;
};

/// Splits a unit vector into its component inside span(basis rows) and the
/// orthogonal remainder. basis rows must be orthonormal.
inline SpanProjection project_onto_span(std::span<const double> z, const Matrix& basis) {
  require(basis.rows() == 0 || basis.cols() == z.size(), ErrorCode::DimensionMismatch, "basis dimension");
  const double n = norm2(z);
  require(std::abs(n - 1.0) <= 1e-6, ErrorCode::NotUnit, "projected vector has norm " + std::to_string(n));
  SpanProjection out;
  out.in_span.assign(z.size(), 0.0);
  for (std::size_t r = 0; r < basis.rows(); ++r) {
    const double c = dot(z, basis.row(r));
    for (std::size_t d = 0; d < z.size(); ++d) out.in_span[d] += c * basis(r, d);
  }
  out.orth.resize(z.size());
  for (std::size_t d = 0; d < z.size(); ++d) out.orth[d] = z[d] - out.in_span[d];
  out.epsilon_hat = dot(out.in_span, out.in_span);
  return out;
}

/// ||Z - W||_F^2.
inline double modality_gap(const PrototypeSet& z, const PrototypeSet& w) {
  require(z.m.same_shape(w.m), ErrorCode::DimensionMismatch, "modality_gap: prototype shapes differ");
  return frobenius_sq(z.m - w.m);
}

struct GapReport {
  double delta_gap = 0.0;          // ||Z - W||_F^2
  double orth_component_sq = 0.0;  // ||(I - P_V) Z||_F^2, the certified lower bound
  double alignment_residual = 0.0; // delta_gap - orth_component_sq
  std::vector<double> per_class_epsilon;
  std::optional<double> mean_pair_distance;
};

inline GapReport gap_report(const PrototypeSet& z, const PrototypeSet& w, const Matrix& vision_basis,
                            const EmbeddingMatrix* pair_v = nullptr, const EmbeddingMatrix* pair_t = nullptr) {
  GapReport r;
  r.delta_gap = modality_gap(z, w);
  for (std::size_t n = 0; n < z.count(); ++n) {
    const auto proj = project_onto_span(z.column(n), vision_basis);
    r.orth_component_sq += dot(proj.orth, proj.orth);
    r.per_class_epsilon.push_back(proj.epsilon_hat);
  }
  r.alignment_residual = r.delta_gap - r.orth_component_sq;
  if (pair_v != nullptr && pair_t != nullptr) {
    require(pair_v->same_shape(*pair_t) && pair_v->rows() > 0, ErrorCode::DimensionMismatch,
            "matched pairs must have equal nonempty shapes");
    double total = 0.0;
    for (std::size_t i = 0; i < pair_v->rows(); ++i) total += squared_distance(pair_v->row(i), pair_t->row(i));
    r.mean_pair_distance = total / static_cast<double>(pair_v->rows());
  }
  return r;
}

/// Mean over classes with samples of ||w_n - mean of class-n features||^2.
inline double prototype_sample_gap(const PrototypeSet& w, const Matrix& features, std::span<const int> labels) {
  require(features.rows() == labels.size(), ErrorCode::DimensionMismatch, "one label per feature row");
  require(features.cols() == w.dim(), ErrorCode::DimensionMismatch, "feature dim vs prototype dim");
  Matrix sums(w.count(), w.dim());
  std::vector<std::size_t> counts(w.count(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    require(labels[i] >= 0 && c < w.count(), ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]));
    ++counts[c];
    for (std::size_t d = 0; d < w.dim(); ++d) sums(c, d) += features(i, d);
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < w.count(); ++c) {
    if (counts[c] == 0) continue;
    double g = 0.0;
    for (std::size_t d = 0; d < w.dim(); ++d) {
      const double diff = w.m(d, c) - sums(c, d) / static_cast<double>(counts[c]);
      g += diff * diff;
    }
    total += g;
    ++used;
  }
  require(used > 0, ErrorCode::InsufficientData, "no labelled samples");
  return total / static_cast<double>(used);
}

struct TemperatureMap {
  double tau_t = 0.0;
  bool degenerate = false;  // epsilon == 0 collapses the text temperature
};

/// tau_T = sqrt(eps) * tau_I.
inline TemperatureMap temperature_map(double epsilon, double tau_i) {
  require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::InvalidTemperature,
          "epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  check_temperature(tau_i);
  return {std::sqrt(epsilon) * tau_i, epsilon == 0.0};
}

/// Builds Z = sqrt(eps) W* + sqrt(1 - eps) U and returns the largest
/// |p - p'| between softmax(x^T W* / tau_I) and softmax(x^T Z / tau_T) with
/// tau_T = sqrt(eps) tau_I. The deviation is zero only when the orthogonal
/// logits x^T u_n do not depend on n (a shared U column).
inline double prop1_check(const EmbeddingMatrix& features, const PrototypeSet& w_star, double epsilon, double tau_i,
                          const PrototypeSet& orth_dirs) {
  require(w_star.m.same_shape(orth_dirs.m), ErrorCode::DimensionMismatch, "w_star vs orth_dirs shape");
  require(features.cols() == w_star.dim(), ErrorCode::DimensionMismatch, "feature dim");
  const auto tm = temperature_map(epsilon, tau_i);
  require(!tm.degenerate, ErrorCode::InvalidTemperature, "epsilon = 0 gives tau_T = 0");
  for (std::size_t n = 0; n < w_star.count(); ++n) {
    for (std::size_t m = 0; m < orth_dirs.count(); ++m) {
      double c = 0.0;
      for (std::size_t d = 0; d < w_star.dim(); ++d) c += w_star.m(d, n) * orth_dirs.m(d, m);
      require(std::abs(c) <= 1e-8, ErrorCode::SpanViolation,
              "w_star column " + std::to_string(n) + " has component " + std::to_string(c) + " along orth dir " +
                  std::to_string(m));
    }
  }
  PrototypeSet z(w_star.dim(), w_star.count());
  const double a = std::sqrt(epsilon);
  const double b = std::sqrt(1.0 - epsilon);
  for (std::size_t d = 0; d < z.dim(); ++d)
    for (std::size_t n = 0; n < z.count(); ++n) z.m(d, n) = a * w_star.m(d, n) + b * orth_dirs.m(d, n);

  const Matrix lw = prototype_logits(features, w_star);
  const Matrix lz = prototype_logits(features, z);
  double worst = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto p = softmax(lw.row(i), tau_i);
    const auto q = softmax(lz.row(i), tm.tau_t);
    for (std::size_t n = 0; n < p.size(); ++n) worst = std::max(worst, std::abs(p[n] - q[n]));
  }
  return worst;
}

struct SandwichReport {
  double lower = 0.0;
  double value = 0.0;
  double upper = 0.0;
  double kappa = 0.0;

  bool holds(double slack = 0.0) const { return lower <= value + slack && value <= upper + slack; }
};

/// Compares the pixel-anchored probability softmax_j(<x, w_j> / tau) with the
/// class-anchored one softmax_j(<w_m, w_j> / tau), scaled by exp(-+2 kappa / tau)
/// where kappa = 2 eta ||x - w_m||.
inline SandwichReport theorem2_sandwich(std::span<const double> x, const PrototypeSet& w, std::size_t anchor_class,
                                        std::size_t compare_class, double eta, double tau) {
  check_temperature(tau);
  require(x.size() == w.dim(), ErrorCode::DimensionMismatch, "x dimension");
  require(anchor_class < w.count() && compare_class < w.count(), ErrorCode::UnknownClass, "class id out of range");
  for (std::size_t n = 0; n < w.count(); ++n) {
    const double cn = w.column_norm(n);
    require(cn <= eta + 1e-9, ErrorCode::NormBoundViolated,
            "prototype " + std::to_string(n) + " has norm " + std::to_string(cn) + " > eta " + std::to_string(eta));
  }
  const auto wm = w.column(anchor_class);
  std::vector<double> by_example(w.count());
  std::vector<double> by_class(w.count());
  for (std::size_t j = 0; j < w.count(); ++j) {
    double a = 0.0;
    double b = 0.0;
    for (std::size_t d = 0; d < w.dim(); ++d) {
      a += x[d] * w.m(d, j);
      b += wm[d] * w.m(d, j);
    }
    by_example[j] = a;
    by_class[j] = b;
  }
  const auto p_example = softmax(by_example, tau);
  const auto p_class = softmax(by_class, tau);
  SandwichReport r;
  r.kappa = 2.0 * eta * std::sqrt(squared_distance(x, wm));
  r.value = p_example[compare_class];
  r.lower = std::exp(-2.0 * r.kappa / tau) * p_class[compare_class];
  r.upper = std::exp(2.0 * r.kappa / tau) * p_class[compare_class];
  return r;
}

}  // namespace vproto

#endif  // VPROTO_GAP_ANALYSIS_HPP
