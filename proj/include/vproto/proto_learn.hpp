#ifndef VPROTO_PROTO_LEARN_HPP
#define VPROTO_PROTO_LEARN_HPP

#include <cfloat>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/gap_analysis.hpp"
#include "vproto/losses.hpp"
#include "vproto/rng.hpp"
#include "vproto/types.hpp"

namespace vproto {

enum class InitMode { WarmFromZProjected, RandomInSpan };
enum class StopReason { MaxIter, GradTol, Stalled };

inline const char* to_string(InitMode m) {
  return m == InitMode::WarmFromZProjected ? "warm_from_z_projected" : "random_in_span";
}
inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxIter: return "max_iter";
    case StopReason::GradTol: return "grad_tol";
    case StopReason::Stalled: return "stalled";
  }
  return "unknown";
}

struct LearnConfig {
  double alpha = 1.0;  // step size, or the initial trial step with line search
  std::size_t t_w = 3000;
  double tau_t = 0.01;
  double tau_i = 0.03;
  double eta = 1.0;
  InitMode init = InitMode::WarmFromZProjected;
  double grad_tol = 1e-7;
  bool line_search = true;
  KlMode mode = KlMode::Instance;
  std::uint64_t seed = 0;  // only used by RandomInSpan

  void validate() const {
    require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::ConfigInvalid, "alpha must be > 0");
    require(t_w >= 1, ErrorCode::ConfigInvalid, "t_w must be >= 1");
    require(eta > 0.0, ErrorCode::ConfigInvalid, "eta must be > 0");
    require(grad_tol >= 0.0, ErrorCode::ConfigInvalid, "grad_tol must be >= 0");
    check_temperature(tau_t);
    check_temperature(tau_i);
  }
};

struct Trajectory {
  std::vector<double> losses;      // losses[0] is the initial loss, one entry per update after that
  std::vector<double> grad_norms;  // projected-gradient norm at each visited iterate
  std::vector<double> alphas;      // accepted step per update
  PrototypeSet final_w;
  std::size_t iterations_run = 0;
  StopReason stopped_by = StopReason::MaxIter;

  double initial_loss() const { return losses.front(); }
  double final_loss() const { return losses.back(); }
};

/// Rescales every column with norm above eta back onto the eta-sphere.
inline void project_columns_to_ball(Matrix& w, double eta) {
  for (std::size_t n = 0; n < w.cols(); ++n) {
    double sq = 0.0;
    for (std::size_t d = 0; d < w.rows(); ++d) sq += w(d, n) * w(d, n);
    const double nrm = std::sqrt(sq);
    if (nrm <= eta) continue;
    const double s = eta / nrm;
    for (std::size_t d = 0; d < w.rows(); ++d) w(d, n) *= s;
  }
}

struct LineSearchResult {
  double alpha = 0.0;
  Matrix w;         // accepted iterate (unchanged when stalled)
  double value = 0.0;
  int halvings = 0;
  bool stalled = false;  // predicted and actual change both below roundoff; no move was made
};

inline constexpr double kArmijoC = 1e-4;
inline constexpr int kMaxHalvings = 40;

/// Armijo backtracking along the projection arc d(a) = P(w - a g) - w:
/// accept the first a = alpha0 / 2^k with f(w + d) <= f(w) + c <g, d>.
/// Without a projection this is f(w - a g) <= f(w) - c a ||g||^2.
template <typename LossFn, typename Project>
LineSearchResult backtracking_step(const Matrix& w, const Matrix& grad, double f_w, LossFn&& loss_fn, double alpha0,
                                   Project&& project) {
  require(alpha0 > 0.0, ErrorCode::ConfigInvalid, "alpha0 must be > 0");
  require(w.same_shape(grad), ErrorCode::DimensionMismatch, "line search gradient shape");
  double alpha = alpha0;
  for (int k = 0; k <= kMaxHalvings; ++k, alpha *= 0.5) {
    Matrix trial = w - grad * alpha;
    project(trial);
    double predicted = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) predicted += grad.data()[i] * (trial.data()[i] - w.data()[i]);
    predicted *= kArmijoC;
    const double roundoff = 64.0 * DBL_EPSILON * std::max(1.0, std::abs(f_w));
    const double f_trial = loss_fn(trial);
    if (std::abs(predicted) <= roundoff && std::isfinite(f_trial) && f_trial <= f_w + roundoff) {
      return {alpha0, w, f_w, k, true};
    }
    if (std::isfinite(f_trial) && f_trial <= f_w + predicted) return {alpha, std::move(trial), f_trial, k, false};
  }
  throw Error(ErrorCode::NoDescentDirection,
              "no Armijo decrease after " + std::to_string(kMaxHalvings) + " halvings from alpha0 " +
                  std::to_string(alpha0));
}

template <typename LossFn>
LineSearchResult backtracking_step(const Matrix& w, const Matrix& grad, LossFn&& loss_fn, double alpha0) {
  const double f_w = loss_fn(w);
  return backtracking_step(w, grad, f_w, loss_fn, alpha0, [](Matrix&) {});
}

/// Objective: value and (optionally) gradient of a loss in W.
using PrototypeObjective = std::function<LossValue(const PrototypeSet&, bool with_grad)>;

inline constexpr double kDivergenceFactor = 10.0;
inline constexpr std::size_t kDivergencePatience = 10;

/// Projected gradient descent on the eta-ball product set.
inline Trajectory projected_descent(const PrototypeObjective& objective, PrototypeSet w0, const LearnConfig& cfg) {
  cfg.validate();
  Trajectory tr;
  PrototypeSet w = std::move(w0);
  project_columns_to_ball(w.m, cfg.eta);
  LossValue cur = objective(w, true);
  const double initial = cur.value;
  tr.losses.push_back(initial);
  std::size_t over = 0;
  double alpha_prev = cfg.alpha;

  auto projected_grad_norm = [&](const LossValue& lv) {
    Matrix probe = w.m - lv.grad;
    project_columns_to_ball(probe, cfg.eta);
    return frobenius(w.m - probe);
  };

  for (std::size_t it = 0; it < cfg.t_w; ++it) {
    const double gnorm = projected_grad_norm(cur);
    tr.grad_norms.push_back(gnorm);
    if (gnorm <= cfg.grad_tol) {
      tr.stopped_by = StopReason::GradTol;
      break;
    }
    double accepted = cfg.alpha;
    if (cfg.line_search) {
      std::optional<LossValue> last;
      auto fn = [&](const Matrix& trial) {
        last = objective(PrototypeSet(trial), true);
        return last->value;
      };
      const double alpha0 = std::min(cfg.alpha, 2.0 * alpha_prev);
      auto ls = backtracking_step(w.m, cur.grad, cur.value, fn, alpha0,
                                  [&](Matrix& m) { project_columns_to_ball(m, cfg.eta); });
      if (ls.stalled) {
        tr.stopped_by = StopReason::Stalled;
        break;
      }
      accepted = ls.alpha;
      alpha_prev = ls.alpha;
      w.m = std::move(ls.w);
      cur = std::move(*last);
    } else {
      w.m -= cur.grad * cfg.alpha;
      project_columns_to_ball(w.m, cfg.eta);
      cur = objective(w, true);
    }
    tr.alphas.push_back(accepted);
    tr.losses.push_back(cur.value);
    ++tr.iterations_run;
    if (!std::isfinite(cur.value) || cur.value > kDivergenceFactor * std::abs(initial)) {
      if (++over >= kDivergencePatience || !std::isfinite(cur.value)) {
        throw Error(ErrorCode::DivergenceDetected,
                    "loss " + std::to_string(cur.value) + " exceeded 10x initial " + std::to_string(initial) +
                        " for " + std::to_string(over) + " consecutive iterations at alpha " +
                        std::to_string(accepted));
      }
    } else {
      over = 0;
    }
  }
  if (tr.grad_norms.size() == tr.iterations_run) tr.grad_norms.push_back(projected_grad_norm(cur));
  tr.final_w = std::move(w);
  return tr;
}

/// Orthonormal basis of the span of all pixel features.
inline Matrix feature_span_basis(std::span<const DenseScene> scenes, double tol = 1e-9) {
  std::size_t rows = 0;
  for (const auto& s : scenes) rows += s.pixels();
  require(rows > 0, ErrorCode::InsufficientData, "no pixels");
  Matrix all(rows, scenes.front().dim());
  std::size_t r = 0;
  for (const auto& s : scenes)
    for (std::size_t p = 0; p < s.pixels(); ++p, ++r) std::copy(s.features.row(p).begin(), s.features.row(p).end(), all.row(r).begin());
  return orthonormal_basis(all, tol);
}

/// Initial prototypes inside the feature span with column norm eta.
inline PrototypeSet initial_prototypes(std::span<const DenseScene> scenes, const PrototypeSet& z, const LearnConfig& cfg) {
  const Matrix basis = feature_span_basis(scenes);
  require(basis.rows() > 0, ErrorCode::InsufficientData, "feature span is empty");
  PrototypeSet w(z.dim(), z.count());
  Rng rng(cfg.seed);
  for (std::size_t n = 0; n < z.count(); ++n) {
    std::vector<double> v(z.dim(), 0.0);
    if (cfg.init == InitMode::WarmFromZProjected) {
      const auto zn = z.column(n);
      for (std::size_t r = 0; r < basis.rows(); ++r) {
        const double c = dot(zn, basis.row(r));
        for (std::size_t d = 0; d < v.size(); ++d) v[d] += c * basis(r, d);
      }
    }
    if (cfg.init == InitMode::RandomInSpan || norm2(v) <= kZeroRowTol) {
      const auto coeffs = gaussian_sample(rng, basis.rows());
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t r = 0; r < basis.rows(); ++r)
        for (std::size_t d = 0; d < v.size(); ++d) v[d] += coeffs[r] * basis(r, d);
    }
    auto u = normalized(v);
    for (double& x : u) x *= cfg.eta;
    w.set_column(n, u);
  }
  return w;
}

/// Learns vision prototypes W by projected gradient descent on
/// KL(softmax(<x, Z> / tau_T) || softmax(<x, W> / tau_I)) averaged over pixels.
inline Trajectory learn_vision_prototypes(std::span<const DenseScene> scenes, const PrototypeSet& z,
                                          const LearnConfig& cfg, std::optional<PrototypeSet> w_init = std::nullopt) {
  cfg.validate();
  const Teacher teacher = make_teacher(scenes, z, cfg.tau_t);
  PrototypeObjective obj = [&](const PrototypeSet& w, bool with_grad) {
    return kl_from_teacher(scenes, teacher, w, cfg.tau_i, cfg.mode, with_grad).as_loss();
  };
  PrototypeSet w0 = w_init ? std::move(*w_init) : initial_prototypes(scenes, z, cfg);
  return projected_descent(obj, std::move(w0), cfg);
}

/// Fully supervised counterpart: pixel cross entropy against label masks.
inline Trajectory learn_supervised_prototypes(std::span<const DenseScene> scenes, std::span<const LabelGrid> masks,
                                              const PrototypeSet& w0, const LearnConfig& cfg) {
  PrototypeObjective obj = [&](const PrototypeSet& w, bool with_grad) {
    return pixel_ce_loss(scenes, masks, w, cfg.tau_i, with_grad);
  };
  return projected_descent(obj, w0, cfg);
}

struct ConvexityReport {
  double lhs = 0.0;    // ||W' - W*||_F^2
  double inner = 0.0;  // <P' - Y, log P_W' - log P_W*>, averaged over pixels
  double rhs = 0.0;    // (2 / mu) * inner
  double mu = 0.0;
  bool holds = false;
  std::optional<double> mu_hat;  // largest mu with lhs <= rhs; empty when unbounded
  bool degenerate = false;       // Y equals P' at every pixel
};

inline ConvexityReport theorem3_diagnostic(const PrototypeSet& w_learned, const PrototypeSet& w_star,
                                          std::span<const DenseScene> scenes, const Teacher& teacher,
                                          std::span<const LabelGrid> labels, double tau_i, double mu) {
  require(w_learned.m.same_shape(w_star.m), ErrorCode::ShapeMismatch, "W' and W* shapes differ");
  require(scenes.size() == labels.size() && teacher.probs.size() == scenes.size(), ErrorCode::ShapeMismatch,
          "scenes, teacher and labels must align");
  require(mu > 0.0, ErrorCode::ConfigInvalid, "mu must be > 0");
  ConvexityReport r;
  r.mu = mu;
  r.lhs = frobenius_sq(w_learned.m - w_star.m);
  double inner = 0.0;
  double max_dev = 0.0;
  std::size_t total = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    require(labels[s].size() == scenes[s].pixels(), ErrorCode::ShapeMismatch, "label grid size");
    const Matrix la = prototype_logits(scenes[s].features, w_learned);
    const Matrix lb = prototype_logits(scenes[s].features, w_star);
    for (std::size_t p = 0; p < scenes[s].pixels(); ++p) {
      const auto lpa = log_softmax(la.row(p), tau_i);
      const auto lpb = log_softmax(lb.row(p), tau_i);
      for (std::size_t n = 0; n < w_star.count(); ++n) {
        const double y = labels[s].ids[p] == static_cast<int>(n) ? 1.0 : 0.0;
        const double diff = teacher.probs[s](p, n) - y;
        max_dev = std::max(max_dev, std::abs(diff));
        inner += diff * (lpa[n] - lpb[n]);
      }
    }
    total += scenes[s].pixels();
  }
  r.inner = inner / static_cast<double>(total);
  r.degenerate = max_dev <= 1e-12;
  if (r.degenerate) r.inner = 0.0;
  r.rhs = 2.0 / mu * r.inner;
  r.holds = r.lhs <= r.rhs;
  if (r.lhs > 0.0)
    r.mu_hat = std::max(0.0, 2.0 * r.inner / r.lhs);
  else if (r.inner < 0.0)
    r.mu_hat = 0.0;
  return r;
}

}  // namespace vproto

#endif  // VPROTO_PROTO_LEARN_HPP
