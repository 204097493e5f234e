#ifndef VPROTO_VERIFY_HPP
#define VPROTO_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/gap_analysis.hpp"
#include "vproto/losses.hpp"
#include "vproto/proto_learn.hpp"
#include "vproto/rng.hpp"
#include "vproto/synthgen.hpp"

namespace vproto {

/// One named assertion with the measured value and the bound it was held to.
struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double bound = 0.0;
  std::size_t trials = 0;
  std::size_t violations = 0;
};

inline constexpr std::uint64_t kVerifySeed = 20240601;
inline constexpr double kGradTol = 1e-5;
inline constexpr double kFdStep = 1e-6;
inline constexpr std::size_t kGradPoints = 100;

namespace detail {

inline Matrix unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  return l2_normalize_rows(gaussian_matrix(rng, rows, cols));
}

inline DenseScene random_scene(Rng& rng, std::size_t s, std::size_t h, std::size_t dim, std::size_t k) {
  DenseScene sc;
  sc.s = s;
  sc.h = h;
  sc.features = unit_rows(rng, s * h, dim);
  sc.gt_mask = LabelGrid(s, h, 0);
  for (int& v : sc.gt_mask.ids) v = static_cast<int>(rng.below(static_cast<std::uint32_t>(k)));
  sc.class_set = present_foreground(sc.gt_mask);
  return sc;
}

/// Relative error of an analytic gradient against central differences of
/// f over the flattened matrix x.
template <typename F>
double fd_rel_error(F&& f, const Matrix& x, const Matrix& analytic) {
  const auto fd = finite_diff_gradient(
      [&](std::span<const double> probe) { return f(Matrix(x.rows(), x.cols(), {probe.begin(), probe.end()})); },
      x.data(), kFdStep);
  return relative_error(analytic.data(), fd);
}

inline Check summarize(std::string suite, std::string name, const std::vector<double>& errs, double bound) {
  Check c{std::move(suite), std::move(name), true, 0.0, bound, errs.size(), 0};
  for (double e : errs) {
    c.measured = std::max(c.measured, e);
    if (!(e < bound)) ++c.violations;
  }
  c.passed = c.violations == 0;
  return c;
}

}  // namespace detail

/// Analytic vs central-difference gradients for every differentiable loss.
inline std::vector<Check> verify_grads(std::size_t points = kGradPoints, std::uint64_t seed = kVerifySeed) {
  Rng rng(seed);
  std::vector<double> clip, ce, kl_inst, kl_cls, rsc;
  for (std::size_t i = 0; i < points; ++i) {
    const std::size_t dim = 3 + rng.below(4);
    const std::size_t k = 2 + rng.below(3);
    const std::size_t b = 2 + rng.below(4);
    const double tau = rng.uniform(0.1, 1.0);

    const Matrix v = detail::unit_rows(rng, b, dim);
    const Matrix t = detail::unit_rows(rng, b, dim);
    const auto cl = clip_contrastive_loss(v, t, tau);
    const double ev = detail::fd_rel_error([&](const Matrix& x) { return clip_contrastive_loss(x, t, tau).value; }, v,
                                           cl.grad_v);
    const double et = detail::fd_rel_error([&](const Matrix& x) { return clip_contrastive_loss(v, x, tau).value; }, t,
                                           cl.grad_t);
    clip.push_back(std::max(ev, et));

    std::vector<DenseScene> scenes{detail::random_scene(rng, 2, 3, dim, k), detail::random_scene(rng, 3, 2, dim, k)};
    std::vector<LabelGrid> masks{scenes[0].gt_mask, scenes[1].gt_mask};
    const PrototypeSet w(gaussian_matrix(rng, dim, k));
    const PrototypeSet z(gaussian_matrix(rng, dim, k));
    const double tau_t = rng.uniform(0.1, 1.0);
    ce.push_back(detail::fd_rel_error(
        [&](const Matrix& x) { return pixel_ce_loss(scenes, masks, PrototypeSet(x), tau, false).value; }, w.m,
        pixel_ce_loss(scenes, masks, w, tau).grad));

    const Teacher teacher = make_teacher(scenes, z, tau_t);
    for (auto [mode, out] : {std::pair{KlMode::Instance, &kl_inst}, std::pair{KlMode::Class, &kl_cls}}) {
      out->push_back(detail::fd_rel_error(
          [&](const Matrix& x) { return kl_from_teacher(scenes, teacher, PrototypeSet(x), tau, mode, false).value; },
          w.m, kl_from_teacher(scenes, teacher, w, tau, mode).grad));
    }

    const Matrix p = gaussian_matrix(rng, b, dim);
    const Matrix wb = gaussian_matrix(rng, b, dim);
    rsc.push_back(detail::fd_rel_error([&](const Matrix& x) { return rsc_loss(x, wb, tau).value; }, p,
                                       rsc_loss(p, wb, tau).grad));
  }
  return {detail::summarize("grads", "clip_contrastive_loss", clip, kGradTol),
          detail::summarize("grads", "pixel_ce_loss", ce, kGradTol),
          detail::summarize("grads", "kl_prototype_loss_instance", kl_inst, kGradTol),
          detail::summarize("grads", "kl_prototype_loss_class", kl_cls, kGradTol),
          detail::summarize("grads", "rsc_loss", rsc, kGradTol)};
}

/// Softmax agreement under tau_T = sqrt(eps) tau_I on the shared-orthogonal construction.
inline std::vector<Check> verify_prop1(std::uint64_t seed = kVerifySeed) {
  std::vector<Check> out;
  for (double eps : {0.25, 0.5, 0.9}) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.epsilon = eps;
    cfg.shared_orthogonal = true;
    cfg.samples_per_class = 16;
    const ConePair cone = make_cone_pair(cfg);
    const double dev = prop1_check(cone.vision, cone.vision_centers, eps, 0.03, cone.orth_dirs);
    Check c{"prop1", "eps=" + std::to_string(eps).substr(0, 4), dev < 1e-9, dev, 1e-9, cone.vision.rows(), 0};
    c.violations = c.passed ? 0 : 1;
    out.push_back(c);
  }
  return out;
}

/// Pythagorean lower bound ||z - w||^2 >= ||(I - P_V) z||^2 for w in the span.
inline std::vector<Check> verify_thm1(std::size_t instances = 1000, std::uint64_t seed = kVerifySeed) {
  Rng rng(seed + 1);
  constexpr double kSlack = 1e-10;
  Check c{"thm1", "per_class_lower_bound", true, 0.0, kSlack, 0, 0};
  double worst = -1e300;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t dim = 3 + rng.below(10);
    const std::size_t sub = 1 + rng.below(static_cast<std::uint32_t>(dim - 1));
    const std::size_t k = 1 + rng.below(6);
    const Matrix basis = orthonormal_basis(gaussian_matrix(rng, sub, dim));
    for (std::size_t n = 0; n < k; ++n) {
      const auto z = normalized(gaussian_sample(rng, dim));
      std::vector<double> w(dim, 0.0);
      const double scale = rng.uniform(0.0, 2.0);
      for (std::size_t r = 0; r < basis.rows(); ++r) {
        const double a = scale * rng.gaussian();
        for (std::size_t d = 0; d < dim; ++d) w[d] += a * basis(r, d);
      }
      const auto proj = project_onto_span(z, basis);
      const double bound = dot(proj.orth, proj.orth);
      const double gap = squared_distance(z, w);
      worst = std::max(worst, bound - gap);
      ++c.trials;
      if (gap < bound - kSlack) ++c.violations;
    }
  }
  c.measured = worst;
  c.passed = c.violations == 0;
  return {c};
}

/// exp(-2 kappa / tau) P_class <= P_example <= exp(2 kappa / tau) P_class, and equality at x = w_m.
inline std::vector<Check> verify_thm2(std::size_t draws = 10000, std::uint64_t seed = kVerifySeed) {
  Rng rng(seed + 2);
  constexpr double kSlack = 1e-12;
  Check bound{"thm2", "sandwich", true, 0.0, kSlack, 0, 0};
  Check equal{"thm2", "equality_at_anchor", true, 0.0, kSlack, 0, 0};
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t dim = 2 + rng.below(6);
    const std::size_t k = 2 + rng.below(5);
    const double eta = rng.uniform(0.2, 2.0);
    const double tau = rng.uniform(0.05, 1.0);
    PrototypeSet w(dim, k);
    for (std::size_t n = 0; n < k; ++n) {
      auto u = normalized(gaussian_sample(rng, dim));
      const double r = eta * rng.uniform();
      for (double& x : u) x *= r;
      w.set_column(n, u);
    }
    const auto x = normalized(gaussian_sample(rng, dim));
    const std::size_t m = rng.below(static_cast<std::uint32_t>(k));
    const std::size_t j = rng.below(static_cast<std::uint32_t>(k));
    const auto r = theorem2_sandwich(x, w, m, j, eta, tau);
    ++bound.trials;
    bound.measured = std::max({bound.measured, r.lower - r.value, r.value - r.upper});
    if (!r.holds(kSlack)) ++bound.violations;

    const auto at = theorem2_sandwich(w.column(m), w, m, j, eta, tau);
    const double dev = std::max(std::abs(at.value - at.lower), std::abs(at.upper - at.value));
    ++equal.trials;
    equal.measured = std::max(equal.measured, dev);
    if (!(dev <= kSlack)) ++equal.violations;
  }
  bound.passed = bound.violations == 0;
  equal.passed = equal.violations == 0;
  return {bound, equal};
}

/// Diagnostic sanity: identical prototypes give lhs = 0, a one-hot teacher that
/// matches the labels is flagged degenerate, and a trained pair yields mu_hat > 0.
inline std::vector<Check> verify_thm3(std::uint64_t seed = kVerifySeed) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_classes = 3;
  cfg.dim = 10;
  cfg.grid_s = 12;
  cfg.grid_h = 12;
  cfg.n_scenes = 2;
  cfg.samples_per_class = 8;
  const ConePair cone = make_cone_pair(cfg);
  const auto scenes = make_scenes(cfg, cone);
  std::vector<LabelGrid> gt;
  for (const auto& s : scenes) gt.push_back(s.gt_mask);

  LearnConfig lc;
  lc.t_w = 300;
  const Teacher teacher = make_teacher(scenes, cone.text_protos, lc.tau_t);
  const auto learned = learn_vision_prototypes(scenes, cone.text_protos, lc).final_w;
  const auto w_star = learn_supervised_prototypes(scenes, gt, initial_prototypes(scenes, cone.text_protos, lc), lc).final_w;

  std::vector<Check> out;
  const auto same = theorem3_diagnostic(w_star, w_star, scenes, teacher, gt, lc.tau_i, 1.0);
  out.push_back({"thm3", "identical_prototypes_lhs_zero", same.lhs == 0.0 && same.rhs == 0.0 && same.holds, same.lhs,
                 0.0, 1, 0});

  Teacher onehot = teacher;
  for (std::size_t s = 0; s < scenes.size(); ++s)
    for (std::size_t p = 0; p < scenes[s].pixels(); ++p)
      for (std::size_t n = 0; n < onehot.probs[s].cols(); ++n)
        onehot.probs[s](p, n) = gt[s].ids[p] == static_cast<int>(n) ? 1.0 : 0.0;
  const auto deg = theorem3_diagnostic(learned, w_star, scenes, onehot, gt, lc.tau_i, 1.0);
  out.push_back({"thm3", "teacher_equals_labels_degenerate", deg.degenerate && deg.rhs == 0.0, deg.rhs, 0.0, 1, 0});

  const auto trained = theorem3_diagnostic(learned, w_star, scenes, teacher, gt, lc.tau_i, 1.0);
  const double mu_hat = trained.mu_hat.value_or(0.0);
  out.push_back({"thm3", "trained_pair_mu_hat_positive", mu_hat > 0.0, mu_hat, 0.0, 1, 0});
  for (auto& c : out) c.violations = c.passed ? 0 : 1;
  return out;
}

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"grads", "prop1", "thm1", "thm2", "thm3", "all"};
  return names;
}

inline std::vector<Check> run_verify_suite(const std::string& suite, std::uint64_t seed = kVerifySeed) {
  std::vector<Check> out;
  auto add = [&](std::vector<Check> part) { out.insert(out.end(), part.begin(), part.end()); };
  const bool all = suite == "all";
  if (all || suite == "grads") add(verify_grads(kGradPoints, seed));
  if (all || suite == "prop1") add(verify_prop1(seed));
  if (all || suite == "thm1") add(verify_thm1(1000, seed));
  if (all || suite == "thm2") add(verify_thm2(10000, seed));
  if (all || suite == "thm3") add(verify_thm3(seed));
  require(!out.empty(), ErrorCode::ConfigParse, "unknown suite '" + suite + "'");
  return out;
}

}  // namespace vproto

#endif  // VPROTO_VERIFY_HPP
