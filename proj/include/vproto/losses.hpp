#ifndef VPROTO_LOSSES_HPP
#define VPROTO_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/types.hpp"

namespace vproto {

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

/// Loss with gradients for two parameter blocks (image and text embeddings).
struct PairLossValue {
  double value = 0.0;
  Matrix grad_v;
  Matrix grad_t;
};

namespace detail {

/// Symmetric InfoNCE on a square score matrix (already divided by nothing;
/// tau applied here). Returns the two summed cross-entropy terms and
/// dL/dscores, both unscaled by any batch normalization.
struct InfoNceParts {
  double value = 0.0;
  Matrix dscores;
};

inline InfoNceParts symmetric_info_nce(const Matrix& scores, double tau) {
  check_temperature(tau);
  const std::size_t b = scores.rows();
  InfoNceParts out{0.0, Matrix(b, b)};
  std::vector<double> buf(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto lp = log_softmax(scores.row(i), tau);
    out.value -= lp[i];
    for (std::size_t j = 0; j < b; ++j) out.dscores(i, j) += std::exp(lp[j]) / tau;
    out.dscores(i, i) -= 1.0 / tau;
  }
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) buf[j] = scores(j, i);
    const auto lp = log_softmax(buf, tau);
    out.value -= lp[i];
    for (std::size_t j = 0; j < b; ++j) out.dscores(j, i) += std::exp(lp[j]) / tau;
    out.dscores(i, i) -= 1.0 / tau;
  }
  return out;
}

}  // namespace detail

/// Symmetric image/text contrastive loss summed over the batch:
///   sum_i -log softmax_j(v_i.t_j / tau)[i] - log softmax_j(t_i.v_j / tau)[i]
inline PairLossValue clip_contrastive_loss(const EmbeddingMatrix& v, const EmbeddingMatrix& t, double tau) {
  require(v.same_shape(t), ErrorCode::DimensionMismatch, "clip_contrastive_loss: v and t shapes differ");
  require(v.rows() >= 2, ErrorCode::DimensionMismatch, "clip_contrastive_loss needs B >= 2");
  check_temperature(tau);
  const Matrix scores = matmul_bt(v, t);
  const auto parts = detail::symmetric_info_nce(scores, tau);
  return {parts.value, matmul(parts.dscores, t), matmul_at(parts.dscores, v)};
}

/// Mean pixel cross entropy of softmax(<x, w_n> / tau) against integer labels.
inline LossValue pixel_ce_loss(std::span<const DenseScene> scenes, std::span<const LabelGrid> masks,
                               const PrototypeSet& w, double tau_i, bool with_grad = true) {
  check_temperature(tau_i);
  require(scenes.size() == masks.size(), ErrorCode::DimensionMismatch, "one mask per scene");
  const std::size_t k = w.count();
  LossValue out{0.0, with_grad ? Matrix(w.dim(), k) : Matrix()};
  std::size_t total = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& scene = scenes[s];
    require(masks[s].size() == scene.pixels(), ErrorCode::DimensionMismatch, "mask size vs scene");
    const Matrix logits = prototype_logits(scene.features, w);
    Matrix g(scene.pixels(), k);
    for (std::size_t p = 0; p < scene.pixels(); ++p) {
      const int y = masks[s].ids[p];
      require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorCode::LabelOutOfRange,
              "label " + std::to_string(y) + " at pixel " + std::to_string(p) + " with " + std::to_string(k) +
                  " classes");
      const auto lp = log_softmax(logits.row(p), tau_i);
      out.value -= lp[static_cast<std::size_t>(y)];
      if (with_grad) {
        for (std::size_t n = 0; n < k; ++n) g(p, n) = std::exp(lp[n]) / tau_i;
        g(p, static_cast<std::size_t>(y)) -= 1.0 / tau_i;
      }
    }
    if (with_grad) out.grad += matmul_at(scene.features, g);
    total += scene.pixels();
  }
  require(total > 0, ErrorCode::InsufficientData, "no pixels");
  const double inv = 1.0 / static_cast<double>(total);
  out.value *= inv;
  if (with_grad) out.grad *= inv;
  return out;
}

inline LossValue pixel_ce_loss(const DenseScene& scene, const LabelGrid& mask, const PrototypeSet& w, double tau_i) {
  return pixel_ce_loss(std::span<const DenseScene>(&scene, 1), std::span<const LabelGrid>(&mask, 1), w, tau_i);
}

enum class KlMode { Instance, Class };

/// Teacher distributions softmax(<x, z_n> / tau_T), one P x K matrix per scene.
struct Teacher {
  std::vector<Matrix> probs;
  double mean_entropy = 0.0;
  std::size_t pixels = 0;
};

inline Teacher make_teacher(std::span<const DenseScene> scenes, const PrototypeSet& z, double tau_t) {
  check_temperature(tau_t);
  Teacher t;
  double entropy = 0.0;
  for (const auto& scene : scenes) {
    Matrix probs = prototype_logits(scene.features, z);
    for (std::size_t p = 0; p < scene.pixels(); ++p) {
      auto row = probs.row(p);
      const auto lp = log_softmax(row, tau_t);
      for (std::size_t n = 0; n < row.size(); ++n) {
        row[n] = std::exp(lp[n]);
        entropy -= row[n] * lp[n];
      }
    }
    t.pixels += scene.pixels();
    t.probs.push_back(std::move(probs));
  }
  require(t.pixels > 0, ErrorCode::InsufficientData, "no pixels");
  t.mean_entropy = entropy / static_cast<double>(t.pixels);
  return t;
}

struct KlLossValue {
  double value = 0.0;          // mean KL(P' || P)
  double cross_entropy = 0.0;  // mean -sum P' log P, the optimized quantity
  double teacher_entropy = 0.0;
  Matrix grad;                 // gradient of the mean KL wrt W

  LossValue as_loss() const { return {value, grad}; }
};

/// KL(P' || P) averaged over pixels, teacher fixed. In Instance mode the
/// student is softmax(<x, w_n> / tau_I); in Class mode each pixel is anchored
/// at its teacher-argmax class m and the student is softmax(<w_m, w_n> / tau_I).
inline KlLossValue kl_from_teacher(std::span<const DenseScene> scenes, const Teacher& teacher, const PrototypeSet& w,
                                   double tau_i, KlMode mode = KlMode::Instance, bool with_grad = true) {
  check_temperature(tau_i);
  require(teacher.probs.size() == scenes.size(), ErrorCode::DimensionMismatch, "teacher vs scenes");
  const std::size_t k = w.count();
  KlLossValue out;
  out.teacher_entropy = teacher.mean_entropy;
  if (with_grad) out.grad = Matrix(w.dim(), k);
  const double inv = 1.0 / static_cast<double>(teacher.pixels);

  if (mode == KlMode::Instance) {
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& tp = teacher.probs[s];
      require(tp.cols() == k && tp.rows() == scenes[s].pixels(), ErrorCode::DimensionMismatch, "teacher shape");
      const Matrix logits = prototype_logits(scenes[s].features, w);
      Matrix g(scenes[s].pixels(), k);
      for (std::size_t p = 0; p < scenes[s].pixels(); ++p) {
        const auto lp = log_softmax(logits.row(p), tau_i);
        for (std::size_t n = 0; n < k; ++n) {
          out.cross_entropy -= tp(p, n) * lp[n];
          if (with_grad) g(p, n) = (std::exp(lp[n]) - tp(p, n)) / tau_i;
        }
      }
      if (with_grad) out.grad += matmul_at(scenes[s].features, g);
    }
    out.cross_entropy *= inv;
    if (with_grad) out.grad *= inv;
  } else {
    // Group teacher mass by anchor class: T(m, j) = sum over pixels anchored at m of P'_j.
    Matrix mass(k, k);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& tp = teacher.probs[s];
      require(tp.cols() == k, ErrorCode::DimensionMismatch, "teacher shape");
      for (std::size_t p = 0; p < tp.rows(); ++p) {
        const auto row = tp.row(p);
        const auto m = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        for (std::size_t j = 0; j < k; ++j) mass(m, j) += row[j];
      }
    }
    const Matrix wt = w.m.transposed();  // K x D, row n = w_n
    const Matrix gram = matmul_bt(wt, wt);
    Matrix gt(k, w.dim());
    for (std::size_t m = 0; m < k; ++m) {
      double count = 0.0;
      for (std::size_t j = 0; j < k; ++j) count += mass(m, j);
      if (count == 0.0) continue;
      const auto lp = log_softmax(gram.row(m), tau_i);
      for (std::size_t j = 0; j < k; ++j) {
        out.cross_entropy -= mass(m, j) * lp[j];
        if (!with_grad) continue;
        const double gmj = (count * std::exp(lp[j]) - mass(m, j)) * inv / tau_i;
        for (std::size_t d = 0; d < w.dim(); ++d) {
          gt(m, d) += gmj * wt(j, d);
          gt(j, d) += gmj * wt(m, d);
        }
      }
    }
    out.cross_entropy *= inv;
    if (with_grad) out.grad = gt.transposed();
  }
  out.value = out.cross_entropy - out.teacher_entropy;
  return out;
}

inline KlLossValue kl_prototype_loss(std::span<const DenseScene> scenes, const PrototypeSet& z, const PrototypeSet& w,
                                     double tau_t, double tau_i, KlMode mode = KlMode::Instance) {
  require(z.m.same_shape(w.m), ErrorCode::DimensionMismatch, "kl_prototype_loss: Z and W shapes differ");
  return kl_from_teacher(scenes, make_teacher(scenes, z, tau_t), w, tau_i, mode);
}

inline KlLossValue kl_prototype_loss(const DenseScene& scene, const PrototypeSet& z, const PrototypeSet& w,
                                     double tau_t, double tau_i, KlMode mode = KlMode::Instance) {
  return kl_prototype_loss(std::span<const DenseScene>(&scene, 1), z, w, tau_t, tau_i, mode);
}

/// Regional semantic contrast between B region embeddings and their B paired
/// prototypes (rows of w_batch). S = cosine(p, w_batch); the loss is the
/// symmetric InfoNCE over S / tau averaged with 1 / (2B). Gradient wrt p.
inline LossValue rsc_loss(const Matrix& p, const Matrix& w_batch, double tau) {
  require(p.same_shape(w_batch), ErrorCode::DimensionMismatch, "rsc_loss: p and w_batch shapes differ");
  require(p.rows() >= 1, ErrorCode::DimensionMismatch, "rsc_loss needs B >= 1");
  check_temperature(tau);
  const std::size_t b = p.rows();
  const Matrix p_hat = l2_normalize_rows(p);
  const Matrix w_hat = l2_normalize_rows(w_batch);
  const Matrix sim = matmul_bt(p_hat, w_hat);
  auto parts = detail::symmetric_info_nce(sim, tau);
  const double scale = 1.0 / (2.0 * static_cast<double>(b));
  LossValue out{parts.value * scale, Matrix(b, p.cols())};
  // dS_ij/dp_i = (w_hat_j - S_ij p_hat_i) / ||p_i||
  for (std::size_t i = 0; i < b; ++i) {
    const double inv_norm = 1.0 / norm2(p.row(i));
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < b; ++j) {
      const double c = parts.dscores(i, j) * scale * inv_norm;
      if (c == 0.0) continue;
      for (std::size_t d = 0; d < p.cols(); ++d) g[d] += c * (w_hat(j, d) - sim(i, j) * p_hat(i, d));
    }
  }
  return out;
}

/// lambda_ce * ce + lambda_rsc * rsc. Gradients of equal shape are summed;
/// gradients of disjoint parameter blocks with equal width are stacked (ce rows first).
inline LossValue combined_loss(const LossValue& ce, const LossValue& rsc, double lambda_ce, double lambda_rsc) {
  LossValue out;
  out.value = lambda_ce * ce.value + lambda_rsc * rsc.value;
  if (ce.grad.same_shape(rsc.grad)) {
    out.grad = ce.grad * lambda_ce + rsc.grad * lambda_rsc;
    return out;
  }
  require(ce.grad.cols() == rsc.grad.cols(), ErrorCode::DimensionMismatch, "combined_loss: incompatible gradients");
  out.grad = Matrix(ce.grad.rows() + rsc.grad.rows(), ce.grad.cols());
  for (std::size_t r = 0; r < ce.grad.rows(); ++r)
    for (std::size_t c = 0; c < ce.grad.cols(); ++c) out.grad(r, c) = lambda_ce * ce.grad(r, c);
  for (std::size_t r = 0; r < rsc.grad.rows(); ++r)
    for (std::size_t c = 0; c < rsc.grad.cols(); ++c) out.grad(ce.grad.rows() + r, c) = lambda_rsc * rsc.grad(r, c);
  return out;
}

}  // namespace vproto

#endif  // VPROTO_LOSSES_HPP
