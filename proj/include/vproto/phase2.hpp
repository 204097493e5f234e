#ifndef VPROTO_PHASE2_HPP
#define VPROTO_PHASE2_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/localization.hpp"
#include "vproto/losses.hpp"
#include "vproto/proto_learn.hpp"
#include "vproto/rng.hpp"
#include "vproto/types.hpp"

namespace vproto {

/// Per-pixel decoder: V = relu(X W + b), logits = V C.
struct Decoder {
  Matrix weight;      // D_in x D_out
  Matrix bias;        // 1 x D_out
  Matrix classifier;  // D_out x K (background in column 0)

  std::size_t d_in() const noexcept { return weight.rows(); }
  std::size_t d_out() const noexcept { return weight.cols(); }
  std::size_t n_classes() const noexcept { return classifier.cols(); }

  void validate() const {
    require(bias.rows() == 1 && bias.cols() == d_out() && classifier.rows() == d_out(), ErrorCode::DimensionMismatch,
            "decoder shapes are inconsistent");
    require(all_finite(weight) && all_finite(bias) && all_finite(classifier), ErrorCode::NonFiniteEvaluation,
            "decoder has non-finite parameters");
  }

  std::size_t parameter_count() const { return weight.size() + bias.size() + classifier.size(); }

  /// All parameters as one 1 x n row (weight, bias, classifier).
  Matrix pack() const {
    Matrix flat(1, parameter_count());
    auto out = flat.data().begin();
    for (const Matrix* m : {&weight, &bias, &classifier}) out = std::copy(m->data().begin(), m->data().end(), out);
    return flat;
  }

  void unpack(const Matrix& flat) {
    require(flat.size() == parameter_count(), ErrorCode::DimensionMismatch, "decoder parameter count");
    auto in = flat.data().begin();
    for (Matrix* m : {&weight, &bias, &classifier}) {
      std::copy(in, in + static_cast<std::ptrdiff_t>(m->size()), m->data().begin());
      in += static_cast<std::ptrdiff_t>(m->size());
    }
  }

  friend bool operator==(const Decoder&, const Decoder&) = default;
};

struct Phase2Config {
  double lr = 1.0;  // initial trial step for backtracking
  std::size_t iterations = 2000;
  double lambda_ce = 1.0;
  double lambda_rsc = 1.0;
  std::size_t batch = 6;
  std::uint64_t seed = 7;
  double tau_rsc = 0.1;
  double init_noise = 0.01;

  void validate() const {
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::ConfigInvalid, "lr must be > 0");
    require(iterations >= 1, ErrorCode::ConfigInvalid, "iterations must be >= 1");
    require(batch >= 1, ErrorCode::ConfigInvalid, "batch must be >= 1");
    require(lambda_ce >= 0.0 && lambda_rsc >= 0.0, ErrorCode::ConfigInvalid, "lambdas must be >= 0");
    check_temperature(tau_rsc);
  }
};

/// One RSC batch element: a scene and one of its present foreground classes.
struct RegionPair {
  std::size_t scene = 0;
  int cls = 0;
};

/// Picks B (scene, class) pairs, cycling over scenes and preferring classes
/// not yet in the batch so the diagonal pairing is unambiguous.
inline std::vector<RegionPair> sample_region_pairs(std::span<const DenseScene> scenes, std::size_t batch, Rng& rng) {
  std::vector<RegionPair> pairs;
  std::vector<int> used;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t s = i % scenes.size();
    const auto& present = scenes[s].class_set;
    if (present.empty()) continue;
    std::vector<int> fresh;
    for (int c : present)
      if (std::find(used.begin(), used.end(), c) == used.end()) fresh.push_back(c);
    const auto& pool = fresh.empty() ? present : fresh;
    const int cls = pool[rng.below(static_cast<std::uint32_t>(pool.size()))];
    used.push_back(cls);
    pairs.push_back({s, cls});
  }
  return pairs;
}

inline Decoder init_decoder(std::size_t d_in, const PrototypeSet& protos, Rng& rng, double noise) {
  Decoder dec{Matrix::identity(d_in), Matrix(1, d_in), protos.m};
  require(protos.dim() == d_in, ErrorCode::DimensionMismatch, "prototype dim must equal decoder width");
  for (double& v : dec.weight.data()) v += noise * rng.gaussian();
  return dec;
}

namespace detail {

struct Forward {
  Matrix hidden;  // pre-activation, P x D_out
  Matrix v;       // relu(hidden)
};

inline Forward decoder_forward(const Decoder& dec, const Matrix& x) {
  Forward f;
  f.hidden = matmul(x, dec.weight);
  for (std::size_t p = 0; p < f.hidden.rows(); ++p) {
    auto row = f.hidden.row(p);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += dec.bias(0, d);
  }
  f.v = f.hidden;
  for (double& val : f.v.data()) val = std::max(0.0, val);
  return f;
}

}  // namespace detail

/// Dense embeddings V for every pixel of a scene (P x D_out).
inline Matrix decoder_embeddings(const Decoder& dec, const DenseScene& scene) {
  require(scene.dim() == dec.d_in(), ErrorCode::DimensionMismatch, "scene dim vs decoder input");
  return detail::decoder_forward(dec, scene.features).v;
}

struct Phase2Loss {
  double total = 0.0;
  double ce = 0.0;
  double rsc = 0.0;
  std::size_t rsc_pairs = 0;  // pairs with a nonempty attention mask
  Matrix grad;                // packed like Decoder::pack
};

/// lambda_ce * mean pixel CE(logits, masks) + lambda_rsc * RSC over the region pairs.
inline Phase2Loss phase2_objective(const Decoder& dec, std::span<const DenseScene> scenes,
                                   std::span<const LabelGrid> masks, const PrototypeSet& protos,
                                   std::span<const RegionPair> pairs, const Phase2Config& cfg, bool with_grad) {
  require(scenes.size() == masks.size(), ErrorCode::DimensionMismatch, "one pseudo-mask per scene");
  require(protos.dim() == dec.d_out(), ErrorCode::DimensionMismatch, "prototype dim vs decoder width");
  const std::size_t k = dec.n_classes();
  std::size_t total_px = 0;
  for (const auto& s : scenes) total_px += s.pixels();
  require(total_px > 0, ErrorCode::InsufficientData, "no pixels");
  const double inv_px = 1.0 / static_cast<double>(total_px);

  std::vector<detail::Forward> fwd;
  fwd.reserve(scenes.size());
  for (const auto& s : scenes) {
    require(s.dim() == dec.d_in(), ErrorCode::DimensionMismatch, "scene dim vs decoder input");
    fwd.push_back(detail::decoder_forward(dec, s.features));
  }

  Phase2Loss out;
  std::vector<Matrix> dv;
  Matrix d_classifier(dec.d_out(), k);
  if (with_grad)
    for (const auto& f : fwd) dv.emplace_back(f.v.rows(), f.v.cols());

  if (cfg.lambda_ce > 0.0) {
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      require(masks[s].size() == scenes[s].pixels(), ErrorCode::DimensionMismatch, "mask size vs scene");
      const Matrix logits = matmul(fwd[s].v, dec.classifier);
      Matrix g(logits.rows(), k);
      for (std::size_t p = 0; p < logits.rows(); ++p) {
        const int y = masks[s].ids[p];
        require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorCode::LabelOutOfRange,
                "pseudo-mask label " + std::to_string(y));
        const auto lp = log_softmax(logits.row(p), 1.0);
        out.ce -= lp[static_cast<std::size_t>(y)];
        if (!with_grad) continue;
        for (std::size_t n = 0; n < k; ++n) g(p, n) = std::exp(lp[n]) * inv_px * cfg.lambda_ce;
        g(p, static_cast<std::size_t>(y)) -= inv_px * cfg.lambda_ce;
      }
      if (with_grad) {
        d_classifier += matmul_at(fwd[s].v, g);
        dv[s] += matmul_bt(g, dec.classifier);
      }
    }
    out.ce *= inv_px;
  }

  if (cfg.lambda_rsc > 0.0 && !pairs.empty()) {
    struct Pooled {
      RegionPair pair;
      std::vector<double> a;
      double mass = 0.0;
    };
    std::vector<Pooled> kept;
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<double>> wrows;
    for (const auto& pr : pairs) {
      const auto w = protos.column(static_cast<std::size_t>(pr.cls));
      const Matrix& v = fwd[pr.scene].v;
      Pooled pooled{pr, std::vector<double>(v.rows()), 0.0};
      for (std::size_t p = 0; p < v.rows(); ++p) {
        pooled.a[p] = std::max(0.0, dot(v.row(p), w));
        pooled.mass += pooled.a[p];
      }
      if (pooled.mass <= 1e-12) continue;
      rows.push_back(masked_average_pool(v, pooled.a));
      if (norm2(rows.back()) <= kZeroRowTol) {
        rows.pop_back();
        continue;
      }
      wrows.push_back(w);
      kept.push_back(std::move(pooled));
    }
    out.rsc_pairs = kept.size();
    if (!kept.empty()) {
      Matrix pm(kept.size(), dec.d_out());
      Matrix wm(kept.size(), dec.d_out());
      for (std::size_t i = 0; i < kept.size(); ++i) {
        std::copy(rows[i].begin(), rows[i].end(), pm.row(i).begin());
        std::copy(wrows[i].begin(), wrows[i].end(), wm.row(i).begin());
      }
      const LossValue rsc = rsc_loss(pm, wm, cfg.tau_rsc);
      out.rsc = rsc.value;
      if (with_grad) {
        // P = sum_k A_k V_k / M with A_k = relu(V_k . w), M = sum_k A_k.
        for (std::size_t i = 0; i < kept.size(); ++i) {
          const auto& kp = kept[i];
          const Matrix& v = fwd[kp.pair.scene].v;
          Matrix& g = dv[kp.pair.scene];
          std::vector<double> gp(dec.d_out());
          for (std::size_t d = 0; d < gp.size(); ++d) gp[d] = cfg.lambda_rsc * rsc.grad(i, d);
          const double gp_dot_p = dot(gp, pm.row(i));
          const double inv_m = 1.0 / kp.mass;
          for (std::size_t p = 0; p < v.rows(); ++p) {
            const auto vp = v.row(p);
            auto gr = g.row(p);
            const double ak = kp.a[p];
            if (ak > 0.0) {
              const double s = (dot(gp, vp) - gp_dot_p) * inv_m;
              for (std::size_t d = 0; d < gr.size(); ++d) gr[d] += ak * inv_m * gp[d] + s * wm(i, d);
            }
          }
        }
      }
    }
  }
  out.total = cfg.lambda_ce * out.ce + cfg.lambda_rsc * out.rsc;

  if (with_grad) {
    Matrix d_weight(dec.d_in(), dec.d_out());
    Matrix d_bias(1, dec.d_out());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      Matrix& g = dv[s];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (fwd[s].hidden.data()[i] <= 0.0) g.data()[i] = 0.0;
      d_weight += matmul_at(scenes[s].features, g);
      for (std::size_t p = 0; p < g.rows(); ++p)
        for (std::size_t d = 0; d < g.cols(); ++d) d_bias(0, d) += g(p, d);
    }
    Decoder packed{std::move(d_weight), std::move(d_bias), std::move(d_classifier)};
    out.grad = packed.pack();
  }
  return out;
}

struct Phase2Log {
  std::vector<double> total;
  std::vector<double> ce;
  std::vector<double> rsc;
  std::vector<double> alphas;
  std::vector<RegionPair> pairs;
  std::size_t iterations_run = 0;
  StopReason stopped_by = StopReason::MaxIter;
};

struct Phase2Result {
  Decoder decoder;
  Phase2Log log;
};

/// Full-batch gradient descent with backtracking on the combined objective.
/// W is frozen; the decoder starts at identity (plus seeded noise) with the
/// classifier initialized to W.
inline Phase2Result train_decoder(std::span<const DenseScene> scenes, std::span<const LabelGrid> pseudo_masks,
                                  const PrototypeSet& protos, const Phase2Config& cfg) {
  cfg.validate();
  require(!scenes.empty(), ErrorCode::InsufficientData, "no scenes");
  require(scenes.size() == pseudo_masks.size(), ErrorCode::DimensionMismatch, "one pseudo-mask per scene");
  Rng rng(cfg.seed);
  Phase2Result res{init_decoder(scenes.front().dim(), protos, rng, cfg.init_noise), {}};
  res.log.pairs = sample_region_pairs(scenes, cfg.batch, rng);

  Decoder& dec = res.decoder;
  auto eval = [&](const Decoder& d, bool g) {
    return phase2_objective(d, scenes, pseudo_masks, protos, res.log.pairs, cfg, g);
  };
  Phase2Loss cur = eval(dec, true);
  const double initial = cur.total;
  res.log.total.push_back(cur.total);
  res.log.ce.push_back(cur.ce);
  res.log.rsc.push_back(cur.rsc);
  double alpha_prev = cfg.lr;
  Decoder scratch = dec;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::optional<Phase2Loss> last;
    auto fn = [&](const Matrix& flat) {
      scratch.unpack(flat);
      last = eval(scratch, true);
      return last->total;
    };
    const Matrix flat = dec.pack();
    const auto ls = backtracking_step(flat, cur.grad, cur.total, fn, std::min(cfg.lr, 2.0 * alpha_prev), [](Matrix&) {});
    if (ls.stalled) {
      res.log.stopped_by = StopReason::Stalled;
      break;
    }
    alpha_prev = ls.alpha;
    dec.unpack(ls.w);
    cur = std::move(*last);
    res.log.total.push_back(cur.total);
    res.log.ce.push_back(cur.ce);
    res.log.rsc.push_back(cur.rsc);
    res.log.alphas.push_back(ls.alpha);
    ++res.log.iterations_run;
    require(std::isfinite(cur.total) && cur.total <= kDivergenceFactor * std::abs(initial) + 1e-12,
            ErrorCode::DivergenceDetected, "phase-2 loss " + std::to_string(cur.total));
  }
  dec.validate();
  return res;
}

/// Per-pixel argmax of the classifier logits, lowest class id on ties.
inline LabelGrid predict(const Decoder& dec, const DenseScene& scene) {
  require(scene.dim() == dec.d_in(), ErrorCode::DimensionMismatch, "scene dim vs decoder input");
  const Matrix logits = matmul(decoder_embeddings(dec, scene), dec.classifier);
  LabelGrid out(scene.s, scene.h, 0);
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    const auto row = logits.row(p);
    out.ids[p] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

struct CompactnessReport {
  double intra_class_mean_cos_dist = 0.0;
  double inter_class_mean_cos_dist = 0.0;
  double ratio = 0.0;
};

/// Mean pairwise cosine distance within and across classes. Computed from
/// per-class sums of unit vectors: sum_{i<j} cos = (||sum u||^2 - n) / 2.
inline CompactnessReport compactness_report(const Matrix& embeds, std::span<const int> labels) {
  require(embeds.rows() == labels.size(), ErrorCode::DimensionMismatch, "one label per embedding");
  int max_label = -1;
  for (int l : labels) {
    require(l >= 0, ErrorCode::LabelOutOfRange, "negative label");
    max_label = std::max(max_label, l);
  }
  const auto n_cls = static_cast<std::size_t>(max_label + 1);
  Matrix sums(n_cls, embeds.cols());
  Matrix all(1, embeds.cols());
  std::vector<double> counts(n_cls, 0.0);
  for (std::size_t i = 0; i < embeds.rows(); ++i) {
    const auto u = normalized(embeds.row(i));
    const auto c = static_cast<std::size_t>(labels[i]);
    counts[c] += 1.0;
    for (std::size_t d = 0; d < u.size(); ++d) {
      sums(c, d) += u[d];
      all(0, d) += u[d];
    }
  }
  std::size_t eligible = 0;
  double intra_cos = 0.0;
  double intra_pairs = 0.0;
  for (std::size_t c = 0; c < n_cls; ++c) {
    if (counts[c] >= 2.0) ++eligible;
    intra_cos += (dot(sums.row(c), sums.row(c)) - counts[c]) / 2.0;
    intra_pairs += counts[c] * (counts[c] - 1.0) / 2.0;
  }
  require(eligible >= 2, ErrorCode::InsufficientData, "need >= 2 classes with >= 2 members each");
  const double n = static_cast<double>(embeds.rows());
  const double all_cos = (dot(all.row(0), all.row(0)) - n) / 2.0;
  const double all_pairs = n * (n - 1.0) / 2.0;
  CompactnessReport r;
  r.intra_class_mean_cos_dist = 1.0 - intra_cos / intra_pairs;
  r.inter_class_mean_cos_dist = 1.0 - (all_cos - intra_cos) / (all_pairs - intra_pairs);
  r.ratio = r.intra_class_mean_cos_dist / r.inter_class_mean_cos_dist;
  return r;
}

/// Compactness of the decoder's pixel embeddings grouped by ground truth.
/// Pixels whose embedding is exactly zero (dead ReLU) carry no direction and are skipped.
inline CompactnessReport decoder_compactness(const Decoder& dec, std::span<const DenseScene> scenes) {
  std::vector<double> flat;
  std::vector<int> labels;
  for (const auto& s : scenes) {
    const Matrix v = decoder_embeddings(dec, s);
    for (std::size_t p = 0; p < v.rows(); ++p) {
      if (norm2(v.row(p)) <= kZeroRowTol) continue;
      flat.insert(flat.end(), v.row(p).begin(), v.row(p).end());
      labels.push_back(s.gt_mask.ids[p]);
    }
  }
  return compactness_report(Matrix(labels.size(), dec.d_out(), std::move(flat)), labels);
}

inline MiouResult decoder_miou(const Decoder& dec, std::span<const DenseScene> scenes) {
  MiouAccumulator acc(dec.n_classes());
  for (const auto& s : scenes) acc.add(predict(dec, s), s.gt_mask);
  return acc.result();
}

}  // namespace vproto

#endif  // VPROTO_PHASE2_HPP
