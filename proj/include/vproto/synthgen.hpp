#ifndef VPROTO_SYNTHGEN_HPP
#define VPROTO_SYNTHGEN_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/rng.hpp"
#include "vproto/types.hpp"

namespace vproto {

/// Parameters of the synthetic cone benchmark.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::size_t n_classes = 8;  // foreground classes; background is class 0
  std::size_t dim = 32;
  double epsilon = 0.6;
  double intra_class_std = 0.15;
  std::size_t samples_per_class = 64;
  std::size_t grid_s = 32;
  std::size_t grid_h = 32;
  double background_fraction = 0.5;
  std::size_t n_scenes = 4;
  bool shared_orthogonal = false;

  std::size_t total_classes() const noexcept { return n_classes + 1; }
  std::size_t span_dim() const noexcept { return std::min(n_classes + 4, dim - 2); }

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorCode::ConfigInvalid, field + ": " + why);
    };
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("epsilon", "must lie in [0, 1], got " + std::to_string(epsilon));
    if (n_classes < 1) fail("n_classes", "must be >= 1");
    if (dim < n_classes + 2) fail("dim", "must be >= n_classes + 2");
    if (!(intra_class_std >= 0.0) || !std::isfinite(intra_class_std)) fail("intra_class_std", "must be >= 0");
    if (samples_per_class < 1) fail("samples_per_class", "must be >= 1");
    if (grid_s < 1 || grid_h < 1) fail("grid", "grid_s and grid_h must be >= 1");
    if (!(background_fraction >= 0.0 && background_fraction < 1.0))
      fail("background_fraction", "must lie in [0, 1)");
    if (n_scenes < 1) fail("n_scenes", "must be >= 1");
  }
};

/// The committed benchmark every acceptance number refers to.
inline SynthConfig bench_v1() { return SynthConfig{}; }

/// Paired vision samples and text prototypes built by the
/// z = sqrt(eps) z^x + sqrt(1 - eps) z^perp construction.
struct ConePair {
  EmbeddingMatrix vision;       // unit rows, samples_per_class per class (background included)
  std::vector<int> labels;      // class id of each vision row
  PrototypeSet text_protos;     // Z, unit columns
  PrototypeSet vision_centers;  // z^x, unit columns inside the vision span
  PrototypeSet orth_dirs;       // z^perp, unit columns outside the vision span
  Matrix vision_basis;          // D' x D orthonormal rows spanning the vision space
  Matrix complement_basis;      // (D - D') x D orthonormal rows
  double epsilon = 0.0;
};

namespace detail {

inline std::vector<double> combine_rows(const Matrix& basis, std::span<const double> coeffs) {
  std::vector<double> out(basis.cols(), 0.0);
  for (std::size_t r = 0; r < basis.rows(); ++r)
    for (std::size_t d = 0; d < basis.cols(); ++d) out[d] += coeffs[r] * basis(r, d);
  return out;
}

inline std::vector<double> random_unit_in(const Matrix& basis, Rng& rng) {
  return normalized(combine_rows(basis, gaussian_sample(rng, basis.rows())));
}

/// normalize(center + std * g) with g a standard Gaussian inside the span.
/// The center is returned unchanged when std is zero (it is already unit).
inline std::vector<double> noisy_sample(std::span<const double> center, const Matrix& span_basis, double stddev,
                                        Rng& rng) {
  std::vector<double> v(center.begin(), center.end());
  if (stddev == 0.0) return v;
  const auto g = combine_rows(span_basis, gaussian_sample(rng, span_basis.rows()));
  for (std::size_t d = 0; d < v.size(); ++d) v[d] += stddev * g[d];
  return normalized(v);
}

inline constexpr std::size_t kCenterRetries = 1000;
inline constexpr double kMaxCenterCosine = 0.5;

}  // namespace detail

inline ConePair make_cone_pair(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t dim = cfg.dim;
  const std::size_t span = cfg.span_dim();
  const std::size_t k_total = cfg.total_classes();

  Matrix rotation;
  for (int attempt = 0; rotation.rows() != dim; ++attempt) {
    require(attempt < 16, ErrorCode::ConfigInvalid, "could not draw a full-rank rotation");
    rotation = orthonormal_basis(gaussian_matrix(rng, dim, dim));
  }
  ConePair cone;
  cone.epsilon = cfg.epsilon;
  cone.vision_basis = Matrix(span, dim);
  cone.complement_basis = Matrix(dim - span, dim);
  for (std::size_t r = 0; r < dim; ++r) {
    auto dst = r < span ? cone.vision_basis.row(r) : cone.complement_basis.row(r - span);
    std::copy(rotation.row(r).begin(), rotation.row(r).end(), dst.begin());
  }

  cone.vision_centers = PrototypeSet(dim, k_total);
  std::vector<std::vector<double>> centers;
  for (std::size_t k = 0; k < k_total; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < detail::kCenterRetries && !placed; ++attempt) {
      auto c = detail::random_unit_in(cone.vision_basis, rng);
      placed = std::all_of(centers.begin(), centers.end(),
                           [&](const auto& prev) { return dot(c, prev) < detail::kMaxCenterCosine; });
      if (placed) centers.push_back(std::move(c));
    }
    require(placed, ErrorCode::ConfigInvalid,
            "could not place class center " + std::to_string(k) + " with pairwise cosine < 0.5");
    cone.vision_centers.set_column(k, centers.back());
  }

  cone.orth_dirs = PrototypeSet(dim, k_total);
  if (cfg.shared_orthogonal) {
    const auto u = detail::random_unit_in(cone.complement_basis, rng);
    for (std::size_t k = 0; k < k_total; ++k) cone.orth_dirs.set_column(k, u);
  } else {
    Matrix raw(k_total, dim);
    for (std::size_t k = 0; k < k_total; ++k) {
      const auto u = detail::random_unit_in(cone.complement_basis, rng);
      std::copy(u.begin(), u.end(), raw.row(k).begin());
    }
    // Mutually orthogonal when the complement has room, otherwise just unit.
    const Matrix q = k_total <= dim - span ? orthonormal_basis(raw) : raw;
    const Matrix& use = q.rows() == k_total ? q : raw;
    for (std::size_t k = 0; k < k_total; ++k) cone.orth_dirs.set_column(k, use.row(k));
  }

  const double a = std::sqrt(cfg.epsilon);
  const double b = std::sqrt(1.0 - cfg.epsilon);
  cone.text_protos = PrototypeSet(dim, k_total);
  for (std::size_t k = 0; k < k_total; ++k)
    for (std::size_t d = 0; d < dim; ++d)
      cone.text_protos.m(d, k) = a * cone.vision_centers.m(d, k) + b * cone.orth_dirs.m(d, k);

  cone.vision = EmbeddingMatrix(k_total * cfg.samples_per_class, dim);
  cone.labels.reserve(cone.vision.rows());
  std::size_t row = 0;
  for (std::size_t k = 0; k < k_total; ++k) {
    const auto c = cone.vision_centers.column(k);
    for (std::size_t i = 0; i < cfg.samples_per_class; ++i, ++row) {
      const auto v = detail::noisy_sample(c, cone.vision_basis, cfg.intra_class_std, rng);
      std::copy(v.begin(), v.end(), cone.vision.row(row).begin());
      cone.labels.push_back(static_cast<int>(k));
    }
  }
  return cone;
}

namespace detail {
inline void check_compatible(const SynthConfig& cfg, const ConePair& cone) {
  require(cone.vision_centers.dim() == cfg.dim && cone.vision_centers.count() == cfg.total_classes(),
          ErrorCode::ConfigInvalid, "cone pair does not match config shape");
}
}  // namespace detail

/// Rectangular class blobs over background. Later blobs overwrite earlier ones.
inline DenseScene make_dense_scene(const SynthConfig& cfg, const ConePair& cone, Rng& rng) {
  cfg.validate();
  detail::check_compatible(cfg, cone);
  const std::size_t s = cfg.grid_s;
  const std::size_t h = cfg.grid_h;

  std::vector<int> pool;
  for (std::size_t c = 1; c <= cfg.n_classes; ++c) pool.push_back(static_cast<int>(c));
  const std::size_t n_blobs = std::min<std::size_t>(2 + rng.below(3), pool.size());

  DenseScene scene;
  scene.s = s;
  scene.h = h;
  scene.gt_mask = LabelGrid(s, h, 0);
  const double fg_area = (1.0 - cfg.background_fraction) * static_cast<double>(s * h);
  for (std::size_t b = 0; b < n_blobs; ++b) {
    const std::size_t pick = b + rng.below(static_cast<std::uint32_t>(pool.size() - b));
    std::swap(pool[b], pool[pick]);
    const int cls = pool[b];
    const double area = std::max(1.0, fg_area / static_cast<double>(n_blobs) * rng.uniform(0.7, 1.3));
    const double aspect = rng.uniform(0.5, 2.0);
    const auto rows = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area * aspect))), 1, s);
    const auto cols =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area / static_cast<double>(rows))), 1, h);
    const std::size_t r0 = rng.below(static_cast<std::uint32_t>(s - rows + 1));
    const std::size_t c0 = rng.below(static_cast<std::uint32_t>(h - cols + 1));
    for (std::size_t r = r0; r < r0 + rows; ++r)
      for (std::size_t c = c0; c < c0 + cols; ++c) scene.gt_mask.at(r, c) = cls;
  }
  scene.class_set = present_foreground(scene.gt_mask);

  scene.features = Matrix(s * h, cfg.dim);
  std::vector<std::vector<double>> centers(cfg.total_classes());
  for (std::size_t k = 0; k < centers.size(); ++k) centers[k] = cone.vision_centers.column(k);
  for (std::size_t p = 0; p < s * h; ++p) {
    const auto v = detail::noisy_sample(centers[static_cast<std::size_t>(scene.gt_mask.ids[p])], cone.vision_basis,
                                        cfg.intra_class_std, rng);
    std::copy(v.begin(), v.end(), scene.features.row(p).begin());
  }
  return scene;
}

/// All scenes of a benchmark, drawn from one stream seeded by cfg.seed + 1.
inline std::vector<DenseScene> make_scenes(const SynthConfig& cfg, const ConePair& cone) {
  Rng rng(cfg.seed + 1);
  std::vector<DenseScene> scenes;
  scenes.reserve(cfg.n_scenes);
  for (std::size_t i = 0; i < cfg.n_scenes; ++i) scenes.push_back(make_dense_scene(cfg, cone, rng));
  return scenes;
}

struct ContrastiveBatch {
  EmbeddingMatrix v;
  EmbeddingMatrix t;
  std::vector<int> classes;
};

inline ContrastiveBatch make_contrastive_batch(const SynthConfig& cfg, const ConePair& cone, Rng& rng,
                                               std::size_t batch) {
  cfg.validate();
  detail::check_compatible(cfg, cone);
  require(batch >= 2, ErrorCode::ConfigInvalid, "contrastive batch needs B >= 2");
  ContrastiveBatch out{EmbeddingMatrix(batch, cfg.dim), EmbeddingMatrix(batch, cfg.dim), {}};
  for (std::size_t i = 0; i < batch; ++i) {
    const int cls = 1 + static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.n_classes)));
    out.classes.push_back(cls);
    const auto v = detail::noisy_sample(cone.vision_centers.column(static_cast<std::size_t>(cls)),
                                        cone.vision_basis, cfg.intra_class_std, rng);
    std::copy(v.begin(), v.end(), out.v.row(i).begin());
    const auto t = cone.text_protos.column(static_cast<std::size_t>(cls));
    std::copy(t.begin(), t.end(), out.t.row(i).begin());
  }
  return out;
}

}  // namespace vproto

#endif  // VPROTO_SYNTHGEN_HPP
