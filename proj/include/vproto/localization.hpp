#ifndef VPROTO_LOCALIZATION_HPP
#define VPROTO_LOCALIZATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/error.hpp"
#include "vproto/types.hpp"

namespace vproto {

/// One [0, 1] map per requested class over an S x H grid.
struct ActivationMaps {
  std::size_t s = 0;
  std::size_t h = 0;
  std::vector<int> class_ids;
  std::vector<std::vector<double>> maps;  // maps[i] belongs to class_ids[i]
};

struct PseudoMask {
  LabelGrid mask;
  double phi_used = 0.0;
};

/// Similarity map max(0, <x_k, w_n>) per class, min-max normalized per class.
/// For a linear scoring head this is the gradient-weighted activation map.
/// A constant raw map normalizes to all zeros.
inline ActivationMaps activation_map(const DenseScene& scene, const PrototypeSet& protos, std::span<const int> classes) {
  require(!classes.empty(), ErrorCode::UnknownClass, "activation_map needs at least one class");
  require(scene.dim() == protos.dim(), ErrorCode::DimensionMismatch, "scene dim vs prototype dim");
  ActivationMaps out;
  out.s = scene.s;
  out.h = scene.h;
  out.class_ids.assign(classes.begin(), classes.end());
  for (int c : classes) {
    require(c >= 0 && static_cast<std::size_t>(c) < protos.count(), ErrorCode::UnknownClass,
            "class " + std::to_string(c) + " has no prototype");
    const auto w = protos.column(static_cast<std::size_t>(c));
    std::vector<double> map(scene.pixels());
    for (std::size_t p = 0; p < scene.pixels(); ++p) map[p] = std::max(0.0, dot(scene.features.row(p), w));
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    const double mn = *lo;
    const double range = *hi - mn;
    if (range > 0.0) {
      for (double& v : map) v = (v - mn) / range;
    } else {
      std::fill(map.begin(), map.end(), 0.0);
    }
    out.maps.push_back(std::move(map));
  }
  return out;
}

/// Per-pixel argmax over the maps (lowest class id on ties); pixels whose best
/// score does not exceed phi become background.
inline PseudoMask threshold_mask(const ActivationMaps& maps, double phi) {
  require(phi > 0.0 && phi < 1.0, ErrorCode::InvalidThreshold, "phi must lie in (0, 1), got " + std::to_string(phi));
  PseudoMask out{LabelGrid(maps.s, maps.h, 0), phi};
  for (std::size_t p = 0; p < maps.s * maps.h; ++p) {
    double best = -1.0;
    int best_id = 0;
    for (std::size_t i = 0; i < maps.maps.size(); ++i) {
      const double v = maps.maps[i][p];
      const int id = maps.class_ids[i];
      if (v > best || (v == best && id < best_id)) {
        best = v;
        best_id = id;
      }
    }
    if (!maps.maps.empty() && best > phi) out.mask.ids[p] = best_id;
  }
  return out;
}

inline PseudoMask pseudo_mask(const DenseScene& scene, const PrototypeSet& protos, double phi) {
  return threshold_mask(activation_map(scene, protos, scene.class_set), phi);
}

/// Weighted mean of pixel features.
inline std::vector<double> masked_average_pool(const Matrix& features, std::span<const double> weights) {
  require(weights.size() == features.rows(), ErrorCode::DimensionMismatch, "one weight per pixel");
  double total = 0.0;
  std::vector<double> out(features.cols(), 0.0);
  for (std::size_t p = 0; p < features.rows(); ++p) {
    require(weights[p] >= 0.0, ErrorCode::DimensionMismatch, "weights must be nonnegative");
    if (weights[p] == 0.0) continue;
    total += weights[p];
    const auto row = features.row(p);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += weights[p] * row[d];
  }
  require(total > 1e-12, ErrorCode::EmptyMask, "mask weight sum " + std::to_string(total));
  for (double& v : out) v /= total;
  return out;
}

/// A(k, n) = max(0, <feature_k, w_n>), P x K.
inline Matrix compute_attention_masks(const Matrix& features, const PrototypeSet& protos) {
  Matrix a = prototype_logits(features, protos);
  for (double& v : a.data()) v = std::max(0.0, v);
  return a;
}

struct MiouResult {
  double miou = 0.0;
  std::vector<std::optional<double>> per_class;  // empty when the class is absent from both masks
};

/// Intersection and union counts accumulated over any number of mask pairs.
class MiouAccumulator {
 public:
  explicit MiouAccumulator(std::size_t n_classes) : inter_(n_classes, 0), uni_(n_classes, 0) {}

  void add(const LabelGrid& pred, const LabelGrid& gt) {
    require(pred.size() == gt.size(), ErrorCode::DimensionMismatch, "pred vs gt size");
    const auto n = static_cast<int>(inter_.size());
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const int a = pred.ids[p];
      const int b = gt.ids[p];
      require(a >= 0 && a < n && b >= 0 && b < n, ErrorCode::LabelOutOfRange,
              "label out of range at pixel " + std::to_string(p));
      if (a == b) {
        ++inter_[static_cast<std::size_t>(a)];
        ++uni_[static_cast<std::size_t>(a)];
      } else {
        ++uni_[static_cast<std::size_t>(a)];
        ++uni_[static_cast<std::size_t>(b)];
      }
    }
  }

  MiouResult result() const {
    MiouResult r;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      if (uni_[c] == 0) {
        r.per_class.emplace_back();
        continue;
      }
      const double iou = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
      r.per_class.emplace_back(iou);
      sum += iou;
      ++used;
    }
    r.miou = used == 0 ? 0.0 : sum / static_cast<double>(used);
    return r;
  }

 private:
  std::vector<std::uint64_t> inter_;
  std::vector<std::uint64_t> uni_;
};

inline MiouResult miou(const LabelGrid& pred, const LabelGrid& gt, std::size_t n_classes) {
  MiouAccumulator acc(n_classes);
  acc.add(pred, gt);
  return acc.result();
}

/// Dataset-level mIoU of threshold pseudo-masks from protos over all scenes.
inline MiouResult pseudo_mask_miou(std::span<const DenseScene> scenes, const PrototypeSet& protos, double phi) {
  MiouAccumulator acc(protos.count());
  for (const auto& s : scenes) acc.add(pseudo_mask(s, protos, phi).mask, s.gt_mask);
  return acc.result();
}

}  // namespace vproto

#endif  // VPROTO_LOCALIZATION_HPP
