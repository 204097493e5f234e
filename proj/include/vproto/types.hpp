#ifndef VPROTO_TYPES_HPP
#define VPROTO_TYPES_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vproto/core_math.hpp"
#include "vproto/matrix.hpp"

namespace vproto {

/// Rows are embeddings. Unit-norm rows are a checked precondition where an
/// operation needs them, not a type-level guarantee.
using EmbeddingMatrix = Matrix;

inline void require_unit_rows(const EmbeddingMatrix& m, double tol, const char* what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = norm2(m.row(r));
    require(std::abs(n - 1.0) <= tol, ErrorCode::NotUnit,
            std::string(what) + ": row " + std::to_string(r) + " has norm " + std::to_string(n));
  }
}

/// D x K matrix whose columns are class prototypes. Column 0 is the
/// background class, columns 1..N the foreground classes.
struct PrototypeSet {
  Matrix m;

  PrototypeSet() = default;
  explicit PrototypeSet(Matrix mat) : m(std::move(mat)) {}
  PrototypeSet(std::size_t dim, std::size_t count) : m(dim, count) {}

  std::size_t dim() const noexcept { return m.rows(); }
  std::size_t count() const noexcept { return m.cols(); }
  std::vector<double> column(std::size_t n) const { return m.col(n); }
  void set_column(std::size_t n, std::span<const double> v) { m.set_col(n, v); }
  double column_norm(std::size_t n) const {
    double s = 0.0;
    for (std::size_t d = 0; d < m.rows(); ++d) s += m(d, n) * m(d, n);
    return std::sqrt(s);
  }
  double max_column_norm() const {
    double best = 0.0;
    for (std::size_t n = 0; n < count(); ++n) best = std::max(best, column_norm(n));
    return best;
  }

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

/// S x H grid of class ids, row-major.
struct LabelGrid {
  std::size_t s = 0;
  std::size_t h = 0;
  std::vector<int> ids;

  LabelGrid() = default;
  LabelGrid(std::size_t s_, std::size_t h_, int fill = 0) : s(s_), h(h_), ids(s_ * h_, fill) {}
  LabelGrid(std::size_t s_, std::size_t h_, std::vector<int> v) : s(s_), h(h_), ids(std::move(v)) {
    require(ids.size() == s * h, ErrorCode::DimensionMismatch, "label grid size");
  }

  std::size_t size() const noexcept { return ids.size(); }
  int& at(std::size_t r, std::size_t c) { return ids[r * h + c]; }
  int at(std::size_t r, std::size_t c) const { return ids[r * h + c]; }

  friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

/// Per-pixel feature grid with ground truth. features has S*H rows of
/// dimension D, pixel k = r * H + c.
struct DenseScene {
  std::size_t s = 0;
  std::size_t h = 0;
  Matrix features;
  LabelGrid gt_mask;
  std::vector<int> class_set;  // present foreground ids, ascending

  std::size_t pixels() const noexcept { return s * h; }
  std::size_t dim() const noexcept { return features.cols(); }
};

inline std::vector<int> present_foreground(const LabelGrid& g) {
  int mx = 0;
  for (int v : g.ids) mx = std::max(mx, v);
  std::vector<char> seen(static_cast<std::size_t>(mx) + 1, 0);
  for (int v : g.ids)
    if (v > 0) seen[static_cast<std::size_t>(v)] = 1;
  std::vector<int> out;
  for (std::size_t c = 1; c < seen.size(); ++c)
    if (seen[c]) out.push_back(static_cast<int>(c));
  return out;
}

/// Pixel-by-class logits: features (P x D) times prototypes (D x K).
inline Matrix prototype_logits(const Matrix& features, const PrototypeSet& w) {
  require(features.cols() == w.dim(), ErrorCode::DimensionMismatch,
          "feature dim " + std::to_string(features.cols()) + " vs prototype dim " + std::to_string(w.dim()));
  return matmul(features, w.m);
}

}  // namespace vproto

#endif  // VPROTO_TYPES_HPP
