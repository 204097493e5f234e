#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"
#include "vproto/losses.hpp"

using namespace vproto;
using vproto::testkit::fd_rel_error;

TEST(Clip, MatchesOracle) {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = 2 + rng.below(6), d = 2 + rng.below(6);
    const Matrix v = l2_normalize_rows(gaussian_matrix(rng, b, d));
    const Matrix tt = l2_normalize_rows(gaussian_matrix(rng, b, d));
    const double tau = rng.uniform(0.05, 2.0);
    EXPECT_NEAR(clip_contrastive_loss(v, tt, tau).value, testkit::clip_loss_oracle(v, tt, tau), 1e-9);
  }
}

TEST(Clip, AlignedPairsNearZeroAndGapPersistsAtSmallTau) {
  const Matrix v{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_LT(clip_contrastive_loss(v, v, 0.01).value, 1e-20);
  const double s = std::sqrt(0.5);
  const Matrix t{{s, 0, s}, {0, s, s}, {-s, 0, s}};
  EXPECT_GT(clip_contrastive_loss(v, t, 1.0).value, clip_contrastive_loss(v, v, 1.0).value);
}

TEST(Clip, ErrorsOnShape) {
  EXPECT_THROW(clip_contrastive_loss(Matrix(3, 2, 1.0), Matrix(2, 2, 1.0), 1.0), Error);
  EXPECT_THROW(clip_contrastive_loss(Matrix(1, 2, 1.0), Matrix(1, 2, 1.0), 1.0), Error);
  EXPECT_THROW(clip_contrastive_loss(Matrix(2, 2, 1.0), Matrix(2, 2, 1.0), 0.0), Error);
}

TEST(Clip, PermutationInvariant) {
  Rng rng(8);
  const Matrix v = l2_normalize_rows(gaussian_matrix(rng, 5, 4));
  const Matrix t = l2_normalize_rows(gaussian_matrix(rng, 5, 4));
  Matrix vp(5, 4), tp(5, 4);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t d = 0; d < 4; ++d) {
      vp(i, d) = v(perm[i], d);
      tp(i, d) = t(perm[i], d);
    }
  EXPECT_NEAR(clip_contrastive_loss(v, t, 0.3).value, clip_contrastive_loss(vp, tp, 0.3).value, 1e-12);
}

TEST(Gradients, ClipBothBlocks) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const Matrix v = l2_normalize_rows(gaussian_matrix(rng, 4, 5));
    const Matrix tt = l2_normalize_rows(gaussian_matrix(rng, 4, 5));
    const auto r = clip_contrastive_loss(v, tt, 0.2);
    EXPECT_LT(fd_rel_error([&](const Matrix& x) { return clip_contrastive_loss(x, tt, 0.2).value; }, v, r.grad_v), 1e-5);
    EXPECT_LT(fd_rel_error([&](const Matrix& x) { return clip_contrastive_loss(v, x, 0.2).value; }, tt, r.grad_t), 1e-5);
  }
}

TEST(Gradients, PixelCe) {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    std::vector<DenseScene> scenes{testkit::random_scene(rng, 3, 3, 5, 4)};
    std::vector<LabelGrid> masks{scenes[0].gt_mask};
    const PrototypeSet w(gaussian_matrix(rng, 5, 4));
    const auto r = pixel_ce_loss(scenes, masks, w, 0.3);
    EXPECT_LT(fd_rel_error([&](const Matrix& x) { return pixel_ce_loss(scenes, masks, PrototypeSet(x), 0.3, false).value; },
                           w.m, r.grad),
              1e-5);
  }
}

TEST(Gradients, KlBothModesAtBenchTemperatures) {
  Rng rng(14);
  for (KlMode mode : {KlMode::Instance, KlMode::Class}) {
    for (int t = 0; t < 10; ++t) {
      std::vector<DenseScene> scenes{testkit::random_scene(rng, 2, 3, 4, 3), testkit::random_scene(rng, 3, 3, 4, 3)};
      const PrototypeSet z(gaussian_matrix(rng, 4, 3));
      const PrototypeSet w(gaussian_matrix(rng, 4, 3) * 0.2);
      const Teacher teacher = make_teacher(scenes, z, 0.1);
      const auto r = kl_from_teacher(scenes, teacher, w, 0.3, mode);
      EXPECT_LT(fd_rel_error([&](const Matrix& x) { return kl_from_teacher(scenes, teacher, PrototypeSet(x), 0.3, mode, false).value; },
                             w.m, r.grad),
                1e-5);
    }
  }
}

TEST(Gradients, Rsc) {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    const Matrix p = gaussian_matrix(rng, 4, 6);
    const Matrix wb = gaussian_matrix(rng, 4, 6);
    EXPECT_LT(fd_rel_error([&](const Matrix& x) { return rsc_loss(x, wb, 0.5).value; }, p, rsc_loss(p, wb, 0.5).grad), 1e-5);
  }
}

TEST(Kl, NonNegativeAndZeroAtTeacher) {
  Rng rng(16);
  std::vector<DenseScene> scenes{testkit::random_scene(rng, 4, 4, 6, 3)};
  const PrototypeSet z(gaussian_matrix(rng, 6, 3));
  const auto self = kl_prototype_loss(scenes, z, z, 0.2, 0.2);
  EXPECT_NEAR(self.value, 0.0, 1e-12);
  EXPECT_LT(frobenius(self.grad), 1e-10);
  for (int t = 0; t < 20; ++t) {
    const PrototypeSet w(gaussian_matrix(rng, 6, 3));
    const auto r = kl_prototype_loss(scenes, z, w, 0.2, 0.3);
    EXPECT_GE(r.value, -1e-12);
    EXPECT_NEAR(r.value, r.cross_entropy - r.teacher_entropy, 1e-12);
  }
}

TEST(Kl, TemperatureScalingFixedPoint) {
  // Z = sqrt(eps) W with tau_T = sqrt(eps) tau_I reproduces the teacher.
  Rng rng(17);
  std::vector<DenseScene> scenes{testkit::random_scene(rng, 3, 3, 5, 3)};
  const PrototypeSet z(gaussian_matrix(rng, 5, 3));
  const double eps = 0.36;
  const PrototypeSet w(z.m * (1.0 / std::sqrt(eps)));
  EXPECT_NEAR(kl_prototype_loss(scenes, z, w, std::sqrt(eps) * 0.03, 0.03).value, 0.0, 1e-10);
}

TEST(Kl, ShapeMismatch) {
  Rng rng(18);
  std::vector<DenseScene> scenes{testkit::random_scene(rng, 2, 2, 4, 3)};
  EXPECT_THROW(kl_prototype_loss(scenes, PrototypeSet(Matrix(4, 3, 0.1)), PrototypeSet(Matrix(4, 2, 0.1)), 0.1, 0.1), Error);
  EXPECT_THROW(kl_prototype_loss(scenes, PrototypeSet(Matrix(5, 3, 0.1)), PrototypeSet(Matrix(5, 3, 0.1)), 0.1, 0.1), Error);
}

TEST(PixelCe, LabelOutOfRange) {
  Rng rng(19);
  std::vector<DenseScene> scenes{testkit::random_scene(rng, 2, 2, 4, 3)};
  std::vector<LabelGrid> masks{LabelGrid(2, 2, 7)};
  try {
    pixel_ce_loss(scenes, masks, PrototypeSet(Matrix(4, 3, 0.1)), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(PixelCe, UniformLogitsGiveLogK) {
  Rng rng(20);
  const auto scene = testkit::random_scene(rng, 2, 3, 4, 5);
  EXPECT_NEAR(pixel_ce_loss(scene, scene.gt_mask, PrototypeSet(Matrix(4, 5)), 0.1).value, std::log(5.0), 1e-12);
}

TEST(Rsc, RowScaleInvariant) {
  Rng rng(21);
  const Matrix p = gaussian_matrix(rng, 5, 4);
  const Matrix wb = gaussian_matrix(rng, 5, 4);
  Matrix scaled = p;
  for (double& v : scaled.row(2)) v *= 7.0;
  EXPECT_NEAR(rsc_loss(p, wb, 0.1).value, rsc_loss(scaled, wb, 0.1).value, 1e-12);
  // gradient is orthogonal to each p_i (scale invariance)
  const auto g = rsc_loss(p, wb, 0.1).grad;
  for (std::size_t i = 0; i < p.rows(); ++i) EXPECT_NEAR(dot(g.row(i), p.row(i)), 0.0, 1e-12);
}

TEST(Rsc, PermutationInvariantAndPerfectAlignmentSmall) {
  Rng rng(22);
  const Matrix p = gaussian_matrix(rng, 4, 6);
  const Matrix wb = gaussian_matrix(rng, 4, 6);
  Matrix pp(4, 6), wp(4, 6);
  const std::vector<std::size_t> perm{2, 3, 1, 0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 6; ++d) {
      pp(i, d) = p(perm[i], d);
      wp(i, d) = wb(perm[i], d);
    }
  EXPECT_NEAR(rsc_loss(p, wb, 0.2).value, rsc_loss(pp, wp, 0.2).value, 1e-12);
  const Matrix eye = Matrix::identity(4);
  EXPECT_LT(rsc_loss(eye, eye, 0.03).value, 1e-12);
  EXPECT_THROW(rsc_loss(Matrix(2, 3, 1.0), Matrix(3, 3, 1.0), 0.1), Error);
  EXPECT_THROW(rsc_loss(Matrix{{0, 0}, {1, 0}}, Matrix{{1, 0}, {0, 1}}, 0.1), Error);
}

TEST(Combined, SumsOrStacks) {
  LossValue a{1.0, Matrix{{1, 2}}};
  LossValue b{3.0, Matrix{{10, 20}}};
  const auto s = combined_loss(a, b, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(s.value, 3.5);
  EXPECT_EQ(s.grad, (Matrix{{7, 14}}));
  LossValue c{1.0, Matrix{{1, 1}, {2, 2}}};
  const auto st = combined_loss(a, c, 1.0, 1.0);
  EXPECT_EQ(st.grad.rows(), 3u);
  EXPECT_EQ(st.grad(2, 0), 2.0);
  LossValue bad{1.0, Matrix(1, 3)};
  EXPECT_THROW(combined_loss(a, bad, 1.0, 1.0), Error);
  const auto only_ce = combined_loss(a, b, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(only_ce.value, 1.0);
}
