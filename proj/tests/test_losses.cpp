/* Copyright 2026 The RC2L Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "doctest.h"
#include "rc2l/losses.hpp"
#include "test_util.hpp"

using namespace rc2l;
using testing::FlatPredictions;
using testing::Instance;
using testing::permuted;
using testing::random_instance;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

double focal_by_hand(const Matrix& p, const Matrix& t) {
  double s = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double pk = std::clamp(p.data()[k], 1e-7, 1 - 1e-7);
    const double pt = t.data()[k] == 1 ? pk : 1 - pk;
    const double at = t.data()[k] == 1 ? 0.25 : 0.75;
    s += -at * (1 - pt) * (1 - pt) * std::log(pt);
  }
  return s / static_cast<double>(p.size());
}

double dice_by_hand(const Matrix& p, const Matrix& t) {
  double inter = 0, sp = 0, st = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    inter += p.data()[k] * t.data()[k];
    sp += p.data()[k];
    st += t.data()[k];
  }
  return 1 - (2 * inter + 1) / (sp + st + 1);
}

Segment seg(int cls, const Matrix& m) { return Segment{cls, m, std::nullopt}; }

SegmentSet set_of(std::vector<Segment> s) {
  SegmentSet out;
  out.height = static_cast<int>(s.front().mask.rows());
  out.width = static_cast<int>(s.front().mask.cols());
  out.segments = std::move(s);
  return out;
}

Assignment identity_assignment(int M, int N) {
  Assignment a;
  a.num_predictions = N;
  for (int i = 0; i < M; ++i) {
    a.sigma.push_back(i);
    a.matched.push_back(i);
  }
  for (int j = M; j < N; ++j) a.unmatched.push_back(j);
  return a;
}

// Checks a PredictionSet loss gradient against central differences with the
// assignment held fixed.
void check_prediction_gradient(const std::function<LossResult(const PredictionSet&)>& loss,
                               const PredictionSet& preds) {
  CHECK(testing::prediction_gradient_error(loss, preds, kStep) < kTol);
}

}  // namespace

TEST_CASE("mask loss at a perfect prediction") {
  Rng rng(1);
  const Matrix t = testing::random_binary_mask(rng, 8, 8);
  const MaskLossResult r = mask_loss(t, t, LossWeights{});
  CHECK(r.dice < 1e-6);
  CHECK(r.focal <= 1e-5);
}

TEST_CASE("dice loss of a uniform half prediction") {
  Matrix p = Matrix::Constant(2, 2, 0.5), t = Matrix::Zero(2, 2);
  t(0, 0) = 1;
  CHECK(dice_loss(p, t) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mask_loss(p, t, LossWeights{}).dice == doctest::Approx(0.5));
}

TEST_CASE("dice term is symmetric and focal is not") {
  Rng rng(2);
  const Matrix a = testing::random_soft_mask(rng, 4, 4), b = testing::random_binary_mask(rng, 4, 4);
  CHECK(dice_loss(a, b) == doctest::Approx(dice_loss(b, a)).epsilon(1e-14));
  CHECK(focal_loss(a, b, 0.25, 2) != doctest::Approx(focal_loss(b, a, 0.25, 2)));
}

TEST_CASE("focal and dice agree with the per-pixel formulas") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = testing::random_soft_mask(rng, 8, 8), t = testing::random_binary_mask(rng, 8, 8);
    CHECK(focal_loss(p, t, 0.25, 2) == doctest::Approx(focal_by_hand(p, t)).epsilon(1e-12));
    CHECK(dice_loss(p, t) == doctest::Approx(dice_by_hand(p, t)).epsilon(1e-12));
    const MaskLossResult m = mask_loss(p, t, LossWeights{});
    CHECK(m.value == doctest::Approx(20 * focal_by_hand(p, t) + dice_by_hand(p, t)).epsilon(1e-12));
  }
}

TEST_CASE("dice similarity hand values and properties") {
  Matrix a(1, 4), b(1, 4);
  a << 1, 1, 0, 0;
  b << 1, 0, 1, 0;
  CHECK(dice_similarity(a, b) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(dice_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  Matrix c(1, 4);
  c << 0, 0, 1, 1;
  CHECK(dice_similarity(a, c) == 0.0);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix x = testing::random_binary_mask(rng, 3, 3), y = testing::random_binary_mask(rng, 3, 3);
    const double d = dice_similarity(x, y);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
    REQUIRE(d == doctest::Approx(dice_similarity(y, x)).epsilon(1e-15));
    REQUIRE((std::abs(d - 1.0) < 1e-6) == (x == y));
  }
}

TEST_CASE("supervised loss at the optimum and with an uncertain class") {
  Rng rng(5);
  const SegmentSet gt = testing::random_partition(rng, 8, 8, 2, 3);
  PredictionSet p = testing::random_predictions(rng, 3, 3, 8, 8);
  p.class_probs.setZero();
  for (int i = 0; i < 2; ++i) {
    p.class_probs(i, gt.segments[i].class_id - 1) = 1.0;
    p.soft_masks[i] = gt.segments[i].mask;
  }
  p.class_probs(2, 3) = 1.0;
  const Assignment a = match_targets(p, gt, MatchWeights{});
  CHECK(supervised_loss(p, gt, a, LossWeights{}).value <= 1e-5);

  PredictionSet single = testing::random_predictions(rng, 1, 3, 8, 8);
  const SegmentSet one = set_of({seg(2, gt.segments[0].mask)});
  single.class_probs.row(0) << 0.25, 0.5, 0.25, 0.0;
  single.soft_masks[0] = gt.segments[0].mask;
  const LossResult r = supervised_loss(single, one, identity_assignment(1, 1), LossWeights{});
  CHECK(r.value == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("supervised loss weights no-object terms") {
  Rng rng(6);
  PredictionSet p = testing::random_predictions(rng, 2, 2, 4, 4);
  const SegmentSet gt = testing::random_partition(rng, 4, 4, 1, 2);
  const Assignment a = identity_assignment(1, 2);
  const double c = gt.segments[0].class_id - 1;
  const double expected = -std::log(p.class_probs(0, static_cast<Eigen::Index>(c))) +
                          mask_loss(p.soft_masks[0], gt.segments[0].mask, LossWeights{}).value -
                          0.1 * std::log(p.class_probs(1, 2));
  CHECK(supervised_loss(p, gt, a, LossWeights{}).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("rmc hand values") {
  Matrix left = Matrix::Zero(4, 4), right = Matrix::Zero(4, 4);
  left.leftCols(2).setOnes();
  right.rightCols(2).setOnes();
  const SegmentSet pseudo = set_of({seg(1, left), seg(2, right)});
  LossWeights w;
  w.tau_m = 1.0;
  const MaskListResult r = rmc_loss({left, right}, pseudo, identity_assignment(2, 2), w);
  CHECK(r.value == doctest::Approx(-2.0).epsilon(1e-6));
  CHECK_FALSE(r.degenerate);

  // All similarities equal within each row: every term is log(M - 1).
  Matrix a = Matrix::Zero(3, 3), b = Matrix::Zero(3, 3), c = Matrix::Zero(3, 3);
  a.row(0).setOnes();
  b.row(1).setOnes();
  c.row(2).setOnes();
  const SegmentSet three = set_of({seg(1, a), seg(2, b), seg(3, c)});
  const Matrix flat = Matrix::Constant(3, 3, 0.5);
  const MaskListResult eq = rmc_loss({flat, flat, flat}, three, identity_assignment(3, 3), w);
  CHECK(eq.value == doctest::Approx(3 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("rmc and rfc decrease as the positive similarity grows") {
  Matrix left = Matrix::Zero(4, 4), right = Matrix::Zero(4, 4);
  left.leftCols(2).setOnes();
  right.rightCols(2).setOnes();
  const SegmentSet pseudo = set_of({seg(1, left), seg(2, right)});
  double previous = 1e300;
  for (double s : {0.2, 0.4, 0.6, 0.8, 1.0}) {
    const Matrix student0 = s * left;  // positive for target 0 improves; negatives stay 0
    const double v = rmc_loss({student0, right}, pseudo, identity_assignment(2, 2), LossWeights{}).value;
    CHECK(v < previous);
    previous = v;
  }
  previous = 1e300;
  for (double angle : {1.2, 0.9, 0.6, 0.3, 0.0}) {
    Vector t0(3), t1(3), s1(3), rot(3);
    t0 << 1, 0, 0;
    t1 << 0, 1, 0;
    s1 << 0, 0, 1;
    // Rotating towards t0 in the plane orthogonal to t1 keeps every cross
    // similarity at zero.
    rot << std::cos(angle), 0, std::sin(angle);
    const double v = rfc_loss({{rot, 0}, {s1, 1}}, {{t0, 0}, {t1, 1}}, LossWeights{}).value;
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("rfc hand values") {
  Vector e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  LossWeights w;
  w.tau_f = 0.5;
  const RegionListResult orth = rfc_loss({{e1, 0}, {e2, 1}}, {{e1, 0}, {e2, 1}}, w);
  CHECK(orth.value / 2 == doctest::Approx(-2.0).epsilon(1e-9));
  const RegionListResult anti = rfc_loss({{e1, 0}, {-e1, 1}}, {{e1, 0}, {-e1, 1}}, w);
  CHECK(anti.value / 2 == doctest::Approx(-4.0).epsilon(1e-9));
}

TEST_CASE("rfc is invariant to positive scaling of region vectors") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RegionFeature> s, t;
    for (int i = 0; i < 3; ++i) {
      s.push_back({testing::random_matrix(rng, 5, 1), i});
      t.push_back({testing::random_matrix(rng, 5, 1), i});
    }
    const double base = rfc_loss(s, t, LossWeights{}).value;
    s[1].vector *= 3.7;
    t[2].vector *= 0.2;
    CHECK(rfc_loss(s, t, LossWeights{}).value == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("contrastive losses with fewer than two regions report degeneracy") {
  int events = 0;
  set_degeneracy_handler([&](const std::string&) { ++events; });
  Matrix m = Matrix::Ones(4, 4);
  const SegmentSet one = set_of({seg(1, m)});
  const MaskListResult r = rmc_loss({m}, one, identity_assignment(1, 1), LossWeights{});
  CHECK(r.value == 0.0);
  CHECK(r.degenerate);
  Vector v = Vector::Ones(2);
  const RegionListResult f = rfc_loss({{v, 0}}, {{v, 0}}, LossWeights{});
  CHECK(f.value == 0.0);
  CHECK(f.degenerate);
  CHECK(events == 2);
  set_degeneracy_handler(nullptr);
}

TEST_CASE("region pooling hand cases") {
  Rng rng(8);
  const Matrix F = testing::random_matrix(rng, 3, 4);  // 2 x 2 feature grid
  const RegionFeature all = region_pool(Matrix::Ones(8, 8), F, 2, 2);
  CHECK(testing::relative_error(all.vector, F.rowwise().mean()) < 1e-6);

  Matrix one = Matrix::Zero(8, 8);
  one.block(4, 0, 4, 4).setOnes();  // feature position (1, 0) = column 2
  CHECK(testing::relative_error(region_pool(one, F, 2, 2).vector, F.col(2)) < 1e-5);

  // Constant-then-shifted map: half the positions hold 1, the others 3.
  Matrix G(1, 4);
  G << 1, 1, 3, 3;
  Matrix half = Matrix::Zero(8, 8);
  half.topRows(4).setConstant(1.0);
  half.block(4, 0, 4, 4).setConstant(0.5);
  // weights: positions 0,1 -> 1, position 2 -> 0.5, position 3 -> 0
  const double expected = (1 * 1 + 1 * 1 + 0.5 * 3) / (2.5 + 1e-6);
  CHECK(region_pool(half, G, 2, 2).vector(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(region_pool(half, G, 2, 2, Pooling::kGlobalAverage).vector(0) == doctest::Approx(3.5 / 4).epsilon(1e-12));
}

TEST_CASE("rcc hand values") {
  Matrix p(2, 3);
  p << 0.5, 0.3, 0.2, 0.1, 0.25, 0.65;
  const SegmentSet one = set_of({seg(1, Matrix::Ones(2, 2))});
  CHECK(rcc_loss(p.topRows(1), one, identity_assignment(1, 1)).value == doctest::Approx(0.6931).epsilon(1e-4));
  Matrix q(2, 3);
  q << 1.0, 0.0, 0.0, 0.1, 0.25, 0.65;
  const SegmentSet two = set_of({seg(1, Matrix::Ones(2, 2)), seg(2, Matrix::Ones(2, 2))});
  CHECK(rcc_loss(q, two, identity_assignment(2, 2)).value == doctest::Approx(1.3863).epsilon(1e-4));
  Matrix perfect(2, 3);
  perfect << 1, 0, 0, 0, 1, 0;
  CHECK(rcc_loss(perfect, two, identity_assignment(2, 2)).value == 0.0);
}

TEST_CASE("class union cases") {
  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  a(0, 0) = 1;
  b(1, 1) = 1;
  Matrix probs(3, 3);
  probs << 0.8, 0.1, 0.1, 0.7, 0.2, 0.1, 0.1, 0.1, 0.8;
  const UnionResult u = class_union({a, b, Matrix::Ones(2, 2)}, probs, 1, 2);
  CHECK(u.mask == a + b);
  CHECK(u.members == std::vector<int>{0, 1});

  const UnionResult single = class_union({a, b, Matrix::Ones(2, 2)}, probs, 1, 0);
  CHECK(single.mask == a + b);
  Matrix only(3, 3);
  only << 0.8, 0.1, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.8;
  CHECK(class_union({a, b, b}, only, 1, 2).mask == a);

  Matrix s = Matrix::Constant(1, 1, 0.3), t = Matrix::Constant(1, 1, 0.8);
  CHECK(class_union({s, t}, probs.topRows(2), 1, 0).mask(0, 0) == 0.8);

  // No member: the fallback region stands in.
  const UnionResult fb = class_union({a, b, Matrix::Ones(2, 2)}, probs, 2, 1);
  CHECK(fb.members == std::vector<int>{1});
  CHECK(fb.mask == b);
}

TEST_CASE("smc reductions") {
  Rng rng(9);
  // Perfect consistency.
  const SegmentSet pseudo = testing::random_partition(rng, 8, 8, 3, 3);
  PredictionSet p = testing::random_predictions(rng, 4, 3, 8, 8);
  p.class_probs.setConstant(0.05);
  for (int i = 0; i < 3; ++i) {
    p.class_probs(i, pseudo.segments[i].class_id - 1) = 0.85;
    p.soft_masks[i] = pseudo.segments[i].mask;
  }
  p.class_probs.row(3) << 0.05, 0.05, 0.05, 0.85;
  const Assignment a = identity_assignment(3, 4);
  CHECK(smc_loss(p, pseudo, a, LossWeights{}).value < 1e-4);

  // Singleton reduction.
  PredictionSet q = testing::random_predictions(rng, 2, 2, 4, 4);
  q.class_probs.row(0) << 0.1, 0.7, 0.2;
  q.class_probs.row(1) << 0.1, 0.1, 0.8;
  const SegmentSet single = set_of({seg(2, testing::random_binary_mask(rng, 4, 4))});
  LossWeights full;
  full.smc_ignore_uncovered = false;
  CHECK(smc_loss(q, single, identity_assignment(1, 2), full).value ==
        doctest::Approx(mask_loss(q.soft_masks[0], single.segments[0].mask, full).value).epsilon(1e-14));

  // Two pseudo segments of one class against two student regions of it.
  Matrix t1 = Matrix::Zero(4, 4), t2 = Matrix::Zero(4, 4);
  t1.block(0, 0, 2, 2).setOnes();
  t2.block(2, 2, 2, 2).setOnes();
  PredictionSet r = testing::random_predictions(rng, 3, 2, 4, 4);
  r.class_probs.row(0) << 0.9, 0.05, 0.05;
  r.class_probs.row(1) << 0.6, 0.3, 0.1;
  r.class_probs.row(2) << 0.1, 0.2, 0.7;
  const SegmentSet two = set_of({seg(1, t1), seg(1, t2)});
  Matrix student_union(4, 4), target_union = t1 + t2;
  for (int k = 0; k < 16; ++k) student_union.data()[k] = std::max(r.soft_masks[0].data()[k], r.soft_masks[1].data()[k]);
  const double expected = 20 * focal_by_hand(student_union, target_union) + dice_by_hand(student_union, target_union);
  CHECK(smc_loss(r, two, identity_assignment(2, 3), full).value == doctest::Approx(expected).epsilon(1e-12));

  // Restricted to covered pixels: only the 8 pixels of t1 and t2 enter.
  Matrix su(1, 8), tu = Matrix::Ones(1, 8);
  int k = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      if (target_union(y, x) > 0) su(0, k++) = student_union(y, x);
  const double covered = 20 * focal_by_hand(su, tu) + dice_by_hand(su, tu);
  CHECK(smc_loss(r, two, identity_assignment(2, 3), LossWeights{}).value == doctest::Approx(covered).epsilon(1e-12));
}

TEST_CASE("smc ignores pixels no pseudo segment covers") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const testing::Instance in = random_instance(rng, 5, 2, 3);
    SegmentSet partial = in.targets;
    Matrix covered = Matrix::Zero(8, 8);
    for (Segment& s : partial.segments) {
      s.mask.block(0, 0, 3, 8).setZero();  // top rows uncovered
      covered = covered.cwiseMax(s.mask);
    }
    if (covered.sum() == 0) continue;
    PredictionSet changed = in.preds;
    for (Matrix& m : changed.soft_masks) m.block(0, 0, 3, 8) = testing::random_soft_mask(rng, 3, 8);
    const LossResult a = smc_loss(in.preds, partial, in.assignment, LossWeights{});
    CHECK(a.value == doctest::Approx(smc_loss(changed, partial, in.assignment, LossWeights{}).value).epsilon(1e-12));
    for (const Matrix& g : a.grad.soft_masks)
      if (g.size()) CHECK(g.block(0, 0, 3, 8).cwiseAbs().maxCoeff() == 0.0);
    LossWeights full;
    full.smc_ignore_uncovered = false;
    CHECK(smc_loss(in.preds, partial, in.assignment, full).value !=
          doctest::Approx(smc_loss(changed, partial, in.assignment, full).value).epsilon(1e-12));
    CHECK(testing::prediction_gradient_error(
              [&](const PredictionSet& q) { return smc_loss(q, partial, in.assignment, LossWeights{}); }, in.preds,
              kStep) < kTol);
  }
}

TEST_CASE("unlabeled and total compositions") {
  const LossWeights w;
  CHECK(unlabeled_loss({1, 1, 1, 1}, w) == doctest::Approx(29.0));
  CHECK(unlabeled_loss({0, 0, 0, 0}, w) == 0.0);
  LossWeights rcc_only;
  rcc_only.beta = {1, 0, 0, 0};
  CHECK(unlabeled_loss({0.3, 5, 7, 9}, rcc_only) == doctest::Approx(0.3));
  LossWeights a2;
  a2.alpha = 2;
  CHECK(total_loss(1.0, 0.5, a2) == doctest::Approx(2.0));
  CHECK(total_loss(1.0, 0.5, w) == doctest::Approx(1.5));
  CHECK(total_loss(1.25, 0.0, a2) == 1.25);
}

TEST_CASE("elementwise loss gradients match central differences") {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix p = testing::random_soft_mask(rng, 8, 8), t = testing::random_binary_mask(rng, 8, 8);
    Matrix g;
    focal_loss(p, t, 0.25, 2, &g);
    CHECK(testing::relative_error(g, testing::numeric_gradient([&](const Matrix& x) { return focal_loss(x, t, 0.25, 2); }, p, kStep)) < kTol);
    dice_loss(p, t, &g);
    CHECK(testing::relative_error(g, testing::numeric_gradient([&](const Matrix& x) { return dice_loss(x, t); }, p, kStep)) < kTol);
    const MaskLossResult m = mask_loss(p, t, LossWeights{});
    CHECK(testing::relative_error(m.grad, testing::numeric_gradient([&](const Matrix& x) { return mask_loss(x, t, LossWeights{}).value; }, p, kStep)) < kTol);
    dice_similarity(p, t, &g);
    CHECK(testing::relative_error(g, testing::numeric_gradient([&](const Matrix& x) { return dice_similarity(x, t); }, p, kStep)) < kTol);
    const Vector a = testing::random_matrix(rng, 5, 1), b = testing::random_matrix(rng, 5, 1);
    Vector ga;
    cosine_similarity(a, b, &ga);
    CHECK(testing::relative_error(ga, testing::numeric_gradient([&](const Matrix& x) { return cosine_similarity(x, b); }, a, kStep)) < kTol);
  }
}

TEST_CASE("region pooling gradients match central differences") {
  Rng rng(11);
  for (Pooling pooling : {Pooling::kMaskAverage, Pooling::kGlobalAverage}) {
    const Matrix mask = testing::random_soft_mask(rng, 8, 8), F = testing::random_matrix(rng, 3, 4);
    const Vector d = testing::random_matrix(rng, 3, 1);
    Matrix dm, dF;
    region_pool_backward(mask, F, 2, 2, pooling, d, &dm, &dF);
    auto by_mask = [&](const Matrix& x) { return d.dot(region_pool(x, F, 2, 2, pooling).vector); };
    auto by_features = [&](const Matrix& x) { return d.dot(region_pool(mask, x, 2, 2, pooling).vector); };
    CHECK(testing::relative_error(dm, testing::numeric_gradient(by_mask, mask, kStep)) < kTol);
    CHECK(testing::relative_error(dF, testing::numeric_gradient(by_features, F, kStep)) < kTol);
  }
}

TEST_CASE("set loss gradients match central differences") {
  Rng rng(12);
  const LossWeights w;
  for (int trial = 0; trial < 5; ++trial) {
    const Instance in = random_instance(rng, 5, 3, 3);
    check_prediction_gradient([&](const PredictionSet& p) { return supervised_loss(p, in.targets, in.assignment, w); }, in.preds);
    check_prediction_gradient([&](const PredictionSet& p) { return rmc_loss(p, in.targets, in.assignment, w); }, in.preds);
    check_prediction_gradient([&](const PredictionSet& p) { return rcc_loss(p, in.targets, in.assignment); }, in.preds);
    check_prediction_gradient([&](const PredictionSet& p) { return smc_loss(p, in.targets, in.assignment, w); }, in.preds);
  }
}

TEST_CASE("rfc gradient treats target regions as constants") {
  // The target regions are pooled from the same feature map but carry no
  // gradient: the analytic gradient matches differences taken with targets
  // frozen, and differs from the fully coupled derivative.
  Rng rng(13);
  const LossWeights w;
  for (int trial = 0; trial < 5; ++trial) {
    const Instance in = random_instance(rng, 5, 3, 3);
    const LossResult r = rfc_loss(in.preds, in.targets, in.assignment, w);
    std::vector<RegionFeature> frozen;
    for (const Segment& s : in.targets.segments)
      frozen.push_back(region_pool(s.mask, in.preds.pixel_features, in.preds.feature_height, in.preds.feature_width));
    auto frozen_loss = [&](const Matrix& flat) {
      const PredictionSet p = FlatPredictions::unpack(flat, in.preds);
      std::vector<RegionFeature> student;
      for (std::size_t i = 0; i < in.targets.size(); ++i)
        student.push_back(region_pool(p.soft_masks[in.assignment.sigma[i]], p.pixel_features, p.feature_height,
                                      p.feature_width));
      return rfc_loss(student, frozen, w).value;
    };
    const Matrix flat = FlatPredictions::pack(in.preds);
    const Matrix analytic = FlatPredictions::pack_grad(r.grad, in.preds);
    CHECK(testing::relative_error(analytic, testing::numeric_gradient(frozen_loss, flat, kStep)) < kTol);
    const Matrix coupled = testing::numeric_gradient(
        [&](const Matrix& x) { return rfc_loss(FlatPredictions::unpack(x, in.preds), in.targets, in.assignment, w).value; },
        flat, kStep);
    CHECK(testing::relative_error(analytic, coupled) > 1e-3);
  }
}

TEST_CASE("set losses are invariant to prediction order") {
  Rng rng(14);
  const LossWeights w;
  for (int trial = 0; trial < 30; ++trial) {
    const Instance in = random_instance(rng, 6, 3, 3);
    std::vector<int> perm = {0, 1, 2, 3, 4, 5};
    rng.shuffle(perm);
    const PredictionSet q = permuted(in.preds, perm);
    const Assignment b = match_targets(q, in.targets, w.match_weights());
    CHECK(std::abs(supervised_loss(in.preds, in.targets, in.assignment, w).value -
                   supervised_loss(q, in.targets, b, w).value) < 1e-9);
    CHECK(std::abs(rmc_loss(in.preds, in.targets, in.assignment, w).value - rmc_loss(q, in.targets, b, w).value) < 1e-9);
    CHECK(std::abs(rfc_loss(in.preds, in.targets, in.assignment, w).value - rfc_loss(q, in.targets, b, w).value) < 1e-9);
    CHECK(std::abs(rcc_loss(in.preds, in.targets, in.assignment).value - rcc_loss(q, in.targets, b).value) < 1e-9);
    CHECK(std::abs(smc_loss(in.preds, in.targets, in.assignment, w).value - smc_loss(q, in.targets, b, w).value) < 1e-9);
  }
}

TEST_CASE("loss input errors") {
  CHECK_THROWS_AS(dice_loss(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), Error);
  CHECK_THROWS_AS(downsample_mask(Matrix::Zero(6, 6), 4, 4), Error);
  Rng rng(15);
  const Instance in = random_instance(rng, 4, 2, 3);
  Assignment bad = in.assignment;
  bad.sigma.pop_back();
  CHECK_THROWS_AS(supervised_loss(in.preds, in.targets, bad, LossWeights{}), Error);
  LossWeights w;
  w.tau_m = 0;
  CHECK_THROWS_AS(w.validate(), Error);
}
