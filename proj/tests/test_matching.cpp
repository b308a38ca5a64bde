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
#include <set>

#include "doctest.h"
#include "rc2l/matching.hpp"
#include "test_util.hpp"

using namespace rc2l;

namespace {

// Focal term written out per pixel, independent of the library code.
double focal_by_hand(const Matrix& p, const Matrix& t) {
  double s = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double pt = t.data()[k] == 1 ? p.data()[k] : 1 - p.data()[k];
    const double at = t.data()[k] == 1 ? 0.25 : 0.75;
    s += -at * (1 - pt) * (1 - pt) * std::log(pt);
  }
  return s / static_cast<double>(p.size());
}

double dice_loss_by_hand(const Matrix& p, const Matrix& t) {
  double inter = 0, sp = 0, st = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    inter += p.data()[k] * t.data()[k];
    sp += p.data()[k];
    st += t.data()[k];
  }
  return 1 - (2 * inter + 1) / (sp + st + 1);
}

void check_consistent(const Assignment& a, int N) {
  std::set<int> used(a.sigma.begin(), a.sigma.end());
  REQUIRE(used.size() == a.sigma.size());
  REQUIRE(a.matched.size() + a.unmatched.size() == static_cast<std::size_t>(N));
  REQUIRE(std::is_sorted(a.matched.begin(), a.matched.end()));
  REQUIRE(std::is_sorted(a.unmatched.begin(), a.unmatched.end()));
  for (int j : a.unmatched) REQUIRE(used.count(j) == 0);
  for (int i = 0; i < a.num_targets(); ++i) REQUIRE(a.target_of(a.sigma[i]) == i);
}

}  // namespace

TEST_CASE("single pair") {
  Matrix c(1, 1);
  c << 5;
  const Assignment a = hungarian(c);
  CHECK(a.sigma == std::vector<int>{0});
  CHECK(assignment_cost(c, a) == 5.0);
}

TEST_CASE("two by two prefers the diagonal") {
  Matrix c(2, 2);
  c << 1, 2, 2, 1;
  const Assignment a = hungarian(c);
  CHECK(a.sigma == std::vector<int>{0, 1});
  CHECK(assignment_cost(c, a) == 2.0);
}

TEST_CASE("hungarian equals brute force on random matrices") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int N = rng.uniform_int(1, 6);
    const int M = rng.uniform_int(1, N);
    Matrix c = testing::random_matrix(rng, N, M, -5, 5);
    if (trial % 3 == 0) c = (c.array() * 2).round() / 2;  // plenty of ties
    const Assignment a = hungarian(c);
    check_consistent(a, N);
    REQUIRE(assignment_cost(c, a) == doctest::Approx(testing::brute_force_min_cost(c)).epsilon(1e-12));
  }
}

TEST_CASE("five by five against all 120 permutations") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix c = testing::random_matrix(rng, 5, 5, 0, 10);
    CHECK(assignment_cost(c, hungarian(c)) == doctest::Approx(testing::brute_force_min_cost(c)));
  }
}

TEST_CASE("column permutation permutes sigma and keeps the cost") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 6, M = 4;
    const Matrix c = testing::random_matrix(rng, N, M);
    std::vector<int> perm = {0, 1, 2, 3};
    rng.shuffle(perm);
    Matrix cp(N, M);
    for (int i = 0; i < M; ++i) cp.col(i) = c.col(perm[i]);
    const Assignment a = hungarian(c), b = hungarian(cp);
    CHECK(assignment_cost(cp, b) == doctest::Approx(assignment_cost(c, a)).epsilon(1e-12));
    for (int i = 0; i < M; ++i) CHECK(b.sigma[i] == a.sigma[perm[i]]);
  }
}

TEST_CASE("constant shift leaves the assignment unchanged") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix c = testing::random_matrix(rng, 5, 3);
    const Matrix shifted = (c.array() + 3.25).matrix();
    CHECK(hungarian(c).sigma == hungarian(shifted).sigma);
  }
}

TEST_CASE("ties go to the lowest prediction index") {
  CHECK(hungarian(Matrix::Zero(4, 2)).sigma == std::vector<int>{0, 1});
  Matrix c(3, 1);
  c << 2, 1, 1;
  CHECK(hungarian(c).sigma == std::vector<int>{1});
  const Assignment a = hungarian(Matrix::Ones(3, 3));
  CHECK(a.sigma == std::vector<int>{0, 1, 2});
}

TEST_CASE("hungarian input errors") {
  CHECK_THROWS_AS(hungarian(Matrix::Zero(2, 3)), Error);
  Matrix c = Matrix::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(c), Error);
}

TEST_CASE("cost matrix perfect match is the row minimum near -1") {
  Rng rng(5);
  PredictionSet p = testing::random_predictions(rng, 3, 3, 4, 4);
  SegmentSet t;
  t.height = t.width = 4;
  Matrix m = Matrix::Zero(4, 4);
  m.topRows(2).setOnes();
  t.segments = {{2, m, std::nullopt}};
  p.class_probs.row(1) << 0, 1, 0, 0;
  p.soft_masks[1] = m;
  p.class_probs.row(0) << 1, 0, 0, 0;
  p.soft_masks[0] = Matrix::Ones(4, 4) - m;
  const CostMatrix c = build_cost_matrix(p, t, MatchWeights{});
  CHECK(c.costs(1, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(c.dice_cost(1, 0) == doctest::Approx(0.0));
  CHECK(c.costs(1, 0) < c.costs(0, 0));
  CHECK(c.costs(1, 0) <= c.costs.col(0).minCoeff());
  CHECK(match_targets(p, t, MatchWeights{}).sigma == std::vector<int>{1});
}

TEST_CASE("cost matrix entries match a hand evaluation") {
  PredictionSet p;
  p.height = p.width = 2;
  p.feature_height = p.feature_width = 1;
  p.class_probs.resize(2, 3);
  p.class_probs << 0.7, 0.2, 0.1, 0.1, 0.6, 0.3;
  p.mask_embeddings = Matrix::Zero(2, 1);
  p.pixel_features = Matrix::Zero(1, 1);
  Matrix a(2, 2), b(2, 2), t(2, 2);
  a << 0.9, 0.2, 0.1, 0.3;
  b << 0.4, 0.6, 0.8, 0.5;
  t << 1, 0, 0, 0;
  p.soft_masks = {a, b};
  SegmentSet s;
  s.height = s.width = 2;
  s.segments = {{1, t, std::nullopt}};
  const CostMatrix c = build_cost_matrix(p, s, MatchWeights{});
  CHECK(c.costs(0, 0) == doctest::Approx(-0.7 + 20 * focal_by_hand(a, t) + dice_loss_by_hand(a, t)).epsilon(1e-12));
  CHECK(c.costs(1, 0) == doctest::Approx(-0.1 + 20 * focal_by_hand(b, t) + dice_loss_by_hand(b, t)).epsilon(1e-12));
}

TEST_CASE("matching with no targets leaves every prediction unmatched") {
  Rng rng(6);
  const PredictionSet p = testing::random_predictions(rng, 4, 3, 4, 4);
  SegmentSet t;
  t.height = t.width = 4;
  const Assignment a = match_targets(p, t, MatchWeights{});
  CHECK(a.sigma.empty());
  CHECK(a.unmatched == std::vector<int>{0, 1, 2, 3});
  CHECK(a.target_of(2) == -1);
  CHECK_FALSE(to_text(CostMatrix{}, a).empty());
}
