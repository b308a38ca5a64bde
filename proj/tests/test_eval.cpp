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
#include <map>

#include "doctest.h"
#include "rc2l/eval.hpp"
#include "test_util.hpp"

using namespace rc2l;

namespace {

PredictionSet preds_with(const Matrix& probs, const std::vector<Matrix>& masks) {
  PredictionSet p;
  p.height = static_cast<int>(masks.front().rows());
  p.width = static_cast<int>(masks.front().cols());
  p.feature_height = p.feature_width = 1;
  p.class_probs = probs;
  p.mask_embeddings = Matrix::Zero(probs.rows(), 1);
  p.pixel_features = Matrix::Zero(1, 1);
  p.soft_masks = masks;
  return p;
}

LabelMap map_of(std::initializer_list<int> v) {
  LabelMap m(1, static_cast<Eigen::Index>(v.size()));
  int k = 0;
  for (int x : v) m(0, k++) = x;
  return m;
}

LabelMap random_map(Rng& rng, int L) {
  LabelMap m(8, 8);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform_int(0, L - 1);
  return m;
}

// Per-class intersections and unions counted pixel by pixel.
double brute_force_miou(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& gt, int L) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < L; ++c) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i)
      for (Eigen::Index k = 0; k < gt[i].size(); ++k) {
        const bool p = pred[i].data()[k] == c, g = gt[i].data()[k] == c;
        inter += p && g;
        uni += p || g;
      }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++present;
  }
  return present ? sum / present : 0.0;
}

}  // namespace

TEST_CASE("single dominant region labels every pixel") {
  Matrix probs(1, 4);
  probs << 0, 1, 0, 0;
  const LabelMap m = semantic_inference(preds_with(probs, {Matrix::Ones(3, 3)}));
  CHECK((m.array() == 2).all());
}

TEST_CASE("disjoint confident regions compose pixelwise") {
  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  a.col(0).setOnes();
  b.col(1).setOnes();
  Matrix probs(2, 4);
  probs << 0, 0, 1, 0, 1, 0, 0, 0;
  const LabelMap m = semantic_inference(preds_with(probs, {a, b}));
  CHECK(m(0, 0) == 3);
  CHECK(m(1, 0) == 3);
  CHECK(m(0, 1) == 1);
  CHECK(m(1, 1) == 1);
}

TEST_CASE("overlapping regions resolve by weighted score") {
  Matrix probs(2, 4);
  probs << 0, 0.6, 0, 0.4, 0, 0, 0.4, 0.6;
  const LabelMap m = semantic_inference(preds_with(probs, {Matrix::Ones(1, 1), Matrix::Ones(1, 1)}));
  CHECK(m(0, 0) == 2);
  Matrix tie(1, 4);
  tie << 0.4, 0.4, 0.2, 0;
  CHECK(semantic_inference(preds_with(tie, {Matrix::Ones(1, 1)}))(0, 0) == 1);
  Matrix no_object(1, 4);
  no_object << 0.1, 0.2, 0.05, 0.65;
  CHECK(semantic_inference(preds_with(no_object, {Matrix::Ones(1, 1)}))(0, 0) == 2);
}

TEST_CASE("semantic inference ignores query order") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const PredictionSet p = testing::random_predictions(rng, 5, 4, 8, 8);
    std::vector<int> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    PredictionSet q = p;
    for (int j = 0; j < 5; ++j) {
      q.class_probs.row(j) = p.class_probs.row(perm[j]);
      q.soft_masks[j] = p.soft_masks[perm[j]];
    }
    CHECK(semantic_inference(p) == semantic_inference(q));
  }
}

TEST_CASE("miou hand values") {
  const MiouResult r = miou({map_of({0, 1, 1, 1})}, {map_of({0, 0, 1, 1})}, 1);
  CHECK(r.miou == doctest::Approx(7.0 / 12.0).epsilon(1e-12));
  REQUIRE(r.per_class.size() == 2);
  CHECK(r.per_class[0].iou == doctest::Approx(0.5));
  CHECK(r.per_class[1].iou == doctest::Approx(2.0 / 3.0));

  const LabelMap g = map_of({1, 2, 3, 4});
  CHECK(miou({g}, {g}, 4).miou == 1.0);
  const MiouResult one = miou({map_of({3, 3})}, {map_of({3, 3})}, 4);
  REQUIRE(one.per_class.size() == 1);
  CHECK(one.per_class[0].class_id == 3);
  CHECK(one.per_class[0].iou == 1.0);
}

TEST_CASE("confusion path equals per-pixel counting") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = rng.uniform_int(2, 6);
    std::vector<LabelMap> pred, gt;
    for (int i = 0; i < 3; ++i) {
      pred.push_back(random_map(rng, L));
      gt.push_back(random_map(rng, L));
    }
    REQUIRE(miou(pred, gt, L - 1).miou == brute_force_miou(pred, gt, L));
  }
}

TEST_CASE("miou is symmetric under joint relabeling") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int L = 5;
    std::vector<int> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    std::vector<LabelMap> pred, gt, pred2, gt2;
    for (int i = 0; i < 2; ++i) {
      pred.push_back(random_map(rng, L));
      gt.push_back(random_map(rng, L));
      pred2.push_back(pred.back().unaryExpr([&](int c) { return perm[c]; }));
      gt2.push_back(gt.back().unaryExpr([&](int c) { return perm[c]; }));
    }
    CHECK(miou(pred, gt, L - 1).miou == doctest::Approx(miou(pred2, gt2, L - 1).miou).epsilon(1e-14));
  }
}

TEST_CASE("excluded classes and errors") {
  const MiouResult r = miou({map_of({0, 1, 1, 1})}, {map_of({0, 0, 1, 1})}, 1, {0});
  REQUIRE(r.per_class.size() == 1);
  CHECK(r.miou == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(miou({map_of({0, 1})}, {map_of({0, 1, 1})}, 1), Error);
  CHECK_THROWS_AS(miou({map_of({0, 1})}, {}, 1), Error);
  CHECK_THROWS_AS(miou({map_of({0, 5})}, {map_of({0, 1})}, 1), Error);
}

TEST_CASE("report formats") {
  const MiouResult r = miou({map_of({1, 2, 2, 2})}, {map_of({1, 1, 2, 2})}, 2);
  const std::string text = format_report(r, {"background", "circle"});
  CHECK(text.find("background") != std::string::npos);
  CHECK(text.find("mIoU") != std::string::npos);
  const std::string kv = format_report_kv(r, {"background", "circle"});
  CHECK(kv.find("miou=0.58333") == 0);
  CHECK(kv.find("iou.circle=0.6666") != std::string::npos);
}

TEST_CASE("evaluate runs the model over labeled samples") {
  Rng rng(4);
  const ArchConfig arch = testing::tiny_arch();
  Sample s;
  s.id = "x";
  s.image = testing::random_image(rng, 16, 16);
  s.segments = testing::random_partition(rng, 16, 16, 2, 3);
  const MiouResult r = evaluate(init_params(1, arch), arch, {s});
  CHECK(r.miou >= 0.0);
  CHECK(r.miou <= 1.0);
  s.segments.reset();
  CHECK_THROWS_AS(evaluate(init_params(1, arch), arch, {s}), Error);
}
