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
#ifndef RC2L_LOSSES_HPP_
#define RC2L_LOSSES_HPP_

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "rc2l/matching.hpp"

namespace rc2l {

// Mask-average pooling divides by the mask mass; the global-average reading
// divides by the number of feature positions.
enum class Pooling { kMaskAverage, kGlobalAverage };

struct LossWeights {
  double alpha = 1.0;
  std::array<double, 4> beta{1.0, 20.0, 4.0, 4.0};  // RCC, SMC, RMC, RFC
  double lambda_focal = 20.0;
  double lambda_dice = 1.0;
  double tau_m = 1.0;
  double tau_f = 0.5;
  double no_object_weight = 0.1;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  Pooling pooling = Pooling::kMaskAverage;
  // SMC reads only pixels covered by some pseudo segment; uncovered pixels
  // are unknown rather than negatives for every pseudo class.
  bool smc_ignore_uncovered = true;

  void validate() const;
  MatchWeights match_weights() const { return {1.0, lambda_focal, lambda_dice}; }
};

inline constexpr double kProbClamp = 1e-7;      // mask probabilities
inline constexpr double kLogClamp = 1e-12;      // class probabilities before log
inline constexpr double kDiceLossEps = 1.0;
inline constexpr double kDiceSimilarityEps = 1e-7;
inline constexpr double kPoolEps = 1e-6;
inline constexpr double kNormEps = 1e-8;

// Degenerate configurations (empty contrastive denominators, empty pooling
// masks) are reported here instead of failing. Single-threaded use only.
using DegeneracyHandler = std::function<void(const std::string&)>;
void set_degeneracy_handler(DegeneracyHandler handler);
void report_degeneracy(const std::string& what);

// ---------------------------------------------------------------------------
// Binary mask loss.

struct MaskLossResult {
  double value = 0;
  double focal = 0;  // unweighted
  double dice = 0;   // unweighted
  Matrix grad;       // d value / d pred
};

// Sigmoid-focal loss on probabilities, averaged over pixels.
double focal_loss(const Matrix& pred, const Matrix& target, double alpha, double gamma,
                  Matrix* grad = nullptr);
// 1 - (2 sum(pq) + 1) / (sum p + sum q + 1).
double dice_loss(const Matrix& pred, const Matrix& target, Matrix* grad = nullptr);

MaskLossResult mask_loss(const Matrix& pred, const Matrix& target, const LossWeights& weights);

// 2 sum(ab) / (sum a + sum b + 1e-7).
double dice_similarity(const Matrix& a, const Matrix& b, Matrix* grad_a = nullptr);

// ---------------------------------------------------------------------------
// Set losses. Each returns its value and the gradient with respect to the
// model outputs it reads.

struct LossResult {
  double value = 0;
  PredictionGrad grad;
  bool degenerate = false;
};

LossResult supervised_loss(const PredictionSet& preds, const SegmentSet& gt, const Assignment& assignment,
                           const LossWeights& weights);

struct MaskListResult {
  double value = 0;
  std::vector<Matrix> grad;  // per student mask, empty when untouched
  bool degenerate = false;
};

MaskListResult rmc_loss(const std::vector<Matrix>& student_masks, const SegmentSet& pseudo,
                        const Assignment& assignment, const LossWeights& weights);

struct RegionFeature {
  Vector vector;
  int source = -1;
};

// Area-average downsampling of an H x W mask to the feature grid (fh x fw).
Matrix downsample_mask(const Matrix& mask, int feature_height, int feature_width);

RegionFeature region_pool(const Matrix& mask, const Matrix& features, int feature_height,
                          int feature_width, Pooling pooling = Pooling::kMaskAverage, int source = -1);

// Gradients of region_pool with respect to the full-resolution mask and the
// feature map, given d r.
void region_pool_backward(const Matrix& mask, const Matrix& features, int feature_height, int feature_width,
                          Pooling pooling, const Vector& d_region, Matrix* d_mask, Matrix* d_features);

struct RegionListResult {
  double value = 0;
  std::vector<Vector> grad;  // d value / d student region
  bool degenerate = false;
};

// student_regions[i] is r^s of the prediction matched to target i, so the
// negatives of target i are the other entries.
RegionListResult rfc_loss(const std::vector<RegionFeature>& student_regions,
                          const std::vector<RegionFeature>& target_regions, const LossWeights& weights);

double cosine_similarity(const Vector& a, const Vector& b, Vector* grad_a = nullptr);

struct ProbResult {
  double value = 0;
  Matrix grad;  // d value / d class_probs
};

ProbResult rcc_loss(const Matrix& class_probs, const SegmentSet& pseudo, const Assignment& assignment);

struct UnionResult {
  Matrix mask;
  std::vector<int> members;  // predictions merged into the union
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> source;  // per-pixel argmax member
};

// Pixelwise maximum of the student masks whose argmax class (over K+1) is
// class_c (1-based); falls back to the single mask `fallback_index`.
UnionResult class_union(const std::vector<Matrix>& student_masks, const Matrix& class_probs, int class_c,
                        int fallback_index);

LossResult smc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& weights);

// RFC over a PredictionSet: pools student regions from m^s and F^s, target
// regions from the pseudo masks and a stop-gradient F^s. `target_features`
// replaces that stop-gradient copy when given (a frozen map for gradient checks).
LossResult rfc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& weights, const Matrix* target_features = nullptr);
LossResult rmc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& weights);
LossResult rcc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment);

// ---------------------------------------------------------------------------
// Compositions.

struct UnlabeledParts {
  double rcc = 0, smc = 0, rmc = 0, rfc = 0;
};

double unlabeled_loss(const UnlabeledParts& parts, const LossWeights& weights);
double total_loss(double supervised, double unlabeled, const LossWeights& weights);

}  // namespace rc2l

#endif  // RC2L_LOSSES_HPP_
