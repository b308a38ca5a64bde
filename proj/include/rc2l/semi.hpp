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
#ifndef RC2L_SEMI_HPP_
#define RC2L_SEMI_HPP_

#include <vector>

#include "rc2l/augment.hpp"
#include "rc2l/losses.hpp"

namespace rc2l {

struct EmaConfig {
  double decay = 0.99;
  int interval = 1;  // steps between updates
  int warmup = 100;  // steps during which the teacher is re-copied from the student
};

struct PseudoLabelConfig {
  double confidence = 0.7;
  double mask_threshold = 0.5;
  int min_area = 4;
  // Overlapping pseudo masks are resolved pixelwise to the highest
  // confidence * mask score; a query keeping less than min_owned_fraction of
  // its binarized mask is dropped as a duplicate.
  bool exclusive = true;
  double min_owned_fraction = 0.8;
};

// Which unlabeled terms contribute; a disabled term is neither computed nor
// back-propagated.
struct LossToggles {
  bool rcc = true;
  bool smc = true;
  bool rmc = true;
  bool rfc = true;

  bool any() const { return rcc || smc || rmc || rfc; }
};

// teacher <- decay * teacher + (1 - decay) * student, elementwise.
ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double decay);
void ema_update_inplace(ModelParams& teacher, const ModelParams& student, double decay);

SegmentSet generate_pseudo_labels(const PredictionSet& teacher_preds, const PseudoLabelConfig& config);

struct PseudoStats {
  int count = 0;
  double mean_confidence = 0;
  std::vector<int> class_histogram;  // index c-1 for class c
};

PseudoStats pseudo_stats(const SegmentSet& pseudo, int num_classes);

// Teacher side of one unlabeled sample: weak view and its pseudo labels.
struct TeacherView {
  std::string id;
  Image weak_image;
  TransformRecord weak_record;
  SegmentSet pseudo;  // in the weak frame
};

TeacherView make_teacher_view(const Image& image, const std::string& id, const ModelParams& teacher,
                              const ArchConfig& arch, const AugmentConfig& augment,
                              const PseudoLabelConfig& pseudo, std::uint64_t seed);

// Everything the four unlabeled losses need for one sample.
struct UnlabeledBundle {
  Image strong_image;
  TransformRecord strong_record;
  SegmentSet pseudo;  // transported into the strong frame
  PredictionSet student;
  ForwardCache cache;
  Assignment assignment;
  bool skip = false;  // empty pseudo set: losses contribute 0 and `student` stays empty
};

UnlabeledBundle make_student_view(const TeacherView& view, const TeacherView& partner, const ModelParams& student,
                                  const ArchConfig& arch, const AugmentConfig& augment, const MatchWeights& match,
                                  std::uint64_t seed);

// weak_augment -> teacher forward -> pseudo labels -> CutMix transport ->
// student forward on the strong view -> matching.
UnlabeledBundle unlabeled_step(const Image& image, const Image& partner, const ModelParams& student,
                               const ModelParams& teacher, const ArchConfig& arch, const AugmentConfig& augment,
                               const PseudoLabelConfig& pseudo, const MatchWeights& match, std::uint64_t seed);

struct UnlabeledEvaluation {
  UnlabeledParts parts;
  double weighted = 0;  // beta-weighted sum
  PredictionGrad grad;  // gradient of `weighted`
};

// `rfc_target_features` is forwarded to rfc_loss (frozen target map).
UnlabeledEvaluation evaluate_unlabeled(const UnlabeledBundle& bundle, const LossWeights& weights,
                                       const LossToggles& toggles, const Matrix* rfc_target_features = nullptr);

}  // namespace rc2l

#endif  // RC2L_SEMI_HPP_
