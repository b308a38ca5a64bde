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
#include "rc2l/semi.hpp"

namespace rc2l {

ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double decay) {
  ModelParams out = teacher;
  ema_update_inplace(out, student, decay);
  return out;
}

void ema_update_inplace(ModelParams& teacher, const ModelParams& student, double decay) {
  require(decay >= 0.0 && decay <= 1.0, "EMA decay must lie in [0, 1]");
  if (!teacher.same_layout(student)) fail(ErrorKind::kInvalidArgument, "EMA: teacher and student layouts differ");
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    Matrix& t = teacher.tensors[k].value;
    const Matrix& s = student.tensors[k].value;
    if (decay == 1.0) continue;
    if (decay == 0.0) {
      t = s;
      continue;
    }
    t = decay * t + (1.0 - decay) * s;
  }
}

SegmentSet generate_pseudo_labels(const PredictionSet& preds, const PseudoLabelConfig& config) {
  require(config.confidence >= 0 && config.confidence <= 1, "pseudo confidence threshold out of range");
  require(config.mask_threshold >= 0 && config.mask_threshold <= 1, "mask threshold out of range");
  require(config.min_owned_fraction >= 0 && config.min_owned_fraction <= 1, "owned fraction out of range");
  SegmentSet out;
  out.height = preds.height;
  out.width = preds.width;
  std::vector<int> kept;
  for (int j = 0; j < preds.num_queries(); ++j) {
    Eigen::Index cls;
    const double conf = preds.class_probs.row(j).maxCoeff(&cls);
    if (cls == preds.no_object() || conf < config.confidence) continue;
    Matrix mask = (preds.soft_masks[j].array() >= config.mask_threshold).cast<double>().matrix();
    const double area = mask.sum();
    if (area < config.min_area || area <= 0) continue;
    out.segments.push_back(Segment{static_cast<int>(cls) + 1, std::move(mask), conf});
    kept.push_back(j);
  }
  if (!config.exclusive || out.segments.size() < 2) return out;

  // Each pixel goes to the kept query with the highest confidence * mask
  // score; queries left with too little of their own mask are dropped.
  std::vector<Matrix> owned(out.size(), Matrix::Zero(out.height, out.width));
  for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(out.height) * out.width; ++p) {
    int best = -1;
    double best_score = 0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (out.segments[k].mask.data()[p] == 0) continue;
      const double score = *out.segments[k].confidence * preds.soft_masks[kept[k]].data()[p];
      if (best < 0 || score > best_score) {
        best = static_cast<int>(k);
        best_score = score;
      }
    }
    if (best >= 0) owned[best].data()[p] = 1.0;
  }
  SegmentSet resolved;
  resolved.height = out.height;
  resolved.width = out.width;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double area = owned[k].sum();
    if (area < config.min_area || area <= 0 || area < config.min_owned_fraction * out.segments[k].mask.sum()) continue;
    resolved.segments.push_back(Segment{out.segments[k].class_id, std::move(owned[k]), out.segments[k].confidence});
  }
  return resolved;
}

PseudoStats pseudo_stats(const SegmentSet& pseudo, int num_classes) {
  PseudoStats s;
  s.class_histogram.assign(num_classes, 0);
  s.count = static_cast<int>(pseudo.size());
  for (const Segment& seg : pseudo.segments) {
    s.mean_confidence += seg.confidence.value_or(1.0);
    if (seg.class_id >= 1 && seg.class_id <= num_classes) ++s.class_histogram[seg.class_id - 1];
  }
  if (s.count) s.mean_confidence /= s.count;
  return s;
}

TeacherView make_teacher_view(const Image& image, const std::string& id, const ModelParams& teacher,
                              const ArchConfig& arch, const AugmentConfig& augment,
                              const PseudoLabelConfig& pseudo, std::uint64_t seed) {
  TeacherView v;
  v.id = id;
  Augmented weak = weak_augment(image, seed, augment);
  v.weak_image = std::move(weak.image);
  v.weak_record = weak.record;
  v.pseudo = generate_pseudo_labels(forward(v.weak_image, teacher, arch), pseudo);
  return v;
}

UnlabeledBundle make_student_view(const TeacherView& view, const TeacherView& partner, const ModelParams& student,
                                  const ArchConfig& arch, const AugmentConfig& augment, const MatchWeights& match,
                                  std::uint64_t seed) {
  UnlabeledBundle b;
  Augmented strong = strong_augment(view.weak_image, partner.weak_image, seed, augment, view.weak_record, partner.id);
  b.strong_image = std::move(strong.image);
  b.strong_record = strong.record;
  b.pseudo = transport_segments(view.pseudo, view.weak_record, b.strong_record, &partner.pseudo);
  b.skip = b.pseudo.empty();
  if (b.skip) return b;  // nothing to learn from; the student pass is not needed
  b.student = forward(b.strong_image, student, arch, &b.cache);
  if (static_cast<int>(b.pseudo.size()) > arch.num_queries) {
    // CutMix can merge two pseudo sets; keep the most confident ones.
    std::stable_sort(b.pseudo.segments.begin(), b.pseudo.segments.end(), [](const Segment& a, const Segment& c) {
      return a.confidence.value_or(1.0) > c.confidence.value_or(1.0);
    });
    b.pseudo.segments.resize(arch.num_queries);
  }
  b.assignment = match_targets(b.student, b.pseudo, match);
  return b;
}

UnlabeledBundle unlabeled_step(const Image& image, const Image& partner, const ModelParams& student,
                               const ModelParams& teacher, const ArchConfig& arch, const AugmentConfig& augment,
                               const PseudoLabelConfig& pseudo, const MatchWeights& match, std::uint64_t seed) {
  const TeacherView a = make_teacher_view(image, "self", teacher, arch, augment, pseudo, derive_seed(seed, 1));
  const TeacherView b = make_teacher_view(partner, "partner", teacher, arch, augment, pseudo, derive_seed(seed, 2));
  return make_student_view(a, b, student, arch, augment, match, derive_seed(seed, 3));
}

UnlabeledEvaluation evaluate_unlabeled(const UnlabeledBundle& bundle, const LossWeights& w, const LossToggles& on,
                                       const Matrix* rfc_target_features) {
  UnlabeledEvaluation e;
  if (bundle.skip) return e;
  e.grad = PredictionGrad::zeros_like(bundle.student);
  auto add = [&](const LossResult& r, double beta) {
    PredictionGrad g = r.grad;
    if (g.class_probs.size()) g.class_probs *= beta;
    if (g.pixel_features.size()) g.pixel_features *= beta;
    for (Matrix& m : g.soft_masks)
      if (m.size()) m *= beta;
    e.grad += g;
  };
  const auto& [rcc_w, smc_w, rmc_w, rfc_w] = w.beta;
  if (on.rcc) {
    const LossResult r = rcc_loss(bundle.student, bundle.pseudo, bundle.assignment);
    e.parts.rcc = r.value;
    add(r, rcc_w);
  }
  if (on.smc) {
    const LossResult r = smc_loss(bundle.student, bundle.pseudo, bundle.assignment, w);
    e.parts.smc = r.value;
    add(r, smc_w);
  }
  if (on.rmc) {
    const LossResult r = rmc_loss(bundle.student, bundle.pseudo, bundle.assignment, w);
    e.parts.rmc = r.value;
    add(r, rmc_w);
  }
  if (on.rfc) {
    const LossResult r = rfc_loss(bundle.student, bundle.pseudo, bundle.assignment, w, rfc_target_features);
    e.parts.rfc = r.value;
    add(r, rfc_w);
  }
  e.weighted = unlabeled_loss(e.parts, w);
  return e;
}

}  // namespace rc2l
