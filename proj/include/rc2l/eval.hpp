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
#ifndef RC2L_EVAL_HPP_
#define RC2L_EVAL_HPP_

#include <string>
#include <vector>

#include "rc2l/model.hpp"

namespace rc2l {

// Pixel class = argmax_{c in 1..K} sum_j p_j(c) m_j(pixel); lowest class wins
// ties. The no-object column never takes part.
LabelMap semantic_inference(const PredictionSet& preds);

// Global confusion matrix over labels 0..num_labels-1; rows are ground truth.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_labels);

  void add(const LabelMap& pred, const LabelMap& gt);
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * num_labels_ + pred)]; }
  int num_labels() const { return num_labels_; }

 private:
  int num_labels_;
  std::vector<std::int64_t> counts_;
};

struct ClassIou {
  int class_id = 0;
  double iou = 0;
};

struct MiouResult {
  double miou = 0;
  std::vector<ClassIou> per_class;  // classes present in prediction or ground truth
};

MiouResult miou_from_confusion(const ConfusionMatrix& cm, const std::vector<int>& excluded = {});

// Labels are expected in 0..K. Classes absent from both maps are excluded.
MiouResult miou(const std::vector<LabelMap>& pred_maps, const std::vector<LabelMap>& gt_maps, int K,
                const std::vector<int>& excluded = {});

MiouResult evaluate(const ModelParams& params, const ArchConfig& arch, const std::vector<Sample>& samples,
                    const std::vector<int>& excluded = {});

// Aligned-text table and its key=value twin.
std::string format_report(const MiouResult& result, const std::vector<std::string>& class_names);
std::string format_report_kv(const MiouResult& result, const std::vector<std::string>& class_names);

}  // namespace rc2l

#endif  // RC2L_EVAL_HPP_
