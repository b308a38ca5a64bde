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
#include "rc2l/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace rc2l {

LabelMap semantic_inference(const PredictionSet& preds) {
  const int K = preds.num_classes();
  const int H = preds.height, W = preds.width;
  // score(c, pixel) = sum_j p_j(c) m_j(pixel)
  Matrix masks(preds.num_queries(), H * W);
  for (int j = 0; j < preds.num_queries(); ++j)
    masks.row(j) = Eigen::Map<const Eigen::RowVectorXd>(preds.soft_masks[j].data(), H * W);
  const Matrix scores = preds.class_probs.leftCols(K).transpose() * masks;
  LabelMap out(H, W);
  for (int k = 0; k < H * W; ++k) {
    int best = 0;
    for (int c = 1; c < K; ++c)
      if (scores(c, k) > scores(best, k)) best = c;
    out.data()[k] = best + 1;
  }
  return out;
}

ConfusionMatrix::ConfusionMatrix(int num_labels)
    : num_labels_(num_labels), counts_(static_cast<std::size_t>(num_labels) * num_labels, 0) {
  require(num_labels > 0, "confusion matrix needs at least one label");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    fail(ErrorKind::kInvalidArgument, "prediction and ground-truth maps differ in shape");
  for (Eigen::Index k = 0; k < gt.size(); ++k) {
    const int g = gt.data()[k], p = pred.data()[k];
    require(g >= 0 && g < num_labels_ && p >= 0 && p < num_labels_, "label out of range");
    ++counts_[static_cast<std::size_t>(g * num_labels_ + p)];
  }
}

MiouResult miou_from_confusion(const ConfusionMatrix& cm, const std::vector<int>& excluded) {
  MiouResult r;
  const int L = cm.num_labels();
  double sum = 0;
  for (int c = 0; c < L; ++c) {
    if (std::find(excluded.begin(), excluded.end(), c) != excluded.end()) continue;
    std::int64_t inter = cm.at(c, c), gt_total = 0, pred_total = 0;
    for (int k = 0; k < L; ++k) {
      gt_total += cm.at(c, k);
      pred_total += cm.at(k, c);
    }
    const std::int64_t uni = gt_total + pred_total - inter;
    if (uni == 0) continue;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    r.per_class.push_back({c, iou});
    sum += iou;
  }
  if (!r.per_class.empty()) r.miou = sum / static_cast<double>(r.per_class.size());
  return r;
}

MiouResult miou(const std::vector<LabelMap>& pred_maps, const std::vector<LabelMap>& gt_maps, int K,
                const std::vector<int>& excluded) {
  if (pred_maps.size() != gt_maps.size()) fail(ErrorKind::kInvalidArgument, "map lists differ in length");
  ConfusionMatrix cm(K + 1);
  for (std::size_t i = 0; i < gt_maps.size(); ++i) cm.add(pred_maps[i], gt_maps[i]);
  return miou_from_confusion(cm, excluded);
}

MiouResult evaluate(const ModelParams& params, const ArchConfig& arch, const std::vector<Sample>& samples,
                    const std::vector<int>& excluded) {
  ConfusionMatrix cm(arch.num_classes + 1);
  for (const Sample& s : samples) {
    if (!s.segments) fail(ErrorKind::kData, "sample " + s.id + " has no ground truth");
    cm.add(semantic_inference(forward(s.image, params, arch)), to_label_map(*s.segments));
  }
  return miou_from_confusion(cm, excluded);
}

namespace {

std::string class_label(int c, const std::vector<std::string>& names) {
  if (c >= 1 && c <= static_cast<int>(names.size())) return names[static_cast<std::size_t>(c - 1)];
  return "class" + std::to_string(c);
}

}  // namespace

std::string format_report(const MiouResult& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-6s %-14s %8s\n", "class", "name", "IoU");
  os << buf;
  for (const ClassIou& c : r.per_class) {
    std::snprintf(buf, sizeof(buf), "%-6d %-14s %8.4f\n", c.class_id, class_label(c.class_id, names).c_str(), c.iou);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-21s %8.4f\n", "mIoU", r.miou);
  os << buf;
  return os.str();
}

std::string format_report_kv(const MiouResult& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "miou=%.9g\n", r.miou);
  os << buf;
  for (const ClassIou& c : r.per_class) {
    std::snprintf(buf, sizeof(buf), "iou.%s=%.9g\n", class_label(c.class_id, names).c_str(), c.iou);
    os << buf;
  }
  return os.str();
}

}  // namespace rc2l
