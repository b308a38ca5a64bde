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
#include "rc2l/losses.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

namespace rc2l {

namespace {

DegeneracyHandler& handler() {
  static DegeneracyHandler h;
  return h;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorKind::kInvalidArgument, std::string(what) + ": shape mismatch");
}

void check_assignment(const Assignment& a, int num_predictions, std::size_t num_targets) {
  if (a.num_targets() != static_cast<int>(num_targets) || a.num_predictions != num_predictions)
    fail(ErrorKind::kInvalidArgument, "assignment is inconsistent with the target set");
}

// log-sum-exp over `xs` with the softmax weights written to `w`.
double log_sum_exp(const std::vector<double>& xs, std::vector<double>& w) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0;
  w.resize(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) s += (w[k] = std::exp(xs[k] - mx));
  for (double& v : w) v /= s;
  return mx + std::log(s);
}

// One as-written contrastive term per target:
//   -log( exp(pos/tau) / sum_{j != i} exp(sim_j/tau) ),
// where sims(i, j) compares aligned student j with target i. Returns the sum
// and d/d sims.
double contrastive_sum(const Matrix& sims, double tau, Matrix& d_sims) {
  const int M = static_cast<int>(sims.rows());
  d_sims = Matrix::Zero(M, M);
  double total = 0;
  std::vector<double> neg, w;
  for (int i = 0; i < M; ++i) {
    neg.clear();
    for (int j = 0; j < M; ++j)
      if (j != i) neg.push_back(sims(i, j) / tau);
    total += -sims(i, i) / tau + log_sum_exp(neg, w);
    d_sims(i, i) -= 1.0 / tau;
    int k = 0;
    for (int j = 0; j < M; ++j)
      if (j != i) d_sims(i, j) += w[k++] / tau;
  }
  return total;
}

}  // namespace

void LossWeights::validate() const {
  require(alpha >= 0, "alpha must be >= 0");
  for (double b : beta) require(b >= 0, "beta weights must be >= 0");
  require(lambda_focal >= 0 && lambda_dice >= 0, "mask loss weights must be >= 0");
  require(tau_m > 0 && tau_f > 0, "temperatures must be > 0");
  require(no_object_weight >= 0, "no-object weight must be >= 0");
}

void set_degeneracy_handler(DegeneracyHandler h) { handler() = std::move(h); }

void report_degeneracy(const std::string& what) {
  if (handler()) handler()(what);
}

double focal_loss(const Matrix& pred, const Matrix& target, double alpha, double gamma, Matrix* grad) {
  require_same_shape(pred, target, "focal_loss");
  const double n = static_cast<double>(pred.size());
  if (grad) grad->resize(pred.rows(), pred.cols());
  double total = 0;
  for (Eigen::Index k = 0; k < pred.size(); ++k) {
    const double raw = pred.data()[k];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double y = target.data()[k];
    const double q = 1.0 - p;
    const double pos = -alpha * std::pow(q, gamma) * std::log(p);
    const double neg = -(1.0 - alpha) * std::pow(p, gamma) * std::log(q);
    total += y * pos + (1.0 - y) * neg;
    if (grad) {
      double g = 0;
      if (raw > kProbClamp && raw < 1.0 - kProbClamp) {
        const double dpos = -alpha * (-gamma * std::pow(q, gamma - 1) * std::log(p) + std::pow(q, gamma) / p);
        const double dneg = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1) * std::log(q) - std::pow(p, gamma) / q);
        g = (y * dpos + (1.0 - y) * dneg) / n;
      }
      grad->data()[k] = g;
    }
  }
  return total / n;
}

double dice_loss(const Matrix& pred, const Matrix& target, Matrix* grad) {
  require_same_shape(pred, target, "dice_loss");
  const double inter = (pred.array() * target.array()).sum();
  const double denom = pred.sum() + target.sum() + kDiceLossEps;
  const double num = 2.0 * inter + kDiceLossEps;
  if (grad) *grad = -((2.0 * target.array() * denom - num) / (denom * denom)).matrix();
  return 1.0 - num / denom;
}

MaskLossResult mask_loss(const Matrix& pred, const Matrix& target, const LossWeights& w) {
  require_same_shape(pred, target, "mask_loss");
  MaskLossResult r;
  Matrix gf, gd;
  r.focal = focal_loss(pred, target, w.focal_alpha, w.focal_gamma, &gf);
  r.dice = dice_loss(pred, target, &gd);
  r.value = w.lambda_focal * r.focal + w.lambda_dice * r.dice;
  r.grad = w.lambda_focal * gf + w.lambda_dice * gd;
  return r;
}

double dice_similarity(const Matrix& a, const Matrix& b, Matrix* grad_a) {
  require_same_shape(a, b, "dice_similarity");
  const double inter = (a.array() * b.array()).sum();
  const double denom = a.sum() + b.sum() + kDiceSimilarityEps;
  if (grad_a) *grad_a = ((2.0 * b.array() * denom - 2.0 * inter) / (denom * denom)).matrix();
  return 2.0 * inter / denom;
}

LossResult supervised_loss(const PredictionSet& preds, const SegmentSet& gt, const Assignment& assignment,
                           const LossWeights& w) {
  const int N = preds.num_queries();
  check_assignment(assignment, N, gt.size());
  LossResult r;
  r.grad.class_probs = Matrix::Zero(N, preds.class_probs.cols());
  r.grad.soft_masks.assign(N, Matrix());
  for (int j = 0; j < N; ++j) {
    const int i = assignment.target_of(j);
    const int column = i >= 0 ? gt.segments[i].class_id - 1 : preds.no_object();
    const double weight = i >= 0 ? 1.0 : w.no_object_weight;
    const double p = std::max(preds.class_probs(j, column), kLogClamp);
    r.value += -weight * std::log(p);
    if (preds.class_probs(j, column) > kLogClamp) r.grad.class_probs(j, column) = -weight / p;
    if (i >= 0) {
      const MaskLossResult ml = mask_loss(preds.soft_masks[j],
                                          gt.segments[i].mask, w);
      r.value += ml.value;
      r.grad.soft_masks[j] = ml.grad;
    }
  }
  return r;
}

MaskListResult rmc_loss(const std::vector<Matrix>& student_masks, const SegmentSet& pseudo,
                        const Assignment& assignment, const LossWeights& w) {
  check_assignment(assignment, static_cast<int>(student_masks.size()), pseudo.size());
  MaskListResult r;
  r.grad.assign(student_masks.size(), Matrix());
  const int M = static_cast<int>(pseudo.size());
  if (M < 2) {
    report_degeneracy("degenerate contrastive batch: RMC needs at least 2 pseudo regions");
    r.degenerate = true;
    return r;
  }
  // sims(i, k) = d(m^s_{sigma(k)}, m^t_i)
  Matrix sims(M, M);
  std::vector<std::vector<Matrix>> dsim(M, std::vector<Matrix>(M));
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < M; ++k)
      sims(i, k) = dice_similarity(student_masks[assignment.sigma[k]],
                                   pseudo.segments[i].mask,
                                   &dsim[i][k]);
  Matrix d_sims;
  r.value = contrastive_sum(sims, w.tau_m, d_sims);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < M; ++k) {
      Matrix& g = r.grad[assignment.sigma[k]];
      const Matrix contrib = d_sims(i, k) * dsim[i][k];
      if (g.size() == 0) g = contrib;
      else g += contrib;
    }
  return r;
}

Matrix downsample_mask(const Matrix& mask, int fh, int fw) {
  const int H = static_cast<int>(mask.rows()), W = static_cast<int>(mask.cols());
  require(fh > 0 && fw > 0 && H % fh == 0 && W % fw == 0, "mask size is not a multiple of the feature grid");
  const int sy = H / fh, sx = W / fw;
  Matrix out(fh, fw);
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) out(y, x) = mask.block(y * sy, x * sx, sy, sx).mean();
  return out;
}

namespace {

Matrix upsample_area_grad(const Matrix& d_low, int H, int W) {
  const int fh = static_cast<int>(d_low.rows()), fw = static_cast<int>(d_low.cols());
  const int sy = H / fh, sx = W / fw;
  Matrix out(H, W);
  const double inv = 1.0 / (sy * sx);
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) out.block(y * sy, x * sx, sy, sx).setConstant(d_low(y, x) * inv);
  return out;
}

}  // namespace

RegionFeature region_pool(const Matrix& mask, const Matrix& features, int fh, int fw, Pooling pooling, int source) {
  require(features.cols() == static_cast<Eigen::Index>(fh) * fw, "feature map does not match its grid");
  const Matrix low = downsample_mask(mask, fh, fw);
  const Eigen::Map<const Vector> a(low.data(), low.size());
  const double mass = a.sum();
  if (mass <= 0) report_degeneracy("region pooling over an all-zero mask");
  const double denom = pooling == Pooling::kMaskAverage ? mass + kPoolEps : static_cast<double>(fh * fw);
  return RegionFeature{features * a / denom, source};
}

void region_pool_backward(const Matrix& mask, const Matrix& features, int fh, int fw, Pooling pooling,
                          const Vector& d_region, Matrix* d_mask, Matrix* d_features) {
  const Matrix low = downsample_mask(mask, fh, fw);
  const Eigen::Map<const Vector> a(low.data(), low.size());
  const double denom = pooling == Pooling::kMaskAverage ? a.sum() + kPoolEps : static_cast<double>(fh * fw);
  if (d_features) *d_features = d_region * a.transpose() / denom;
  if (d_mask) {
    Vector da = features.transpose() * d_region / denom;
    if (pooling == Pooling::kMaskAverage) {
      const Vector r = features * a / denom;
      da.array() -= d_region.dot(r) / denom;
    }
    const Eigen::Map<const Matrix> da_grid(da.data(), fh, fw);
    *d_mask = upsample_area_grad(da_grid, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()));
  }
}

double cosine_similarity(const Vector& a, const Vector& b, Vector* grad_a) {
  require(a.size() == b.size(), "cosine_similarity: size mismatch");
  const double na = std::max(a.norm(), kNormEps);
  const double nb = std::max(b.norm(), kNormEps);
  const double c = a.dot(b) / (na * nb);
  if (grad_a) *grad_a = b / (na * nb) - c * a / (na * na);
  return c;
}

RegionListResult rfc_loss(const std::vector<RegionFeature>& student, const std::vector<RegionFeature>& target,
                          const LossWeights& w) {
  require(student.size() == target.size(), "rfc_loss: region counts differ");
  RegionListResult r;
  const int M = static_cast<int>(student.size());
  r.grad.assign(student.size(), Vector::Zero(M ? student[0].vector.size() : 0));
  if (M < 2) {
    report_degeneracy("degenerate contrastive batch: RFC needs at least 2 regions");
    r.degenerate = true;
    return r;
  }
  Matrix sims(M, M);
  std::vector<std::vector<Vector>> dsim(M, std::vector<Vector>(M));
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < M; ++k)
      sims(i, k) = cosine_similarity(student[k].vector, target[i].vector,
                                     &dsim[i][k]);
  Matrix d_sims;
  r.value = contrastive_sum(sims, w.tau_f, d_sims);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < M; ++k)
      r.grad[k] += d_sims(i, k) * dsim[i][k];
  return r;
}

ProbResult rcc_loss(const Matrix& class_probs, const SegmentSet& pseudo, const Assignment& assignment) {
  check_assignment(assignment, static_cast<int>(class_probs.rows()), pseudo.size());
  ProbResult r;
  r.grad = Matrix::Zero(class_probs.rows(), class_probs.cols());
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const int j = assignment.sigma[i];
    const int column = pseudo.segments[i].class_id - 1;
    require(column >= 0 && column < class_probs.cols() - 1, "pseudo class out of range");
    const double raw = class_probs(j, column);
    const double p = std::max(raw, kLogClamp);
    r.value += -std::log(p);
    if (raw > kLogClamp) r.grad(j, column) += -1.0 / p;
  }
  return r;
}

UnionResult class_union(const std::vector<Matrix>& masks, const Matrix& class_probs, int class_c, int fallback) {
  require(!masks.empty(), "class_union: no student masks");
  require(class_c >= 1 && class_c <= class_probs.cols() - 1, "class_union: class out of range");
  UnionResult u;
  for (Eigen::Index j = 0; j < class_probs.rows(); ++j) {
    Eigen::Index best;
    class_probs.row(j).maxCoeff(&best);
    if (best == class_c - 1) u.members.push_back(static_cast<int>(j));
  }
  if (u.members.empty()) {
    require(fallback >= 0 && fallback < static_cast<int>(masks.size()), "class_union: bad fallback index");
    u.members.push_back(fallback);
  }
  const Matrix& first = masks[u.members[0]];
  u.mask = first;
  u.source.setConstant(first.rows(), first.cols(), u.members[0]);
  for (std::size_t k = 1; k < u.members.size(); ++k) {
    const Matrix& m = masks[u.members[k]];
    for (Eigen::Index p = 0; p < m.size(); ++p)
      if (m.data()[p] > u.mask.data()[p]) {
        u.mask.data()[p] = m.data()[p];
        u.source.data()[p] = u.members[k];
      }
  }
  return u;
}

LossResult smc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& w) {
  const int N = preds.num_queries();
  check_assignment(assignment, N, pseudo.size());
  LossResult r;
  r.grad.soft_masks.assign(N, Matrix());
  // One term per distinct pseudo class, ascending.
  std::map<int, std::size_t> first_of_class;
  for (std::size_t i = 0; i < pseudo.size(); ++i) first_of_class.emplace(pseudo.segments[i].class_id, i);
  // Pixels the loss reads: all of them, or only those some pseudo segment covers.
  std::vector<Eigen::Index> pixels;
  if (w.smc_ignore_uncovered) {
    Matrix covered = Matrix::Zero(pseudo.height, pseudo.width);
    for (const Segment& s : pseudo.segments) covered = covered.cwiseMax(s.mask);
    for (Eigen::Index p = 0; p < covered.size(); ++p)
      if (covered.data()[p] > 0.5) pixels.push_back(p);
  } else {
    pixels.resize(static_cast<std::size_t>(pseudo.height) * pseudo.width);
    std::iota(pixels.begin(), pixels.end(), Eigen::Index{0});
  }
  if (pixels.empty()) return r;
  const Eigen::Index P = static_cast<Eigen::Index>(pixels.size());
  for (const auto& [cls, first] : first_of_class) {
    Matrix target = Matrix::Zero(pseudo.height, pseudo.width);
    for (const Segment& s : pseudo.segments)
      if (s.class_id == cls) target = target.cwiseMax(s.mask);
    const UnionResult u = class_union(preds.soft_masks, preds.class_probs, cls, assignment.sigma[first]);
    Matrix pred_px(1, P), target_px(1, P);
    for (Eigen::Index k = 0; k < P; ++k) {
      pred_px(0, k) = u.mask.data()[pixels[k]];
      target_px(0, k) = target.data()[pixels[k]];
    }
    const MaskLossResult ml = mask_loss(pred_px, target_px, w);
    r.value += ml.value;
    for (Eigen::Index k = 0; k < P; ++k) {
      const Eigen::Index p = pixels[k];
      Matrix& g = r.grad.soft_masks[u.source.data()[p]];
      if (g.size() == 0) g = Matrix::Zero(preds.height, preds.width);
      g.data()[p] += ml.grad(0, k);
    }
  }
  return r;
}

LossResult rmc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& w) {
  MaskListResult m = rmc_loss(preds.soft_masks, pseudo, assignment, w);
  LossResult r;
  r.value = m.value;
  r.degenerate = m.degenerate;
  r.grad.soft_masks = std::move(m.grad);
  return r;
}

LossResult rcc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment) {
  ProbResult p = rcc_loss(preds.class_probs, pseudo, assignment);
  LossResult r;
  r.value = p.value;
  r.grad.class_probs = std::move(p.grad);
  return r;
}

LossResult rfc_loss(const PredictionSet& preds, const SegmentSet& pseudo, const Assignment& assignment,
                    const LossWeights& w, const Matrix* target_features) {
  const int N = preds.num_queries();
  check_assignment(assignment, N, pseudo.size());
  const int fh = preds.feature_height, fw = preds.feature_width;
  const Matrix& F = preds.pixel_features;
  const Matrix& Ft = target_features ? *target_features : F;
  require(Ft.rows() == F.rows() && Ft.cols() == F.cols(), "rfc_loss: target feature shape mismatch");
  std::vector<RegionFeature> student, target;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const int j = assignment.sigma[i];
    student.push_back(region_pool(preds.soft_masks[j], F, fh, fw, w.pooling, j));
    target.push_back(region_pool(pseudo.segments[i].mask, Ft, fh, fw, w.pooling, static_cast<int>(i)));
  }
  RegionListResult rl = rfc_loss(student, target, w);
  LossResult r;
  r.value = rl.value;
  r.degenerate = rl.degenerate;
  if (rl.degenerate) return r;
  r.grad.soft_masks.assign(N, Matrix());
  r.grad.pixel_features = Matrix::Zero(F.rows(), F.cols());
  // Target regions are constants: no gradient reaches F through them.
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    const int j = assignment.sigma[i];
    Matrix dm, dF;
    region_pool_backward(preds.soft_masks[j], F, fh, fw, w.pooling, rl.grad[i], &dm, &dF);
    r.grad.soft_masks[j] = std::move(dm);
    r.grad.pixel_features += dF;
  }
  return r;
}

double unlabeled_loss(const UnlabeledParts& parts, const LossWeights& w) {
  return w.beta[0] * parts.rcc + w.beta[1] * parts.smc + w.beta[2] * parts.rmc + w.beta[3] * parts.rfc;
}

double total_loss(double supervised, double unlabeled, const LossWeights& w) {
  return supervised + w.alpha * unlabeled;
}

}  // namespace rc2l
