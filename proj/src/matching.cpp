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
#include "rc2l/matching.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "rc2l/losses.hpp"

namespace rc2l {

int Assignment::target_of(int prediction) const {
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] == prediction) return static_cast<int>(i);
  return -1;
}

CostMatrix build_cost_matrix(const PredictionSet& preds, const SegmentSet& targets, const MatchWeights& weights) {
  require(!targets.empty(), "cost matrix needs at least one target");
  const int N = preds.num_queries();
  const int M = static_cast<int>(targets.size());
  LossWeights lw;  // focal parameters shared with the mask loss
  CostMatrix c;
  c.class_cost.resize(N, M);
  c.focal_cost.resize(N, M);
  c.dice_cost.resize(N, M);
  for (int i = 0; i < M; ++i) {
    const Segment& t = targets.segments[i];
    if (t.mask.sum() <= 0) fail(ErrorKind::kInvalidArgument, "target segment has an empty mask");
    require(t.class_id >= 1 && t.class_id <= preds.num_classes(), "target class out of range");
    for (int j = 0; j < N; ++j) {
      const Matrix& m = preds.soft_masks[j];
      c.class_cost(j, i) = -preds.class_probs(j, t.class_id - 1);
      c.focal_cost(j, i) = focal_loss(m, t.mask, lw.focal_alpha, lw.focal_gamma);
      c.dice_cost(j, i) = dice_loss(m, t.mask);
    }
  }
  c.costs = weights.lambda_class * c.class_cost + weights.lambda_focal * c.focal_cost +
            weights.lambda_dice * c.dice_cost;
  return c;
}

// Shortest augmenting path with potentials, O(M^2 N). Targets are the rows of
// the internal problem, predictions its columns. Scanning columns in
// ascending order with strict comparisons gives lowest-index tie-breaking.
Assignment hungarian(const Matrix& costs) {
  require(costs.rows() >= costs.cols(), "hungarian needs at least as many predictions as targets");
  if (!costs.allFinite()) fail(ErrorKind::kNumerical, "cost matrix has non-finite entries");
  const std::size_t N = costs.rows();
  const std::size_t M = costs.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto cost = [&](std::size_t row, std::size_t col) {
    return costs(static_cast<Eigen::Index>(col - 1), static_cast<Eigen::Index>(row - 1));
  };

  // 1-based; index 0 is the virtual source column.
  std::vector<double> u(M + 1, 0.0), v(N + 1, 0.0);
  std::vector<std::size_t> owner(N + 1, 0);  // column -> row, 0 = free
  std::vector<std::size_t> way(N + 1, 0);
  for (std::size_t row = 1; row <= M; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(N + 1, kInf);
    std::vector<char> used(N + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r = owner[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= N; ++col) {
        if (used[col]) continue;
        const double cur = cost(r, col) - u[r] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= N; ++col) {
        if (used[col]) {
          u[owner[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  Assignment a;
  a.num_predictions = static_cast<int>(N);
  a.sigma.assign(M, -1);
  for (std::size_t col = 1; col <= N; ++col) {
    if (owner[col] > 0) a.sigma[owner[col] - 1] = static_cast<int>(col - 1);
    else a.unmatched.push_back(static_cast<int>(col - 1));
  }
  a.matched = a.sigma;
  std::sort(a.matched.begin(), a.matched.end());
  return a;
}

double assignment_cost(const Matrix& costs, const Assignment& a) {
  double total = 0;
  for (std::size_t i = 0; i < a.sigma.size(); ++i) total += costs(a.sigma[i], static_cast<Eigen::Index>(i));
  return total;
}

Assignment match_targets(const PredictionSet& preds, const SegmentSet& targets, const MatchWeights& weights) {
  if (targets.empty()) {
    Assignment a;
    a.num_predictions = preds.num_queries();
    for (int j = 0; j < a.num_predictions; ++j) a.unmatched.push_back(j);
    return a;
  }
  require(static_cast<int>(targets.size()) <= preds.num_queries(), "more targets than queries");
  return hungarian(build_cost_matrix(preds, targets, weights));
}

std::string to_text(const CostMatrix& cost, const Assignment& assignment) {
  std::ostringstream os;
  os << "cost " << cost.num_predictions() << " " << cost.num_targets() << "\n";
  for (int j = 0; j < cost.num_predictions(); ++j) {
    for (int i = 0; i < cost.num_targets(); ++i) os << (i ? "\t" : "") << cost.costs(j, i);
    os << "\n";
  }
  os << "sigma";
  for (int s : assignment.sigma) os << " " << s;
  os << "\ntotal " << assignment_cost(cost.costs, assignment) << "\n";
  return os.str();
}

}  // namespace rc2l
