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
#ifndef RC2L_MATCHING_HPP_
#define RC2L_MATCHING_HPP_

#include <string>
#include <vector>

#include "rc2l/model.hpp"

namespace rc2l {

struct MatchWeights {
  double lambda_class = 1.0;
  double lambda_focal = 20.0;
  double lambda_dice = 1.0;
};

// costs(j, i): prediction j against target i. Rows are predictions.
struct CostMatrix {
  Matrix costs;
  Matrix class_cost;
  Matrix focal_cost;
  Matrix dice_cost;

  int num_predictions() const { return static_cast<int>(costs.rows()); }
  int num_targets() const { return static_cast<int>(costs.cols()); }
};

struct Assignment {
  std::vector<int> sigma;      // target i -> prediction sigma[i]
  std::vector<int> matched;    // ID, ascending
  std::vector<int> unmatched;  // prediction indices not in ID, ascending
  int num_predictions = 0;

  int num_targets() const { return static_cast<int>(sigma.size()); }
  // Target index assigned to prediction j, or -1.
  int target_of(int prediction) const;
};

// cost(j, i) = -lambda_class * p_j(c_i) + lambda_focal * focal(m_j, m_i)
//              + lambda_dice * dice_loss(m_j, m_i)
// on a stop-gradient copy of the predictions.
CostMatrix build_cost_matrix(const PredictionSet& preds, const SegmentSet& targets,
                             const MatchWeights& weights);

// Minimum-cost injective assignment of every target (column) to a distinct
// prediction (row). Ties go to the lowest prediction index.
Assignment hungarian(const Matrix& costs);
inline Assignment hungarian(const CostMatrix& cost) { return hungarian(cost.costs); }

// Sum of costs(sigma[i], i) in target order.
double assignment_cost(const Matrix& costs, const Assignment& assignment);

Assignment match_targets(const PredictionSet& preds, const SegmentSet& targets, const MatchWeights& weights);

std::string to_text(const CostMatrix& cost, const Assignment& assignment);

}  // namespace rc2l

#endif  // RC2L_MATCHING_HPP_
