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
#ifndef RC2L_MODEL_HPP_
#define RC2L_MODEL_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "rc2l/data.hpp"

namespace rc2l {

// Toy mask-classification network:
//
//   image -> conv3x3/s2 -> SiLU -> conv3x3/s2 -> SiLU          (stride 4)
//         -> pixel decoder: conv3x3 -> SiLU -> conv1x1 = F    (C x H/4 x W/4)
//   queries Q (N x C) pool F under sigmoid(Q.F) and add the pooled feature;
//   class head: linear -> softmax over K+1 (last column = no-object);
//   mask head: two-layer MLP -> f (N x C);
//   masks m_j = sigmoid(upsample(f_j . F / sqrt(C))).
struct ArchConfig {
  int in_channels = 3;
  int stem_width = 32;
  int width = 64;
  int embed_dim = 64;  // C
  int num_queries = 8; // N
  int num_classes = 4; // K, without the no-object label

  void validate() const;
  std::string fingerprint() const;
};

struct ParamTensor {
  std::string name;
  Matrix value;
  bool decay = true;  // weight decay applies (false for biases)
};

// Ordered named arrays; the order is part of the checkpoint and EMA contract.
struct ModelParams {
  std::vector<ParamTensor> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t num_scalars() const;
  const Matrix& get(const std::string& name) const;
  Matrix& get(const std::string& name);
  bool same_layout(const ModelParams& other) const;
  ModelParams zeros_like() const;
  bool all_finite() const;
};

ModelParams init_params(std::uint64_t seed, const ArchConfig& arch);

struct PredictionSet {
  int height = 0;        // H of the input image
  int width = 0;         // W
  int feature_height = 0;
  int feature_width = 0;
  Matrix class_probs;        // N x (K+1)
  Matrix mask_embeddings;    // N x C
  Matrix pixel_features;     // C x (H/4 * W/4)
  std::vector<Matrix> soft_masks;  // N masks, H x W

  int num_queries() const { return static_cast<int>(class_probs.rows()); }
  int num_classes() const { return static_cast<int>(class_probs.cols()) - 1; }
  int no_object() const { return num_classes(); }  // column of the no-object label
};

// Gradient of a scalar objective with respect to the forward outputs. Empty
// matrices mean "no contribution".
struct PredictionGrad {
  Matrix class_probs;
  std::vector<Matrix> soft_masks;
  Matrix pixel_features;

  static PredictionGrad zeros_like(const PredictionSet& preds);
  PredictionGrad& operator+=(const PredictionGrad& other);
};

// Intermediates kept by forward for the backward pass.
struct ForwardCache {
  Matrix image;
  Matrix cols1, a1, z1;
  Matrix cols2, a2, z2;
  Matrix cols3, a3, z3;
  Matrix scores, attn, pooled;
  Vector attn_mass;
  Matrix hidden, cls_logits, e1_pre, e1;
  Matrix upsample_h, upsample_w;
  int in_h = 0, in_w = 0, h1 = 0, w1 = 0, h2 = 0, w2 = 0;
};

PredictionSet forward(const Image& image, const ModelParams& params, const ArchConfig& arch,
                      ForwardCache* cache = nullptr);

// Back-propagates `grad` through the cached forward. Returns parameter
// gradients laid out like `params`; fills `image_grad` when given.
ModelParams backward(const ForwardCache& cache, const PredictionSet& preds, const PredictionGrad& grad,
                     const ModelParams& params, const ArchConfig& arch, Matrix* image_grad = nullptr);

// Bilinear (align_corners = false) interpolation operator mapping a length
// `in` signal to length `out`: out = U * in.
Matrix bilinear_operator(int out, int in);

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch);
ArchConfig read_checkpoint_arch(const std::filesystem::path& path);

}  // namespace rc2l

#endif  // RC2L_MODEL_HPP_
