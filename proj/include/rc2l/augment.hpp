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
#ifndef RC2L_AUGMENT_HPP_
#define RC2L_AUGMENT_HPP_

#include <optional>
#include <string>

#include "rc2l/data.hpp"

namespace rc2l {

struct Box {
  int x = 0, y = 0, w = 0, h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  bool operator==(const Box&) const = default;
};

struct ColorJitter {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  bool operator==(const ColorJitter&) const = default;
};

struct CutMixRecord {
  Box box;  // in the output frame
  std::string partner_id;
  bool operator==(const CutMixRecord&) const = default;
};

// Everything needed to replay an augmentation: source -> resize -> crop ->
// horizontal flip -> color, plus an optional CutMix paste.
struct TransformRecord {
  int source_height = 0;
  int source_width = 0;
  int resized_height = 0;
  int resized_width = 0;
  Box crop;  // in resized coordinates
  bool flip = false;
  ColorJitter color;
  std::optional<CutMixRecord> cutmix;

  bool operator==(const TransformRecord&) const = default;
  int out_height() const { return crop.h; }
  int out_width() const { return crop.w; }
};

struct AugmentConfig {
  int crop_height = 64;
  int crop_width = 64;
  double scale_min = 1.0;
  double scale_max = 1.25;
  double flip_prob = 0.5;
  // Multiplicative color factors are drawn from [1 - j, 1 + j].
  double weak_jitter = 0.1;
  double strong_jitter = 0.4;
  double cutmix_area_min = 0.2;
  double cutmix_area_max = 0.5;
  double cutmix_aspect_min = 0.5;
  double cutmix_aspect_max = 2.0;
};

struct Augmented {
  Image image;
  TransformRecord record;
};

Augmented weak_augment(const Image& image, std::uint64_t seed, const AugmentConfig& config);

// The strong view inherits the geometry of `base` (the weak record of
// image_a), pastes a box of image_b and applies the stronger color jitter.
Augmented strong_augment(const Image& image_a, const Image& image_b, std::uint64_t seed,
                         const AugmentConfig& config, const TransformRecord& base,
                         const std::string& partner_id = "");

// Replays the geometry and color of a record (no CutMix) on a source image.
Image apply_record(const Image& image, const TransformRecord& record);
Image apply_color(const Image& image, const ColorJitter& jitter);

// Nearest-neighbour warp of source-frame segments into the record's frame;
// segments that end up empty are dropped.
SegmentSet warp_segments(const SegmentSet& segments, const TransformRecord& record);

// Moves segments expressed in the frame of record_src into the frame of
// record_dst. Inside record_dst's CutMix box the partner's segments (already
// in the output frame) are used instead.
SegmentSet transport_segments(const SegmentSet& segments, const TransformRecord& record_src,
                              const TransformRecord& record_dst,
                              const SegmentSet* partner_segments);

std::string to_text(const TransformRecord& record);

}  // namespace rc2l

#endif  // RC2L_AUGMENT_HPP_
