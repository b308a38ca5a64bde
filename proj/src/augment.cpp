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
#include "rc2l/augment.hpp"

#include <algorithm>
#include <sstream>

namespace rc2l {

namespace {

// Output pixel -> pixel in resized coordinates.
inline void out_to_resized(const TransformRecord& r, int ox, int oy, int& rx, int& ry) {
  rx = r.crop.x + (r.flip ? r.crop.w - 1 - ox : ox);
  ry = r.crop.y + oy;
}

// Continuous source coordinate of a resized-grid pixel centre (align_corners
// = false convention).
inline double resized_to_source(int r, int resized, int source) {
  return (r + 0.5) * static_cast<double>(source) / resized - 0.5;
}

inline int nearest_source(int r, int resized, int source) {
  const int s = static_cast<int>(std::floor((r + 0.5) * static_cast<double>(source) / resized));
  return std::clamp(s, 0, source - 1);
}

// Source-frame pixel that the record samples for output pixel (ox, oy).
inline void out_to_source_nearest(const TransformRecord& r, int ox, int oy, int& sx, int& sy) {
  int rx, ry;
  out_to_resized(r, ox, oy, rx, ry);
  sx = nearest_source(rx, r.resized_width, r.source_width);
  sy = nearest_source(ry, r.resized_height, r.source_height);
}

// Inverse map: continuous source position -> output pixel of `r`, or false if
// it falls outside the crop.
bool source_to_out(const TransformRecord& r, double sx, double sy, int& ox, int& oy) {
  const long rx = std::lround((sx + 0.5) * r.resized_width / r.source_width - 0.5);
  const long ry = std::lround((sy + 0.5) * r.resized_height / r.source_height - 0.5);
  const long cx = rx - r.crop.x;
  const long cy = ry - r.crop.y;
  if (cx < 0 || cy < 0 || cx >= r.crop.w || cy >= r.crop.h) return false;
  ox = static_cast<int>(r.flip ? r.crop.w - 1 - cx : cx);
  oy = static_cast<int>(cy);
  return true;
}

void validate_record(const TransformRecord& r) {
  require(r.source_height > 0 && r.source_width > 0, "record has empty source extent");
  require(r.crop.x >= 0 && r.crop.y >= 0 && r.crop.w > 0 && r.crop.h > 0 &&
              r.crop.x + r.crop.w <= r.resized_width && r.crop.y + r.crop.h <= r.resized_height,
          "crop box lies outside the resized image");
  if (r.cutmix) {
    const Box& b = r.cutmix->box;
    require(b.x >= 0 && b.y >= 0 && b.w >= 0 && b.h >= 0 && b.x + b.w <= r.crop.w &&
                b.y + b.h <= r.crop.h,
            "CutMix box lies outside the output frame");
  }
}

ColorJitter draw_jitter(Rng& rng, double strength) {
  ColorJitter j;
  if (strength <= 0) return j;
  j.brightness = rng.uniform(1.0 - strength, 1.0 + strength);
  j.contrast = rng.uniform(1.0 - strength, 1.0 + strength);
  j.saturation = rng.uniform(1.0 - strength, 1.0 + strength);
  return j;
}

}  // namespace

Image apply_color(const Image& image, const ColorJitter& jitter) {
  Image out = image;
  if (jitter.brightness != 1.0) out.pixels *= jitter.brightness;
  if (image.channels == 3 && (jitter.contrast != 1.0 || jitter.saturation != 1.0)) {
    const Eigen::RowVectorXd gray =
        0.299 * out.pixels.row(0) + 0.587 * out.pixels.row(1) + 0.114 * out.pixels.row(2);
    if (jitter.contrast != 1.0) {
      const double mean = gray.mean();
      out.pixels = ((out.pixels.array() - mean) * jitter.contrast + mean).matrix();
    }
    if (jitter.saturation != 1.0) {
      const Eigen::RowVectorXd g =
          0.299 * out.pixels.row(0) + 0.587 * out.pixels.row(1) + 0.114 * out.pixels.row(2);
      for (int c = 0; c < 3; ++c)
        out.pixels.row(c) = g + jitter.saturation * (out.pixels.row(c) - g);
    }
  }
  out.pixels = out.pixels.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

Image apply_record(const Image& image, const TransformRecord& r) {
  validate_record(r);
  require(image.height == r.source_height && image.width == r.source_width,
          "image does not match the record's source extent");
  Image out(image.channels, r.crop.h, r.crop.w);
  const bool same_size = r.resized_height == r.source_height && r.resized_width == r.source_width;
  for (int oy = 0; oy < r.crop.h; ++oy) {
    for (int ox = 0; ox < r.crop.w; ++ox) {
      int rx, ry;
      out_to_resized(r, ox, oy, rx, ry);
      if (same_size) {
        for (int c = 0; c < image.channels; ++c) out.at(c, oy, ox) = image.at(c, ry, rx);
        continue;
      }
      // Bilinear sample with edge clamping.
      const double sx = std::max(0.0, resized_to_source(rx, r.resized_width, r.source_width));
      const double sy = std::max(0.0, resized_to_source(ry, r.resized_height, r.source_height));
      const int x0 = std::min(static_cast<int>(sx), r.source_width - 1);
      const int y0 = std::min(static_cast<int>(sy), r.source_height - 1);
      const int x1 = std::min(x0 + 1, r.source_width - 1);
      const int y1 = std::min(y0 + 1, r.source_height - 1);
      const double lx = sx - x0, ly = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        out.at(c, oy, ox) = (1 - ly) * ((1 - lx) * image.at(c, y0, x0) + lx * image.at(c, y0, x1)) +
                            ly * ((1 - lx) * image.at(c, y1, x0) + lx * image.at(c, y1, x1));
      }
    }
  }
  return apply_color(out, r.color);
}

Augmented weak_augment(const Image& image, std::uint64_t seed, const AugmentConfig& config) {
  validate_image(image);
  require(config.scale_min > 0 && config.scale_max >= config.scale_min, "invalid resize scale range");
  Rng rng(seed);
  TransformRecord r;
  r.source_height = image.height;
  r.source_width = image.width;
  const double scale = rng.uniform(config.scale_min, config.scale_max);
  // Short-edge resize: both edges scale by the factor applied to the short one.
  const int short_edge = std::min(image.height, image.width);
  const double factor = std::round(short_edge * scale) / short_edge;
  r.resized_height = static_cast<int>(std::lround(image.height * factor));
  r.resized_width = static_cast<int>(std::lround(image.width * factor));
  if (config.crop_height > r.resized_height || config.crop_width > r.resized_width)
    fail(ErrorKind::kInvalidArgument, "crop size larger than resized image");
  r.crop.w = config.crop_width;
  r.crop.h = config.crop_height;
  r.crop.x = rng.uniform_int(0, r.resized_width - r.crop.w);
  r.crop.y = rng.uniform_int(0, r.resized_height - r.crop.h);
  r.flip = rng.bernoulli(config.flip_prob);
  r.color = draw_jitter(rng, config.weak_jitter);
  return {apply_record(image, r), r};
}

Augmented strong_augment(const Image& image_a, const Image& image_b, std::uint64_t seed,
                         const AugmentConfig& config, const TransformRecord& base,
                         const std::string& partner_id) {
  validate_image(image_a);
  validate_image(image_b);
  require(image_a.height == image_b.height && image_a.width == image_b.width &&
              image_a.channels == image_b.channels,
          "CutMix partners must share a shape");
  require(config.cutmix_area_min >= 0 && config.cutmix_area_max <= 1 &&
              config.cutmix_area_max >= config.cutmix_area_min,
          "invalid CutMix area range");
  Rng rng(seed);
  const int H = image_a.height, W = image_a.width;
  const double area = rng.uniform(config.cutmix_area_min, config.cutmix_area_max) * H * W;
  const double aspect = rng.uniform(config.cutmix_aspect_min, config.cutmix_aspect_max);
  Box box;
  box.w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 0, W);
  box.h = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 0, H);
  if (box.w == 0 || box.h == 0) box.w = box.h = 0;
  box.x = rng.uniform_int(0, W - box.w);
  box.y = rng.uniform_int(0, H - box.h);

  Image mixed = image_a;
  for (int y = box.y; y < box.y + box.h; ++y)
    for (int x = box.x; x < box.x + box.w; ++x)
      for (int c = 0; c < image_a.channels; ++c) mixed.at(c, y, x) = image_b.at(c, y, x);

  TransformRecord r = base;
  r.cutmix = CutMixRecord{box, partner_id};
  // The weak color is already baked into image_a; the record keeps the
  // strong factors so the view can be replayed from the weak one.
  r.color = draw_jitter(rng, config.strong_jitter);
  return {apply_color(mixed, r.color), r};
}

SegmentSet warp_segments(const SegmentSet& segments, const TransformRecord& r) {
  validate_record(r);
  require(segments.height == r.source_height && segments.width == r.source_width,
          "segments do not match the record's source extent");
  SegmentSet out;
  out.height = r.crop.h;
  out.width = r.crop.w;
  for (const Segment& seg : segments.segments) {
    Matrix m = Matrix::Zero(r.crop.h, r.crop.w);
    for (int oy = 0; oy < r.crop.h; ++oy)
      for (int ox = 0; ox < r.crop.w; ++ox) {
        int sx, sy;
        out_to_source_nearest(r, ox, oy, sx, sy);
        m(oy, ox) = seg.mask(sy, sx);
      }
    if (m.sum() > 0) out.segments.push_back(Segment{seg.class_id, std::move(m), seg.confidence});
  }
  return out;
}

SegmentSet transport_segments(const SegmentSet& segments, const TransformRecord& src,
                              const TransformRecord& dst, const SegmentSet* partner) {
  validate_record(src);
  validate_record(dst);
  require(src.source_height == dst.source_height && src.source_width == dst.source_width,
          "records describe different source images");
  require(segments.height == src.crop.h && segments.width == src.crop.w,
          "segments are not in the source record's frame");
  const bool has_box = dst.cutmix && !dst.cutmix->box.empty();
  if (has_box && partner == nullptr)
    fail(ErrorKind::kInvalidArgument, "record has a CutMix box but no partner segments were given");
  const int H = dst.crop.h, W = dst.crop.w;
  if (partner != nullptr && has_box)
    require(partner->height == H && partner->width == W, "partner segments are not in the output frame");

  const bool same_geometry = src.resized_height == dst.resized_height &&
                             src.resized_width == dst.resized_width && src.crop == dst.crop &&
                             src.flip == dst.flip;

  // For every output pixel, the source-frame pixel it reads (or -1).
  std::vector<int> lookup(static_cast<std::size_t>(H) * W, -1);
  for (int oy = 0; oy < H; ++oy)
    for (int ox = 0; ox < W; ++ox) {
      if (same_geometry) {
        lookup[oy * W + ox] = oy * W + ox;
        continue;
      }
      int rx, ry;
      out_to_resized(dst, ox, oy, rx, ry);
      const double sx = (rx + 0.5) * dst.source_width / dst.resized_width - 0.5;
      const double sy = (ry + 0.5) * dst.source_height / dst.resized_height - 0.5;
      int px, py;
      if (source_to_out(src, sx, sy, px, py)) lookup[oy * W + ox] = py * src.crop.w + px;
    }

  SegmentSet out;
  out.height = H;
  out.width = W;
  for (const Segment& seg : segments.segments) {
    Matrix m = Matrix::Zero(H, W);
    for (int oy = 0; oy < H; ++oy)
      for (int ox = 0; ox < W; ++ox) {
        if (has_box && dst.cutmix->box.contains(ox, oy)) continue;
        const int k = lookup[oy * W + ox];
        if (k >= 0) m(oy, ox) = seg.mask.data()[k];
      }
    if (m.sum() > 0) out.segments.push_back(Segment{seg.class_id, std::move(m), seg.confidence});
  }
  if (has_box) {
    const Box& b = dst.cutmix->box;
    for (const Segment& seg : partner->segments) {
      Matrix m = Matrix::Zero(H, W);
      m.block(b.y, b.x, b.h, b.w) = seg.mask.block(b.y, b.x, b.h, b.w);
      if (m.sum() > 0) out.segments.push_back(Segment{seg.class_id, std::move(m), seg.confidence});
    }
  }
  return out;
}

std::string to_text(const TransformRecord& r) {
  std::ostringstream os;
  os << "source " << r.source_height << " " << r.source_width << "\n"
     << "resized " << r.resized_height << " " << r.resized_width << "\n"
     << "crop " << r.crop.x << " " << r.crop.y << " " << r.crop.w << " " << r.crop.h << "\n"
     << "flip " << (r.flip ? 1 : 0) << "\n"
     << "color " << r.color.brightness << " " << r.color.contrast << " " << r.color.saturation << "\n";
  if (r.cutmix) {
    const Box& b = r.cutmix->box;
    os << "cutmix " << b.x << " " << b.y << " " << b.w << " " << b.h << " "
       << (r.cutmix->partner_id.empty() ? "-" : r.cutmix->partner_id) << "\n";
  }
  return os.str();
}

}  // namespace rc2l
