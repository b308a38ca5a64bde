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
#ifndef RC2L_DATA_HPP_
#define RC2L_DATA_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rc2l/common.hpp"

namespace rc2l {

// Channel-planar image, pixels(c, y * width + x) in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  Matrix pixels;

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w), pixels(Matrix::Zero(c, h * w)) {}

  double& at(int c, int y, int x) { return pixels(c, y * width + x); }
  double at(int c, int y, int x) const { return pixels(c, y * width + x); }
};

// Throws unless height/width are positive multiples of 4 and values are finite.
void validate_image(const Image& image);

struct Segment {
  int class_id = 0;  // 1..K
  Matrix mask;       // H x W, binary for ground truth and pseudo labels
  std::optional<double> confidence;
};

struct SegmentSet {
  int height = 0;
  int width = 0;
  std::vector<Segment> segments;

  std::size_t size() const { return segments.size(); }
  bool empty() const { return segments.empty(); }
};

using LabelMap = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-pixel class of a disjoint segment set; pixels covered by nothing get
// `fill`.
LabelMap to_label_map(const SegmentSet& segments, int fill = 0);

struct SceneConfig {
  int height = 64;
  int width = 64;
  int num_classes = 4;  // class 1 is background
  int min_shapes = 1;
  int max_shapes = 4;
  double min_size = 7.0;   // shape half-extent in pixels
  double max_size = 16.0;
  double noise_std = 0.03;
  double color_jitter = 0.12;
};

struct Scene {
  Image image;
  SegmentSet segments;
};

// Shape instances are drawn in order and occlude earlier ones; every visible
// instance becomes one segment and the uncovered remainder is the background
// segment, so the masks are a disjoint cover of the grid.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

std::vector<std::string> class_names(int num_classes);

enum class Split { kLabeled, kUnlabeled, kValidation };
std::string to_string(Split split);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string id;
  Split split = Split::kLabeled;
  std::string checksum;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  int num_classes = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> ids(Split split) const;
  const ManifestEntry& entry(const std::string& id) const;
};

struct DatasetConfig {
  SceneConfig scene;
  std::uint64_t seed = 0;
  int num_train = 512;
  int num_val = 64;
  // Labeled share of the training samples as 1/labeled_divisor, unless an
  // explicit labeled_count is given.
  int labeled_divisor = 8;
  std::optional<int> labeled_count;
};

int labeled_size(const DatasetConfig& config);

// Writes manifest.txt, images/<id>.ppm and masks/<id>/<k>.rle under `root`.
// Masks are written for labeled and validation samples only.
DatasetManifest build_dataset(const std::filesystem::path& root, const DatasetConfig& config,
                              bool force = false);

DatasetManifest load_manifest(const std::filesystem::path& root);

struct Sample {
  std::string id;
  Image image;
  std::optional<SegmentSet> segments;
};

Sample load_sample(const DatasetManifest& manifest, const std::string& id);

// In-memory copy of every sample in the manifest, grouped by split.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::vector<Sample> validation;
};

Dataset load_dataset(const DatasetManifest& manifest);

// 8-bit binary PPM (P6). Values are rounded to the nearest 1/255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Run-length mask file: "rle <class> <H> <W>" then run lengths alternating
// 0-runs and 1-runs in raster order, starting with a 0-run.
void write_rle(const std::filesystem::path& path, const Segment& segment);
Segment read_rle(const std::filesystem::path& path);

}  // namespace rc2l

#endif  // RC2L_DATA_HPP_
