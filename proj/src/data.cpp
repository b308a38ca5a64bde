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
#include "rc2l/data.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace rc2l {
namespace fs = std::filesystem;

namespace {

constexpr int kNumShapeTypes = 3;  // circle, rectangle, triangle

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{0, 0, 0};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

struct Shape {
  int type;
  double cx, cy, sx, sy;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    switch (type) {
      case 0:
        return dx * dx + dy * dy <= sx * sx;
      case 1:
        return std::abs(dx) <= sx && std::abs(dy) <= sy;
      default: {
        // Upward isosceles triangle inside the box [-sx, sx] x [-sy, sy].
        if (dy < -sy || dy > sy) return false;
        const double half = sx * (dy + sy) / (2.0 * sy);
        return std::abs(dx) <= half;
      }
    }
  }
};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::string sample_id(const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05d", prefix, index);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Checksum over the image file and the sample's mask files in index order.
std::string sample_checksum(const fs::path& root, const std::string& id, std::size_t num_masks) {
  std::string bytes = read_file(root / "images" / (id + ".ppm"));
  std::uint64_t h = fnv1a(bytes.data(), bytes.size());
  for (std::size_t k = 0; k < num_masks; ++k) {
    bytes = read_file(root / "masks" / id / (std::to_string(k) + ".rle"));
    h = fnv1a(bytes.data(), bytes.size(), h);
  }
  return hex64(h);
}

std::size_t count_masks(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  while (fs::exists(dir / (std::to_string(n) + ".rle"))) ++n;
  return n;
}

}  // namespace

void validate_image(const Image& image) {
  require(image.height > 0 && image.width > 0, "image has empty extent");
  require(image.height % 4 == 0 && image.width % 4 == 0,
          "image height and width must be divisible by 4");
  require(image.pixels.rows() == image.channels &&
              image.pixels.cols() == static_cast<Eigen::Index>(image.height) * image.width,
          "image pixel buffer does not match its shape");
  if (!image.pixels.allFinite()) fail(ErrorKind::kNumerical, "image contains non-finite values");
}

LabelMap to_label_map(const SegmentSet& segments, int fill) {
  LabelMap out = LabelMap::Constant(segments.height, segments.width, fill);
  for (const Segment& seg : segments.segments)
    for (int y = 0; y < segments.height; ++y)
      for (int x = 0; x < segments.width; ++x)
        if (seg.mask(y, x) > 0.5) out(y, x) = seg.class_id;
  return out;
}

std::vector<std::string> class_names(int num_classes) {
  static const char* kShapes[kNumShapeTypes] = {"circle", "rectangle", "triangle"};
  std::vector<std::string> names{"background"};
  for (int k = 2; k <= num_classes; ++k) {
    std::string name = kShapes[(k - 2) % kNumShapeTypes];
    if (k - 2 >= kNumShapeTypes) name += "-" + std::to_string((k - 2) / kNumShapeTypes);
    names.push_back(name);
  }
  return names;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  require(config.height > 0 && config.width > 0 && config.height % 4 == 0 && config.width % 4 == 0,
          "scene height and width must be positive multiples of 4");
  require(config.num_classes >= 2, "scene needs at least 2 classes (background + one object)");
  require(config.min_shapes >= 0 && config.max_shapes >= config.min_shapes,
          "invalid shape-count range");
  require(config.min_size > 0 && config.max_size >= config.min_size, "invalid shape size range");

  const int H = config.height, W = config.width, K = config.num_classes;
  Rng rng(seed);

  // Background: low-saturation base color with a linear gradient.
  const double bg_hue = rng.uniform();
  const auto bg = hsv_to_rgb(bg_hue, rng.uniform(0.0, 0.25), rng.uniform(0.25, 0.6));
  const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);

  Image image(3, H, W);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        image.at(c, y, x) = bg[c] + gx * ((x + 0.5) / W - 0.5) + gy * ((y + 0.5) / H - 0.5);

  // Instance id per pixel; 0 is background.
  LabelMap instance = LabelMap::Zero(H, W);
  std::vector<int> instance_class{1};

  const int num_shapes = config.max_shapes > 0 ? rng.uniform_int(config.min_shapes, config.max_shapes) : 0;
  for (int s = 0; s < num_shapes; ++s) {
    const int cls = rng.uniform_int(2, K);
    Shape shape;
    shape.type = (cls - 2) % kNumShapeTypes;
    shape.sx = rng.uniform(config.min_size, config.max_size);
    shape.sy = shape.type == 0 ? shape.sx : rng.uniform(config.min_size, config.max_size);
    shape.cx = rng.uniform(0.15 * W, 0.85 * W);
    shape.cy = rng.uniform(0.15 * H, 0.85 * H);

    const double hue = static_cast<double>(cls - 2) / static_cast<double>(K - 1) + 0.05;
    auto color = hsv_to_rgb(hue, 0.75, 0.9);
    for (double& ch : color) ch += rng.uniform(-config.color_jitter, config.color_jitter);

    const int id = static_cast<int>(instance_class.size());
    instance_class.push_back(cls);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (shape.contains(x + 0.5, y + 0.5)) {
          instance(y, x) = id;
          for (int c = 0; c < 3; ++c) image.at(c, y, x) = color[c];
        }
  }

  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        image.at(c, y, x) = quantize(image.at(c, y, x) + config.noise_std * rng.normal());

  Scene scene;
  scene.image = std::move(image);
  scene.segments.height = H;
  scene.segments.width = W;
  for (int id = 0; id < static_cast<int>(instance_class.size()); ++id) {
    Matrix mask = (instance.array() == id).cast<double>().matrix();
    if (mask.sum() == 0) continue;
    scene.segments.segments.push_back(Segment{instance_class[id], std::move(mask), std::nullopt});
  }
  return scene;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kLabeled: return "labeled";
    case Split::kUnlabeled: return "unlabeled";
    case Split::kValidation: return "val";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "labeled") return Split::kLabeled;
  if (s == "unlabeled") return Split::kUnlabeled;
  if (s == "val") return Split::kValidation;
  fail(ErrorKind::kData, "unknown split '" + s + "'");
}

std::vector<std::string> DatasetManifest::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e.id);
  return out;
}

const ManifestEntry& DatasetManifest::entry(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  fail(ErrorKind::kData, "sample '" + id + "' is not in the manifest");
}

int labeled_size(const DatasetConfig& config) {
  int n = 0;
  if (config.labeled_count) {
    n = *config.labeled_count;
  } else {
    const int d = config.labeled_divisor;
    require(d == 2 || d == 4 || d == 8 || d == 16, "labeled fraction must be 1/2, 1/4, 1/8 or 1/16");
    n = config.num_train / d;
  }
  require(n >= 1 && n <= config.num_train, "labeled count must be in [1, num_train]");
  return n;
}

DatasetManifest build_dataset(const fs::path& root, const DatasetConfig& config, bool force) {
  require(config.num_train >= 8, "dataset needs at least 8 training samples");
  require(config.num_val >= 0, "negative validation count");
  const int num_labeled = labeled_size(config);
  const fs::path manifest_path = root / "manifest.txt";
  if (fs::exists(manifest_path) && !force)
    fail(ErrorKind::kIo, manifest_path.string() + " exists; pass force to overwrite");
  if (force) {
    fs::remove_all(root / "images");
    fs::remove_all(root / "masks");
  }
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  std::vector<int> order(config.num_train);
  for (int i = 0; i < config.num_train; ++i) order[i] = i;
  Rng split_rng(derive_seed(config.seed, "split"));
  split_rng.shuffle(order);
  std::vector<Split> train_split(config.num_train, Split::kUnlabeled);
  for (int i = 0; i < num_labeled; ++i) train_split[order[i]] = Split::kLabeled;

  DatasetManifest manifest;
  manifest.root = root;
  manifest.seed = config.seed;
  manifest.num_classes = config.scene.num_classes;
  manifest.height = config.scene.height;
  manifest.width = config.scene.width;
  manifest.class_names = class_names(config.scene.num_classes);

  auto emit = [&](const std::string& id, Split split) {
    const Scene scene = generate_scene(derive_seed(config.seed, id), config.scene);
    write_ppm(root / "images" / (id + ".ppm"), scene.image);
    std::size_t num_masks = 0;
    if (split != Split::kUnlabeled) {
      fs::create_directories(root / "masks" / id);
      for (const Segment& seg : scene.segments.segments)
        write_rle(root / "masks" / id / (std::to_string(num_masks++) + ".rle"), seg);
    }
    manifest.entries.push_back({id, split, sample_checksum(root, id, num_masks)});
  };
  for (int i = 0; i < config.num_train; ++i) emit(sample_id("t", i), train_split[i]);
  for (int i = 0; i < config.num_val; ++i) emit(sample_id("v", i), Split::kValidation);

  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + manifest_path.string());
  out << "# rc2l synthetic shapes manifest\n";
  out << "# seed\t" << config.seed << "\n";
  out << "# classes\t" << manifest.num_classes << "\n";
  out << "# size\t" << manifest.height << "\t" << manifest.width << "\n";
  for (std::size_t k = 0; k < manifest.class_names.size(); ++k)
    out << "# class\t" << (k + 1) << "\t" << manifest.class_names[k] << "\n";
  for (const auto& e : manifest.entries) out << e.id << "\t" << to_string(e.split) << "\t" << e.checksum << "\n";
  return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.txt");
  if (!in) fail(ErrorKind::kIo, "cannot open " + (root / "manifest.txt").string());
  DatasetManifest m;
  m.root = root;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "seed") ls >> m.seed;
      else if (key == "classes") ls >> m.num_classes;
      else if (key == "size") ls >> m.height >> m.width;
      else if (key == "class") {
        int k;
        std::string name;
        ls >> k >> name;
        m.class_names.push_back(name);
      }
      continue;
    }
    std::string id, split, checksum;
    if (!(ls >> id >> split >> checksum)) fail(ErrorKind::kData, "malformed manifest line: " + line);
    m.entries.push_back({id, parse_split(split), checksum});
  }
  if (m.num_classes < 2 || m.height <= 0 || m.width <= 0)
    fail(ErrorKind::kData, "manifest header is incomplete");
  return m;
}

Sample load_sample(const DatasetManifest& manifest, const std::string& id) {
  const ManifestEntry& e = manifest.entry(id);
  const fs::path image_path = manifest.root / "images" / (id + ".ppm");
  if (!fs::exists(image_path)) fail(ErrorKind::kIo, "missing image file " + image_path.string());
  const fs::path mask_dir = manifest.root / "masks" / id;
  const std::size_t num_masks = count_masks(mask_dir);
  if (sample_checksum(manifest.root, id, num_masks) != e.checksum)
    fail(ErrorKind::kData, "checksum mismatch for sample " + id);

  Sample s;
  s.id = id;
  s.image = read_ppm(image_path);
  if (e.split != Split::kUnlabeled) {
    if (num_masks == 0) fail(ErrorKind::kIo, "missing mask files for " + id);
    SegmentSet set;
    set.height = s.image.height;
    set.width = s.image.width;
    for (std::size_t k = 0; k < num_masks; ++k)
      set.segments.push_back(read_rle(mask_dir / (std::to_string(k) + ".rle")));
    s.segments = std::move(set);
  }
  return s;
}

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset d;
  d.manifest = manifest;
  for (const auto& e : manifest.entries) {
    Sample s = load_sample(manifest, e.id);
    switch (e.split) {
      case Split::kLabeled: d.labeled.push_back(std::move(s)); break;
      case Split::kUnlabeled: d.unlabeled.push_back(std::move(s)); break;
      case Split::kValidation: d.validation.push_back(std::move(s)); break;
    }
  }
  return d;
}

void write_ppm(const fs::path& path, const Image& image) {
  require(image.channels == 3, "PPM output needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::string buf(static_cast<std::size_t>(image.width) * image.height * 3, '\0');
  std::size_t k = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        buf[k++] = static_cast<char>(static_cast<unsigned char>(
            std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Image read_ppm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
    fail(ErrorKind::kData, "unsupported PPM header in " + path.string());
  in.get();
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() != offset + static_cast<std::size_t>(w) * h * 3)
    fail(ErrorKind::kData, "truncated PPM " + path.string());
  Image image(3, h, w);
  std::size_t k = offset;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) = static_cast<unsigned char>(bytes[k++]) / 255.0;
  return image;
}

void write_rle(const fs::path& path, const Segment& segment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  const Matrix& m = segment.mask;
  out << "rle " << segment.class_id << " " << m.rows() << " " << m.cols() << "\n";
  bool current = false;
  long run = 0;
  bool first = true;
  auto flush = [&] {
    out << (first ? "" : " ") << run;
    first = false;
  };
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const bool v = m.data()[i] > 0.5;
    if (v != current) {
      flush();
      current = v;
      run = 0;
    }
    ++run;
  }
  flush();
  out << "\n";
}

Segment read_rle(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string tag;
  Segment seg;
  long rows = 0, cols = 0;
  in >> tag >> seg.class_id >> rows >> cols;
  if (tag != "rle" || rows <= 0 || cols <= 0) fail(ErrorKind::kData, "bad RLE header in " + path.string());
  seg.mask = Matrix::Zero(rows, cols);
  long pos = 0, run = 0;
  bool value = false;
  while (in >> run) {
    if (run < 0 || pos + run > rows * cols) fail(ErrorKind::kData, "RLE overflow in " + path.string());
    if (value) std::fill(seg.mask.data() + pos, seg.mask.data() + pos + run, 1.0);
    pos += run;
    value = !value;
  }
  if (pos != rows * cols) fail(ErrorKind::kData, "RLE length mismatch in " + path.string());
  return seg;
}

}  // namespace rc2l
