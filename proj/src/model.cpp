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
#include "rc2l/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace rc2l {

namespace {

constexpr double kPoolEps = 1e-6;
constexpr char kCheckpointMagic[8] = {'R', 'C', '2', 'L', 'C', 'K', 'P', '1'};

// Parameter indices; must follow init_params.
enum : std::size_t {
  kConv1W, kConv1B, kConv2W, kConv2B, kDec1W, kDec1B, kDec2W, kDec2B,
  kQuery, kClsW, kClsB, kMask1W, kMask1B, kMask2W, kMask2B, kNumTensors
};

int conv_out(int in, int stride) { return (in + 2 - 3) / stride + 1; }

// 3x3, padding 1. Rows of the result are (channel, ky, kx), columns are
// output positions in raster order.
Matrix im2col(const Matrix& in, int h, int w, int stride, int& oh, int& ow) {
  const int c_in = static_cast<int>(in.rows());
  oh = conv_out(h, stride);
  ow = conv_out(w, stride);
  Matrix cols = Matrix::Zero(c_in * 9, oh * ow);
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int row = (c * 3 + ky) * 3 + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * ow + ox) = in(c, iy * w + ix);
          }
        }
      }
  return cols;
}

Matrix col2im(const Matrix& cols, int c_in, int h, int w, int stride, int oh, int ow) {
  Matrix out = Matrix::Zero(c_in, h * w);
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int row = (c * 3 + ky) * 3 + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            out(c, iy * w + ix) += cols(row, oy * ow + ox);
          }
        }
      }
  return out;
}

Matrix silu(const Matrix& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

// d silu / dx evaluated at the pre-activation.
Matrix silu_grad(const Matrix& x) {
  return x.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

void check_finite(const Matrix& m, const char* stage) {
  if (!m.allFinite()) fail(ErrorKind::kNumerical, std::string("non-finite values in forward stage '") + stage + "'");
}

Matrix add_col_bias(Matrix m, const Matrix& bias) {
  m.colwise() += bias.col(0);
  return m;
}

Matrix add_row_bias(Matrix m, const Matrix& bias) {
  m.rowwise() += bias.col(0).transpose();
  return m;
}

}  // namespace

void ArchConfig::validate() const {
  require(in_channels > 0 && stem_width > 0 && width > 0 && embed_dim > 0,
          "architecture widths must be positive");
  require(num_queries > 0, "query count must be positive");
  require(num_classes >= 2, "need at least 2 classes");
}

std::string ArchConfig::fingerprint() const {
  std::ostringstream os;
  os << "rc2l-mask-v1 in=" << in_channels << " stem=" << stem_width << " width=" << width
     << " embed=" << embed_dim << " queries=" << num_queries << " classes=" << num_classes;
  return os.str();
}

std::size_t ModelParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

const Matrix& ModelParams::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  fail(ErrorKind::kInvalidArgument, "no parameter named " + name);
}

Matrix& ModelParams::get(const std::string& name) {
  return const_cast<Matrix&>(static_cast<const ModelParams&>(*this).get(name));
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
      return false;
  }
  return true;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& t : z.tensors) t.value.setZero();
  return z;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors)
    if (!t.value.allFinite()) return false;
  return true;
}

ModelParams init_params(std::uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  Rng rng(seed);
  ModelParams p;
  auto normal = [&](const std::string& name, int rows, int cols, double std_dev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std_dev * rng.normal();
    p.tensors.push_back({name, std::move(m), true});
  };
  auto zeros = [&](const std::string& name, int rows) {
    p.tensors.push_back({name, Matrix::Zero(rows, 1), false});
  };
  const int C = arch.embed_dim, K1 = arch.num_classes + 1;
  const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  normal("conv1.weight", arch.stem_width, arch.in_channels * 9, he(arch.in_channels * 9));
  zeros("conv1.bias", arch.stem_width);
  normal("conv2.weight", arch.width, arch.stem_width * 9, he(arch.stem_width * 9));
  zeros("conv2.bias", arch.width);
  normal("decoder1.weight", arch.width, arch.width * 9, he(arch.width * 9));
  zeros("decoder1.bias", arch.width);
  normal("decoder2.weight", C, arch.width, std::sqrt(1.0 / arch.width));
  zeros("decoder2.bias", C);
  normal("query.embed", arch.num_queries, C, 1.0);
  normal("class_head.weight", K1, C, std::sqrt(1.0 / C));
  zeros("class_head.bias", K1);
  normal("mask_head.fc1.weight", C, C, he(C));
  zeros("mask_head.fc1.bias", C);
  normal("mask_head.fc2.weight", C, C, std::sqrt(1.0 / C));
  zeros("mask_head.fc2.bias", C);
  return p;
}

Matrix bilinear_operator(int out, int in) {
  Matrix u = Matrix::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double src = std::max(0.0, (i + 0.5) * scale - 0.5);
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    const double l = src - i0;
    u(i, i0) += 1.0 - l;
    u(i, i1) += l;
  }
  return u;
}

PredictionGrad PredictionGrad::zeros_like(const PredictionSet& preds) {
  PredictionGrad g;
  g.class_probs = Matrix::Zero(preds.class_probs.rows(), preds.class_probs.cols());
  g.pixel_features = Matrix::Zero(preds.pixel_features.rows(), preds.pixel_features.cols());
  g.soft_masks.assign(preds.soft_masks.size(), Matrix::Zero(preds.height, preds.width));
  return g;
}

PredictionGrad& PredictionGrad::operator+=(const PredictionGrad& other) {
  auto acc = [](Matrix& a, const Matrix& b) {
    if (b.size() == 0) return;
    if (a.size() == 0) a = b;
    else a += b;
  };
  acc(class_probs, other.class_probs);
  acc(pixel_features, other.pixel_features);
  if (soft_masks.size() < other.soft_masks.size()) soft_masks.resize(other.soft_masks.size());
  for (std::size_t j = 0; j < other.soft_masks.size(); ++j) acc(soft_masks[j], other.soft_masks[j]);
  return *this;
}

PredictionSet forward(const Image& image, const ModelParams& params, const ArchConfig& arch,
                      ForwardCache* cache) {
  validate_image(image);
  require(image.channels == arch.in_channels, "image channel count does not match the architecture");
  require(params.size() == kNumTensors, "parameter set does not match the architecture");
  const auto& T = params.tensors;
  const int C = arch.embed_dim;
  const auto shaped = [&](std::size_t k, int rows, int cols) {
    return T[k].value.rows() == rows && T[k].value.cols() == cols;
  };
  require(shaped(kConv1W, arch.stem_width, arch.in_channels * 9) && shaped(kConv2W, arch.width, arch.stem_width * 9) &&
              shaped(kDec1W, arch.width, arch.width * 9) && shaped(kDec2W, C, arch.width) &&
              shaped(kQuery, arch.num_queries, C) && shaped(kClsW, arch.num_classes + 1, C) &&
              shaped(kMask1W, C, C) && shaped(kMask2W, C, C),
          "parameter shapes do not match the architecture");
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.in_h = image.height;
  c.in_w = image.width;
  c.image = image.pixels;

  c.cols1 = im2col(c.image, c.in_h, c.in_w, 2, c.h1, c.w1);
  c.a1 = add_col_bias(T[kConv1W].value * c.cols1, T[kConv1B].value);
  c.z1 = silu(c.a1);
  c.cols2 = im2col(c.z1, c.h1, c.w1, 2, c.h2, c.w2);
  c.a2 = add_col_bias(T[kConv2W].value * c.cols2, T[kConv2B].value);
  c.z2 = silu(c.a2);
  int h3, w3;
  c.cols3 = im2col(c.z2, c.h2, c.w2, 1, h3, w3);
  c.a3 = add_col_bias(T[kDec1W].value * c.cols3, T[kDec1B].value);
  c.z3 = silu(c.a3);

  PredictionSet out;
  out.height = image.height;
  out.width = image.width;
  out.feature_height = c.h2;
  out.feature_width = c.w2;
  out.pixel_features = add_col_bias(T[kDec2W].value * c.z3, T[kDec2B].value);
  check_finite(out.pixel_features, "pixel decoder");
  const Matrix& F = out.pixel_features;

  // Query conditioning by sigmoid-weighted average pooling of F.
  c.scores = (T[kQuery].value * F) * inv_sqrt_c;
  c.attn = c.scores.unaryExpr([](double v) { return sigmoid(v); });
  c.attn_mass = c.attn.rowwise().sum().array() + kPoolEps;
  c.pooled = (c.attn * F.transpose()).array().colwise() / c.attn_mass.array();
  c.hidden = T[kQuery].value + c.pooled;

  c.cls_logits = add_row_bias(c.hidden * T[kClsW].value.transpose(), T[kClsB].value);
  out.class_probs.resize(c.cls_logits.rows(), c.cls_logits.cols());
  for (Eigen::Index j = 0; j < c.cls_logits.rows(); ++j) {
    const double mx = c.cls_logits.row(j).maxCoeff();
    Eigen::RowVectorXd e = (c.cls_logits.row(j).array() - mx).exp();
    out.class_probs.row(j) = e / e.sum();
  }
  check_finite(out.class_probs, "class head");

  c.e1_pre = add_row_bias(c.hidden * T[kMask1W].value.transpose(), T[kMask1B].value);
  c.e1 = silu(c.e1_pre);
  out.mask_embeddings = add_row_bias(c.e1 * T[kMask2W].value.transpose(), T[kMask2B].value);

  const Matrix low = (out.mask_embeddings * F) * inv_sqrt_c;  // N x hw
  c.upsample_h = bilinear_operator(image.height, c.h2);
  c.upsample_w = bilinear_operator(image.width, c.w2);
  out.soft_masks.reserve(static_cast<std::size_t>(low.rows()));
  for (Eigen::Index j = 0; j < low.rows(); ++j) {
    Eigen::Map<const Matrix> lj(low.row(j).data(), c.h2, c.w2);
    Matrix full = c.upsample_h * lj * c.upsample_w.transpose();
    out.soft_masks.push_back(full.unaryExpr([](double v) { return sigmoid(v); }));
  }
  for (const Matrix& m : out.soft_masks) check_finite(m, "mask head");
  return out;
}

ModelParams backward(const ForwardCache& c, const PredictionSet& preds, const PredictionGrad& grad,
                     const ModelParams& params, const ArchConfig& arch, Matrix* image_grad) {
  const auto& T = params.tensors;
  ModelParams g = params.zeros_like();
  auto& G = g.tensors;
  const int N = preds.num_queries();
  const int C = arch.embed_dim;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));
  const Matrix& F = preds.pixel_features;
  const int hw = c.h2 * c.w2;

  Matrix dF = grad.pixel_features.size() ? grad.pixel_features : Matrix::Zero(F.rows(), F.cols());

  // Mask branch.
  Matrix d_low = Matrix::Zero(N, hw);
  for (int j = 0; j < N && j < static_cast<int>(grad.soft_masks.size()); ++j) {
    const Matrix& dm = grad.soft_masks[static_cast<std::size_t>(j)];
    if (dm.size() == 0) continue;
    const Matrix& m = preds.soft_masks[static_cast<std::size_t>(j)];
    const Matrix d_full = (dm.array() * m.array() * (1.0 - m.array())).matrix();
    Matrix dl = c.upsample_h.transpose() * d_full * c.upsample_w;
    d_low.row(j) = Eigen::Map<const Eigen::RowVectorXd>(dl.data(), hw);
  }
  d_low *= inv_sqrt_c;
  const Matrix d_embed = d_low * F.transpose();  // N x C
  dF.noalias() += preds.mask_embeddings.transpose() * d_low;

  G[kMask2W].value = d_embed.transpose() * c.e1;
  G[kMask2B].value = d_embed.colwise().sum().transpose();
  const Matrix d_e1_pre = ((d_embed * T[kMask2W].value).array() * silu_grad(c.e1_pre).array()).matrix();
  G[kMask1W].value = d_e1_pre.transpose() * c.hidden;
  G[kMask1B].value = d_e1_pre.colwise().sum().transpose();
  Matrix d_hidden = d_e1_pre * T[kMask1W].value;

  // Class branch through the softmax.
  if (grad.class_probs.size()) {
    const Matrix& p = preds.class_probs;
    const Eigen::VectorXd inner = (grad.class_probs.array() * p.array()).rowwise().sum();
    const Matrix d_logits = (p.array() * (grad.class_probs.array().colwise() - inner.array())).matrix();
    G[kClsW].value = d_logits.transpose() * c.hidden;
    G[kClsB].value = d_logits.colwise().sum().transpose();
    d_hidden.noalias() += d_logits * T[kClsW].value;
  }

  // hidden = Q + pooled, pooled_j = sum_x a_jx F_x / mass_j.
  G[kQuery].value = d_hidden;
  const Matrix d_pooled_scaled = d_hidden.array().colwise() / c.attn_mass.array();
  const Eigen::VectorXd inner = (d_pooled_scaled.array() * c.pooled.array()).rowwise().sum();
  Matrix d_attn = d_pooled_scaled * F;
  d_attn.array().colwise() -= inner.array();
  dF.noalias() += d_pooled_scaled.transpose() * c.attn;
  const Matrix d_scores = (d_attn.array() * c.attn.array() * (1.0 - c.attn.array())).matrix() * inv_sqrt_c;
  G[kQuery].value.noalias() += d_scores * F.transpose();
  dF.noalias() += T[kQuery].value.transpose() * d_scores;

  // Pixel decoder and backbone.
  G[kDec2W].value = dF * c.z3.transpose();
  G[kDec2B].value = dF.rowwise().sum();
  const Matrix d_a3 = ((T[kDec2W].value.transpose() * dF).array() * silu_grad(c.a3).array()).matrix();
  G[kDec1W].value = d_a3 * c.cols3.transpose();
  G[kDec1B].value = d_a3.rowwise().sum();
  const Matrix d_z2 = col2im(T[kDec1W].value.transpose() * d_a3, arch.width, c.h2, c.w2, 1, c.h2, c.w2);
  const Matrix d_a2 = (d_z2.array() * silu_grad(c.a2).array()).matrix();
  G[kConv2W].value = d_a2 * c.cols2.transpose();
  G[kConv2B].value = d_a2.rowwise().sum();
  const Matrix d_z1 = col2im(T[kConv2W].value.transpose() * d_a2, arch.stem_width, c.h1, c.w1, 2, c.h2, c.w2);
  const Matrix d_a1 = (d_z1.array() * silu_grad(c.a1).array()).matrix();
  G[kConv1W].value = d_a1 * c.cols1.transpose();
  G[kConv1B].value = d_a1.rowwise().sum();
  if (image_grad)
    *image_grad = col2im(T[kConv1W].value.transpose() * d_a1, arch.in_channels, c.in_h, c.in_w, 2, c.h1, c.w1);
  return g;
}

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  auto put_str = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_str(arch.fingerprint());
  put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params.tensors) {
    put_str(t.name);
    put_u32(static_cast<std::uint32_t>(t.value.rows()));
    put_u32(static_cast<std::uint32_t>(t.value.cols()));
    put_u32(t.decay ? 1u : 0u);
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) fail(ErrorKind::kIo, "short write to " + path.string());
}

namespace {

struct CheckpointReader {
  std::ifstream in;
  std::filesystem::path path;

  explicit CheckpointReader(const std::filesystem::path& p) : in(p, std::ios::binary), path(p) {
    if (!in) fail(ErrorKind::kIo, "cannot open checkpoint " + p.string());
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
      fail(ErrorKind::kData, path.string() + " is not an rc2l checkpoint");
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) fail(ErrorKind::kData, "truncated checkpoint " + path.string());
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    in.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!in) fail(ErrorKind::kData, "truncated checkpoint " + path.string());
    return s;
  }
};

}  // namespace

ArchConfig read_checkpoint_arch(const std::filesystem::path& path) {
  CheckpointReader r(path);
  std::istringstream is(r.str());
  std::string tag, field;
  is >> tag;
  ArchConfig a;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq);
    const int v = std::stoi(field.substr(eq + 1));
    if (key == "in") a.in_channels = v;
    else if (key == "stem") a.stem_width = v;
    else if (key == "width") a.width = v;
    else if (key == "embed") a.embed_dim = v;
    else if (key == "queries") a.num_queries = v;
    else if (key == "classes") a.num_classes = v;
  }
  return a;
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch) {
  CheckpointReader r(path);
  const std::string fp = r.str();
  if (fp != arch.fingerprint())
    fail(ErrorKind::kData, "checkpoint fingerprint '" + fp + "' does not match '" + arch.fingerprint() + "'");
  const std::uint32_t n = r.u32();
  ModelParams p;
  for (std::uint32_t i = 0; i < n; ++i) {
    ParamTensor t;
    t.name = r.str();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    t.decay = r.u32() != 0;
    t.value.resize(rows, cols);
    r.in.read(reinterpret_cast<char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!r.in) fail(ErrorKind::kData, "truncated checkpoint " + path.string());
    p.tensors.push_back(std::move(t));
  }
  if (!p.same_layout(init_params(0, arch)))
    fail(ErrorKind::kData, "checkpoint tensors do not match the architecture");
  return p;
}

}  // namespace rc2l
