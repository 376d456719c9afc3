#include "vimd/sr.hpp"

#include <cmath>

namespace vimd {

namespace {

// Keys cubic kernel, a = -0.5 (Catmull-Rom).
inline float cubic_weight(float t) {
  t = std::abs(t);
  if (t <= 1.0f) return (1.5f * t - 2.5f) * t * t + 1.0f;
  if (t < 2.0f) return ((-0.5f * t + 2.5f) * t - 4.0f) * t + 2.0f;
  return 0.0f;
}

struct Taps {
  int idx[4];
  float w[4];
};

// Output coordinate o maps to input position (o + 0.5) * in/out - 0.5;
// four taps around it, indices clamped to the edge.
void make_taps(int in_size, int out_size, std::vector<Taps>& taps) {
  taps.resize(size_t(out_size));
  const double ratio = double(in_size) / double(out_size);
  for (int o = 0; o < out_size; ++o) {
    double center = (o + 0.5) * ratio - 0.5;
    int base = int(std::floor(center)) - 1;
    for (int k = 0; k < 4; ++k) {
      int i = base + k;
      taps[size_t(o)].idx[k] = std::min(std::max(i, 0), in_size - 1);
      taps[size_t(o)].w[k] = cubic_weight(float(center - double(i)));
    }
  }
}

}  // namespace

Tensor bicubic_resize(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3) throw ShapeError("bicubic_resize: want [CxHxW]");
  if (out_h < 1 || out_w < 1) throw DomainError("bicubic_resize: output dims must be >= 1");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);

  std::vector<Taps> tx, ty;
  make_taps(w, out_w, tx);
  make_taps(h, out_h, ty);

  // horizontal pass: [C x H x out_w]
  std::vector<float> mid(size_t(c) * h * out_w);
  for (int ci = 0; ci < c; ++ci) {
    const float* src = img.data() + int64_t(ci) * h * w;
    float* dst = mid.data() + int64_t(ci) * h * out_w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const Taps& t = tx[size_t(x)];
        float acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.w[k] * src[y * w + t.idx[k]];
        dst[y * out_w + x] = acc;
      }
  }

  // vertical pass
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci) {
    const float* src = mid.data() + int64_t(ci) * h * out_w;
    float* dst = out.data() + int64_t(ci) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const Taps& t = ty[size_t(y)];
      for (int x = 0; x < out_w; ++x) {
        float acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.w[k] * src[t.idx[k] * out_w + x];
        dst[y * out_w + x] = acc;
      }
    }
  }
  return out;
}

Tensor bicubic_resize_image(const Tensor& img, int out_h, int out_w) {
  Tensor r = bicubic_resize(img, out_h, out_w);
  r.arr() = r.arr().max(0.0f).min(1.0f);
  return r;
}

// ---------------------------------------------------------------------------

SrGenerator::SrGenerator(Mode mode, int channels, int res_blocks)
    : mode_(mode), channels_(channels), res_blocks_(res_blocks) {
  if (channels < 4 || res_blocks < 1) throw ContractError("sr: degenerate generator config");
  blocks_.resize(size_t(res_blocks));
}

void SrGenerator::init(uint64_t seed) {
  if (mode_ == Mode::bicubic) return;
  const int c = channels_;
  Rng rng(mix_seed(seed, hash_str("sr")));
  auto conv = [&](int out_c, int in_c, int k) {
    Tensor t = Tensor::param({out_c, in_c, k, k});
    float bound = 1.0f / std::sqrt(float(in_c * k * k));
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    return t;
  };
  head_w_ = conv(c, 3, 9);
  head_b_ = Tensor::param({c});
  for (auto& b : blocks_) {
    b.w1 = conv(c, c, 3);
    b.b1 = Tensor::param({c});
    b.g1 = Tensor::param({c}, 1.0f);
    b.w2 = conv(c, c, 3);
    b.b2 = Tensor::param({c});
    b.g2 = Tensor::param({c}, 1.0f);
  }
  up1_w_ = conv(4 * c, c, 3);
  up1_b_ = Tensor::param({4 * c});
  up2_w_ = conv(4 * c, c, 3);
  up2_b_ = Tensor::param({4 * c});
  // zero tail: the generator starts out as exact bicubic
  tail_w_ = Tensor::param({3, c, 9, 9});
  tail_b_ = Tensor::param({3});
}

Tensor SrGenerator::residual_path(const Tensor& lr) const {
  Tensor h = silu(conv2d(lr, head_w_, head_b_, 1, 4));
  Tensor x = h;
  for (const auto& b : blocks_) {
    Tensor y = rms_norm_channels(conv2d(x, b.w1, b.b1, 1, 1), b.g1);
    y = silu(y);
    y = rms_norm_channels(conv2d(y, b.w2, b.b2, 1, 1), b.g2);
    x = add(x, y);
  }
  x = silu(pixel_shuffle(conv2d(x, up1_w_, up1_b_, 1, 1), 2));
  x = silu(pixel_shuffle(conv2d(x, up2_w_, up2_b_, 1, 1), 2));
  return conv2d(x, tail_w_, tail_b_, 1, 4);
}

Tensor SrGenerator::generate(const Tensor& lr) const {
  if (lr.rank() != 3 || lr.dim(0) != 3 || lr.dim(1) != lr.dim(2))
    throw ShapeError("sr: want a square [3 x side x side] image, got " + shape_str(lr.shape()));
  const int side = lr.dim(1) * kScale;
  Tensor base = bicubic_resize_image(lr, side, side);
  if (mode_ == Mode::bicubic) return base;

  if (frozen) {
    Tape::NoGrad ng;
    Tensor out = add(residual_path(lr), base);
    out.arr() = out.arr().max(0.0f).min(1.0f);
    return out;
  }
  return clamp(add(residual_path(lr), base), 0.0f, 1.0f);
}

std::vector<NamedParam> SrGenerator::named_params() {
  std::vector<NamedParam> out;
  if (mode_ == Mode::bicubic) return out;
  out.push_back({"sr.head.weight", &head_w_});
  out.push_back({"sr.head.bias", &head_b_});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    std::string p = "sr.res." + std::to_string(i);
    out.push_back({p + ".conv1.weight", &b.w1});
    out.push_back({p + ".conv1.bias", &b.b1});
    out.push_back({p + ".norm1.gain", &b.g1});
    out.push_back({p + ".conv2.weight", &b.w2});
    out.push_back({p + ".conv2.bias", &b.b2});
    out.push_back({p + ".norm2.gain", &b.g2});
  }
  out.push_back({"sr.up1.weight", &up1_w_});
  out.push_back({"sr.up1.bias", &up1_b_});
  out.push_back({"sr.up2.weight", &up2_w_});
  out.push_back({"sr.up2.bias", &up2_b_});
  out.push_back({"sr.tail.weight", &tail_w_});
  out.push_back({"sr.tail.bias", &tail_b_});
  return out;
}

}  // namespace vimd
