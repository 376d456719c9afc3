#include "vimd/network.hpp"

#include <cmath>

namespace vimd {

void VimConfig::validate() const {
  if (embed_dim <= 0 || layers < 0 || patch <= 0 || in_channels <= 0 || num_classes <= 0 ||
      state_dim <= 0 || expand < 1 || conv_width <= 0 || input_side <= 0)
    throw ContractError("config: all dimensions must be positive");
  if (input_side % patch != 0)
    throw ShapeError("config: input side " + std::to_string(input_side) +
                     " not divisible by patch size " + std::to_string(patch));
  if (patch_count() % 2 != 0)
    throw ContractError("config: patch count " + std::to_string(patch_count()) +
                        " must be even for middle class-token insertion");
  if (literal_gate && expand != 1)
    throw ContractError("config: literal gate requires expand = 1");
}

VimNet::VimNet(VimConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  blocks_.resize(size_t(cfg_.layers));
}

void VimNet::init(uint64_t seed) {
  const int d = cfg_.embed_dim, j = cfg_.patch, c = cfg_.in_channels;

  Rng conv_rng(mix_seed(seed, hash_str("patch")));
  patch_w_ = Tensor::param({d, c, j, j});
  {
    float bound = 1.0f / std::sqrt(float(c * j * j));
    for (int64_t i = 0; i < patch_w_.size(); ++i)
      patch_w_.data()[i] = conv_rng.uniform(-bound, bound);
  }
  patch_b_ = Tensor::param({d});

  Rng tok_rng(mix_seed(seed, hash_str("tokens")));
  cls_token_ = Tensor::param({1, d});
  for (int64_t i = 0; i < cls_token_.size(); ++i) cls_token_.data()[i] = tok_rng.normal(0.0f, 0.02f);
  pos_embed_ = Tensor::param({cfg_.tokens(), d});
  for (int64_t i = 0; i < pos_embed_.size(); ++i) pos_embed_.data()[i] = tok_rng.normal(0.0f, 0.02f);

  for (int i = 0; i < cfg_.layers; ++i) {
    Rng rng(mix_seed(seed, hash_str("block" + std::to_string(i))));
    blocks_[size_t(i)].init(rng, d, cfg_.expand, cfg_.state_dim, cfg_.dt_rank(), cfg_.conv_width);
  }

  final_gain_ = Tensor::param({d}, 1.0f);

  Rng head_rng(mix_seed(seed, hash_str("head")));
  head_w_ = Tensor::param({d, cfg_.num_classes});
  {
    float bound = 1.0f / std::sqrt(float(d));
    for (int64_t i = 0; i < head_w_.size(); ++i) head_w_.data()[i] = head_rng.uniform(-bound, bound);
  }
  head_b_ = Tensor::param({cfg_.num_classes});
}

Tensor VimNet::patch_embed(const Tensor& img) const {
  if (img.rank() != 3 || img.dim(0) != cfg_.in_channels)
    throw ShapeError("patch_embed: want [" + std::to_string(cfg_.in_channels) +
                     " x side x side], got " + shape_str(img.shape()));
  if (img.dim(1) != cfg_.input_side || img.dim(2) != cfg_.input_side)
    throw ShapeError("patch_embed: configured side " + std::to_string(cfg_.input_side) +
                     ", got " + shape_str(img.shape()));

  Tensor x_a = conv2d(img, patch_w_, patch_b_, cfg_.patch);  // [D x K x K]
  Tensor x_b = seq_from_chw(x_a);                            // [Z x D], raster order
  const int half = cfg_.patch_count() / 2;
  Tensor with_cls = concat_rows(
      {slice_rows(x_b, 0, half), cls_token_, slice_rows(x_b, half, cfg_.patch_count())});
  return add(with_cls, pos_embed_);
}

HiddenStates VimNet::encode(const Tensor& h0) const {
  HiddenStates hs;
  hs.layers.reserve(size_t(cfg_.layers) + 1);
  hs.layers.push_back(h0);
  Tensor h = h0;
  for (int i = 0; i < cfg_.layers; ++i) {
    h = vim_block(h, blocks_[size_t(i)], cfg_.literal_gate);
    hs.layers.push_back(h);
  }
  return hs;
}

Tensor VimNet::block_forward(int i, const Tensor& h) const {
  if (i < 0 || i >= cfg_.layers) throw ContractError("block_forward: layer out of range");
  return vim_block(h, blocks_[size_t(i)], cfg_.literal_gate);
}

Tensor VimNet::classify_head(const Tensor& h_last) const {
  const int mid = cfg_.cls_index();
  Tensor h_cls = slice_rows(h_last, mid, mid + 1);  // [1 x D]
  if (cfg_.final_norm) h_cls = rms_norm(h_cls, final_gain_);
  Tensor logits = linear(h_cls, head_w_, head_b_);  // [1 x C]
  return reshape(logits, {cfg_.num_classes});
}

VimNet::Output VimNet::forward(const Tensor& img) const {
  Output out;
  out.states = encode(patch_embed(img));
  out.logits = classify_head(out.states.layers.back());
  return out;
}

std::vector<NamedParam> VimNet::named_params() {
  std::vector<NamedParam> out;
  out.push_back({"patch.weight", &patch_w_});
  out.push_back({"patch.bias", &patch_b_});
  out.push_back({"cls_token", &cls_token_});
  out.push_back({"pos_embed", &pos_embed_});
  for (int i = 0; i < cfg_.layers; ++i)
    blocks_[size_t(i)].collect("blocks." + std::to_string(i), out);
  if (cfg_.final_norm) out.push_back({"final_norm.gain", &final_gain_});
  out.push_back({"head.weight", &head_w_});
  out.push_back({"head.bias", &head_b_});
  return out;
}

int predict(const Tensor& logits) {
  return argmax(logits);
}

int64_t param_count(const VimConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.embed_dim, e = cfg.inner_dim(), s = cfg.state_dim, r = cfg.dt_rank(),
                kw = cfg.conv_width;
  int64_t patch = d * cfg.in_channels * cfg.patch * cfg.patch + d;
  int64_t tokens = d + int64_t(cfg.tokens()) * d;  // cls + positions
  int64_t per_dir = e * kw + e        // conv
                    + e * (r + 2 * s)  // x_proj
                    + r * e + e        // dt_proj
                    + e * s            // A_log
                    + e;               // D_skip
  int64_t per_block = d + 2 * d * e + e * d + 2 * per_dir;
  int64_t head = d * cfg.num_classes + cfg.num_classes;
  int64_t final_n = cfg.final_norm ? d : 0;
  return patch + tokens + int64_t(cfg.layers) * per_block + final_n + head;
}

double flops_estimate(const VimConfig& cfg) {
  cfg.validate();
  const double d = cfg.embed_dim, e = cfg.inner_dim(), s = cfg.state_dim, r = cfg.dt_rank(),
               kw = cfg.conv_width;
  const double z = cfg.patch_count(), t = cfg.tokens();
  double macs = z * d * (cfg.in_channels * cfg.patch * cfg.patch);  // patch conv
  double per_dir = t * e * kw        // depthwise conv
                   + t * e * (r + 2 * s)  // x_proj
                   + t * r * e            // dt_proj
                   + 3.0 * t * e * s      // scan: decay, inject, readout
                   + t * e;               // skip term
  double per_block = 2.0 * t * d * e  // in_proj (x and gate)
                     + t * e * d      // out_proj
                     + 2.0 * per_dir;
  macs += cfg.layers * per_block;
  macs += d * cfg.num_classes;  // head
  return 2.0 * macs;
}

}  // namespace vimd
