#pragma once

#include "vimd/encoder.hpp"

namespace vimd {

// Architectural hyper-parameters of one classifier network. The full-size
// profile is D=192, N=24, J=16 at 224^2; toy runs shrink every axis.
struct VimConfig {
  int embed_dim = 192;   // D
  int layers = 24;       // N
  int patch = 16;        // J
  int in_channels = 3;
  int num_classes = 1000;
  int state_dim = 16;    // S
  int expand = 2;        // E = expand * D
  int conv_width = 4;
  int input_side = 224;
  bool final_norm = true;    // RMS-normalize the class token before the head
  bool literal_gate = false; // gate with silu(H) directly instead of a projection

  int dt_rank() const { return std::max(1, embed_dim / 16); }
  int inner_dim() const { return expand * embed_dim; }
  int grid_side() const { return input_side / patch; }
  int patch_count() const { return grid_side() * grid_side(); }  // Z
  int tokens() const { return patch_count() + 1; }               // Z + 1
  int cls_index() const { return patch_count() / 2; }

  // Shape/contract validation: side divisible by J, Z even, positive dims.
  void validate() const;
  bool operator==(const VimConfig&) const = default;
};

// Per-layer sequence outputs H_0 .. H_N of one forward pass.
struct HiddenStates {
  std::vector<Tensor> layers;
  int count() const { return int(layers.size()); }
};

class VimNet {
 public:
  VimNet() = default;
  explicit VimNet(VimConfig cfg);

  void init(uint64_t seed);

  // Eq-for-eq pipeline pieces; each is a pure function of (input, params).
  Tensor patch_embed(const Tensor& img) const;          // [C x S x S] -> [(Z+1) x D]
  HiddenStates encode(const Tensor& h0) const;          // all of H_0 .. H_N
  Tensor block_forward(int i, const Tensor& h) const;   // E_{i+1} alone
  Tensor classify_head(const Tensor& h_last) const;     // [(Z+1) x D] -> [num_classes]

  struct Output {
    Tensor logits;
    HiddenStates states;
  };
  Output forward(const Tensor& img) const;

  std::vector<NamedParam> named_params();
  const VimConfig& config() const { return cfg_; }

 private:
  VimConfig cfg_;
  Tensor patch_w_, patch_b_;
  Tensor cls_token_, pos_embed_;
  Tensor final_gain_;
  Tensor head_w_, head_b_;
  std::vector<VimBlockParams> blocks_;
};

// argmax class index, ties to the lowest index.
int predict(const Tensor& logits);

// Exact learnable-scalar count for a config (cross-checked against the
// instantiated network in tests).
int64_t param_count(const VimConfig& cfg);

// Forward-pass cost at cfg.input_side: multiply-accumulates of the patch
// conv, all linear projections, depthwise convs, scan state updates, and the
// head, times two. Gates, norms, and other elementwise work are not counted.
double flops_estimate(const VimConfig& cfg);

}  // namespace vimd
