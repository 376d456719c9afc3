#pragma once

#include "vimd/ops.hpp"

namespace vimd {

// Separable cubic-convolution resampling (Catmull-Rom, a = -0.5) with
// edge-clamped taps. Works at any size ratio; used both to synthesize LR
// images (downsampling) and as the upsampling baseline. Not recorded on the
// tape: resizing is preprocessing, never a trained path.
Tensor bicubic_resize(const Tensor& img, int out_h, int out_w);

// bicubic_resize followed by a clamp to [0,1] (image convention).
Tensor bicubic_resize_image(const Tensor& img, int out_h, int out_w);

// Fixed x4 upsampler with the same call surface as a pre-trained generator:
// either pure bicubic, or a small residual network whose output is added to
// the bicubic baseline (zero-initialized tail == bicubic exactly).
class SrGenerator {
 public:
  enum class Mode { bicubic, residual };

  SrGenerator() = default;
  SrGenerator(Mode mode, int channels = 32, int res_blocks = 4);

  void init(uint64_t seed);

  // [3 x side x side] in [0,1] -> [3 x 4*side x 4*side] in [0,1].
  // When frozen, parameters see no gradient (the whole call runs detached);
  // downstream consumers still train normally on the produced image.
  Tensor generate(const Tensor& lr) const;

  Mode mode() const { return mode_; }
  bool frozen = true;
  static constexpr int kScale = 4;

  std::vector<NamedParam> named_params();

 private:
  Tensor residual_path(const Tensor& lr) const;

  Mode mode_ = Mode::bicubic;
  int channels_ = 32;
  int res_blocks_ = 4;

  struct ResBlock {
    Tensor w1, b1, g1;  // conv 3x3 + channel norm
    Tensor w2, b2, g2;
  };
  Tensor head_w_, head_b_;           // 3 -> C, 9x9
  std::vector<ResBlock> blocks_;
  Tensor up1_w_, up1_b_, up2_w_, up2_b_;  // C -> 4C, 3x3, then depth-to-space x2
  Tensor tail_w_, tail_b_;           // C -> 3, 9x9; zero-initialized
};

}  // namespace vimd
