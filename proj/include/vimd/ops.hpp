#pragma once

#include "vimd/tensor.hpp"

namespace vimd {

// All primitives are pure: they allocate their output and never mutate
// inputs. When a tape is recording and any input requires a gradient, the
// op registers a backward closure; otherwise it is plain arithmetic.

// y[m x n] = a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// y = x . W (+ bias broadcast over rows). x:[T x I], W:[I x O], bias:[O].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Cross-correlation. x:[C x H x W], w:[D x C x J x J], bias:[D] optional.
// No implicit padding; `pad` adds zeros on all four sides.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad = 0);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad = 0);

// Depthwise causal conv over the token axis. x:[T x E], k:[E x Kw], b:[E].
// Output t sees inputs t-Kw+1 .. t (zeros before the sequence start).
Tensor conv1d_depthwise_causal(const Tensor& x, const Tensor& k, const Tensor& bias);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Probability vector over a 1-D logit vector; probabilities of x/temperature,
// computed with max subtraction. temperature must be positive.
Tensor softmax(const Tensor& x, float temperature = 1.0f);

// Row-order reversal of a [T x E] sequence. Involution: reverse(reverse(x)) == x.
Tensor reverse_seq(const Tensor& x);

// Depth-to-space: [r^2*C x H x W] -> [C x rH x rW]; out(c,y,x) pulls channel
// c*r^2 + (y%r)*r + (x%r) at (y/r, x/r). pixel_unshuffle is its exact inverse.
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

// Same storage, new dims (element count must match). Shares the producing
// node, so gradients flow through unchanged.
Tensor reshape(const Tensor& x, Shape dims);

Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);

// [D x Kh x Kw] feature map -> [Kh*Kw x D] token sequence in raster order.
Tensor seq_from_chw(const Tensor& x);

// Per-row x / sqrt(mean(x^2) + eps) * gain over the last axis. x:[T x D] or [D].
Tensor rms_norm(const Tensor& x, const Tensor& gain);
// Same normalization across channels at each pixel. x:[C x H x W], gain:[C].
Tensor rms_norm_channels(const Tensor& x, const Tensor& gain);

inline constexpr float kRmsNormEps = 1e-5f;

// argmax with ties broken toward the lowest index.
int argmax(const Tensor& logits);

// -log softmax(logits)[label]; stable via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, int label);

// KL between tempered softmax distributions of two logit vectors. The first
// argument is the side gradients flow through; `rhs` is always detached.
// swap_args=false computes KL(p_lhs || p_rhs). temp_sq_scale multiplies the
// loss by temperature^2 (classical distillation rescaling, off by default).
Tensor kl_tempered(const Tensor& lhs, const Tensor& rhs, float temperature,
                   bool swap_args = false, bool temp_sq_scale = false);

// mean((a - b)^2); gradients flow into both sides unless detached.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace vimd
