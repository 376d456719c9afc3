#pragma once

#include "vimd/ops.hpp"
#include "vimd/scan.hpp"

namespace vimd {

// Per-direction state-space parameters. One independent set per direction
// per block (the two directions never share weights).
struct SsmParams {
  Tensor A_log;     // [E x S]; A = -exp(A_log), elementwise negative
  Tensor D_skip;    // [E]
  Tensor W_x_proj;  // [E x (R + 2S)] -> (dt_hat, B, C) per token
  Tensor W_dt;      // [R x E]
  Tensor b_dt;      // [E]; softplus(b_dt) sets the initial step size
  Tensor conv_w;    // [E x Kw] depthwise causal kernel
  Tensor conv_b;    // [E]

  void init(Rng& rng, int embed_inner, int state_dim, int dt_rank, int conv_width);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

// One bidirectional encoder block: shared norm and in/out projections,
// direction-specific convolution + SSM.
struct VimBlockParams {
  Tensor norm_gain;  // [D]
  Tensor W_in_x;     // [D x E]
  Tensor W_in_z;     // [D x E] gate projection
  Tensor W_out;      // [E x D]
  SsmParams fw, bw;

  void init(Rng& rng, int embed_dim, int expand, int state_dim, int dt_rank, int conv_width);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

// One direction of the block: causal depthwise conv, SiLU, then the
// selective scan with input-dependent (delta, B, C). The caller hands in the
// sequence already reversed for the backward direction and re-reverses the
// result.
Tensor mamba_direction(const Tensor& p, const SsmParams& ssm);

// Full residual block:
//   n     = rms_norm(h_prev)
//   p_fw  = n . W_in_x,  p_bw = reverse(p_fw)
//   q_dir = mamba_direction(p_dir)            (backward output re-reversed)
//   g     = silu(n . W_in_z)                  (literal_gate: silu(h_prev))
//   out   = (g (.) q_fw + g (.) q_bw) . W_out + h_prev
// literal_gate requires E == D and skips the gate projection.
Tensor vim_block(const Tensor& h_prev, const VimBlockParams& params, bool literal_gate = false);

}  // namespace vimd
