#pragma once

#include "vimd/tensor.hpp"

namespace vimd {

// Input-dependent state-space recurrence over a token sequence.
//
//   h_0 = 0,  h_t = exp(delta_te * A_e) (.) h_{t-1} + (delta_te * B_t) * u_te
//   y_te = <C_t, h_t> + D_e * u_te
//
// per channel e with an S-dimensional state (zero-order hold on A, Euler on
// B). Exponent arguments are clamped to [-30, 30].
//
//   u, delta : [T x E]   (delta must be strictly positive)
//   A        : [E x S]   (stable when elementwise negative)
//   B, C     : [T x S]
//   D_skip   : [E]
//
// Returns y: [T x E]. Gradients are registered for every input.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                      const Tensor& C, const Tensor& D_skip);

inline constexpr float kScanExpClamp = 30.0f;

}  // namespace vimd
