#include "vimd/encoder.hpp"

#include <cmath>

namespace vimd {

namespace {

void fan_in_uniform(Tensor& t, int fan_in, Rng& rng) {
  float bound = 1.0f / std::sqrt(float(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
}

// softplus^-1(y) = log(expm1(y)), so softplus(b_dt) lands on the drawn step.
float inv_softplus(float y) { return std::log(std::expm1(y)); }

}  // namespace

void SsmParams::init(Rng& rng, int e, int s, int r, int kw) {
  A_log = Tensor::param({e, s});
  for (int ei = 0; ei < e; ++ei)
    for (int si = 0; si < s; ++si) A_log.at({ei, si}) = std::log(float(si + 1));

  D_skip = Tensor::param({e}, 1.0f);

  W_x_proj = Tensor::param({e, r + 2 * s});
  fan_in_uniform(W_x_proj, e, rng);

  W_dt = Tensor::param({r, e});
  fan_in_uniform(W_dt, r, rng);

  // Initial step sizes log-uniform in [1e-3, 1e-1].
  b_dt = Tensor::param({e});
  for (int ei = 0; ei < e; ++ei) {
    float dt = std::exp(rng.uniform(std::log(1e-3f), std::log(1e-1f)));
    b_dt.at({ei}) = inv_softplus(dt);
  }

  conv_w = Tensor::param({e, kw});
  fan_in_uniform(conv_w, kw, rng);
  conv_b = Tensor::param({e});
}

void SsmParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".conv.weight", &conv_w});
  out.push_back({prefix + ".conv.bias", &conv_b});
  out.push_back({prefix + ".x_proj.weight", &W_x_proj});
  out.push_back({prefix + ".dt_proj.weight", &W_dt});
  out.push_back({prefix + ".dt_proj.bias", &b_dt});
  out.push_back({prefix + ".A_log", &A_log});
  out.push_back({prefix + ".D_skip", &D_skip});
}

void VimBlockParams::init(Rng& rng, int d, int expand, int s, int r, int kw) {
  const int e = expand * d;
  norm_gain = Tensor::param({d}, 1.0f);
  W_in_x = Tensor::param({d, e});
  fan_in_uniform(W_in_x, d, rng);
  W_in_z = Tensor::param({d, e});
  fan_in_uniform(W_in_z, d, rng);
  W_out = Tensor::param({e, d});
  fan_in_uniform(W_out, e, rng);
  fw.init(rng, e, s, r, kw);
  bw.init(rng, e, s, r, kw);
}

void VimBlockParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".norm.gain", &norm_gain});
  out.push_back({prefix + ".in_x.weight", &W_in_x});
  out.push_back({prefix + ".in_z.weight", &W_in_z});
  out.push_back({prefix + ".out.weight", &W_out});
  fw.collect(prefix + ".fw", out);
  bw.collect(prefix + ".bw", out);
}

Tensor mamba_direction(const Tensor& p, const SsmParams& ssm) {
  const int r = ssm.W_dt.dim(0);
  const int s = ssm.A_log.dim(1);

  Tensor a = silu(conv1d_depthwise_causal(p, ssm.conv_w, ssm.conv_b));
  Tensor proj = matmul(a, ssm.W_x_proj);  // [T x (R+2S)]
  Tensor dt_hat = slice_cols(proj, 0, r);
  Tensor b_seq = slice_cols(proj, r, r + s);
  Tensor c_seq = slice_cols(proj, r + s, r + 2 * s);
  Tensor delta = softplus(linear(dt_hat, ssm.W_dt, ssm.b_dt));  // [T x E], > 0
  Tensor a_mat = neg(exp(ssm.A_log));
  return selective_scan(a, delta, a_mat, b_seq, c_seq, ssm.D_skip);
}

Tensor vim_block(const Tensor& h_prev, const VimBlockParams& params, bool literal_gate) {
  if (h_prev.rank() != 2 || h_prev.dim(1) != params.norm_gain.dim(0))
    throw ShapeError("vim_block: input " + shape_str(h_prev.shape()) + " does not match width " +
                     std::to_string(params.norm_gain.dim(0)));

  Tensor n = rms_norm(h_prev, params.norm_gain);
  Tensor p_fw = matmul(n, params.W_in_x);
  Tensor p_bw = reverse_seq(p_fw);

  Tensor q_fw = mamba_direction(p_fw, params.fw);
  Tensor q_bw = reverse_seq(mamba_direction(p_bw, params.bw));

  Tensor g;
  if (literal_gate) {
    if (h_prev.dim(1) != params.W_in_x.dim(1))
      throw ContractError("vim_block: literal gate needs E == D (expand = 1)");
    g = silu(h_prev);
  } else {
    g = silu(matmul(n, params.W_in_z));
  }

  Tensor fused = add(mul(g, q_fw), mul(g, q_bw));
  return add(matmul(fused, params.W_out), h_prev);
}

}  // namespace vimd
