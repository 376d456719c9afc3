#include "vimd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace vimd {

namespace {

struct Rec {
  Tape* tape = nullptr;
  bool on = false;
};

Rec recording_for(std::initializer_list<const Tensor*> ins) {
  Rec r;
  r.tape = Tape::current();
  if (!r.tape) return r;
  for (const Tensor* t : ins)
    if (t->requires_grad || t->node >= 0) {
      r.on = true;
      return r;
    }
  return r;
}

void mark(Tensor& out, const Rec& r, int32_t node) {
  if (r.on) {
    out.requires_grad = true;
    out.node = node;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul / linear

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dims disagree, lhs " + shape_str(a.shape()) + " rhs " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y({m, n});
  y.mat2d().noalias() = a.mat2d() * b.mat2d();

  Rec r = recording_for({&a, &b});
  if (r.on) {
    int32_t ia = r.tape->input_id(a), ib = r.tape->input_id(b);
    auto ad = a.storage();
    auto bd = b.storage();
    int32_t node = r.tape->push("matmul", {ia, ib}, int64_t(m) * n, [=](Tape::Ctx& ctx) {
      CMatMap g(ctx.gout(), m, n);
      if (float* ga = ctx.grad_buf(ia)) MatMap(ga, m, k).noalias() += g * CMatMap(bd->data(), k, n).transpose();
      if (float* gb = ctx.grad_buf(ib)) MatMap(gb, k, n).noalias() += CMatMap(ad->data(), m, k).transpose() * g;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
    throw ShapeError("linear: inner dims disagree, x " + shape_str(x.shape()) + " W " +
                     shape_str(w.shape()));
  if (bias.size() != w.dim(1))
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) + " != out dim " +
                     std::to_string(w.dim(1)));
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  Tensor y({m, n});
  y.mat2d().noalias() = x.mat2d() * w.mat2d();
  y.mat2d().rowwise() += CVecMap(bias.data(), n).transpose();

  Rec r = recording_for({&x, &w, &bias});
  if (r.on) {
    int32_t ix = r.tape->input_id(x), iw = r.tape->input_id(w), ib = r.tape->input_id(bias);
    auto xd = x.storage();
    auto wd = w.storage();
    int32_t node = r.tape->push("linear", {ix, iw, ib}, int64_t(m) * n, [=](Tape::Ctx& ctx) {
      CMatMap g(ctx.gout(), m, n);
      if (float* gx = ctx.grad_buf(ix)) MatMap(gx, m, k).noalias() += g * CMatMap(wd->data(), k, n).transpose();
      if (float* gw = ctx.grad_buf(iw)) MatMap(gw, k, n).noalias() += CMatMap(xd->data(), m, k).transpose() * g;
      if (float* gb = ctx.grad_buf(ib)) VecMap(gb, n) += g.colwise().sum().transpose();
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM

namespace {

struct Conv2dDims {
  int c, h, w, d, j, ho, wo;
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4)
    throw ShapeError("conv2d: want x [CxHxW], w [DxCxJxJ], got " + shape_str(x.shape()) + ", " +
                     shape_str(w.shape()));
  if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: channel mismatch, x has " + std::to_string(x.dim(0)) +
                     ", kernel expects " + std::to_string(w.dim(1)));
  if (stride < 1) throw DomainError("conv2d: stride must be >= 1");
  if (pad < 0) throw DomainError("conv2d: padding must be >= 0");
  Conv2dDims d{};
  d.c = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.d = w.dim(0);
  d.j = w.dim(2);
  if (d.h + 2 * pad < d.j || d.w + 2 * pad < d.j)
    throw ShapeError("conv2d: kernel " + std::to_string(d.j) + "x" + std::to_string(d.j) +
                     " larger than padded input " + std::to_string(d.h + 2 * pad) + "x" +
                     std::to_string(d.w + 2 * pad));
  d.ho = (d.h + 2 * pad - d.j) / stride + 1;
  d.wo = (d.w + 2 * pad - d.j) / stride + 1;
  return d;
}

// cols: [C*J*J x Ho*Wo], one column per output position.
void im2col(const float* x, const Conv2dDims& d, int stride, int pad, float* cols) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < d.c; ++c) {
    for (int ky = 0; ky < d.j; ++ky) {
      for (int kx = 0; kx < d.j; ++kx) {
        float* row = cols + (int64_t(c) * d.j * d.j + ky * d.j + kx) * hw;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[oy * d.wo + ox] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                      ? x[(int64_t(c) * d.h + iy) * d.w + ix]
                                      : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, const Conv2dDims& d, int stride, int pad, float* x) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < d.c; ++c) {
    for (int ky = 0; ky < d.j; ++ky) {
      for (int kx = 0; kx < d.j; ++kx) {
        const float* row = cols + (int64_t(c) * d.j * d.j + ky * d.j + kx) * hw;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= d.w) continue;
            x[(int64_t(c) * d.h + iy) * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  Conv2dDims d = conv2d_dims(x, w, stride, pad);
  const int hw = d.ho * d.wo;
  const int patch = d.c * d.j * d.j;

  std::vector<float> cols(size_t(patch) * hw);
  im2col(x.data(), d, stride, pad, cols.data());

  Tensor y({d.d, d.ho, d.wo});
  MatMap ym(y.data(), d.d, hw);
  ym.noalias() = CMatMap(w.data(), d.d, patch) * CMatMap(cols.data(), patch, hw);
  if (bias) ym.colwise() += CVecMap(bias->data(), d.d);

  Rec r = bias ? recording_for({&x, &w, bias}) : recording_for({&x, &w});
  if (r.on) {
    int32_t ix = r.tape->input_id(x), iw = r.tape->input_id(w);
    int32_t ib = bias ? r.tape->input_id(*bias) : -1;
    auto wd = w.storage();
    auto colsp = std::make_shared<std::vector<float>>(std::move(cols));
    int32_t node =
        r.tape->push("conv2d", {ix, iw, ib}, int64_t(d.d) * hw, [=](Tape::Ctx& ctx) {
          CMatMap g(ctx.gout(), d.d, hw);
          if (float* gw = ctx.grad_buf(iw))
            MatMap(gw, d.d, patch).noalias() += g * CMatMap(colsp->data(), patch, hw).transpose();
          if (float* gb = ctx.grad_buf(ib)) VecMap(gb, d.d) += g.rowwise().sum();
          if (float* gx = ctx.grad_buf(ix)) {
            std::vector<float> gcols(size_t(patch) * hw);
            MatMap(gcols.data(), patch, hw).noalias() =
                CMatMap(wd->data(), d.d, patch).transpose() * g;
            col2im(gcols.data(), d, stride, pad, gx);
          }
        });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d_impl(x, w, nullptr, stride, pad);
}
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (bias.size() != w.dim(0))
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != out channels " +
                     std::to_string(w.dim(0)));
  return conv2d_impl(x, w, &bias, stride, pad);
}

// ---------------------------------------------------------------------------
// depthwise causal conv1d

Tensor conv1d_depthwise_causal(const Tensor& x, const Tensor& k, const Tensor& bias) {
  if (x.rank() != 2 || k.rank() != 2 || x.dim(1) != k.dim(0))
    throw ShapeError("conv1d: want x [TxE], k [ExKw] with matching E, got " +
                     shape_str(x.shape()) + ", " + shape_str(k.shape()));
  if (bias.size() != x.dim(1)) throw ShapeError("conv1d: bias length != E");
  const int t_len = x.dim(0), e = x.dim(1), kw = k.dim(1);
  Tensor y({t_len, e});
  const float* xp = x.data();
  const float* kp = k.data();
  const float* bp = bias.data();
  float* yp = y.data();
  for (int t = 0; t < t_len; ++t) {
    for (int c = 0; c < e; ++c) {
      float acc = bp[c];
      for (int j = 0; j < kw; ++j) {
        int tau = t - (kw - 1) + j;
        if (tau >= 0) acc += xp[tau * e + c] * kp[c * kw + j];
      }
      yp[t * e + c] = acc;
    }
  }

  Rec r = recording_for({&x, &k, &bias});
  if (r.on) {
    int32_t ix = r.tape->input_id(x), ik = r.tape->input_id(k), ib = r.tape->input_id(bias);
    auto xd = x.storage();
    auto kd = k.storage();
    int32_t node = r.tape->push("conv1d", {ix, ik, ib}, int64_t(t_len) * e, [=](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      float* gx = ctx.grad_buf(ix);
      float* gk = ctx.grad_buf(ik);
      float* gb = ctx.grad_buf(ib);
      const float* xv = xd->data();
      const float* kv = kd->data();
      for (int t = 0; t < t_len; ++t) {
        for (int c = 0; c < e; ++c) {
          const float go = g[t * e + c];
          if (gb) gb[c] += go;
          for (int j = 0; j < kw; ++j) {
            int tau = t - (kw - 1) + j;
            if (tau < 0) continue;
            if (gx) gx[tau * e + c] += go * kv[c * kw + j];
            if (gk) gk[c * kw + j] += go * xv[tau * e + c];
          }
        }
      }
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

inline float sigmoid_f(float v) {
  if (v >= 0) {
    float z = std::exp(-v);
    return 1.0f / (1.0f + z);
  }
  float z = std::exp(v);
  return z / (1.0f + z);
}

}  // namespace

Tensor silu(const Tensor& x) {
  Tensor y(x.shape());
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t i = 0; i < x.size(); ++i) yp[i] = xp[i] * sigmoid_f(xp[i]);

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto xd = x.storage();
    int32_t node = r.tape->push("silu", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* xv = xd->data();
      for (int64_t i = 0; i < ctx.gout_size(); ++i) {
        float s = sigmoid_f(xv[i]);
        gx[i] += g[i] * s * (1.0f + xv[i] * (1.0f - s));
      }
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t i = 0; i < x.size(); ++i) yp[i] = sigmoid_f(xp[i]);

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto yd = y.storage();
    int32_t node = r.tape->push("sigmoid", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* yv = yd->data();
      for (int64_t i = 0; i < ctx.gout_size(); ++i) gx[i] += g[i] * yv[i] * (1.0f - yv[i]);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor softplus(const Tensor& x) {
  Tensor y(x.shape());
  const float* xp = x.data();
  float* yp = y.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    float v = xp[i];
    yp[i] = v > 20.0f ? v : (v < -20.0f ? std::exp(v) : std::log1p(std::exp(v)));
  }

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto xd = x.storage();
    int32_t node = r.tape->push("softplus", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* xv = xd->data();
      for (int64_t i = 0; i < ctx.gout_size(); ++i) gx[i] += g[i] * sigmoid_f(xv[i]);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor exp(const Tensor& x) {
  Tensor y(x.shape());
  y.arr() = x.arr().exp();

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto yd = y.storage();
    int32_t node = r.tape->push("exp", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix))
        ArrMap(gx, ctx.gout_size()) +=
            CArrMap(ctx.gout(), ctx.gout_size()) * CArrMap(yd->data(), int64_t(yd->size()));
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor neg(const Tensor& x) {
  Tensor y(x.shape());
  y.arr() = -x.arr();

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("neg", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix))
        ArrMap(gx, ctx.gout_size()) -= CArrMap(ctx.gout(), ctx.gout_size());
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  Tensor y(x.shape());
  y.arr() = x.arr().max(lo).min(hi);

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto xd = x.storage();
    int32_t node = r.tape->push("clamp", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* xv = xd->data();
      for (int64_t i = 0; i < ctx.gout_size(); ++i)
        if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor y(a.shape());
  y.arr() = a.arr() + b.arr();

  Rec r = recording_for({&a, &b});
  if (r.on) {
    int32_t ia = r.tape->input_id(a), ib = r.tape->input_id(b);
    int32_t node = r.tape->push("add", {ia, ib}, a.size(), [=](Tape::Ctx& ctx) {
      CArrMap g(ctx.gout(), ctx.gout_size());
      if (float* ga = ctx.grad_buf(ia)) ArrMap(ga, ctx.gout_size()) += g;
      if (float* gb = ctx.grad_buf(ib)) ArrMap(gb, ctx.gout_size()) += g;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor y(a.shape());
  y.arr() = a.arr() - b.arr();

  Rec r = recording_for({&a, &b});
  if (r.on) {
    int32_t ia = r.tape->input_id(a), ib = r.tape->input_id(b);
    int32_t node = r.tape->push("sub", {ia, ib}, a.size(), [=](Tape::Ctx& ctx) {
      CArrMap g(ctx.gout(), ctx.gout_size());
      if (float* ga = ctx.grad_buf(ia)) ArrMap(ga, ctx.gout_size()) += g;
      if (float* gb = ctx.grad_buf(ib)) ArrMap(gb, ctx.gout_size()) -= g;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor y(a.shape());
  y.arr() = a.arr() * b.arr();

  Rec r = recording_for({&a, &b});
  if (r.on) {
    int32_t ia = r.tape->input_id(a), ib = r.tape->input_id(b);
    auto ad = a.storage();
    auto bd = b.storage();
    int32_t node = r.tape->push("mul", {ia, ib}, a.size(), [=](Tape::Ctx& ctx) {
      CArrMap g(ctx.gout(), ctx.gout_size());
      if (float* ga = ctx.grad_buf(ia))
        ArrMap(ga, ctx.gout_size()) += g * CArrMap(bd->data(), int64_t(bd->size()));
      if (float* gb = ctx.grad_buf(ib))
        ArrMap(gb, ctx.gout_size()) += g * CArrMap(ad->data(), int64_t(ad->size()));
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor scale(const Tensor& x, float c) {
  Tensor y(x.shape());
  y.arr() = x.arr() * c;

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("scale", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix))
        ArrMap(gx, ctx.gout_size()) += CArrMap(ctx.gout(), ctx.gout_size()) * c;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::scalar(x.arr().sum());

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int64_t n = x.size();
    int32_t node = r.tape->push("sum", {ix}, 1, [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix)) ArrMap(gx, n) += ctx.gout()[0];
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor mean(const Tensor& x) {
  Tensor y = Tensor::scalar(x.arr().sum() / float(x.size()));

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int64_t n = x.size();
    int32_t node = r.tape->push("mean", {ix}, 1, [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix)) ArrMap(gx, n) += ctx.gout()[0] / float(n);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// softmax

Tensor softmax(const Tensor& x, float temperature) {
  if (temperature <= 0.0f) throw DomainError("softmax: temperature must be positive");
  if (x.rank() != 1) throw ShapeError("softmax: want a 1-D logit vector");
  const int n = x.dim(0);
  Tensor y({n});
  {
    Eigen::ArrayXf s = x.arr() / temperature;
    float mx = s.maxCoeff();
    Eigen::ArrayXf e = (s - mx).exp();
    y.arr() = e / e.sum();
  }

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    auto yd = y.storage();
    int32_t node = r.tape->push("softmax", {ix}, n, [=](Tape::Ctx& ctx) {
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      CArrMap g(ctx.gout(), n);
      CArrMap p(yd->data(), n);
      float dot = (p * g).sum();
      ArrMap(gx, n) += p * (g - dot) / temperature;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// permutations and slicing

Tensor reverse_seq(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("reverse_seq: want [TxE], got " + shape_str(x.shape()));
  const int t_len = x.dim(0), e = x.dim(1);
  Tensor y({t_len, e});
  for (int t = 0; t < t_len; ++t)
    std::copy_n(x.data() + int64_t(t) * e, e, y.data() + int64_t(t_len - 1 - t) * e);

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("reverse_seq", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* g = ctx.gout();
      for (int t = 0; t < t_len; ++t)
        ArrMap(gx + int64_t(t_len - 1 - t) * e, e) += CArrMap(g + int64_t(t) * e, e);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

namespace {

struct ShuffleDims {
  int c_out, h, w, r;
};

void shuffle_scatter(const float* src, float* dst, const ShuffleDims& d, bool to_space) {
  // to_space: src is [r^2*C x H x W], dst is [C x rH x rW]; else the inverse.
  for (int c = 0; c < d.c_out; ++c)
    for (int y = 0; y < d.h * d.r; ++y)
      for (int x = 0; x < d.w * d.r; ++x) {
        int64_t lo = (int64_t(c) * d.h * d.r + y) * (d.w * d.r) + x;
        int ch = c * d.r * d.r + (y % d.r) * d.r + (x % d.r);
        int64_t hi = (int64_t(ch) * d.h + y / d.r) * d.w + x / d.r;
        if (to_space)
          dst[lo] = src[hi];
        else
          dst[hi] = src[lo];
      }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  if (r < 1) throw DomainError("pixel_shuffle: r must be >= 1");
  if (x.rank() != 3) throw ShapeError("pixel_shuffle: want [CxHxW]");
  if (x.dim(0) % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels " + std::to_string(x.dim(0)) +
                     " not divisible by r^2 = " + std::to_string(r * r));
  ShuffleDims d{x.dim(0) / (r * r), x.dim(1), x.dim(2), r};
  Tensor y({d.c_out, d.h * r, d.w * r});
  shuffle_scatter(x.data(), y.data(), d, true);

  Rec rec = recording_for({&x});
  if (rec.on) {
    int32_t ix = rec.tape->input_id(x);
    int32_t node = rec.tape->push("pixel_shuffle", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      std::vector<float> tmp(size_t(ctx.gout_size()));
      shuffle_scatter(ctx.gout(), tmp.data(), d, false);
      ArrMap(gx, ctx.gout_size()) += CArrMap(tmp.data(), ctx.gout_size());
    });
    Tensor out = y;
    mark(out, rec, node);
    return out;
  }
  return y;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  if (r < 1) throw DomainError("pixel_unshuffle: r must be >= 1");
  if (x.rank() != 3) throw ShapeError("pixel_unshuffle: want [CxHxW]");
  if (x.dim(1) % r != 0 || x.dim(2) % r != 0)
    throw ShapeError("pixel_unshuffle: spatial dims not divisible by r");
  ShuffleDims d{x.dim(0), x.dim(1) / r, x.dim(2) / r, r};
  Tensor y({d.c_out * r * r, d.h, d.w});
  shuffle_scatter(x.data(), y.data(), d, false);

  Rec rec = recording_for({&x});
  if (rec.on) {
    int32_t ix = rec.tape->input_id(x);
    int32_t node = rec.tape->push("pixel_unshuffle", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      std::vector<float> tmp(size_t(ctx.gout_size()));
      shuffle_scatter(ctx.gout(), tmp.data(), d, true);
      ArrMap(gx, ctx.gout_size()) += CArrMap(tmp.data(), ctx.gout_size());
    });
    Tensor out = y;
    mark(out, rec, node);
    return out;
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape dims) {
  if (shape_numel(dims) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                     " elements, target " + shape_str(dims) + " wants " +
                     std::to_string(shape_numel(dims)));
  return x.with_dims(std::move(dims));
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.rank() != 2) throw ShapeError("slice_rows: want rank 2");
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") for " + shape_str(x.shape()));
  const int e = x.dim(1);
  Tensor y({r1 - r0, e});
  std::copy_n(x.data() + int64_t(r0) * e, int64_t(r1 - r0) * e, y.data());

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("slice_rows", {ix}, y.size(), [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix))
        ArrMap(gx + int64_t(r0) * e, ctx.gout_size()) += CArrMap(ctx.gout(), ctx.gout_size());
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2) throw ShapeError("slice_cols: want rank 2");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for " + shape_str(x.shape()));
  const int t_len = x.dim(0), e = x.dim(1), w = c1 - c0;
  Tensor y({t_len, w});
  for (int t = 0; t < t_len; ++t)
    std::copy_n(x.data() + int64_t(t) * e + c0, w, y.data() + int64_t(t) * w);

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("slice_cols", {ix}, y.size(), [=](Tape::Ctx& ctx) {
      float* gx = ctx.grad_buf(ix);
      if (!gx) return;
      const float* g = ctx.gout();
      for (int t = 0; t < t_len; ++t)
        ArrMap(gx + int64_t(t) * e + c0, w) += CArrMap(g + int64_t(t) * w, w);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int e = parts[0].dim(1);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(1) != e)
      throw ShapeError("concat_rows: width mismatch " + shape_str(p.shape()));
    total += p.dim(0);
  }
  Tensor y({total, e});
  int row = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data(), p.size(), y.data() + int64_t(row) * e);
    row += p.dim(0);
  }

  Tape* tape = Tape::current();
  bool on = false;
  if (tape)
    for (const Tensor& p : parts)
      if (p.requires_grad || p.node >= 0) on = true;
  if (on) {
    std::vector<int32_t> ids(parts.size());
    std::vector<int> rows(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
      ids[i] = tape->input_id(parts[i]);
      rows[i] = parts[i].dim(0);
    }
    // push() takes up to 6 explicit inputs.
    if (ids.size() > 6) throw ContractError("concat_rows: too many recorded parts");
    Tape::BackFn back = [ids, rows, e](Tape::Ctx& ctx) {
      const float* g = ctx.gout();
      int64_t ofs = 0;
      for (size_t i = 0; i < ids.size(); ++i) {
        int64_t n = int64_t(rows[i]) * e;
        if (float* gp = ctx.grad_buf(ids[i])) ArrMap(gp, n) += CArrMap(g + ofs, n);
        ofs += n;
      }
    };
    int32_t node;
    switch (ids.size()) {
      case 1: node = tape->push("concat_rows", {ids[0]}, y.size(), std::move(back)); break;
      case 2: node = tape->push("concat_rows", {ids[0], ids[1]}, y.size(), std::move(back)); break;
      case 3:
        node = tape->push("concat_rows", {ids[0], ids[1], ids[2]}, y.size(), std::move(back));
        break;
      case 4:
        node = tape->push("concat_rows", {ids[0], ids[1], ids[2], ids[3]}, y.size(),
                          std::move(back));
        break;
      case 5:
        node = tape->push("concat_rows", {ids[0], ids[1], ids[2], ids[3], ids[4]}, y.size(),
                          std::move(back));
        break;
      default:
        node = tape->push("concat_rows", {ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]},
                          y.size(), std::move(back));
    }
    Tensor out = y;
    out.requires_grad = true;
    out.node = node;
    return out;
  }
  return y;
}

Tensor seq_from_chw(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("seq_from_chw: want [DxKhxKw]");
  const int d = x.dim(0), z = x.dim(1) * x.dim(2);
  Tensor y({z, d});
  // out(k, c) = in(c, k): transpose of the [D x Z] view.
  MatMap(y.data(), z, d).noalias() = CMatMap(x.data(), d, z).transpose();

  Rec r = recording_for({&x});
  if (r.on) {
    int32_t ix = r.tape->input_id(x);
    int32_t node = r.tape->push("seq_from_chw", {ix}, x.size(), [=](Tape::Ctx& ctx) {
      if (float* gx = ctx.grad_buf(ix))
        MatMap(gx, d, z).noalias() += CMatMap(ctx.gout(), z, d).transpose();
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

// ---------------------------------------------------------------------------
// normalization

namespace {

// Shared core: x viewed as `rows` vectors of length `dim`, normalized per
// vector. `stride_row`/`stride_el` pick row-major (tokens) or column-major
// (channel vectors at each pixel) traversal.
struct NormView {
  int rows, dim;
  int64_t stride_row, stride_el;
};

void rms_forward(const float* x, const float* gain, const NormView& v, float* y, float* inv_rms) {
  for (int t = 0; t < v.rows; ++t) {
    const float* xr = x;
    double ss = 0;
    for (int i = 0; i < v.dim; ++i) ss += double(xr[t * v.stride_row + i * v.stride_el]) *
                                          double(xr[t * v.stride_row + i * v.stride_el]);
    float r = 1.0f / std::sqrt(float(ss / v.dim) + kRmsNormEps);
    inv_rms[t] = r;
    for (int i = 0; i < v.dim; ++i) {
      int64_t idx = t * v.stride_row + i * v.stride_el;
      y[idx] = x[idx] * r * gain[i];
    }
  }
}

void rms_backward(const float* x, const float* gain, const float* inv_rms, const float* g,
                  const NormView& v, float* gx, float* ggain) {
  for (int t = 0; t < v.rows; ++t) {
    float r = inv_rms[t];
    float dot = 0.0f;
    for (int i = 0; i < v.dim; ++i) {
      int64_t idx = t * v.stride_row + i * v.stride_el;
      dot += g[idx] * gain[i] * x[idx];
    }
    float k = r * r * r * dot / float(v.dim);
    for (int i = 0; i < v.dim; ++i) {
      int64_t idx = t * v.stride_row + i * v.stride_el;
      if (gx) gx[idx] += g[idx] * gain[i] * r - x[idx] * k;
      if (ggain) ggain[i] += g[idx] * x[idx] * r;
    }
  }
}

Tensor rms_norm_view(const Tensor& x, const Tensor& gain, const NormView& v, const char* tag) {
  Tensor y(x.shape());
  auto inv_rms = std::make_shared<std::vector<float>>(size_t(v.rows));
  rms_forward(x.data(), gain.data(), v, y.data(), inv_rms->data());

  Rec r = recording_for({&x, &gain});
  if (r.on) {
    int32_t ix = r.tape->input_id(x), ig = r.tape->input_id(gain);
    auto xd = x.storage();
    auto gd = gain.storage();
    int32_t node = r.tape->push(tag, {ix, ig}, x.size(), [=](Tape::Ctx& ctx) {
      rms_backward(xd->data(), gd->data(), inv_rms->data(), ctx.gout(), v, ctx.grad_buf(ix),
                   ctx.grad_buf(ig));
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

}  // namespace

Tensor rms_norm(const Tensor& x, const Tensor& gain) {
  int d = x.dim(x.rank() - 1);
  if (gain.size() != d)
    throw ShapeError("rms_norm: gain length " + std::to_string(gain.size()) + " != last dim " +
                     std::to_string(d));
  NormView v{int(x.size() / d), d, d, 1};
  return rms_norm_view(x, gain, v, "rms_norm");
}

Tensor rms_norm_channels(const Tensor& x, const Tensor& gain) {
  if (x.rank() != 3) throw ShapeError("rms_norm_channels: want [CxHxW]");
  const int c = x.dim(0);
  if (gain.size() != c) throw ShapeError("rms_norm_channels: gain length != channels");
  const int hw = x.dim(1) * x.dim(2);
  NormView v{hw, c, 1, hw};
  return rms_norm_view(x, gain, v, "rms_norm_channels");
}

// ---------------------------------------------------------------------------
// classification losses

int argmax(const Tensor& logits) {
  if (logits.size() == 0) throw ContractError("argmax: empty logits");
  const float* p = logits.data();
  int best = 0;
  for (int64_t i = 1; i < logits.size(); ++i)
    if (p[i] > p[best]) best = int(i);
  return best;
}

namespace {

// log softmax of v/temp, max-subtracted.
Eigen::ArrayXf log_softmax_arr(CArrMap v, float temp) {
  Eigen::ArrayXf s = v / temp;
  float mx = s.maxCoeff();
  Eigen::ArrayXf sh = s - mx;
  float lse = std::log(sh.exp().sum());
  return sh - lse;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: want 1-D logits");
  const int n = logits.dim(0);
  if (label < 0 || label >= n)
    throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                      std::to_string(n) + ")");
  Eigen::ArrayXf ls = log_softmax_arr(logits.arr(), 1.0f);
  Tensor y = Tensor::scalar(-ls[label]);

  Rec r = recording_for({&logits});
  if (r.on) {
    int32_t il = r.tape->input_id(logits);
    auto probs = std::make_shared<Eigen::ArrayXf>(ls.exp());
    int32_t node = r.tape->push("cross_entropy", {il}, 1, [=](Tape::Ctx& ctx) {
      float* gl = ctx.grad_buf(il);
      if (!gl) return;
      const float go = ctx.gout()[0];
      // d/dlogits = softmax(logits) - one_hot(label)
      ArrMap(gl, n) += go * (*probs);
      gl[label] -= go;
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor kl_tempered(const Tensor& lhs, const Tensor& rhs, float temperature, bool swap_args,
                   bool temp_sq_scale) {
  if (temperature <= 0.0f) throw DomainError("kl_tempered: temperature must be positive");
  if (lhs.rank() != 1 || rhs.rank() != 1 || lhs.dim(0) != rhs.dim(0))
    throw ShapeError("kl_tempered: logit shapes disagree, " + shape_str(lhs.shape()) + " vs " +
                     shape_str(rhs.shape()));
  const int n = lhs.dim(0);
  const float w = temp_sq_scale ? temperature * temperature : 1.0f;

  Eigen::ArrayXf la = log_softmax_arr(lhs.arr(), temperature);
  Eigen::ArrayXf lb = log_softmax_arr(rhs.arr(), temperature);
  Eigen::ArrayXf pa = la.exp();
  Eigen::ArrayXf pb = lb.exp();

  // swap_args=false: KL(p_lhs || p_rhs); true: KL(p_rhs || p_lhs).
  float kl = swap_args ? (pb * (lb - la)).sum() : (pa * (la - lb)).sum();
  Tensor y = Tensor::scalar(w * kl);

  Rec r = recording_for({&lhs});  // rhs detached by contract
  if (r.on) {
    int32_t il = r.tape->input_id(lhs);
    auto pa_s = std::make_shared<Eigen::ArrayXf>(pa);
    auto pb_s = std::make_shared<Eigen::ArrayXf>(pb);
    auto diff_s = std::make_shared<Eigen::ArrayXf>(la - lb);
    int32_t node = r.tape->push("kl_tempered", {il}, 1, [=](Tape::Ctx& ctx) {
      float* gl = ctx.grad_buf(il);
      if (!gl) return;
      const float go = ctx.gout()[0] * w / temperature;
      if (swap_args) {
        // d/dlhs KL(p_rhs || p_lhs) = (p_lhs - p_rhs) / temp
        ArrMap(gl, n) += go * (*pa_s - *pb_s);
      } else {
        ArrMap(gl, n) += go * (*pa_s) * (*diff_s - kl);
      }
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  const int64_t n = a.size();
  Eigen::ArrayXf d = a.arr() - b.arr();
  Tensor y = Tensor::scalar(d.square().sum() / float(n));

  Rec r = recording_for({&a, &b});
  if (r.on) {
    int32_t ia = r.tape->input_id(a), ib = r.tape->input_id(b);
    auto diff = std::make_shared<Eigen::ArrayXf>(std::move(d));
    int32_t node = r.tape->push("mse", {ia, ib}, 1, [=](Tape::Ctx& ctx) {
      const float go = ctx.gout()[0] * 2.0f / float(n);
      if (float* ga = ctx.grad_buf(ia)) ArrMap(ga, n) += go * (*diff);
      if (float* gb = ctx.grad_buf(ib)) ArrMap(gb, n) -= go * (*diff);
    });
    Tensor out = y;
    mark(out, r, node);
    return out;
  }
  return y;
}

}  // namespace vimd
