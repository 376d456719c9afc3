#include "vimd/gradsuite.hpp"

#include "vimd/train.hpp"

namespace vimd {

std::vector<GradReport> gradcheck_suite(uint64_t seed) {
  std::vector<GradReport> rows;
  auto add = [&](const std::string& name, float err, float tol = 1e-3f) {
    rows.push_back({name, err, tol});
  };
  Rng rng(mix_seed(seed, hash_str("gradcheck")));
  auto rand_t = [&](Shape s, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(s);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
  };
  auto scalarize = [](const Tensor& t, const Tensor& w) { return sum(mul(t, w)); };
  const float h = 1e-3f;

  {
    Tensor x = rand_t({4, 5}), w = rand_t({4, 5});
    add("silu", grad_check([&](const Tensor& v) { return scalarize(silu(v), w); }, x, h));
    add("sigmoid", grad_check([&](const Tensor& v) { return scalarize(sigmoid(v), w); }, x, h));
    add("softplus", grad_check([&](const Tensor& v) { return scalarize(softplus(v), w); }, x, h));
    add("exp", grad_check([&](const Tensor& v) { return scalarize(exp(v), w); }, x, h));
    add("reverse_seq",
        grad_check([&](const Tensor& v) { return scalarize(reverse_seq(v), w); }, x, h));
    add("mean", grad_check([&](const Tensor& v) { return mean(v); }, x, h));
  }
  {
    Tensor a = rand_t({3, 4}), b = rand_t({4, 2}), w = rand_t({3, 2}), bias = rand_t({2});
    add("matmul.lhs", grad_check([&](const Tensor& v) { return scalarize(matmul(v, b), w); }, a, h));
    add("matmul.rhs", grad_check([&](const Tensor& v) { return scalarize(matmul(a, v), w); }, b, h));
    add("linear.bias",
        grad_check([&](const Tensor& v) { return scalarize(linear(a, b, v), w); }, bias, h));
  }
  {
    Tensor x = rand_t({2, 5, 5}), k = rand_t({3, 2, 3, 3}, -0.6f, 0.6f), bias = rand_t({3});
    Tensor w = rand_t({3, 5, 5});
    auto via = [&](const Tensor& xx, const Tensor& kk, const Tensor& bb) {
      return sum(mul(conv2d(xx, kk, bb, 1, 1), w));
    };
    add("conv2d.x", grad_check([&](const Tensor& v) { return via(v, k, bias); }, x, 2e-3f));
    add("conv2d.w", grad_check([&](const Tensor& v) { return via(x, v, bias); }, k, 2e-3f));
  }
  {
    Tensor x = rand_t({6, 3}), k = rand_t({3, 4}), bias = rand_t({3}), w = rand_t({6, 3});
    add("conv1d", grad_check(
                      [&](const Tensor& v) {
                        return sum(mul(conv1d_depthwise_causal(v, k, bias), w));
                      },
                      x, h));
  }
  {
    Tensor x = rand_t({4, 8}), gain = rand_t({8}, 0.5f, 1.5f), w = rand_t({4, 8});
    add("rms_norm", grad_check([&](const Tensor& v) { return scalarize(rms_norm(v, gain), w); }, x, h));
    add("rms_norm.gain",
        grad_check([&](const Tensor& v) { return scalarize(rms_norm(x, v), w); }, gain, h));
  }
  {
    Tensor x = rand_t({8, 2, 2}), w = rand_t({2, 4, 4});
    add("pixel_shuffle",
        grad_check([&](const Tensor& v) { return scalarize(pixel_shuffle(v, 2), w); }, x, h));
  }
  {
    Tensor logits = rand_t({5}, -2.0f, 2.0f), other = rand_t({5}, -2.0f, 2.0f), w = rand_t({5});
    add("softmax", grad_check([&](const Tensor& v) { return scalarize(softmax(v, 2.5f), w); },
                              logits, h));
    add("cross_entropy",
        grad_check([&](const Tensor& v) { return cross_entropy(v, 2); }, logits, h));
    add("kl_tempered",
        grad_check([&](const Tensor& v) { return kl_tempered(v, other, 4.0f); }, logits, h));
    Tensor m = rand_t({3, 3});
    add("mse", grad_check([&](const Tensor& v) { return mse(v, m); }, rand_t({3, 3}), h));
  }
  {
    const int t = 5, e = 2, s = 3;
    Tensor u = rand_t({t, e}), delta = rand_t({t, e}, 0.1f, 0.9f);
    Tensor A = rand_t({e, s}, -1.5f, -0.1f);
    Tensor B = rand_t({t, s}), C = rand_t({t, s}), D = rand_t({e}), w = rand_t({t, e});
    auto run = [&](const Tensor& uu, const Tensor& dd, const Tensor& aa, const Tensor& bb,
                   const Tensor& cc, const Tensor& sk) {
      return sum(mul(selective_scan(uu, dd, aa, bb, cc, sk), w));
    };
    add("scan.u", grad_check([&](const Tensor& v) { return run(v, delta, A, B, C, D); }, u, h));
    add("scan.delta",
        grad_check([&](const Tensor& v) { return run(u, v, A, B, C, D); }, delta, h));
    add("scan.A", grad_check([&](const Tensor& v) { return run(u, delta, v, B, C, D); }, A, h));
    add("scan.B", grad_check([&](const Tensor& v) { return run(u, delta, A, v, C, D); }, B, h));
    add("scan.C", grad_check([&](const Tensor& v) { return run(u, delta, A, B, v, D); }, C, h));
    add("scan.D", grad_check([&](const Tensor& v) { return run(u, delta, A, B, C, v); }, D, h));
  }

  // Full combined objective on a 2-class, 1-layer, D=8 model at 32^2.
  {
    VimConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 1;
    cfg.patch = 16;
    cfg.input_side = 32;
    cfg.num_classes = 2;
    cfg.state_dim = 4;
    VimNet student(cfg), teacher(cfg);
    student.init(mix_seed(seed, hash_str("gc-student")));
    teacher.init(mix_seed(seed, hash_str("gc-teacher")));
    SrGenerator sr(SrGenerator::Mode::bicubic);
    Tensor lr_img = rand_t({3, 8, 8}, 0.0f, 1.0f);
    Tensor hr_img = rand_t({3, 32, 32}, 0.0f, 1.0f);
    DistillConfig dc;
    dc.beta = 2.0f;

    auto named = student.named_params();
    std::vector<Tensor*> params;
    for (auto& p : named) params.push_back(p.tensor);
    auto f = [&]() {
      return student_sample_losses(sr, student, teacher, lr_img, hr_img, 1, dc).l_total;
    };
    // small step: the scan's exponentials give the objective strong curvature
    add("full_loss", grad_check_params(f, params, 1.5e-3f, 0, seed), 5e-3f);
  }
  return rows;
}


}  // namespace vimd
