#include <doctest.h>

#include "oracles.hpp"
#include "vimd/network.hpp"

using namespace vimd;

namespace {

VimConfig toy_cfg() {
  VimConfig cfg;
  cfg.embed_dim = 8;
  cfg.layers = 2;
  cfg.patch = 16;
  cfg.input_side = 32;
  cfg.num_classes = 4;
  cfg.state_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config arithmetic: sequence length and class-token index") {
  VimConfig full;  // 224 / 16
  CHECK(full.patch_count() == 196);
  CHECK(full.tokens() == 197);
  CHECK(full.cls_index() == 98);

  VimConfig tiny = toy_cfg();
  CHECK(tiny.patch_count() == 4);
  CHECK(tiny.cls_index() == 2);

  VimConfig bad = toy_cfg();
  bad.input_side = 33;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  VimConfig odd = toy_cfg();
  odd.input_side = 48;  // 3x3 grid -> odd Z
  CHECK_THROWS_AS(odd.validate(), ContractError);
}

TEST_CASE("patch_embed of a zero image isolates positions and the class token") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(5);
  auto params = net.named_params();
  // zero the conv bias so patch tokens are exactly zero before embedding
  for (auto& p : params)
    if (p.name == "patch.bias") p.tensor->arr() = 0.0f;

  Tensor img({3, 32, 32});
  Tensor h0 = net.patch_embed(img);
  CHECK(h0.shape() == Shape{5, 8});

  const Tensor *pos = nullptr, *cls = nullptr;
  for (auto& p : params) {
    if (p.name == "pos_embed") pos = p.tensor;
    if (p.name == "cls_token") cls = p.tensor;
  }
  REQUIRE(pos != nullptr);
  REQUIRE(cls != nullptr);
  for (int t = 0; t < 5; ++t)
    for (int d = 0; d < 8; ++d) {
      float want = pos->at({t, d}) + (t == 2 ? cls->at({0, d}) : 0.0f);
      CHECK(h0.at({t, d}) == doctest::Approx(want));
    }
}

TEST_CASE("encode returns H_0..H_N and matches per-block recomputation exactly") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(7);
  Rng rng(1);
  Tensor img = oracle::rand_tensor({3, 32, 32}, rng, 0.0f, 1.0f);
  Tensor h0 = net.patch_embed(img);
  HiddenStates hs = net.encode(h0);
  CHECK(hs.count() == cfg.layers + 1);
  for (const Tensor& h : hs.layers) CHECK(h.shape() == Shape{5, 8});
  for (int i = 0; i < cfg.layers; ++i)
    CHECK(oracle::bytes_equal(net.block_forward(i, hs.layers[size_t(i)]),
                              hs.layers[size_t(i) + 1]));
}

TEST_CASE("encode with zero layers returns only H_0") {
  VimConfig cfg = toy_cfg();
  cfg.layers = 0;
  VimNet net(cfg);
  net.init(3);
  Tensor h0 = net.patch_embed(Tensor({3, 32, 32}, 0.25f));
  HiddenStates hs = net.encode(h0);
  CHECK(hs.count() == 1);
  CHECK(oracle::bytes_equal(hs.layers[0], h0));
}

TEST_CASE("zeroing a block's output projection makes it transparent") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(11);
  for (auto& p : net.named_params())
    if (p.name == "blocks.1.out.weight") p.tensor->arr() = 0.0f;
  Tensor h0 = net.patch_embed(Tensor({3, 32, 32}, 0.5f));
  HiddenStates hs = net.encode(h0);
  CHECK(oracle::bytes_equal(hs.layers[2], hs.layers[1]));
}

TEST_CASE("head reads only the class token row") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(13);
  Rng rng(2);
  Tensor h_last = oracle::rand_tensor({5, 8}, rng);
  Tensor logits = net.classify_head(h_last);
  CHECK(logits.shape() == Shape{4});

  // perturb every non-class row: logits must be bit-identical
  Tensor moved({5, 8});
  std::copy_n(h_last.data(), h_last.size(), moved.data());
  for (int t = 0; t < 5; ++t) {
    if (t == cfg.cls_index()) continue;
    for (int d = 0; d < 8; ++d) moved.at({t, d}) += rng.uniform(-1.0f, 1.0f);
  }
  CHECK(oracle::bytes_equal(net.classify_head(moved), logits));
}

TEST_CASE("zero head weights and bias give zero logits") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(17);
  for (auto& p : net.named_params())
    if (p.name == "head.weight" || p.name == "head.bias") p.tensor->arr() = 0.0f;
  Rng rng(3);
  Tensor logits = net.classify_head(oracle::rand_tensor({5, 8}, rng));
  for (int i = 0; i < 4; ++i) CHECK(logits.data()[i] == 0.0f);
}

TEST_CASE("predict: argmax with deterministic tie break and monotone invariance") {
  CHECK(predict(Tensor::from({3}, {0.1f, 2.3f, -1.0f})) == 1);
  CHECK(predict(Tensor::full({5}, 0.7f)) == 0);

  Rng rng(23);
  for (int seed = 0; seed < 20; ++seed) {
    Tensor logits = oracle::rand_tensor({6}, rng, -3.0f, 3.0f);
    int base = predict(logits);
    float c = rng.uniform(-10.0f, 10.0f);
    Tensor shifted({6});
    shifted.arr() = logits.arr() + c;
    CHECK(predict(shifted) == base);
    Tensor warped({6});  // strictly increasing map
    warped.arr() = (logits.arr() * 0.5f).exp() + logits.arr() * 3.0f;
    CHECK(predict(warped) == base);
  }
}

TEST_CASE("two forward passes are bit-identical") {
  VimConfig cfg = toy_cfg();
  VimNet net(cfg);
  net.init(29);
  Rng rng(4);
  Tensor img = oracle::rand_tensor({3, 32, 32}, rng, 0.0f, 1.0f);
  auto a = net.forward(img);
  auto b = net.forward(img);
  CHECK(oracle::bytes_equal(a.logits, b.logits));
  for (int i = 0; i < a.states.count(); ++i)
    CHECK(oracle::bytes_equal(a.states.layers[size_t(i)], b.states.layers[size_t(i)]));
}

TEST_CASE("shape law over valid (side, patch) pairs") {
  for (auto [side, patch] : {std::pair{32, 16}, {64, 8}, {48, 12}, {64, 16}}) {
    VimConfig cfg = toy_cfg();
    cfg.input_side = side;
    cfg.patch = patch;
    cfg.validate();
    VimNet net(cfg);
    net.init(31);
    Tensor h0 = net.patch_embed(Tensor({3, side, side}, 0.1f));
    HiddenStates hs = net.encode(h0);
    const int want_tokens = (side / patch) * (side / patch) + 1;
    for (const Tensor& h : hs.layers) CHECK(h.shape() == Shape{want_tokens, cfg.embed_dim});
  }
}

TEST_CASE("param_count closed form equals the instantiated parameter total") {
  for (VimConfig cfg : {toy_cfg(), [] {
         VimConfig c;
         c.embed_dim = 64;
         c.layers = 4;
         c.patch = 8;
         c.input_side = 64;
         c.num_classes = 4;
         return c;
       }()}) {
    VimNet net(cfg);
    net.init(1);
    int64_t total = 0;
    for (auto& p : net.named_params()) total += p.tensor->size();
    CHECK(total == param_count(cfg));
  }
}

TEST_CASE("head contribution to the count is exactly D*C + C") {
  VimConfig a = toy_cfg();
  VimConfig b = toy_cfg();
  b.num_classes = a.num_classes + 37;
  CHECK(param_count(b) - param_count(a) == 37 * (a.embed_dim + 1));
}

TEST_CASE("full-size profile hits the published parameter budget") {
  VimConfig cfg;  // D=192, N=24, J=16, S=16, expand=2, 1000 classes
  int64_t n = param_count(cfg);
  CHECK(n > int64_t(6.99e6 * 0.95));
  CHECK(n < int64_t(6.99e6 * 1.05));
}

TEST_CASE("flops estimate scales with depth and resolution") {
  VimConfig cfg;
  double base = flops_estimate(cfg);
  CHECK(base > 0);

  VimConfig deeper = cfg;
  deeper.layers = 48;
  CHECK(flops_estimate(deeper) > 1.9 * base);

  VimConfig smaller = cfg;
  smaller.input_side = 64;  // 4x4 grid
  CHECK(flops_estimate(smaller) < 0.2 * base);
}
