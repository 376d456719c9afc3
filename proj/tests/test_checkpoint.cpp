#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vimd/checkpoint.hpp"

using namespace vimd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vimd_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

VimConfig small_cfg() {
  VimConfig cfg;
  cfg.embed_dim = 8;
  cfg.layers = 2;
  cfg.patch = 16;
  cfg.input_side = 32;
  cfg.num_classes = 3;
  cfg.state_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("save -> load -> save is byte-identical") {
  fs::path dir = fresh_dir("ckpt1");
  VimNet net(small_cfg());
  net.init(42);
  nlohmann::json meta = {{"kind", "teacher"},
                        {"vim", vim_config_to_json(small_cfg())},
                        {"train", {{"epoch", 3}, {"step", 91}, {"best_val_acc", 0.75}}}};
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, meta, net.named_params());
  Checkpoint ck = load_checkpoint(p1);
  save_checkpoint(p2, ck);
  CHECK(file_bytes(p1) == file_bytes(p2));
  CHECK(ck.meta.at("train").at("step").get<int>() == 91);
}

TEST_CASE("forward pass is bit-identical across a save/load round trip") {
  fs::path dir = fresh_dir("ckpt2");
  VimConfig cfg = small_cfg();
  VimNet net(cfg);
  net.init(7);
  Rng rng(1);
  Tensor img = oracle::rand_tensor({3, 32, 32}, rng, 0.0f, 1.0f);
  Tensor logits_before = net.forward(img).logits;

  const std::string p = (dir / "m.ckpt").string();
  save_checkpoint(p, {{"kind", "teacher"}, {"vim", vim_config_to_json(cfg)}},
                  net.named_params());

  VimNet other(cfg);
  other.init(999);  // different weights first
  load_into(load_checkpoint(p), other.named_params());
  CHECK(oracle::bytes_equal(other.forward(img).logits, logits_before));
}

TEST_CASE("mismatched configuration is rejected naming the offending dimension") {
  fs::path dir = fresh_dir("ckpt3");
  VimNet net(small_cfg());
  net.init(5);
  const std::string p = (dir / "m.ckpt").string();
  save_checkpoint(p, {{"kind", "teacher"}}, net.named_params());

  VimConfig wide = small_cfg();
  wide.embed_dim = 16;
  VimNet other(wide);
  other.init(5);
  try {
    load_into(load_checkpoint(p), other.named_params());
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    std::string msg = e.what();
    CHECK(msg.find("dim") != std::string::npos);
    CHECK(msg.find("8") != std::string::npos);
    CHECK(msg.find("16") != std::string::npos);
  }
}

TEST_CASE("unknown and missing tensors are load errors") {
  fs::path dir = fresh_dir("ckpt4");
  Tensor a = Tensor::param({3}, 1.0f);
  Tensor b = Tensor::param({3}, 2.0f);
  const std::string p = (dir / "t.ckpt").string();
  save_checkpoint(p, {{"kind", "test"}}, {{"alpha", &a}, {"beta", &b}});

  Tensor a2({3});
  // checkpoint contains 'beta' the destination does not know
  CHECK_THROWS_AS(load_into(load_checkpoint(p), {{"alpha", &a2}}), IoError);
  // skip list makes it legal
  CHECK_NOTHROW(load_into(load_checkpoint(p), {{"alpha", &a2}}, {"beta"}));
  // destination wants a tensor the file does not have
  Tensor c({3});
  CHECK_THROWS_AS(load_into(load_checkpoint(p), {{"alpha", &a2}, {"gamma", &c}}), IoError);
}

TEST_CASE("corrupt files produce explicit errors") {
  fs::path dir = fresh_dir("ckpt5");
  const std::string good = (dir / "good.ckpt").string();
  Tensor a = Tensor::param({4}, 0.5f);
  save_checkpoint(good, {{"kind", "test"}}, {{"w", &a}});

  // bad magic
  const std::string badmagic = (dir / "bad1.ckpt").string();
  {
    std::string bytes = file_bytes(good);
    bytes[0] = 'X';
    std::ofstream(badmagic, std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(load_checkpoint(badmagic), IoError);

  // version bump
  const std::string badver = (dir / "bad2.ckpt").string();
  {
    std::string bytes = file_bytes(good);
    bytes[4] = 9;
    std::ofstream(badver, std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(load_checkpoint(badver), IoError);

  // truncation mid-tensor
  const std::string trunc = (dir / "bad3.ckpt").string();
  {
    std::string bytes = file_bytes(good);
    bytes.resize(bytes.size() - 7);
    std::ofstream(trunc, std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(load_checkpoint(trunc), IoError);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}

TEST_CASE("vim config json round trip") {
  VimConfig cfg = small_cfg();
  cfg.final_norm = false;
  VimConfig back = vim_config_from_json(vim_config_to_json(cfg));
  CHECK(back == cfg);
}
