#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vimd/dataset.hpp"
#include "vimd/image_io.hpp"

using namespace vimd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vimd_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("toy data layout, determinism, and loading") {
  fs::path dir = fresh_dir("toy");
  ToyDataParams p;
  p.classes = 4;
  p.train_per_class = 3;
  p.test_per_class = 2;
  p.side = 32;
  p.seed = 11;
  make_toy_data((dir / "a").string(), p);
  make_toy_data((dir / "b").string(), p);

  DatasetIndex idx = DatasetIndex::scan((dir / "a" / "train").string());
  CHECK(idx.class_names.size() == 4);
  CHECK(idx.size() == 12);
  // sorted class order fixes the labels
  CHECK(std::is_sorted(idx.class_names.begin(), idx.class_names.end()));

  LoadedDataset ds = LoadedDataset::load(idx);
  CHECK(ds.size() == 12);
  CHECK(ds.num_classes() == 4);
  for (const Tensor& img : ds.images) CHECK(img.shape() == Shape{3, 32, 32});

  // generation is deterministic: same seed, same bytes
  for (const auto& e : idx.entries) {
    std::ifstream fa((dir / "a" / "train" / e.rel_path), std::ios::binary);
    std::ifstream fb((dir / "b" / "train" / e.rel_path), std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), {});
    std::string bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba == bb);
  }

  CHECK_THROWS_AS(DatasetIndex::scan((dir / "nope").string()), IoError);
}

TEST_CASE("lr synthesis mirrors the tree, is idempotent, and handles any size") {
  fs::path dir = fresh_dir("synth");
  ToyDataParams p;
  p.classes = 2;
  p.train_per_class = 3;
  p.test_per_class = 1;
  p.side = 32;
  make_toy_data((dir / "d").string(), p);

  const std::string hr_root = (dir / "d" / "train").string();
  CHECK(lr_root_for(hr_root, 8) == hr_root + "_lr8");

  int written = synth_lr(hr_root, 8);
  CHECK(written == 6);
  DatasetIndex lr_idx = DatasetIndex::scan(lr_root_for(hr_root, 8));
  CHECK(lr_idx.size() == 6);
  LoadedDataset lr = LoadedDataset::load(lr_idx);
  for (const Tensor& img : lr.images) CHECK(img.shape() == Shape{3, 8, 8});

  // rerun: nothing rewritten
  CHECK(synth_lr(hr_root, 8) == 0);

  // touch one source image; only that file is refreshed
  {
    DatasetIndex hr_idx = DatasetIndex::scan(hr_root);
    Tensor img = load_image(hr_root + "/" + hr_idx.entries[0].rel_path);
    img.arr() = (img.arr() * 0.9f).min(1.0f);
    save_image(img, hr_root + "/" + hr_idx.entries[0].rel_path);
  }
  CHECK(synth_lr(hr_root, 8) == 1);

  // non-divisible target size still works (fresh cache root => all written)
  CHECK(synth_lr(hr_root, 13) == 6);
  LoadedDataset odd = LoadedDataset::load_dir(lr_root_for(hr_root, 13));
  for (const Tensor& img : odd.images) CHECK(img.shape() == Shape{3, 13, 13});
}

TEST_CASE("hr and lr trees stay aligned for pairing") {
  fs::path dir = fresh_dir("pair");
  ToyDataParams p;
  p.classes = 3;
  p.train_per_class = 2;
  p.test_per_class = 1;
  p.side = 32;
  make_toy_data((dir / "d").string(), p);
  const std::string hr_root = (dir / "d" / "train").string();
  synth_lr(hr_root, 8);

  LoadedDataset hr = LoadedDataset::load_dir(hr_root);
  LoadedDataset lr = LoadedDataset::load_dir(lr_root_for(hr_root, 8));
  REQUIRE(hr.size() == lr.size());
  for (size_t i = 0; i < hr.size(); ++i) {
    CHECK(hr.rel_paths[i] == lr.rel_paths[i]);
    CHECK(hr.labels[i] == lr.labels[i]);
  }
}

TEST_CASE("toy classes are visually distinct at full resolution") {
  // texture energy differs by construction; just sanity-check pixel stats
  fs::path dir = fresh_dir("stats");
  ToyDataParams p;
  p.classes = 4;
  p.train_per_class = 2;
  p.test_per_class = 1;
  p.side = 64;
  make_toy_data((dir / "d").string(), p);
  LoadedDataset ds = LoadedDataset::load_dir((dir / "d" / "train").string());
  for (const Tensor& img : ds.images) {
    float mn = img.arr().minCoeff(), mx = img.arr().maxCoeff();
    CHECK(mn >= 0.0f);
    CHECK(mx <= 1.0f);
    CHECK(mx - mn > 0.1f);  // textured, not flat
  }
}
