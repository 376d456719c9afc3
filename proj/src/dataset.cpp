#include "vimd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "vimd/common.hpp"
#include "vimd/image_io.hpp"
#include "vimd/sr.hpp"

namespace fs = std::filesystem;

namespace vimd {

DatasetIndex DatasetIndex::scan(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root not found: " + root);
  DatasetIndex idx;
  idx.root = root;

  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) idx.class_names.push_back(e.path().filename().string());
  std::sort(idx.class_names.begin(), idx.class_names.end());
  if (idx.class_names.empty()) throw ContractError("dataset has no class directories: " + root);

  for (size_t c = 0; c < idx.class_names.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / idx.class_names[c]))
      if (e.is_regular_file() && e.path().extension() == ".png")
        files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      idx.entries.push_back({idx.class_names[c] + "/" + f, int(c)});
  }
  if (idx.entries.empty()) throw ContractError("dataset has no png images: " + root);
  return idx;
}

LoadedDataset LoadedDataset::load(const DatasetIndex& index) {
  LoadedDataset ds;
  ds.class_names = index.class_names;
  ds.images.resize(index.size());
  ds.labels.resize(index.size());
  ds.rel_paths.resize(index.size());
  parallel_for(int(index.size()), [&](int i) {
    const auto& e = index.entries[size_t(i)];
    ds.images[size_t(i)] = load_image(index.root + "/" + e.rel_path);
    ds.labels[size_t(i)] = e.label;
    ds.rel_paths[size_t(i)] = e.rel_path;
  });
  return ds;
}

LoadedDataset LoadedDataset::load_dir(const std::string& root) {
  return load(DatasetIndex::scan(root));
}

std::string lr_root_for(const std::string& hr_root, int size) {
  std::string trimmed = hr_root;
  while (trimmed.size() > 1 && trimmed.back() == '/') trimmed.pop_back();
  return trimmed + "_lr" + std::to_string(size);
}

namespace {

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= (unsigned char)buf[i];
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace

int synth_lr(const std::string& hr_root, int size) {
  if (size < 1) throw DomainError("synth_lr: size must be >= 1");
  DatasetIndex idx = DatasetIndex::scan(hr_root);
  const std::string out_root = lr_root_for(hr_root, size);
  fs::create_directories(out_root);
  const std::string manifest_path = out_root + "/.synth_manifest.json";

  nlohmann::json manifest;
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    try {
      in >> manifest;
    } catch (...) {
      manifest = nlohmann::json::object();
    }
  }
  if (!manifest.is_object() || !manifest.contains("entries") ||
      manifest.value("size", -1) != size) {
    manifest = nlohmann::json{{"size", size}, {"entries", nlohmann::json::object()}};
  }

  int written = 0;
  for (const auto& e : idx.entries) {
    const std::string src = hr_root + "/" + e.rel_path;
    const std::string dst = out_root + "/" + e.rel_path;
    const std::string key = e.rel_path;
    const std::string digest = std::to_string(hash_file(src));
    if (fs::exists(dst) && manifest["entries"].value(key, "") == digest) continue;
    fs::create_directories(fs::path(dst).parent_path());
    save_image(bicubic_resize_image(load_image(src), size, size), dst);
    manifest["entries"][key] = digest;
    ++written;
  }

  std::ofstream out(manifest_path);
  out << manifest.dump();
  return written;
}

// ---------------------------------------------------------------------------
// toy data

namespace {

enum class Texture { coarse_stripes, fine_stripes, fine_checks, fine_rings };

Tensor render_texture(Texture kind, int side, Rng& rng) {
  const float two_pi = 6.28318530717958647692f;
  const float theta = rng.uniform(0.0f, two_pi);
  const float phase = rng.uniform(0.0f, two_pi);
  const float phase2 = rng.uniform(0.0f, two_pi);
  const float amp = rng.uniform(0.22f, 0.38f);
  const float freq = kind == Texture::coarse_stripes ? rng.uniform(3.5f, 5.0f)
                                                     : rng.uniform(9.0f, 12.0f);
  const float base = rng.uniform(0.38f, 0.62f);
  float tint[3];
  for (float& t : tint) t = rng.uniform(-0.08f, 0.08f);
  const float grad_amp = rng.uniform(0.0f, 0.08f);
  const float grad_dir = rng.uniform(0.0f, two_pi);
  const float cx = rng.uniform(0.25f, 0.75f) * float(side);
  const float cy = rng.uniform(0.25f, 0.75f) * float(side);
  const float ct = std::cos(theta), st = std::sin(theta);

  Tensor img({3, side, side});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      float u = (x * ct + y * st) / float(side);
      float v = (-x * st + y * ct) / float(side);
      float pat = 0.0f;
      switch (kind) {
        case Texture::coarse_stripes:
        case Texture::fine_stripes:
          pat = std::sin(two_pi * freq * u + phase);
          break;
        case Texture::fine_checks:
          pat = std::sin(two_pi * freq * u + phase) * std::sin(two_pi * freq * v + phase2);
          break;
        case Texture::fine_rings: {
          float r = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)) / float(side);
          pat = std::sin(two_pi * freq * r + phase);
          break;
        }
      }
      float illum = grad_amp * ((x * std::cos(grad_dir) + y * std::sin(grad_dir)) / float(side));
      float noise = rng.normal(0.0f, 0.02f);
      for (int c = 0; c < 3; ++c) {
        float val = base + tint[c] + illum + amp * pat + noise;
        img.at({c, y, x}) = std::min(0.98f, std::max(0.02f, val));
      }
    }
  return img;
}

const char* texture_name(Texture t) {
  switch (t) {
    case Texture::coarse_stripes: return "coarse_stripes";
    case Texture::fine_stripes: return "fine_stripes";
    case Texture::fine_checks: return "fine_checks";
    case Texture::fine_rings: return "fine_rings";
  }
  return "unknown";
}

}  // namespace

void make_toy_data(const std::string& root, const ToyDataParams& p) {
  if (p.classes < 2 || p.classes > 4) throw DomainError("make_toy_data: 2..4 classes supported");
  if (p.train_per_class < 1 || p.test_per_class < 1 || p.side < 16)
    throw DomainError("make_toy_data: degenerate size parameters");

  const Texture kinds[4] = {Texture::coarse_stripes, Texture::fine_stripes, Texture::fine_checks,
                            Texture::fine_rings};
  for (const char* split : {"train", "test"}) {
    const bool is_train = std::string(split) == "train";
    const int n = is_train ? p.train_per_class : p.test_per_class;
    for (int c = 0; c < p.classes; ++c) {
      const std::string dir = root + "/" + split + "/" + texture_name(kinds[c]);
      fs::create_directories(dir);
      Rng rng(mix_seed(p.seed, hash_str(std::string(split) + "/" + texture_name(kinds[c]))));
      for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", i);
        save_image(render_texture(kinds[c], p.side, rng), dir + "/" + name);
      }
    }
  }
}

}  // namespace vimd
