#pragma once

#include <string>
#include <vector>

#include "vimd/tensor.hpp"

namespace vimd {

// Directory layout: <root>/<class_name>/<image>.png. Classes and files are
// enumerated in sorted order so every run sees the same indexing.
struct DatasetIndex {
  std::string root;
  std::vector<std::string> class_names;
  struct Entry {
    std::string rel_path;  // "<class>/<file>.png"
    int label;
  };
  std::vector<Entry> entries;

  static DatasetIndex scan(const std::string& root);
  size_t size() const { return entries.size(); }
};

// All images decoded into memory (desk-scale datasets).
struct LoadedDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::string> rel_paths;
  std::vector<std::string> class_names;

  static LoadedDataset load(const DatasetIndex& index);
  static LoadedDataset load_dir(const std::string& root);
  size_t size() const { return images.size(); }
  int num_classes() const { return int(class_names.size()); }
};

std::string lr_root_for(const std::string& hr_root, int size);

// Bicubically downsamples every image of <hr_root> into the mirrored
// <hr_root>_lr<size> tree. Idempotent: a manifest of source-content hashes
// lets reruns skip files already synthesized from identical sources.
// Returns the number of files (re)written.
int synth_lr(const std::string& hr_root, int size);

// Deterministic 4-class procedural-texture dataset for desk-scale runs.
// Writes <root>/train and <root>/test, each in canonical layout. Classes
// differ in fine-grained texture (coarse stripes / fine stripes / fine
// checks / fine rings) under heavy orientation, phase, tint, and noise
// nuisance, so they separate cleanly at full resolution and degrade hard
// under 4x downsampling.
struct ToyDataParams {
  int classes = 4;
  int train_per_class = 200;
  int test_per_class = 50;
  int side = 64;
  uint64_t seed = 0;
};
void make_toy_data(const std::string& root, const ToyDataParams& p);

}  // namespace vimd
