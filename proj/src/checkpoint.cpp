#include "vimd/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace vimd {

namespace {

constexpr char kMagic[4] = {'V', 'I', 'M', 'D'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 24)};
  std::fwrite(b, 1, 4, f);
}

void put_u64(std::FILE* f, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
  std::fwrite(b, 1, 8, f);
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw IoError("truncated checkpoint: " + path);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint64_t get_u64(std::FILE* f, const std::string& path) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8) throw IoError("truncated checkpoint: " + path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

void write_payload(std::FILE* f, const float* data, int64_t n) {
  static_assert(sizeof(float) == 4);
  // Raw IEEE-754 little-endian; this build targets little-endian hosts.
  std::fwrite(data, 4, size_t(n), f);
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedParam>& tensors) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write checkpoint: " + path);

  std::fwrite(kMagic, 1, 4, f.get());
  put_u32(f.get(), kCheckpointVersion);
  const std::string meta_str = meta.dump();
  put_u64(f.get(), meta_str.size());
  std::fwrite(meta_str.data(), 1, meta_str.size(), f.get());

  for (const auto& np : tensors) {
    put_u32(f.get(), uint32_t(np.name.size()));
    std::fwrite(np.name.data(), 1, np.name.size(), f.get());
    put_u32(f.get(), uint32_t(np.tensor->rank()));
    for (int d : np.tensor->shape()) put_u64(f.get(), uint64_t(d));
    write_payload(f.get(), np.tensor->data(), np.tensor->size());
  }
  if (std::ferror(f.get())) throw IoError("write failed: " + path);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<NamedParam> named;
  named.reserve(ckpt.tensors.size());
  for (auto& [n, t] : const_cast<Checkpoint&>(ckpt).tensors) named.push_back({n, &t});
  save_checkpoint(path, ckpt.meta, named);
}

Checkpoint load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  uint32_t version = get_u32(f.get(), path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                  std::to_string(kCheckpointVersion) + "): " + path);

  uint64_t meta_len = get_u64(f.get(), path);
  std::string meta_str(meta_len, '\0');
  if (std::fread(meta_str.data(), 1, meta_len, f.get()) != meta_len)
    throw IoError("truncated checkpoint: " + path);

  Checkpoint out;
  try {
    out.meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint metadata in " + path + ": " + e.what());
  }

  for (;;) {
    unsigned char probe[4];
    size_t got = std::fread(probe, 1, 4, f.get());
    if (got == 0) break;  // clean end of file
    if (got != 4) throw IoError("truncated checkpoint: " + path);
    uint32_t name_len =
        uint32_t(probe[0]) | uint32_t(probe[1]) << 8 | uint32_t(probe[2]) << 16 |
        uint32_t(probe[3]) << 24;
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw IoError("truncated checkpoint: " + path);
    uint32_t rank = get_u32(f.get(), path);
    Shape dims(rank);
    for (uint32_t i = 0; i < rank; ++i) dims[i] = int(get_u64(f.get(), path));
    Tensor t(dims);
    if (std::fread(t.data(), 4, size_t(t.size()), f.get()) != size_t(t.size()))
      throw IoError("truncated checkpoint tensor '" + name + "': " + path);
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void load_into(const Checkpoint& ckpt, const std::vector<NamedParam>& dst,
               const std::vector<std::string>& skip_prefixes) {
  std::vector<bool> used(ckpt.tensors.size(), false);

  for (const auto& np : dst) {
    const Tensor* src = nullptr;
    for (size_t i = 0; i < ckpt.tensors.size(); ++i)
      if (ckpt.tensors[i].first == np.name) {
        src = &ckpt.tensors[i].second;
        used[i] = true;
        break;
      }
    if (!src) throw IoError("checkpoint is missing tensor '" + np.name + "'");
    if (src->shape() != np.tensor->shape()) {
      const Shape &a = src->shape(), &b = np.tensor->shape();
      std::string why;
      if (a.size() != b.size()) {
        why = "rank " + std::to_string(a.size()) + " vs " + std::to_string(b.size());
      } else {
        for (size_t d = 0; d < a.size(); ++d)
          if (a[d] != b[d]) {
            why = "dim " + std::to_string(d) + ": checkpoint " + std::to_string(a[d]) +
                  " vs model " + std::to_string(b[d]);
            break;
          }
      }
      throw ContractError("tensor '" + np.name + "' shape mismatch (" + why + ")");
    }
    std::copy_n(src->data(), src->size(), np.tensor->data());
  }

  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    if (used[i]) continue;
    const std::string& name = ckpt.tensors[i].first;
    bool skippable = false;
    for (const auto& p : skip_prefixes)
      if (name.rfind(p, 0) == 0) skippable = true;
    if (!skippable) throw IoError("checkpoint has unknown tensor '" + name + "'");
  }
}

nlohmann::json vim_config_to_json(const VimConfig& cfg) {
  return nlohmann::json{{"embed_dim", cfg.embed_dim},
                        {"layers", cfg.layers},
                        {"patch", cfg.patch},
                        {"in_channels", cfg.in_channels},
                        {"num_classes", cfg.num_classes},
                        {"state_dim", cfg.state_dim},
                        {"expand", cfg.expand},
                        {"conv_width", cfg.conv_width},
                        {"input_side", cfg.input_side},
                        {"final_norm", cfg.final_norm},
                        {"literal_gate", cfg.literal_gate}};
}

VimConfig vim_config_from_json(const nlohmann::json& j) {
  VimConfig cfg;
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.patch = j.at("patch").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.state_dim = j.at("state_dim").get<int>();
  cfg.expand = j.at("expand").get<int>();
  cfg.conv_width = j.at("conv_width").get<int>();
  cfg.input_side = j.at("input_side").get<int>();
  cfg.final_norm = j.at("final_norm").get<bool>();
  cfg.literal_gate = j.at("literal_gate").get<bool>();
  cfg.validate();
  return cfg;
}

}  // namespace vimd
