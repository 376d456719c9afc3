#pragma once

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "vimd/network.hpp"

namespace vimd {

// Checkpoint container file:
//   magic "VIMD" | version u32 LE | meta length u64 LE | UTF-8 JSON meta |
//   repeated tensor records: name_len u32 LE, name, rank u32 LE,
//   dims u64 LE each, raw little-endian f32 payload.
// Loading and re-saving is byte-identical: JSON is dumped canonically and
// record order is preserved.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<NamedParam>& tensors);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Throws IoError for bad magic/version/truncation.
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into `dst` by name. Every dst name must be
// present with the exact shape (errors name the offending dimension), and
// every checkpoint tensor must be consumed unless its name starts with one
// of `skip_prefixes`.
void load_into(const Checkpoint& ckpt, const std::vector<NamedParam>& dst,
               const std::vector<std::string>& skip_prefixes = {});

nlohmann::json vim_config_to_json(const VimConfig& cfg);
VimConfig vim_config_from_json(const nlohmann::json& j);

}  // namespace vimd
