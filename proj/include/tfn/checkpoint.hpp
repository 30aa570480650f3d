#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfn/nn.hpp"

namespace tfn {

// Checkpoint container layout (all integers little-endian):
//   8 bytes  magic "TFNCKPT1"
//   8 bytes  u64 manifest length L
//   L bytes  UTF-8 JSON manifest {"tensors":[{"name","shape","offset","count"}], "meta":{...}}
//   rest     tensor payload, 32-bit IEEE floats; `offset` is in bytes from the payload start.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

/// Copies every parameter and buffer of `m` (named with `prefix`) from `ckpt`.
/// Throws naming the first missing tensor or shape mismatch.
void load_module(Module& m, const Checkpoint& ckpt, const std::string& prefix);
std::vector<NamedTensor> module_state(const Module& m, const std::string& prefix);

/// FNV-1a 64-bit digest of a byte range, hex encoded.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string file_digest(const std::string& path);
/// Digest over names, shapes and values; stable across dtype (values taken as f32).
std::string state_digest(const std::vector<NamedTensor>& tensors);

}  // namespace tfn
