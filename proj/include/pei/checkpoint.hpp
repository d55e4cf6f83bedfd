// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "pei/params.hpp"

namespace pei {

/// Flat archive: a string header (config fields, role tags, digests) plus
/// named tensors stored as 64-bit little-endian values.
///
/// Layout: "PEIARCH\0", u32 version, u32 header count, (u32 len, key,
/// u32 len, value)*, u32 tensor count, (u32 len, name, u32 rank, u64 dim*,
/// f64 value*)*. All integers little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::map<std::string, std::string> header;
  std::map<std::string, Tensor> tensors;

  void put(const std::string& prefix, const ParameterStore& store);
  /// Copies archived values into store entries named prefix + name; every
  /// store entry must be present with a matching shape.
  void restore(const std::string& prefix, ParameterStore& store) const;
  bool has_prefix(const std::string& prefix) const;
  const std::string& require(const std::string& key) const;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pei
