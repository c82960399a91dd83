#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dcnas/tensor.hpp"

namespace dcnas {

/// Named tensors, scalars and strings written to a little-endian binary file.
/// Doubles are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.
///
/// Layout: magic "DCNASCKP", u32 version, then three sections (tensors,
/// scalars, strings), each a u64 count followed by length-prefixed entries.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, Tensor> tensors;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> strings;

  void save(const std::filesystem::path& path) const;
  /// Throws Error on a missing file, bad magic, unsupported version or truncation.
  static Checkpoint load(const std::filesystem::path& path);

  const Tensor& tensor(const std::string& name) const;
  double scalar(const std::string& name) const;
  const std::string& string(const std::string& name) const;
};

/// Copies a stored tensor into `dst`, checking the shape.
void restore_into(const Checkpoint& ck, const std::string& name, Tensor& dst);

}  // namespace dcnas
