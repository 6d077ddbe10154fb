#pragma once

// HTA1 tensor archive: magic "HTA1", u32 entry count, then per entry a u32
// name length, the name bytes, a u8 rank, u32 dims and the f32 payload. All
// integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "h4d/tensor.hpp"

namespace h4d {

class TensorArchive {
 public:
  using Entry = std::pair<std::string, Tensor>;

  // Throws ConfigError on a duplicate name.
  void add(const std::string& name, Tensor value);
  // Adds or replaces.
  void put(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const Tensor* find(const std::string& name) const;
  // Throws ConfigError naming the missing entry.
  const Tensor& get(const std::string& name) const;
  float scalar(const std::string& name) const;

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  std::vector<Entry> entries_;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
// Throws ParseError with the byte offset of the first malformed field.
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace h4d
