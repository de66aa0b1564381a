#pragma once

// CKP1: "CKP1", u32 entry count, then per entry a u32 name length, UTF-8
// name, u32 rank, u32 extents[rank], and a little-endian float32 payload.
// Entries keep insertion order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace regrowth {

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};

class Checkpoint {
 public:
  template <typename T>
  void put(std::string name, std::span<const std::size_t> shape, std::span<const T> values) {
    CheckpointEntry entry{std::move(name), {}, {}};
    entry.shape.assign(shape.begin(), shape.end());
    entry.values.assign(values.begin(), values.end());
    insert(std::move(entry));
  }
  void put_scalar(std::string name, double value);

  bool has(std::string_view name) const;
  // Throws FormatError when absent.
  const CheckpointEntry& get(std::string_view name) const;
  double get_scalar(std::string_view name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  // Copies `name` into `out`, checking the element count.
  template <typename T>
  void read_into(std::string_view name, std::span<T> out) const {
    const auto& e = get(name);
    check_size(e, out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(e.values[i]);
  }

 private:
  void insert(CheckpointEntry entry);
  static void check_size(const CheckpointEntry& entry, std::size_t expected);
  std::vector<CheckpointEntry> entries_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckp);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const Checkpoint& ckp, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace regrowth
