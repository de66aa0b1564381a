#include "regrowth/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <iterator>

#include "regrowth/error.hpp"
#include "regrowth/raster_io.hpp"

namespace regrowth {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated CKP1 checkpoint");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::insert(CheckpointEntry entry) {
  std::size_t expected = 1;
  for (auto e : entry.shape) expected *= e;
  if (expected != entry.values.size()) {
    throw ValidationError("checkpoint entry '" + entry.name + "': shape does not match payload");
  }
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const CheckpointEntry& e) { return e.name == entry.name; });
  if (it != entries_.end()) {
    *it = std::move(entry);
  } else {
    entries_.push_back(std::move(entry));
  }
}

void Checkpoint::put_scalar(std::string name, double value) {
  insert({std::move(name), {}, {static_cast<float>(value)}});
}

bool Checkpoint::has(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

const CheckpointEntry& Checkpoint::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw FormatError("checkpoint has no entry '" + std::string(name) + "'");
}

double Checkpoint::get_scalar(std::string_view name) const {
  const auto& e = get(name);
  check_size(e, 1);
  return e.values[0];
}

void Checkpoint::check_size(const CheckpointEntry& entry, std::size_t expected) {
  if (entry.values.size() != expected) {
    throw FormatError("checkpoint entry '" + entry.name + "' has " + std::to_string(entry.values.size()) +
                      " values, expected " + std::to_string(expected));
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckp) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(ckp.entries().size()));
  for (const auto& e : ckp.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) put_u32(out, extent);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("bad magic: not a CKP1 checkpoint");
  }
  Checkpoint ckp;
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32();
    const auto name_bytes = in.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw FormatError("checkpoint entry '" + name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = in.u32();
      n *= e;
    }
    if (n > in.remaining() / 4) throw FormatError("truncated CKP1 checkpoint");
    const auto payload = in.take(n * 4);
    std::vector<float> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[j * 4 + b]) << (8 * b);
      values[j] = std::bit_cast<float>(bits);
    }
    ckp.put<float>(std::move(name), shape, values);
  }
  if (in.remaining() != 0) throw FormatError("CKP1 checkpoint has trailing bytes");
  return ckp;
}

void write_checkpoint(const Checkpoint& ckp, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckp));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace regrowth
