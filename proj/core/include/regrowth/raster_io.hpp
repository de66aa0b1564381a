#pragma once

// Raster stacks, the RST1 container, and the fire catalog.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace regrowth {

namespace channel {
inline constexpr std::string_view kNdvi = "NDVI";
inline constexpr std::string_view kEvi = "EVI";
inline constexpr std::string_view kLst = "LST";
inline constexpr std::string_view kFireMask = "FIREMASK";
inline constexpr std::string_view kPrecip = "PRECIP";
inline constexpr std::string_view kQa = "QA";
}  // namespace channel

std::vector<std::string> default_channels();

// Dense (t, row, col, channel) float grid with a parallel missing-value mask.
class RasterStack {
 public:
  RasterStack() = default;
  RasterStack(std::size_t t_len, std::size_t height, std::size_t width,
              std::vector<std::string> channels);

  std::size_t t_len() const { return t_len_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channel_count() const { return channels_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t frame_pixels() const { return height_ * width_; }
  const std::vector<std::string>& channels() const { return channels_; }

  std::optional<std::size_t> find_channel(std::string_view name) const;
  // Throws ValidationError when the channel is absent.
  std::size_t channel(std::string_view name) const;

  std::size_t offset(std::size_t t, std::size_t r, std::size_t c, std::size_t ch) const {
    return ((t * height_ + r) * width_ + c) * channels_.size() + ch;
  }

  float& at(std::size_t t, std::size_t r, std::size_t c, std::size_t ch) {
    return data_[offset(t, r, c, ch)];
  }
  float at(std::size_t t, std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[offset(t, r, c, ch)];
  }
  bool missing(std::size_t t, std::size_t r, std::size_t c, std::size_t ch) const {
    return missing_[offset(t, r, c, ch)] != 0;
  }
  void set_missing(std::size_t t, std::size_t r, std::size_t c, std::size_t ch, bool value) {
    missing_[offset(t, r, c, ch)] = value ? 1 : 0;
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<std::uint8_t> missing_mask() { return missing_; }
  std::span<const std::uint8_t> missing_mask() const { return missing_; }

  bool any_missing() const;
  std::size_t missing_count() const;

  // Copy with a subset of channels, in the order given.
  RasterStack select_channels(std::span<const std::string> names) const;
  RasterStack without_channel(std::string_view name) const;
  // Copy of frames [first, first + count).
  RasterStack frames(std::size_t first, std::size_t count) const;
  // Copy of the spatial window [row0, row0 + rows) x [col0, col0 + cols).
  RasterStack window(std::size_t row0, std::size_t col0, std::size_t rows,
                     std::size_t cols) const;

  // Bitwise equality of shape, names, payload, and mask.
  bool identical(const RasterStack& other) const;

 private:
  std::size_t t_len_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::string> channels_;
  std::vector<float> data_;
  std::vector<std::uint8_t> missing_;
};

// RST1 layout: "RST1", u32 version, t_len, height, width, n_channels, then
// per channel a u16 byte length and UTF-8 name, then little-endian float32
// payload in [t][row][col][channel] order, then the missing mask packed
// LSB-first in the same order.
inline constexpr std::uint32_t kRasterFormatVersion = 1;

std::vector<std::uint8_t> encode_stack(const RasterStack& stack);
RasterStack decode_stack(std::span<const std::uint8_t> bytes);

void write_stack(const RasterStack& stack, const std::filesystem::path& path);
RasterStack read_stack(const std::filesystem::path& path);

struct FireRecord {
  std::string id;
  std::string name;
  double lon = 0.0;
  double lat = 0.0;
  std::string containment_month;  // YYYY-MM
  double acres = 0.0;

  // Zero-based calendar month of containment.
  int month_index() const;
};

inline constexpr double kMinFireAcres = 3000.0;

bool meets_size_threshold(const FireRecord& fire);

// CSV with header id,name,lon,lat,containment_month,acres. Errors carry the
// one-based line number of the offending row.
std::vector<FireRecord> parse_catalog(std::string_view text);
std::vector<FireRecord> read_catalog(const std::filesystem::path& path);
void write_catalog(std::span<const FireRecord> fires, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace regrowth
