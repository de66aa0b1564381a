#include "regrowth/raster_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "regrowth/error.hpp"

namespace regrowth {

std::vector<std::string> default_channels() {
  return {std::string(channel::kNdvi),     std::string(channel::kEvi),
          std::string(channel::kLst),      std::string(channel::kFireMask),
          std::string(channel::kPrecip),   std::string(channel::kQa)};
}

RasterStack::RasterStack(std::size_t t_len, std::size_t height, std::size_t width,
                         std::vector<std::string> channels)
    : t_len_(t_len), height_(height), width_(width), channels_(std::move(channels)) {
  const std::size_t n = t_len_ * height_ * width_ * channels_.size();
  data_.assign(n, 0.0f);
  missing_.assign(n, 0);
}

std::optional<std::size_t> RasterStack::find_channel(std::string_view name) const {
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t RasterStack::channel(std::string_view name) const {
  if (auto idx = find_channel(name)) return *idx;
  throw ValidationError("raster stack has no channel '" + std::string(name) + "'");
}

bool RasterStack::any_missing() const {
  return std::any_of(missing_.begin(), missing_.end(), [](std::uint8_t m) { return m != 0; });
}

std::size_t RasterStack::missing_count() const {
  return static_cast<std::size_t>(
      std::count_if(missing_.begin(), missing_.end(), [](std::uint8_t m) { return m != 0; }));
}

RasterStack RasterStack::select_channels(std::span<const std::string> names) const {
  std::vector<std::size_t> source;
  source.reserve(names.size());
  for (const auto& name : names) source.push_back(channel(name));
  RasterStack out(t_len_, height_, width_, std::vector<std::string>(names.begin(), names.end()));
  const std::size_t pixels = t_len_ * height_ * width_;
  const std::size_t cin = channels_.size();
  const std::size_t cout = names.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < cout; ++k) {
      out.data_[p * cout + k] = data_[p * cin + source[k]];
      out.missing_[p * cout + k] = missing_[p * cin + source[k]];
    }
  }
  return out;
}

RasterStack RasterStack::without_channel(std::string_view name) const {
  channel(name);
  std::vector<std::string> keep;
  for (const auto& c : channels_) {
    if (c != name) keep.push_back(c);
  }
  return select_channels(keep);
}

RasterStack RasterStack::frames(std::size_t first, std::size_t count) const {
  if (first + count > t_len_) {
    throw ValidationError("frame range exceeds stack length");
  }
  RasterStack out(count, height_, width_, channels_);
  const std::size_t frame = height_ * width_ * channels_.size();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * frame), count * frame,
              out.data_.begin());
  std::copy_n(missing_.begin() + static_cast<std::ptrdiff_t>(first * frame), count * frame,
              out.missing_.begin());
  return out;
}

RasterStack RasterStack::window(std::size_t row0, std::size_t col0, std::size_t rows,
                                std::size_t cols) const {
  if (row0 + rows > height_ || col0 + cols > width_) {
    throw ValidationError("window exceeds stack extent");
  }
  RasterStack out(t_len_, rows, cols, channels_);
  const std::size_t nc = channels_.size();
  for (std::size_t t = 0; t < t_len_; ++t) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t src = offset(t, row0 + r, col0, 0);
      const std::size_t dst = out.offset(t, r, 0, 0);
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(src), cols * nc,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(dst));
      std::copy_n(missing_.begin() + static_cast<std::ptrdiff_t>(src), cols * nc,
                  out.missing_.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

bool RasterStack::identical(const RasterStack& other) const {
  if (t_len_ != other.t_len_ || height_ != other.height_ || width_ != other.width_ ||
      channels_ != other.channels_ || missing_ != other.missing_) {
    return false;
  }
  return data_.size() == other.data_.size() &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

namespace {

constexpr char kMagic[4] = {'R', 'S', 'T', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError(std::string(what) + " exceeds u32 range");
  }
  return static_cast<std::uint32_t>(v);
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated RST1 payload while reading ") + what);
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_stack(const RasterStack& stack) {
  std::vector<std::uint8_t> out;
  const std::size_t n = stack.size();
  out.reserve(24 + n * 4 + n / 8 + 64);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kRasterFormatVersion);
  put_u32(out, checked_u32(stack.t_len(), "t_len"));
  put_u32(out, checked_u32(stack.height(), "height"));
  put_u32(out, checked_u32(stack.width(), "width"));
  put_u32(out, checked_u32(stack.channel_count(), "channel count"));
  checked_u32(n, "element count");
  for (const auto& name : stack.channels()) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("channel name too long");
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  for (float v : stack.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  const auto mask = stack.missing_mask();
  std::vector<std::uint8_t> packed((n + 7) / 8, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

RasterStack decode_stack(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("bad magic: not an RST1 raster stack");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kRasterFormatVersion) {
    throw FormatError("unsupported RST1 version " + std::to_string(version));
  }
  const std::uint64_t t_len = in.u32("t_len");
  const std::uint64_t height = in.u32("height");
  const std::uint64_t width = in.u32("width");
  const std::uint32_t nch = in.u32("channel count");
  std::vector<std::string> names;
  names.reserve(nch);
  for (std::uint32_t i = 0; i < nch; ++i) {
    const std::uint16_t len = in.u16("channel name length");
    const auto raw = in.take(len, "channel name");
    names.emplace_back(raw.begin(), raw.end());
  }
  const std::uint64_t n = t_len * height * width * nch;
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("RST1 header declares an oversized payload");
  }
  const std::uint64_t expected = n * 4 + (n + 7) / 8;
  if (in.remaining() < expected) {
    throw FormatError("truncated RST1 payload: header declares " + std::to_string(expected) +
                      " payload bytes, file has " + std::to_string(in.remaining()));
  }
  RasterStack stack(t_len, height, width, std::move(names));
  auto data = stack.data();
  const auto payload = in.take(n * 4, "data");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  const auto packed = in.take((n + 7) / 8, "mask");
  auto mask = stack.missing_mask();
  for (std::size_t i = 0; i < n; ++i) mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
  if (in.remaining() != 0) {
    throw FormatError("RST1 file has " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return stack;
}

void write_stack(const RasterStack& stack, const std::filesystem::path& path) {
  write_file_bytes(path, encode_stack(stack));
}

RasterStack read_stack(const std::filesystem::path& path) {
  try {
    return decode_stack(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --- catalog ---------------------------------------------------------------

int FireRecord::month_index() const {
  return std::stoi(containment_month.substr(5, 2)) - 1;
}

bool meets_size_threshold(const FireRecord& fire) { return fire.acres >= kMinFireAcres; }

namespace {

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  if (quoted) {
    throw FormatError("catalog line " + std::to_string(line_no) + ": unterminated quote");
  }
  fields.push_back(std::move(field));
  return fields;
}

double parse_number(const std::string& text, const char* field, std::size_t line_no) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty() || !std::isfinite(value)) {
    throw FormatError("catalog line " + std::to_string(line_no) + ": invalid " + field + " '" +
                      text + "'");
  }
  return value;
}

bool valid_year_month(const std::string& s) {
  if (s.size() != 7 || s[4] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  return month >= 1 && month <= 12;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::vector<FireRecord> parse_catalog(std::string_view text) {
  std::vector<FireRecord> fires;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto fields = split_csv_line(line, line_no);
    if (!saw_header) {
      static const std::vector<std::string> kHeader = {"id",  "name", "lon", "lat",
                                                       "containment_month", "acres"};
      if (fields != kHeader) {
        throw FormatError("catalog line 1: expected header id,name,lon,lat,containment_month,acres");
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != 6) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": expected 6 fields, got " +
                        std::to_string(fields.size()));
    }
    FireRecord fire;
    fire.id = fields[0];
    fire.name = fields[1];
    if (fire.id.empty()) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": empty id");
    }
    fire.lon = parse_number(fields[2], "lon", line_no);
    fire.lat = parse_number(fields[3], "lat", line_no);
    fire.containment_month = fields[4];
    fire.acres = parse_number(fields[5], "acres", line_no);
    if (fire.lon < -180.0 || fire.lon > 180.0) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": lon out of range");
    }
    if (fire.lat < -90.0 || fire.lat > 90.0) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": lat out of range");
    }
    if (!valid_year_month(fire.containment_month)) {
      throw FormatError("catalog line " + std::to_string(line_no) +
                        ": containment_month must be YYYY-MM");
    }
    if (fire.acres < 0.0) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": negative acres");
    }
    fires.push_back(std::move(fire));
    if (end == text.size()) break;
  }
  if (!saw_header) throw FormatError("catalog is empty (missing header)");
  return fires;
}

std::vector<FireRecord> read_catalog(const std::filesystem::path& path) {
  return parse_catalog(read_text_file(path));
}

void write_catalog(std::span<const FireRecord> fires, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(10);
  out << "id,name,lon,lat,containment_month,acres\n";
  for (const auto& f : fires) {
    out << csv_quote(f.id) << ',' << csv_quote(f.name) << ',' << f.lon << ',' << f.lat << ','
        << f.containment_month << ',' << f.acres << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace regrowth
