#pragma once

// Raw stack -> clean, de-seasonalized, partitioned training samples.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regrowth/raster_io.hpp"

namespace regrowth {

// Marks NDVI/EVI missing wherever QA is 2 or 3 and drops the QA channel.
RasterStack mask_unreliable(const RasterStack& stack);

// Replaces each missing value with the inverse-distance-weighted mean of its
// k nearest observed values of the same channel in (t, row, col) space, one
// time step counting as one pixel. Ties resolve by lowest (t, row, col).
RasterStack knn_impute(const RasterStack& stack, std::size_t k = 8);

inline constexpr float kReferenceGuard = 0.05f;

// NDVI := NDVI / reference[month(t)], month(t) = (start_month + t) mod 12.
// `reference` is 12 x H x W with an NDVI channel indexed by calendar month.
// Pixels whose |reference| < kReferenceGuard become missing.
RasterStack deseasonalize(const RasterStack& post, const RasterStack& reference, int start_month);

struct ChannelTransform {
  enum class Kind { kIdentity, kAffine, kLogAffine, kBinarize };
  Kind kind = Kind::kIdentity;
  // y = clamp((f(x) - offset) * scale, 0, 1), f = log1p for kLogAffine.
  double offset = 0.0;
  double scale = 1.0;

  float apply(float x) const;
  float invert(float y) const;
};

struct ChannelScaling {
  std::map<std::string, ChannelTransform> transforms;

  inline static constexpr double kLstMinKelvin = 240.0;
  inline static constexpr double kLstMaxKelvin = 330.0;

  // NDVI and EVI pass through; LST maps [240, 330] K onto [0, 1]; PRECIP is
  // log1p then min-max over this stack; FIREMASK is binarized.
  static ChannelScaling fit(const RasterStack& stack);
};

RasterStack scale_channels(const RasterStack& stack, const ChannelScaling& scaling);

struct Subgrid {
  RasterStack stack;
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  double burn_fraction = 0.0;
};

// Share of pixels whose FIREMASK is active at t = 0.
double burn_fraction(const RasterStack& stack);
std::vector<std::uint8_t> burned_pixels(const RasterStack& stack);

// Non-overlapping tile x tile windows in row-major order.
std::vector<Subgrid> partition_subgrids(const RasterStack& stack, std::size_t tile = 10);
RasterStack reassemble_subgrids(std::span<const Subgrid> tiles, std::size_t height, std::size_t width);

struct ErraticThresholds {
  double max_step = 0.5;
  double max_mean = 3.0;
  double min_mean = 0.0;
};

struct ErraticVerdict {
  std::string fire_id;
  bool included = true;
  std::string rule;  // empty when included
};

struct NamedStack {
  std::string fire_id;
  const RasterStack* stack = nullptr;
};

// Spatial mean of the NDVI channel per frame.
std::vector<double> mean_ndvi_series(const RasterStack& stack);

std::vector<ErraticVerdict> filter_erratic(std::span<const NamedStack> fires,
                                           const ErraticThresholds& thresholds = {});
std::string erratic_report(std::span<const ErraticVerdict> verdicts);

struct SampleProvenance {
  std::string fire_id;
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  double burn_fraction = 0.0;
};

// [sample][timestep][row][col][channel] training batch.
class SampleTensor {
 public:
  SampleTensor() = default;
  SampleTensor(std::size_t timesteps, std::size_t rows, std::size_t cols, std::size_t channels);

  std::size_t samples() const { return provenance_.size(); }
  std::size_t timesteps() const { return timesteps_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t channels() const { return channels_; }
  std::size_t sample_size() const { return timesteps_ * rows_ * cols_ * channels_; }

  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * sample_size(), sample_size());
  }
  std::span<const float> data() const { return data_; }
  const SampleProvenance& provenance(std::size_t i) const { return provenance_[i]; }

  // Appends a stack whose shape matches; throws on missing values.
  void append(const RasterStack& stack, SampleProvenance provenance);
  SampleTensor subset(std::span<const std::size_t> indices) const;

 private:
  std::size_t timesteps_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
  std::vector<SampleProvenance> provenance_;
};

struct FireSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  bool empty_validation = false;
};

// Deterministic shuffle of the distinct ids, first round(fraction * n) to train.
FireSplit split_fires(std::vector<std::string> fire_ids, double fraction, std::uint64_t seed);

struct SampleSplit {
  SampleTensor train;
  SampleTensor val;
  FireSplit fires;
};

// Splits by fire id so every subgrid of a fire lands on the same side.
SampleSplit split_train_val(const SampleTensor& samples, double fraction, std::uint64_t seed);

struct PreprocessOptions {
  std::size_t knn_k = 8;
};

// mask -> impute -> de-seasonalize -> re-impute guarded pixels -> scale.
RasterStack preprocess_fire(const RasterStack& raw, const RasterStack& reference, int start_month,
                            const PreprocessOptions& options = {});

}  // namespace regrowth
