#pragma once

// Synthetic fires with known logistic recovery parameters.
//
// Each burned pixel follows
//   NDVI(t) = ref[month(t)] * L / (1 + exp(-k (t - t0))) * (1 + eps),  eps ~ N(0, sigma)
// with month(t) = (containment_month + t) mod 12. Unburned pixels use
// (L, k, t0) = (2, 0, 0), which is the constant ratio 1.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "regrowth/raster_io.hpp"

namespace regrowth {

struct SynthConfig {
  std::size_t n_fires = 40;
  std::size_t height = 50;
  std::size_t width = 50;
  std::size_t t_len = 25;
  double sigma = 0.05;
  double dropout = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

// Reads n_fires, height, width, t_len, sigma, dropout, seed from key=value
// pairs. Unknown keys are rejected.
SynthConfig synth_config_from(const std::map<std::string, std::string>& values);
SynthConfig read_synth_config(const std::filesystem::path& path);

inline constexpr double kSynthRefMean = 0.55;
inline constexpr double kSynthRefAmplitude = 0.15;
inline constexpr double kSynthKMin = -1.2;
inline constexpr double kSynthKMax = 0.7;

struct FireTruth {
  std::string fire_id;
  std::size_t height = 0;
  std::size_t width = 0;
  int start_month = 0;
  // Row-major per-pixel fields.
  std::vector<float> k;
  std::vector<float> capacity;
  std::vector<float> midpoint;
  std::vector<std::uint8_t> burned;
  // 12 x H x W x 1 stack of reference NDVI, indexed by calendar month.
  RasterStack reference;

  double burned_fraction() const;
  // Mean k over burned pixels.
  double mean_burned_k() const;
};

struct SynthTruth {
  double sigma = 0.0;
  double dropout = 0.0;
  std::vector<FireTruth> fires;
};

struct SynthOutput {
  std::vector<FireRecord> catalog;
  std::vector<RasterStack> stacks;  // t_len x H x W x {NDVI,EVI,LST,FIREMASK,PRECIP,QA}
  SynthTruth truth;
};

SynthOutput synth_generate(const SynthConfig& config, std::uint64_t seed);

// Truth grids as a 1 x H x W x {k, L, t0, burned} stack, for persisting next
// to the raw stacks.
RasterStack truth_to_stack(const FireTruth& truth);

}  // namespace regrowth
