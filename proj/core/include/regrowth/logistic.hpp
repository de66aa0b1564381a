#pragma once

// Per-pixel logistic recovery curves r(t) = L / (1 + exp(-k (t - t0))),
// t in 32-day steps from containment.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regrowth/raster_io.hpp"

namespace regrowth {

struct LogisticBounds {
  static constexpr double kMinL = 0.0, kMaxL = 3.0;
  static constexpr double kMinK = -5.0, kMaxK = 5.0;
  static constexpr double kMinT0 = -25.0, kMaxT0 = 50.0;
};

struct LogisticParams {
  double L = 0.0;
  double k = 0.0;
  double t0 = 0.0;
  double rss = 0.0;
  bool degenerate = false;
  std::size_t iterations = 0;
};

double logistic_eval(const LogisticParams& p, double t);

struct LogisticFitOptions {
  std::size_t max_iterations = 200;
  double rel_tolerance = 1e-10;
  double lambda0 = 1e-3;
};

// Damped Gauss-Newton (Levenberg). When `rss_trace` is given it receives the
// RSS of the initial guess followed by every accepted step.
LogisticParams fit_pixel(std::span<const double> series, const LogisticFitOptions& options = {},
                         std::vector<double>* rss_trace = nullptr);

inline constexpr double kMinGridBurnFraction = 0.5;

struct GridFit {
  std::size_t row_offset = 0;
  std::size_t col_offset = 0;
  double burn_fraction = 0.0;
  double mean_k = 0.0;
  double mean_L = 0.0;
  std::size_t n_pixels = 0;  // burned, non-degenerate
  std::size_t n_degenerate = 0;
  std::vector<std::size_t> pixel_index;  // row-major index of each burned pixel
  std::vector<LogisticParams> pixels;
};

// Fits every burned pixel of the NDVI-ratio channel. Returns nullopt when the
// burned share is below `min_burn_fraction` (the subgrid is skipped).
std::optional<GridFit> fit_grid(const RasterStack& ratios, std::span<const std::uint8_t> burned,
                                double min_burn_fraction = kMinGridBurnFraction,
                                const LogisticFitOptions& options = {});

struct FireRecovery {
  std::string fire_id;
  double mean_k = 0.0;
  double mean_L = 0.0;
  std::size_t n_pixels = 0;
  std::size_t n_subgrids = 0;
};

// Pixel-count-weighted mean of the subgrid means.
FireRecovery aggregate_fire(const std::string& fire_id, std::span<const GridFit> grids);

std::string grid_fits_csv(const std::string& fire_id, std::span<const GridFit> grids, bool header = true);
std::string recoveries_csv(std::span<const FireRecovery> recoveries);
std::vector<FireRecovery> parse_recoveries_csv(const std::string& text);

}  // namespace regrowth
