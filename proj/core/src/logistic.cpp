#include "regrowth/logistic.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "regrowth/error.hpp"
#include "text.hpp"

namespace regrowth {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

LogisticParams project(LogisticParams p) {
  using B = LogisticBounds;
  p.L = std::clamp(p.L, B::kMinL, B::kMaxL);
  p.k = std::clamp(p.k, B::kMinK, B::kMaxK);
  p.t0 = std::clamp(p.t0, B::kMinT0, B::kMaxT0);
  return p;
}

double residual_ss(const LogisticParams& p, std::span<const double> y) {
  double rss = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double r = y[t] - logistic_eval(p, static_cast<double>(t));
    rss += r * r;
  }
  return rss;
}

}  // namespace

double logistic_eval(const LogisticParams& p, double t) { return p.L * sigmoid(p.k * (t - p.t0)); }

LogisticParams fit_pixel(std::span<const double> series, const LogisticFitOptions& options,
                         std::vector<double>* rss_trace) {
  const std::size_t n = series.size();
  if (n < 3) throw ValidationError("fit_pixel: need at least 3 observations, got " + std::to_string(n));
  for (double v : series) {
    if (!std::isfinite(v)) throw ValidationError("fit_pixel: series contains a non-finite value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(series.begin(), series.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi - lo <= 0.0) {
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(n);
    LogisticParams flat{2.0 * mean, 0.0, 12.0, 0.0, true, 0};
    if (rss_trace != nullptr) rss_trace->assign(1, 0.0);
    return flat;
  }

  LogisticParams p;
  p.L = std::clamp(hi, 0.1, 3.0);
  const double mid = 0.5 * (lo + hi);
  std::size_t crossing = 0;
  for (std::size_t t = 1; t < n; ++t) {
    if (std::abs(series[t] - mid) < std::abs(series[crossing] - mid)) crossing = t;
  }
  p.t0 = static_cast<double>(crossing);
  const double trend = series[n - 1] - series[0];
  p.k = trend > 0.0 ? 0.2 : (trend < 0.0 ? -0.2 : 0.0);
  p = project(p);
  p.rss = residual_ss(p, series);
  if (rss_trace != nullptr) rss_trace->assign(1, p.rss);

  Eigen::MatrixXd J(static_cast<long>(n), 3);
  Eigen::VectorXd res(static_cast<long>(n));
  double lambda = options.lambda0;
  std::size_t iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    for (std::size_t t = 0; t < n; ++t) {
      const double dt = static_cast<double>(t) - p.t0;
      const double s = sigmoid(p.k * dt);
      const double ds = s * (1.0 - s);
      J(static_cast<long>(t), 0) = s;
      J(static_cast<long>(t), 1) = p.L * ds * dt;
      J(static_cast<long>(t), 2) = -p.L * ds * p.k;
      res(static_cast<long>(t)) = series[t] - p.L * s;
    }
    const Eigen::Matrix3d JtJ = J.transpose() * J;
    const Eigen::Vector3d Jtr = J.transpose() * res;

    bool accepted = false;
    while (lambda < 1e16) {
      const Eigen::Matrix3d A = JtJ + lambda * Eigen::Matrix3d::Identity();
      const Eigen::Vector3d delta = A.ldlt().solve(Jtr);
      LogisticParams trial = project({p.L + delta(0), p.k + delta(1), p.t0 + delta(2), 0.0, false, 0});
      trial.rss = residual_ss(trial, series);
      if (std::isfinite(trial.rss) && trial.rss < p.rss) {
        const double previous = p.rss;
        p = trial;
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        if (rss_trace != nullptr) rss_trace->push_back(p.rss);
        if ((previous - p.rss) <= options.rel_tolerance * previous) {
          ++iter;
          p.iterations = iter;
          return p;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || p.rss == 0.0) break;
  }
  p.iterations = iter;
  return p;
}

std::optional<GridFit> fit_grid(const RasterStack& ratios, std::span<const std::uint8_t> burned,
                                double min_burn_fraction, const LogisticFitOptions& options) {
  const std::size_t pixels = ratios.frame_pixels();
  if (burned.size() != pixels) {
    throw ValidationError("fit_grid: burn mask has " + std::to_string(burned.size()) + " entries for " +
                          std::to_string(pixels) + " pixels");
  }
  const std::size_t ndvi = ratios.channel(channel::kNdvi);
  std::size_t n_burned = 0;
  for (auto b : burned) n_burned += b != 0 ? 1 : 0;
  GridFit fit;
  fit.burn_fraction = static_cast<double>(n_burned) / static_cast<double>(pixels);
  if (fit.burn_fraction < min_burn_fraction) return std::nullopt;

  std::vector<double> series(ratios.t_len());
  double sum_k = 0.0;
  double sum_L = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    if (burned[p] == 0) continue;
    const std::size_t r = p / ratios.width();
    const std::size_t c = p % ratios.width();
    for (std::size_t t = 0; t < ratios.t_len(); ++t) {
      if (ratios.missing(t, r, c, ndvi)) throw ValidationError("fit_grid: missing NDVI ratio; impute first");
      series[t] = ratios.at(t, r, c, ndvi);
    }
    auto params = fit_pixel(series, options);
    if (params.degenerate) {
      ++fit.n_degenerate;
    } else {
      sum_k += params.k;
      sum_L += params.L;
      ++fit.n_pixels;
    }
    fit.pixel_index.push_back(p);
    fit.pixels.push_back(params);
  }
  if (fit.n_pixels > 0) {
    fit.mean_k = sum_k / static_cast<double>(fit.n_pixels);
    fit.mean_L = sum_L / static_cast<double>(fit.n_pixels);
  }
  return fit;
}

FireRecovery aggregate_fire(const std::string& fire_id, std::span<const GridFit> grids) {
  FireRecovery out{fire_id, 0.0, 0.0, 0, 0};
  for (const auto& g : grids) {
    if (g.n_pixels == 0) continue;
    const double w = static_cast<double>(g.n_pixels);
    out.mean_k += w * g.mean_k;
    out.mean_L += w * g.mean_L;
    out.n_pixels += g.n_pixels;
    ++out.n_subgrids;
  }
  if (out.n_pixels == 0) throw ValidationError("aggregate_fire: fire " + fire_id + " has no qualifying subgrids");
  out.mean_k /= static_cast<double>(out.n_pixels);
  out.mean_L /= static_cast<double>(out.n_pixels);
  return out;
}

std::string grid_fits_csv(const std::string& fire_id, std::span<const GridFit> grids, bool header) {
  std::ostringstream out;
  if (header) out << "fire_id,subgrid,mean_k,mean_L,n_pixels,flags\n";
  for (const auto& g : grids) {
    out << fire_id << ",r" << g.row_offset << "c" << g.col_offset << ',' << text::num(g.mean_k) << ','
        << text::num(g.mean_L) << ',' << g.n_pixels << ',';
    if (g.n_pixels == 0) {
      out << "empty";
    } else if (g.n_degenerate > 0) {
      out << "degenerate=" << g.n_degenerate;
    } else {
      out << "ok";
    }
    out << '\n';
  }
  return out.str();
}

std::string recoveries_csv(std::span<const FireRecovery> recoveries) {
  std::ostringstream out;
  out << "fire_id,mean_k,mean_L,n_pixels,n_subgrids\n";
  for (const auto& r : recoveries) {
    out << r.fire_id << ',' << text::num(r.mean_k) << ',' << text::num(r.mean_L) << ',' << r.n_pixels << ','
        << r.n_subgrids << '\n';
  }
  return out.str();
}

std::vector<FireRecovery> parse_recoveries_csv(const std::string& csv) {
  const auto rows = text::lines(csv);
  if (rows.empty() || rows[0] != "fire_id,mean_k,mean_L,n_pixels,n_subgrids") {
    throw FormatError("recoveries: unexpected header");
  }
  std::vector<FireRecovery> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = text::split(rows[i]);
    if (f.size() != 5) throw FormatError("recoveries line " + std::to_string(i + 1) + ": expected 5 fields");
    out.push_back({f[0], text::to_double(f[1], "mean_k"), text::to_double(f[2], "mean_L"),
                   static_cast<std::size_t>(text::to_int(f[3], "n_pixels")),
                   static_cast<std::size_t>(text::to_int(f[4], "n_subgrids"))});
  }
  return out;
}

}  // namespace regrowth
