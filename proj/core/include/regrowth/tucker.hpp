#pragma once

// Scalar-on-tensor regression y = <W, X> + b with W = G x1 U1 x2 U2 x3 U3.
// Tensors are dense row-major [d1][d2][d3] doubles.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regrowth/checkpoint.hpp"
#include "regrowth/convlstm.hpp"

namespace regrowth {

using Dims3 = std::array<std::size_t, 3>;

struct TuckerWeights {
  Dims3 dims{};
  Dims3 ranks{};
  std::array<Eigen::MatrixXd, 3> factors;  // d_m x r_m
  std::vector<double> core;                 // [r1][r2][r3]
  double bias = 0.0;

  // Dense W, [d1][d2][d3].
  std::vector<double> reconstruct() const;
};

struct TuckerConfig {
  Dims3 ranks{4, 3, 3};
  double lambda = 1e-3;
  std::size_t max_sweeps = 100;
  double tolerance = 1e-6;
  std::uint64_t seed = 7;
  // Independent ALS runs; the first starts from a truncated HOSVD of the
  // response-weighted mean tensor, the rest from seeded random factors.
  // The run with the lowest final objective wins.
  std::size_t restarts = 8;
};

struct TuckerSample {
  std::vector<double> x;
  double y = 0.0;
};

struct TuckerFit {
  TuckerWeights weights;
  // Objective after initialisation and after each sweep.
  std::vector<double> objective;
  bool converged = false;
};

// Contracts X along the factors before touching the core, so W is never
// materialised.
double tucker_predict(const TuckerWeights& w, std::span<const double> x);

TuckerFit tucker_fit(std::span<const TuckerSample> samples, const Dims3& dims, const TuckerConfig& config);

// Sum of squared residuals plus lambda times the squared norm of factors and core.
double tucker_objective(const TuckerWeights& w, std::span<const TuckerSample> samples, double lambda);

void save_tucker(Checkpoint& ckp, const std::string& prefix, const TuckerWeights& w);
TuckerWeights load_tucker(const Checkpoint& ckp, const std::string& prefix);

// T x_mode U: replaces extent dims[mode] by U.cols(), out = sum_i T[..i..] U(i, a).
std::vector<double> mode_product(std::span<const double> tensor, const Dims3& dims, std::size_t mode,
                                 const Eigen::MatrixXd& u, Dims3* out_dims);

// --- ConvLSTMTR ----------------------------------------------------------------

struct SubgridSeries {
  std::vector<double> ndvi;  // [25][H][W] NDVI ratios
  double weight = 1.0;       // burned pixel count
};

struct FirePrediction {
  double k_hat = 0.0;
  double L_hat = 0.0;
  std::vector<double> subgrid_k;
  std::vector<double> subgrid_L;
};

// Weighted mean of the per-subgrid Tucker predictions.
FirePrediction predict_fire(const TuckerWeights& tucker_k, const TuckerWeights& tucker_L,
                            std::span<const SubgridSeries> subgrids);

struct SubgridObservation {
  std::vector<Frame> observed;        // first frames, [H][W][C] each
  std::vector<Frame> evi_reference;   // optional, one [H][W] frame per forecast step
  std::vector<Frame> actual_future;   // for the actual policy
  double weight = 1.0;
};

// Rolls every qualifying subgrid forward to 25 frames (observed NDVI + the
// forecast), then predicts (k, L) per subgrid and averages by weight.
FirePrediction convlstmtr_predict(const ConvLSTMModel<float>& model, const TuckerWeights& tucker_k,
                                  const TuckerWeights& tucker_L, std::span<const SubgridObservation> subgrids,
                                  ExogenousPolicy policy, std::size_t height, std::size_t width,
                                  std::size_t horizon = 20);

}  // namespace regrowth
