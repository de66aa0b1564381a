#pragma once

// Fire-level features, UMAP embedding, k-means clustering, and map export.
// Point sets are n x d Eigen matrices, one row per fire.

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regrowth/logistic.hpp"
#include "regrowth/raster_io.hpp"

namespace regrowth {

struct FireFeature {
  std::string fire_id;
  double lon = 0.0;
  double lat = 0.0;
  double k_hat = 0.0;
  double L_hat = 0.0;
  double p = 0.0;  // mean precipitation over the first 5 steps
};

// Mean PRECIP over the first `steps` frames and every pixel.
double mean_early_precip(const RasterStack& stack, std::size_t steps = 5);

// Joins predictions (fire_id, k, L) with the catalog and the raw stacks, in
// the order of `predictions`.
std::vector<FireFeature> build_features(std::span<const FireRecovery> predictions,
                                        std::span<const FireRecord> catalog,
                                        const std::map<std::string, RasterStack>& stacks);

Eigen::MatrixXd feature_matrix(std::span<const FireFeature> features);

struct MinMaxTransform {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& y) const;
};

struct Normalized {
  Eigen::MatrixXd points;
  MinMaxTransform transform;
};

// Each column onto [0, 1]; a constant column maps to 0.5.
Normalized minmax_normalize(const Eigen::MatrixXd& x);

// --- UMAP --------------------------------------------------------------------

struct UmapConfig {
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t epochs = 500;
  std::size_t negative_samples = 5;
  std::uint64_t seed = 7;
};

struct FuzzyGraph {
  std::size_t n_neighbors = 0;
  std::vector<std::vector<std::size_t>> neighbors;  // self excluded, nearest first
  std::vector<double> rho;
  std::vector<double> sigma;
  std::vector<double> membership_sum;  // per point, before symmetrisation
  Eigen::MatrixXd weights;             // symmetric fuzzy union a + b - ab
};

FuzzyGraph fuzzy_graph(const Eigen::MatrixXd& x, std::size_t n_neighbors);

// (a, b) of 1 / (1 + a d^(2b)) fitted to the min_dist target curve.
std::pair<double, double> fit_curve_params(double min_dist, double spread = 1.0);
// Hard-coded for the default min_dist, fitted otherwise.
std::pair<double, double> curve_params(double min_dist);

// Normalised-Laplacian eigenvectors 2 and 3; seeded Gaussian fallback.
Eigen::MatrixXd spectral_layout(const Eigen::MatrixXd& weights, std::uint64_t seed);

Eigen::MatrixXd umap_embed(const Eigen::MatrixXd& x, const UmapConfig& config = {});

// Rank-based trustworthiness of `embedded` with respect to `original`.
double trustworthiness(const Eigen::MatrixXd& original, const Eigen::MatrixXd& embedded, std::size_t k);

// --- k-means -------------------------------------------------------------------

struct KMeansResult {
  std::vector<std::size_t> labels;  // renumbered in order of first appearance
  Eigen::MatrixXd centers;
  double sse = 0.0;
  std::vector<double> sse_trace;    // per Lloyd iteration of the returned restart
  std::vector<double> restart_sse;  // final SSE of every restart
};

KMeansResult kmeans(const Eigen::MatrixXd& x, std::size_t n_clusters, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iterations = 300);

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

struct ClusterAssignment {
  std::size_t n_clusters = 0;
  std::vector<std::size_t> labels;
  std::vector<double> mean_abs_k;  // per cluster
};

ClusterAssignment assign_clusters(std::span<const FireFeature> features, const Eigen::MatrixXd& points,
                                  std::size_t n_clusters, std::uint64_t seed);

struct GeoExport {
  std::string csv;
  std::map<std::size_t, std::string> svg;  // per cluster count
};

GeoExport export_geo(std::span<const ClusterAssignment> assignments, std::span<const FireFeature> features);

struct ClusterRow {
  std::string fire_id;
  std::vector<std::size_t> labels;
};
std::vector<ClusterRow> parse_clusters_csv(const std::string& csv);

}  // namespace regrowth
