#include "regrowth/embed_cluster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "regrowth/error.hpp"
#include "regrowth/rng.hpp"
#include "regrowth/svg.hpp"
#include "text.hpp"

namespace regrowth {

// --- features ------------------------------------------------------------------

double mean_early_precip(const RasterStack& stack, std::size_t steps) {
  const std::size_t ch = stack.channel(channel::kPrecip);
  const std::size_t frames = std::min(steps, stack.t_len());
  if (frames == 0) throw ValidationError("mean_early_precip: stack has no frames");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t r = 0; r < stack.height(); ++r) {
      for (std::size_t c = 0; c < stack.width(); ++c) {
        if (stack.missing(t, r, c, ch)) continue;
        sum += stack.at(t, r, c, ch);
        ++count;
      }
    }
  }
  if (count == 0) throw ValidationError("mean_early_precip: no observed precipitation");
  return sum / static_cast<double>(count);
}

std::vector<FireFeature> build_features(std::span<const FireRecovery> predictions,
                                        std::span<const FireRecord> catalog,
                                        const std::map<std::string, RasterStack>& stacks) {
  std::vector<FireFeature> out;
  for (const auto& pred : predictions) {
    const auto rec = std::find_if(catalog.begin(), catalog.end(), [&](const FireRecord& f) { return f.id == pred.fire_id; });
    if (rec == catalog.end()) throw ValidationError("build_features: fire " + pred.fire_id + " is not in the catalog");
    const auto stack = stacks.find(pred.fire_id);
    if (stack == stacks.end()) throw ValidationError("build_features: fire " + pred.fire_id + " has no raster stack");
    FireFeature f{pred.fire_id, rec->lon, rec->lat, pred.mean_k, pred.mean_L, mean_early_precip(stack->second)};
    for (double v : {f.lon, f.lat, f.k_hat, f.L_hat, f.p}) {
      if (!std::isfinite(v)) throw ValidationError("build_features: fire " + pred.fire_id + " has a non-finite feature");
    }
    out.push_back(std::move(f));
  }
  return out;
}

Eigen::MatrixXd feature_matrix(std::span<const FireFeature> features) {
  Eigen::MatrixXd x(static_cast<long>(features.size()), 5);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    x.row(static_cast<long>(i)) << f.lon, f.lat, f.k_hat, f.L_hat, f.p;
  }
  return x;
}

Eigen::MatrixXd MinMaxTransform::apply(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    const double span = hi(j) - lo(j);
    for (long i = 0; i < x.rows(); ++i) y(i, j) = span > 0.0 ? (x(i, j) - lo(j)) / span : 0.5;
  }
  return y;
}

Eigen::MatrixXd MinMaxTransform::invert(const Eigen::MatrixXd& y) const {
  Eigen::MatrixXd x(y.rows(), y.cols());
  for (long j = 0; j < y.cols(); ++j) {
    const double span = hi(j) - lo(j);
    for (long i = 0; i < y.rows(); ++i) x(i, j) = span > 0.0 ? lo(j) + y(i, j) * span : lo(j);
  }
  return x;
}

Normalized minmax_normalize(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw ValidationError("minmax_normalize: need at least 2 points");
  Normalized out;
  out.transform.lo = x.colwise().minCoeff().transpose();
  out.transform.hi = x.colwise().maxCoeff().transpose();
  out.points = out.transform.apply(x);
  return out;
}

// --- UMAP ----------------------------------------------------------------------

namespace {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& x) {
  const long n = x.rows();
  Eigen::MatrixXd d(n, n);
  for (long i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (long j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).norm();
  }
  return d;
}

// Other points ordered by distance, ties by index.
std::vector<std::size_t> ranked_neighbors(const Eigen::MatrixXd& d, std::size_t i) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < static_cast<std::size_t>(d.rows()); ++j) {
    if (j != i) order.push_back(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d(static_cast<long>(i), static_cast<long>(a)) < d(static_cast<long>(i), static_cast<long>(b));
  });
  return order;
}

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

FuzzyGraph fuzzy_graph(const Eigen::MatrixXd& x, std::size_t n_neighbors) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n < 3) throw ValidationError("umap: need at least 3 points, got " + std::to_string(n));
  const std::size_t k = std::min(n_neighbors, n - 1);
  if (k < 2) throw ValidationError("umap: n_neighbors must be at least 2");
  const Eigen::MatrixXd d = pairwise_distances(x);
  const double target = std::log2(static_cast<double>(k));

  FuzzyGraph g;
  g.n_neighbors = k;
  g.neighbors.resize(n);
  g.rho.assign(n, 0.0);
  g.sigma.assign(n, 1.0);
  g.membership_sum.assign(n, 0.0);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<long>(n), static_cast<long>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto order = ranked_neighbors(d, i);
    order.resize(k);
    g.neighbors[i] = order;
    std::vector<double> dist(k);
    for (std::size_t j = 0; j < k; ++j) dist[j] = d(static_cast<long>(i), static_cast<long>(order[j]));
    const auto positive = std::find_if(dist.begin(), dist.end(), [](double v) { return v > 0.0; });
    const double rho = positive != dist.end() ? *positive : 0.0;

    auto total = [&](double sigma) {
      double s = 0.0;
      for (double v : dist) s += std::exp(-std::max(0.0, v - rho) / sigma);
      return s;
    };
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double mid = 1.0;
    double sum = total(mid);
    for (int it = 0; it < 64; ++it) {
      sum = total(mid);
      if (std::abs(sum - target) < 1e-5) break;
      if (sum > target) {
        hi = mid;
        mid = 0.5 * (lo + hi);
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
      }
    }
    g.rho[i] = rho;
    g.sigma[i] = mid;
    g.membership_sum[i] = sum;
    for (std::size_t j = 0; j < k; ++j) {
      a(static_cast<long>(i), static_cast<long>(order[j])) = std::exp(-std::max(0.0, dist[j] - rho) / mid);
    }
  }
  g.weights = a + a.transpose() - a.cwiseProduct(a.transpose());
  return g;
}

std::pair<double, double> fit_curve_params(double min_dist, double spread) {
  // Least squares of 1 / (1 + a x^(2b)) against the piecewise target on
  // 300 points over [0, 3 spread], by damped Gauss-Newton in (a, b).
  std::vector<double> xs, ys;
  for (int i = 0; i < 300; ++i) {
    const double x = 3.0 * spread * i / 299.0;
    if (x <= 0.0) continue;
    xs.push_back(x);
    ys.push_back(x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread));
  }
  auto rss = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double r = ys[i] - 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b));
      s += r * r;
    }
    return s;
  };
  double a = 1.0, b = 1.0, lambda = 1e-3;
  double current = rss(a, b);
  for (int it = 0; it < 500; ++it) {
    Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
    Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double p = std::pow(xs[i], 2.0 * b);
      const double den = 1.0 + a * p;
      const double f = 1.0 / den;
      const Eigen::Vector2d grad(-p / (den * den), -a * p * 2.0 * std::log(xs[i]) / (den * den));
      jtj += grad * grad.transpose();
      jtr += grad * (ys[i] - f);
    }
    bool accepted = false;
    while (lambda < 1e12) {
      const Eigen::Vector2d step = (jtj + lambda * Eigen::Matrix2d::Identity()).ldlt().solve(jtr);
      const double na = std::max(a + step(0), 1e-6);
      const double nb = std::max(b + step(1), 1e-6);
      const double next = rss(na, nb);
      if (next < current) {
        accepted = (current - next) > 1e-15 * current;
        a = na;
        b = nb;
        current = next;
        lambda *= 0.1;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
  }
  return {a, b};
}

std::pair<double, double> curve_params(double min_dist) {
  if (min_dist == 0.1) return {1.576943460405378, 0.8950608781227859};
  return fit_curve_params(min_dist);
}

Eigen::MatrixXd spectral_layout(const Eigen::MatrixXd& weights, std::uint64_t seed) {
  const long n = weights.rows();
  Rng rng(seed);
  auto gaussian = [&] {
    Eigen::MatrixXd y(n, 2);
    for (long i = 0; i < n; ++i) y.row(i) << rng.normal(0.0, 10.0), rng.normal(0.0, 10.0);
    return y;
  };
  const Eigen::VectorXd degree = weights.rowwise().sum();
  if (n < 4 || (degree.array() <= 0.0).any()) return gaussian();
  const Eigen::VectorXd inv_sqrt = degree.array().rsqrt();
  const Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - inv_sqrt.asDiagonal() * weights * inv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) return gaussian();
  Eigen::MatrixXd y = solver.eigenvectors().middleCols(1, 2);
  if (!y.allFinite()) return gaussian();
  for (long j = 0; j < 2; ++j) {
    long arg = 0;
    y.col(j).cwiseAbs().maxCoeff(&arg);
    if (y(arg, j) < 0.0) y.col(j) *= -1.0;
  }
  const double scale = y.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return gaussian();
  y *= 10.0 / scale;
  for (long i = 0; i < n; ++i) y.row(i) += Eigen::RowVector2d(rng.normal(0.0, 1e-4), rng.normal(0.0, 1e-4));
  return y;
}

Eigen::MatrixXd umap_embed(const Eigen::MatrixXd& x, const UmapConfig& config) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const auto graph = fuzzy_graph(x, config.n_neighbors);
  const auto [a, b] = curve_params(config.min_dist);

  Eigen::MatrixXd y = spectral_layout(graph.weights, config.seed);
  for (long j = 0; j < 2; ++j) {
    const double lo = y.col(j).minCoeff();
    const double span = y.col(j).maxCoeff() - lo;
    if (span > 0.0) {
      y.col(j) = ((y.col(j).array() - lo) * (10.0 / span)).matrix();
    } else {
      y.col(j).setZero();
    }
  }

  struct Edge {
    std::size_t head, tail;
    double epochs_per_sample;
  };
  std::vector<Edge> edges;
  const double max_w = graph.weights.maxCoeff();
  const double epochs = static_cast<double>(config.epochs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double w = graph.weights(static_cast<long>(i), static_cast<long>(j));
      if (i == j || w <= 0.0 || w < max_w / epochs) continue;
      edges.push_back({i, j, max_w / w});
    }
  }

  Rng rng(config.seed ^ 0x5bd1e995ULL);
  const double neg_rate = static_cast<double>(config.negative_samples);
  std::vector<double> next_sample(edges.size());
  std::vector<double> next_negative(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    next_sample[e] = edges[e].epochs_per_sample;
    next_negative[e] = edges[e].epochs_per_sample / neg_rate;
  }
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double alpha = 1.0 - static_cast<double>(epoch) / epochs;
    const double now = static_cast<double>(epoch);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (next_sample[e] > now) continue;
      const auto i = static_cast<long>(edges[e].head);
      const auto j = static_cast<long>(edges[e].tail);
      Eigen::RowVector2d diff = y.row(i) - y.row(j);
      const double d2 = diff.squaredNorm();
      if (d2 > 0.0) {
        const double coef = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
        for (long c = 0; c < 2; ++c) {
          const double g = clip(coef * diff(c)) * alpha;
          y(i, c) += g;
          y(j, c) -= g;
        }
      }
      next_sample[e] += edges[e].epochs_per_sample;

      const double per_negative = edges[e].epochs_per_sample / neg_rate;
      const auto n_neg = static_cast<std::size_t>(std::max(0.0, std::floor((now - next_negative[e]) / per_negative)));
      for (std::size_t s = 0; s < n_neg; ++s) {
        const auto k = static_cast<long>(rng.index(n));
        if (k == i) continue;
        diff = y.row(i) - y.row(k);
        const double nd2 = diff.squaredNorm();
        for (long c = 0; c < 2; ++c) {
          double g = 4.0;
          if (nd2 > 0.0) g = clip(2.0 * b / ((0.001 + nd2) * (1.0 + a * std::pow(nd2, b))) * diff(c));
          y(i, c) += g * alpha;
        }
      }
      next_negative[e] += static_cast<double>(n_neg) * per_negative;
    }
  }
  if (!y.allFinite()) throw NumericalError("umap: embedding diverged");
  return y;
}

double trustworthiness(const Eigen::MatrixXd& original, const Eigen::MatrixXd& embedded, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(original.rows());
  if (static_cast<std::size_t>(embedded.rows()) != n) throw ValidationError("trustworthiness: row count mismatch");
  if (k < 1 || 2 * n < 3 * k + 2) throw ValidationError("trustworthiness: k too large for n");
  const Eigen::MatrixXd dx = pairwise_distances(original);
  const Eigen::MatrixXd dy = pairwise_distances(embedded);
  double penalty = 0.0;
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ox = ranked_neighbors(dx, i);
    for (std::size_t r = 0; r < ox.size(); ++r) rank[ox[r]] = r + 1;
    const auto oy = ranked_neighbors(dy, i);
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = oy[r];
      if (rank[j] > k) penalty += static_cast<double>(rank[j] - k);
    }
  }
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);
  return 1.0 - 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0)) * penalty;
}

// --- k-means -------------------------------------------------------------------

namespace {

struct LloydRun {
  std::vector<std::size_t> labels;
  Eigen::MatrixXd centers;
  double sse = 0.0;
  std::vector<double> trace;
};

// Assigns each point to its nearest center (lowest index on ties); returns SSE.
double assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centers, std::vector<std::size_t>& labels) {
  double sse = 0.0;
  for (long i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (long c = 0; c < centers.rows(); ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::size_t>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    sse += best_d;
  }
  return sse;
}

Eigen::MatrixXd plus_plus_seed(const Eigen::MatrixXd& x, std::size_t k, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  Eigen::MatrixXd centers(static_cast<long>(k), x.cols());
  centers.row(0) = x.row(static_cast<long>(rng.index(n)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(static_cast<long>(i)) - centers.row(static_cast<long>(c - 1))).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
      while (d2[pick] <= 0.0) --pick;
    } else {
      pick = rng.index(n);
    }
    centers.row(static_cast<long>(c)) = x.row(static_cast<long>(pick));
  }
  return centers;
}

LloydRun lloyd(const Eigen::MatrixXd& x, Eigen::MatrixXd centers, std::size_t max_iterations) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  const long k = centers.rows();
  LloydRun run;
  run.labels.assign(n, 0);
  std::vector<std::size_t> previous;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    run.sse = assign(x, centers, run.labels);
    run.trace.push_back(run.sse);
    if (run.labels == previous) break;
    previous = run.labels;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<long>(run.labels[i])) += x.row(static_cast<long>(i));
      ++counts[run.labels[i]];
    }
    for (long c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its center.
      std::size_t worst = 0;
      double worst_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (x.row(static_cast<long>(i)) - centers.row(static_cast<long>(run.labels[i]))).squaredNorm();
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      centers.row(c) = x.row(static_cast<long>(worst));
    }
  }
  run.centers = centers;
  return run;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& x, std::size_t n_clusters, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iterations) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n_clusters == 0) throw ValidationError("kmeans: need at least one cluster");
  if (n < n_clusters) {
    throw ValidationError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(n_clusters) +
                          " clusters");
  }
  Rng rng(seed);
  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    auto run = lloyd(x, plus_plus_seed(x, n_clusters, rng), max_iterations);
    best.restart_sse.push_back(run.sse);
    if (run.sse < best.sse) {
      best.sse = run.sse;
      best.labels = run.labels;
      best.centers = run.centers;
      best.sse_trace = run.trace;
    }
  }
  // Renumber by first appearance.
  std::vector<std::size_t> remap(n_clusters, n_clusters);
  std::size_t next = 0;
  for (auto& l : best.labels) {
    if (remap[l] == n_clusters) remap[l] = next++;
  }
  for (std::size_t c = 0; c < n_clusters; ++c) {
    if (remap[c] == n_clusters) remap[c] = next++;
  }
  Eigen::MatrixXd centers(best.centers.rows(), best.centers.cols());
  for (std::size_t c = 0; c < n_clusters; ++c) centers.row(static_cast<long>(remap[c])) = best.centers.row(static_cast<long>(c));
  best.centers = centers;
  for (auto& l : best.labels) l = remap[l];
  return best;
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("adjusted_rand_index: label vectors must match");
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : joint) index += c2(v);
  for (const auto& [key, v] : ra) sa += c2(v);
  for (const auto& [key, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

ClusterAssignment assign_clusters(std::span<const FireFeature> features, const Eigen::MatrixXd& points,
                                  std::size_t n_clusters, std::uint64_t seed) {
  if (static_cast<std::size_t>(points.rows()) != features.size()) {
    throw ValidationError("assign_clusters: points and features differ in length");
  }
  const auto km = kmeans(points, n_clusters, seed);
  ClusterAssignment out{n_clusters, km.labels, std::vector<double>(n_clusters, 0.0)};
  std::vector<std::size_t> counts(n_clusters, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    out.mean_abs_k[km.labels[i]] += std::abs(features[i].k_hat);
    ++counts[km.labels[i]];
  }
  for (std::size_t c = 0; c < n_clusters; ++c) {
    if (counts[c] > 0) out.mean_abs_k[c] /= static_cast<double>(counts[c]);
  }
  return out;
}

GeoExport export_geo(std::span<const ClusterAssignment> assignments, std::span<const FireFeature> features) {
  for (const auto& a : assignments) {
    if (a.labels.size() != features.size()) throw ValidationError("export_geo: label count differs from fire count");
  }
  GeoExport out;
  std::ostringstream csv;
  csv << "fire_id,lon,lat,k_hat,L_hat,p";
  for (const auto& a : assignments) csv << ",label_k" << a.n_clusters;
  csv << '\n';
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    csv << f.fire_id << ',' << text::num(f.lon) << ',' << text::num(f.lat) << ',' << text::num(f.k_hat) << ','
        << text::num(f.L_hat) << ',' << text::num(f.p);
    for (const auto& a : assignments) csv << ',' << a.labels[i];
    csv << '\n';
  }
  out.csv = csv.str();

  constexpr double kWidth = 640, kHeight = 560, kMargin = 60, kMaxRadius = 14;
  double lon_lo = -124.5, lon_hi = -114.0, lat_lo = 32.5, lat_hi = 42.0;
  for (const auto& f : features) {
    lon_lo = std::min(lon_lo, f.lon);
    lon_hi = std::max(lon_hi, f.lon);
    lat_lo = std::min(lat_lo, f.lat);
    lat_hi = std::max(lat_hi, f.lat);
  }
  const double scale = std::min((kWidth - 2 * kMargin) / (lon_hi - lon_lo), (kHeight - 2 * kMargin) / (lat_hi - lat_lo));
  for (const auto& a : assignments) {
    SvgWriter svg(kWidth, kHeight);
    const double x0 = kMargin, y1 = kHeight - kMargin;
    svg.line(x0, y1, x0 + (lon_hi - lon_lo) * scale, y1, "black");
    svg.line(x0, y1, x0, y1 - (lat_hi - lat_lo) * scale, "black");
    for (int lon = static_cast<int>(std::ceil(lon_lo)); lon <= static_cast<int>(std::floor(lon_hi)); lon += 2) {
      svg.text(x0 + (lon - lon_lo) * scale, y1 + 16, std::to_string(lon), 10, "middle");
    }
    for (int lat = static_cast<int>(std::ceil(lat_lo)); lat <= static_cast<int>(std::floor(lat_hi)); lat += 2) {
      svg.text(x0 - 6, y1 - (lat - lat_lo) * scale + 3, std::to_string(lat), 10, "end");
    }
    svg.text(kWidth / 2, kHeight - 16, "longitude", 12, "middle");
    svg.text(14, kHeight / 2, "latitude", 12, "middle");
    svg.text(kWidth / 2, 24, std::to_string(a.n_clusters) + " clusters, marker size = cluster mean |k|", 14, "middle");
    const double max_k = *std::max_element(a.mean_abs_k.begin(), a.mean_abs_k.end());
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto label = a.labels[i];
      const double r = max_k > 0.0 ? kMaxRadius * a.mean_abs_k[label] / max_k : kMaxRadius / 2;
      svg.circle(x0 + (features[i].lon - lon_lo) * scale, y1 - (features[i].lat - lat_lo) * scale, r,
                 palette_color(label), 0.7);
    }
    out.svg[a.n_clusters] = svg.str();
  }
  return out;
}

std::vector<ClusterRow> parse_clusters_csv(const std::string& csv) {
  const auto rows = text::lines(csv);
  if (rows.empty()) throw FormatError("clusters: empty file");
  const auto header = text::split(rows[0]);
  if (header.size() < 6 || header[0] != "fire_id") throw FormatError("clusters: unexpected header");
  std::vector<ClusterRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = text::split(rows[i]);
    if (f.size() != header.size()) throw FormatError("clusters line " + std::to_string(i + 1) + ": field count");
    ClusterRow row{f[0], {}};
    for (std::size_t j = 6; j < f.size(); ++j) row.labels.push_back(static_cast<std::size_t>(text::to_int(f[j], "label")));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace regrowth
