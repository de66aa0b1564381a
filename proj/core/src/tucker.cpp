#include "regrowth/tucker.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "regrowth/error.hpp"
#include "regrowth/rng.hpp"

namespace regrowth {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t product(const Dims3& d) { return d[0] * d[1] * d[2]; }

// Mode-m unfolding: rows index mode m, columns the remaining modes in order.
RowMatrix unfold(std::span<const double> t, const Dims3& d, std::size_t mode) {
  RowMatrix out(static_cast<long>(d[mode]), static_cast<long>(product(d) / d[mode]));
  for (std::size_t i = 0; i < d[0]; ++i) {
    for (std::size_t j = 0; j < d[1]; ++j) {
      for (std::size_t k = 0; k < d[2]; ++k) {
        const double v = t[(i * d[1] + j) * d[2] + k];
        switch (mode) {
          case 0: out(static_cast<long>(i), static_cast<long>(j * d[2] + k)) = v; break;
          case 1: out(static_cast<long>(j), static_cast<long>(i * d[2] + k)) = v; break;
          default: out(static_cast<long>(k), static_cast<long>(i * d[1] + j)) = v; break;
        }
      }
    }
  }
  return out;
}

double squared_norm(const TuckerWeights& w) {
  double s = 0.0;
  for (const auto& f : w.factors) s += f.squaredNorm();
  for (double g : w.core) s += g * g;
  return s;
}

// Design row for the factor block of `mode`: yhat - b = <U_mode, Z>.
std::vector<double> factor_features(const TuckerWeights& w, std::span<const double> x, std::size_t mode) {
  std::vector<double> y(x.begin(), x.end());
  Dims3 d = w.dims;
  for (std::size_t m = 0; m < 3; ++m) {
    if (m == mode) continue;
    y = mode_product(y, d, m, w.factors[m], &d);
  }
  const RowMatrix Y = unfold(y, d, mode);
  const RowMatrix G = unfold(w.core, w.ranks, mode);
  const RowMatrix Z = Y * G.transpose();  // d_mode x r_mode
  return std::vector<double>(Z.data(), Z.data() + Z.size());
}

std::vector<double> core_features(const TuckerWeights& w, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  Dims3 d = w.dims;
  for (std::size_t m = 0; m < 3; ++m) y = mode_product(y, d, m, w.factors[m], &d);
  return y;
}

// argmin ||target - A beta||^2 + lambda ||beta_penalised||^2.
Eigen::VectorXd ridge_solve(const RowMatrix& A, const Eigen::VectorXd& target, double lambda,
                            const std::vector<bool>& penalised, const std::string& block, std::size_t sweep) {
  Eigen::MatrixXd normal = A.transpose() * A;
  for (long i = 0; i < normal.rows(); ++i) {
    if (penalised[static_cast<std::size_t>(i)]) normal(i, i) += lambda;
  }
  const Eigen::VectorXd rhs = A.transpose() * target;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  Eigen::VectorXd beta;
  if (ldlt.info() == Eigen::Success) beta = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !beta.allFinite()) {
    std::ostringstream msg;
    msg << "tucker_fit: ill-conditioned " << block << " block at sweep " << sweep << " (increase lambda)";
    throw NumericalError(msg.str());
  }
  return beta;
}

}  // namespace

std::vector<double> mode_product(std::span<const double> tensor, const Dims3& dims, std::size_t mode,
                                 const Eigen::MatrixXd& u, Dims3* out_dims) {
  if (static_cast<std::size_t>(u.rows()) != dims[mode]) throw ValidationError("mode_product: factor rows mismatch");
  std::size_t pre = 1, post = 1;
  for (std::size_t m = 0; m < mode; ++m) pre *= dims[m];
  for (std::size_t m = mode + 1; m < 3; ++m) post *= dims[m];
  const std::size_t d = dims[mode];
  const std::size_t r = static_cast<std::size_t>(u.cols());
  std::vector<double> out(pre * r * post);
  for (std::size_t p = 0; p < pre; ++p) {
    Eigen::Map<const RowMatrix> in(tensor.data() + p * d * post, static_cast<long>(d), static_cast<long>(post));
    Eigen::Map<RowMatrix> o(out.data() + p * r * post, static_cast<long>(r), static_cast<long>(post));
    o.noalias() = u.transpose() * in;
  }
  if (out_dims != nullptr) {
    *out_dims = dims;
    (*out_dims)[mode] = r;
  }
  return out;
}

std::vector<double> TuckerWeights::reconstruct() const {
  std::vector<double> w = core;
  Dims3 d = ranks;
  for (std::size_t m = 0; m < 3; ++m) w = mode_product(w, d, m, factors[m].transpose(), &d);
  return w;
}

double tucker_predict(const TuckerWeights& w, std::span<const double> x) {
  if (x.size() != product(w.dims)) {
    throw ValidationError("tucker_predict: input has " + std::to_string(x.size()) + " values, expected " +
                          std::to_string(product(w.dims)));
  }
  const auto y = core_features(w, x);
  double s = w.bias;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w.core[i];
  return s;
}

double tucker_objective(const TuckerWeights& w, std::span<const TuckerSample> samples, double lambda) {
  double rss = 0.0;
  for (const auto& s : samples) {
    const double r = s.y - tucker_predict(w, s.x);
    rss += r * r;
  }
  return rss + lambda * squared_norm(w);
}

namespace {

TuckerWeights spectral_start(std::span<const double> moment, const Dims3& dims, const Dims3& ranks, double scale) {
  TuckerWeights w;
  w.dims = dims;
  w.ranks = ranks;
  for (std::size_t m = 0; m < 3; ++m) {
    const RowMatrix u = unfold(moment, dims, m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(u * u.transpose());
    // Eigenvalues ascend; take the trailing columns, largest first.
    w.factors[m] = eig.eigenvectors().rightCols(static_cast<long>(ranks[m])).rowwise().reverse();
  }
  const auto [r1, r2, r3] = ranks;
  w.core.assign(product(ranks), 0.0);
  for (std::size_t i = 0; i < dims[0]; ++i)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t k = 0; k < dims[2]; ++k) {
        const double v = moment[(i * dims[1] + j) * dims[2] + k] * scale;
        for (std::size_t a = 0; a < r1; ++a)
          for (std::size_t b = 0; b < r2; ++b) {
            const double ab = v * w.factors[0](static_cast<long>(i), static_cast<long>(a)) *
                              w.factors[1](static_cast<long>(j), static_cast<long>(b));
            for (std::size_t c = 0; c < r3; ++c)
              w.core[(a * r2 + b) * r3 + c] += ab * w.factors[2](static_cast<long>(k), static_cast<long>(c));
          }
      }
  return w;
}

TuckerWeights random_start(const Dims3& dims, const Dims3& ranks, Rng& rng) {
  TuckerWeights w;
  w.dims = dims;
  w.ranks = ranks;
  for (std::size_t m = 0; m < 3; ++m) {
    w.factors[m].resize(static_cast<long>(dims[m]), static_cast<long>(ranks[m]));
    for (long i = 0; i < w.factors[m].size(); ++i) w.factors[m].data()[i] = rng.normal();
  }
  w.core.resize(product(ranks));
  for (auto& g : w.core) g = rng.normal();
  return w;
}

TuckerFit run_als(TuckerWeights w, std::span<const TuckerSample> samples, const TuckerConfig& config) {
  const Dims3& dims = w.dims;
  TuckerFit fit;
  const long n = static_cast<long>(samples.size());
  Eigen::VectorXd y(n);
  for (long i = 0; i < n; ++i) y(i) = samples[static_cast<std::size_t>(i)].y;

  fit.objective.push_back(tucker_objective(w, samples, config.lambda));
  static const char* kBlockNames[] = {"U1", "U2", "U3"};
  for (std::size_t sweep = 1; sweep <= config.max_sweeps; ++sweep) {
    for (std::size_t m = 0; m < 3; ++m) {
      const std::size_t p = dims[m] * config.ranks[m];
      RowMatrix A(n, static_cast<long>(p));
      for (long i = 0; i < n; ++i) {
        const auto z = factor_features(w, samples[static_cast<std::size_t>(i)].x, m);
        A.row(i) = Eigen::Map<const Eigen::RowVectorXd>(z.data(), static_cast<long>(p));
      }
      const Eigen::VectorXd beta =
          ridge_solve(A, y.array() - w.bias, config.lambda, std::vector<bool>(p, true), kBlockNames[m], sweep);
      for (std::size_t i = 0; i < dims[m]; ++i) {
        for (std::size_t a = 0; a < config.ranks[m]; ++a) {
          w.factors[m](static_cast<long>(i), static_cast<long>(a)) = beta(static_cast<long>(i * config.ranks[m] + a));
        }
      }
    }
    const std::size_t p = w.core.size();
    RowMatrix A(n, static_cast<long>(p + 1));
    for (long i = 0; i < n; ++i) {
      const auto z = core_features(w, samples[static_cast<std::size_t>(i)].x);
      A.row(i).head(static_cast<long>(p)) = Eigen::Map<const Eigen::RowVectorXd>(z.data(), static_cast<long>(p));
      A(i, static_cast<long>(p)) = 1.0;
    }
    std::vector<bool> penalised(p + 1, true);
    penalised[p] = false;
    const Eigen::VectorXd beta = ridge_solve(A, y, config.lambda, penalised, "core", sweep);
    for (std::size_t i = 0; i < p; ++i) w.core[i] = beta(static_cast<long>(i));
    w.bias = beta(static_cast<long>(p));

    const double previous = fit.objective.back();
    const double current = tucker_objective(w, samples, config.lambda);
    fit.objective.push_back(current);
    if (std::abs(previous - current) <= config.tolerance * std::max(previous, 1e-300)) {
      fit.converged = true;
      break;
    }
  }
  fit.weights = std::move(w);
  return fit;
}

}  // namespace

TuckerFit tucker_fit(std::span<const TuckerSample> samples, const Dims3& dims, const TuckerConfig& config) {
  if (samples.size() < 2) throw ValidationError("tucker_fit: need at least 2 samples, got " + std::to_string(samples.size()));
  if (config.lambda < 0.0) throw ValidationError("tucker_fit: lambda must be non-negative");
  for (std::size_t m = 0; m < 3; ++m) {
    if (config.ranks[m] < 1 || config.ranks[m] > dims[m]) {
      throw ValidationError("tucker_fit: rank " + std::to_string(config.ranks[m]) + " out of range for mode " +
                            std::to_string(m + 1) + " of extent " + std::to_string(dims[m]));
    }
  }
  for (const auto& s : samples) {
    if (s.x.size() != product(dims)) throw ValidationError("tucker_fit: sample tensor shape mismatch");
  }

  double mean = 0.0;
  for (const auto& s : samples) mean += s.y;
  mean /= static_cast<double>(samples.size());

  // Response-weighted mean tensor; its truncated HOSVD seeds the first start.
  std::vector<double> moment(product(dims), 0.0);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < moment.size(); ++i) moment[i] += (s.y - mean) * s.x[i];
  }
  double moment_norm = 0.0;
  for (double v : moment) moment_norm += v * v;

  Rng rng(config.seed);
  TuckerFit best;
  for (std::size_t r = 0; r < std::max<std::size_t>(config.restarts, 1); ++r) {
    TuckerWeights w = (r == 0 && moment_norm > 0.0 && std::isfinite(moment_norm))
                          ? spectral_start(moment, dims, config.ranks, 1.0 / static_cast<double>(samples.size()))
                          : random_start(dims, config.ranks, rng);
    w.bias = mean;
    auto fit = run_als(std::move(w), samples, config);
    if (best.objective.empty() || fit.objective.back() < best.objective.back()) best = std::move(fit);
  }
  return best;
}

void save_tucker(Checkpoint& ckp, const std::string& prefix, const TuckerWeights& w) {
  for (std::size_t m = 0; m < 3; ++m) {
    const RowMatrix f = w.factors[m];
    const std::size_t shape[] = {w.dims[m], w.ranks[m]};
    ckp.put<double>(prefix + "/U" + std::to_string(m + 1), shape, std::span<const double>(f.data(), f.size()));
  }
  ckp.put<double>(prefix + "/core", w.ranks, w.core);
  ckp.put_scalar(prefix + "/bias", w.bias);
}

TuckerWeights load_tucker(const Checkpoint& ckp, const std::string& prefix) {
  TuckerWeights w;
  const auto& core = ckp.get(prefix + "/core");
  if (core.shape.size() != 3) throw FormatError("checkpoint: " + prefix + "/core must be rank 3");
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& f = ckp.get(prefix + "/U" + std::to_string(m + 1));
    if (f.shape.size() != 2 || f.shape[1] != core.shape[m]) {
      throw FormatError("checkpoint: " + prefix + "/U" + std::to_string(m + 1) + " does not match the core");
    }
    w.dims[m] = f.shape[0];
    w.ranks[m] = f.shape[1];
    w.factors[m].resize(static_cast<long>(f.shape[0]), static_cast<long>(f.shape[1]));
    for (std::size_t i = 0; i < f.shape[0]; ++i) {
      for (std::size_t a = 0; a < f.shape[1]; ++a) {
        w.factors[m](static_cast<long>(i), static_cast<long>(a)) = f.values[i * f.shape[1] + a];
      }
    }
  }
  w.core.assign(core.values.begin(), core.values.end());
  w.bias = ckp.get_scalar(prefix + "/bias");
  return w;
}

FirePrediction predict_fire(const TuckerWeights& tucker_k, const TuckerWeights& tucker_L,
                            std::span<const SubgridSeries> subgrids) {
  if (subgrids.empty()) throw ValidationError("predict_fire: no qualifying subgrid (burn fraction >= 0.5)");
  FirePrediction out;
  double total = 0.0;
  for (const auto& s : subgrids) {
    const double k = tucker_predict(tucker_k, s.ndvi);
    const double L = tucker_predict(tucker_L, s.ndvi);
    out.subgrid_k.push_back(k);
    out.subgrid_L.push_back(L);
    out.k_hat += s.weight * k;
    out.L_hat += s.weight * L;
    total += s.weight;
  }
  if (!(total > 0.0)) throw ValidationError("predict_fire: subgrid weights sum to zero");
  out.k_hat /= total;
  out.L_hat /= total;
  return out;
}

FirePrediction convlstmtr_predict(const ConvLSTMModel<float>& model, const TuckerWeights& tucker_k,
                                  const TuckerWeights& tucker_L, std::span<const SubgridObservation> subgrids,
                                  ExogenousPolicy policy, std::size_t height, std::size_t width,
                                  std::size_t horizon) {
  if (subgrids.empty()) throw ValidationError("convlstmtr_predict: no qualifying subgrid (burn fraction >= 0.5)");
  const std::size_t B = subgrids.size();
  const std::size_t n_obs = subgrids[0].observed.size();
  const std::size_t plane = height * width;
  const std::size_t C = sample_channel::kCount;
  const bool with_reference = !subgrids[0].evi_reference.empty();

  // Interleave subgrids into batched frames.
  auto batched = [&](auto member, std::size_t count, std::size_t channels) {
    std::vector<Frame> frames(count, Frame(B * plane * channels));
    for (std::size_t b = 0; b < B; ++b) {
      const auto& src = subgrids[b].*member;
      if (src.size() < count) throw ValidationError("convlstmtr_predict: subgrids disagree on frame counts");
      for (std::size_t t = 0; t < count; ++t) {
        if (src[t].size() != plane * channels) throw ValidationError("convlstmtr_predict: frame size mismatch");
        std::copy(src[t].begin(), src[t].end(), frames[t].begin() + static_cast<std::ptrdiff_t>(b * plane * channels));
      }
    }
    return frames;
  };

  RolloutContext ctx;
  ctx.batch = B;
  ctx.height = height;
  ctx.width = width;
  ctx.horizon = horizon;
  ctx.policy = policy;
  const auto observed = batched(&SubgridObservation::observed, n_obs, C);
  if (with_reference) ctx.evi_reference = batched(&SubgridObservation::evi_reference, horizon, 1);
  if (policy == ExogenousPolicy::kActual) {
    ctx.actual_future = batched(&SubgridObservation::actual_future, horizon - 1, C);
  }
  const auto forecast = rollout_forecast(model, observed, ctx);

  std::vector<SubgridSeries> series(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& s = series[b];
    s.weight = subgrids[b].weight;
    s.ndvi.reserve((n_obs + horizon) * plane);
    for (const auto& f : forecast.observed) s.ndvi.insert(s.ndvi.end(), f.begin() + b * plane, f.begin() + (b + 1) * plane);
    for (const auto& f : forecast.predicted) s.ndvi.insert(s.ndvi.end(), f.begin() + b * plane, f.begin() + (b + 1) * plane);
  }
  return predict_fire(tucker_k, tucker_L, series);
}

}  // namespace regrowth
