// Acceptance runner. Usage: regrowth_acceptance [criterion ...] [--work DIR]
// Prints one PASS/FAIL line per criterion; exits non-zero if any failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regrowth/config.hpp"
#include "regrowth/convlstm.hpp"
#include "regrowth/embed_cluster.hpp"
#include "regrowth/logistic.hpp"
#include "regrowth/pipeline.hpp"
#include "regrowth/preprocess.hpp"
#include "regrowth/rng.hpp"
#include "regrowth/tucker.hpp"

using namespace regrowth;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path g_work = fs::temp_directory_path() / "regrowth_acceptance";

fs::path fresh_dir(const std::string& name) {
  const auto dir = g_work / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// --- 1 ----------------------------------------------------------------------

Verdict gradient_check() {
  Rng rng(2024);
  ConvLSTMModel<double> model(2);
  model.initialize(17);
  nn::Tensor<double> x({2, 6, 8, 8, 2}), target({2, 6, 8, 8, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform(-1.0, 1.0);
  auto loss = [&] { return nn::mae_loss(model.forward(x, nn::BatchNormMode::kTrain), target).value; };

  model.zero_grad();
  const auto l = nn::mae_loss(model.forward(x, nn::BatchNormMode::kTrain), target);
  model.backward(l.grad);
  auto params = model.params();
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();

  const double h = 1e-6;
  double worst = 0.0;
  std::string worst_name;
  for (int s = 0; s < 50; ++s) {
    // Sample uniformly over all scalar parameters.
    std::size_t flat = rng.index(total);
    nn::Param<double>* p = nullptr;
    for (auto* q : params) {
      if (flat < q->value.size()) {
        p = q;
        break;
      }
      flat -= q->value.size();
    }
    const double saved = p->value[flat];
    p->value[flat] = saved + h;
    const double up = loss();
    p->value[flat] = saved - h;
    const double down = loss();
    p->value[flat] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = p->grad[flat];
    const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    if (rel > worst) {
      worst = rel;
      worst_name = p->name + "[" + std::to_string(flat) + "]";
    }
  }
  return {worst < 1e-4, "max relative error over 50 parameters " + fmt("%.3g", worst) + " at " + worst_name +
                            " (limit 1e-4)"};
}

// --- 2 ----------------------------------------------------------------------

std::vector<double> logistic_series(double L, double k, double t0) {
  std::vector<double> s(25);
  for (std::size_t t = 0; t < 25; ++t) s[t] = L / (1.0 + std::exp(-k * (double(t) - t0)));
  return s;
}

Verdict logistic_oracle() {
  Rng rng(99);
  double worst = 0.0;
  std::vector<double> noisy;
  int combos = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      for (int m = 0; m < 4; ++m) {
        const double k = -1.2 + 1.9 * i / 4.0, L = 0.3 + 1.7 * j / 4.0, t0 = 2.0 + 18.0 * m / 3.0;
        auto s = logistic_series(L, k, t0);
        worst = std::max(worst, std::abs(fit_pixel(s).k - k));
        for (auto& v : s) v *= 1.0 + 0.05 * rng.normal();
        noisy.push_back(std::abs(fit_pixel(s).k - k));
        ++combos;
      }
  const double med = median(noisy);
  return {combos == 100 && worst < 1e-4 && med <= 0.05,
          std::to_string(combos) + " combinations; noiseless max |dk| " + fmt("%.3g", worst) +
              " (limit 1e-4); sigma 0.05 median |dk| " + fmt("%.4f", med) + " (limit 0.05)"};
}

// --- 3 ----------------------------------------------------------------------

Verdict tucker_recovery() {
  Rng rng(31);
  const Dims3 dims{25, 10, 10};
  TuckerWeights truth;
  truth.dims = dims;
  truth.ranks = {2, 2, 2};
  for (std::size_t m = 0; m < 3; ++m) {
    truth.factors[m].resize(long(dims[m]), 2);
    for (long i = 0; i < truth.factors[m].size(); ++i) truth.factors[m].data()[i] = rng.normal();
  }
  truth.core.resize(8);
  for (auto& g : truth.core) g = rng.normal();
  truth.bias = rng.normal();
  auto sample = [&] {
    TuckerSample s{std::vector<double>(dims[0] * dims[1] * dims[2]), 0.0};
    for (auto& v : s.x) v = rng.normal();
    s.y = tucker_predict(truth, s.x);
    return s;
  };
  std::vector<TuckerSample> train, test;
  for (int i = 0; i < 200; ++i) train.push_back(sample());
  for (int i = 0; i < 100; ++i) test.push_back(sample());
  TuckerConfig cfg;
  cfg.ranks = {2, 2, 2};
  cfg.lambda = 1e-6;
  cfg.max_sweeps = 200;
  const auto fit = tucker_fit(train, dims, cfg);
  double mean = 0, ss_res = 0, ss_tot = 0;
  for (const auto& s : test) mean += s.y / double(test.size());
  for (const auto& s : test) {
    const double e = tucker_predict(fit.weights, s.x) - s.y;
    ss_res += e * e;
    ss_tot += (s.y - mean) * (s.y - mean);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  std::size_t increases = 0;
  for (std::size_t s = 1; s < fit.objective.size(); ++s)
    if (fit.objective[s] > fit.objective[s - 1] + 1e-12 * std::max(1.0, fit.objective[s - 1])) ++increases;
  return {r2 > 0.99 && increases == 0, "held-out R^2 " + fmt("%.6f", r2) + " (limit 0.99); objective increases " +
                                           std::to_string(increases) + " over " +
                                           std::to_string(fit.objective.size()) + " sweeps"};
}

// --- 4 ----------------------------------------------------------------------

RunConfig end_to_end_config(const fs::path& dir) {
  RunConfig c;
  c.catalog = dir / "catalog.csv";
  c.stack_dir = dir / "stacks";
  c.out_dir = dir / "out";
  c.seed = 7;
  c.synth.n_fires = 40;
  c.synth.sigma = 0.05;
  c.synth.dropout = 0.1;
  c.holdout_fires = 15;
  c.epochs = 100;
  c.train_min_burn = 0.5;
  return c;
}

std::map<std::string, double> read_summary(const fs::path& path) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  return out;
}

Verdict end_to_end_quantiles() {
  const auto cfg = end_to_end_config(fresh_dir("end_to_end"));
  Pipeline p(cfg);
  p.set_progress([](const std::string& m) { std::cerr << m << '\n'; });
  const auto t0 = std::chrono::steady_clock::now();
  for (Stage s : {Stage::kSynth, Stage::kPreprocess, Stage::kTrain, Stage::kForecast, Stage::kFitLogistic,
                  Stage::kTuckerFit, Stage::kPredictK, Stage::kEval})
    p.run(s);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  auto summary = read_summary(cfg.out_dir / "eval_summary.csv");
  const double p50 = summary["p50"], p75 = summary["p75"], p90 = summary["p90"];
  return {p50 <= 0.12 && p75 <= 0.24,
          std::to_string(static_cast<int>(summary["n_fires"])) + " held-out fires; P50 " + fmt("%.4f", p50) +
              " (limit 0.12), P75 " + fmt("%.4f", p75) + " (limit 0.24), P90 " + fmt("%.4f", p90) + "; runtime " +
              fmt("%.1f", minutes) + " min (target 60 min " + (minutes < 60 ? "met" : "not met") + ")"};
}

// --- 5 ----------------------------------------------------------------------

Verdict preprocess_identities() {
  Rng rng(5);
  RasterStack s(6, 20, 20, {"NDVI", "EVI"});
  for (auto& v : s.data()) v = static_cast<float>(rng.uniform(0.1, 0.9));
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.2 ? 1 : 0;
  const auto once = knn_impute(s);
  const bool idempotent = knn_impute(once).identical(once);

  RasterStack ref(12, 20, 20, {"NDVI"});
  for (auto& v : ref.data()) v = static_cast<float>(rng.uniform(0.2, 0.9));
  RasterStack post(25, 20, 20, {"NDVI"});
  const int start = 5;
  for (std::size_t t = 0; t < 25; ++t)
    for (std::size_t r = 0; r < 20; ++r)
      for (std::size_t c = 0; c < 20; ++c) post.at(t, r, c, 0) = ref.at((start + t) % 12, r, c, 0);
  const auto ratio = deseasonalize(post, ref, start);
  const bool ones = std::all_of(ratio.data().begin(), ratio.data().end(), [](float v) { return v == 1.0f; }) &&
                    ratio.missing_count() == 0;

  RasterStack big(3, 50, 50, {"NDVI", "FIREMASK"});
  for (auto& v : big.data()) v = static_cast<float>(rng.normal());
  for (auto& m : big.missing_mask()) m = rng.uniform() < 0.1 ? 1 : 0;
  const bool bijection = reassemble_subgrids(partition_subgrids(big, 10), 50, 50).identical(big);

  auto yn = [](bool b) { return b ? "exact" : "MISMATCH"; };
  return {idempotent && ones && bijection, std::string("imputation idempotence ") + yn(idempotent) +
                                               "; de-seasonalization all-ones " + yn(ones) +
                                               "; partition/reassemble " + yn(bijection)};
}

// --- 6 ----------------------------------------------------------------------

double imputation_rmse(std::size_t t_len) {
  RasterStack truth(t_len, 50, 50, {"NDVI"});
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t r = 0; r < 50; ++r)
      for (std::size_t c = 0; c < 50; ++c)
        truth.at(t, r, c, 0) = static_cast<float>(std::sin(r / 5.0) * std::cos(c / 5.0));
  auto s = truth;
  Rng rng(11);
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.2 ? 1 : 0;
  const auto out = knn_impute(s);
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.missing_mask()[i]) {
      const double d = out.data()[i] - truth.data()[i];
      se += d * d;
      ++n;
    }
  return std::sqrt(se / double(n));
}

Verdict imputation_accuracy() {
  const double rmse = imputation_rmse(1);
  const double rmse25 = imputation_rmse(25);
  return {rmse < 0.02, "50x50 sin(r/5)cos(c/5), 20% masked, k=8: RMSE " + fmt("%.5f", rmse) +
                           " (limit 0.02); same field repeated over 25 frames: " + fmt("%.5f", rmse25)};
}

// --- 7 ----------------------------------------------------------------------

Eigen::MatrixXd blobs(std::size_t n, std::size_t dim, double spread, double sd, std::uint64_t seed,
                      std::vector<std::size_t>& labels) {
  Rng rng(seed);
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(3, long(dim));
  for (long i = 0; i < centers.size(); ++i) centers.data()[i] = rng.uniform(-spread, spread);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(long(n), long(dim));
  labels.clear();
  for (std::size_t i = 0; i < n; ++i) {
    labels.push_back(i % 3);
    for (std::size_t d = 0; d < dim; ++d) x(long(i), long(d)) = centers(long(i % 3), long(d)) + sd * rng.normal();
  }
  return x;
}

Verdict clustering() {
  // Three unit-variance blobs on an equilateral triangle of side 10.
  Rng rng(3);
  const double cx[] = {0.0, 10.0, 5.0}, cy[] = {0.0, 0.0, 8.660254037844386};
  Eigen::MatrixXd x(150, 2);
  std::vector<std::size_t> truth;
  for (long i = 0; i < 150; ++i) {
    truth.push_back(std::size_t(i % 3));
    x(i, 0) = cx[i % 3] + rng.normal();
    x(i, 1) = cy[i % 3] + rng.normal();
  }
  const double ari = adjusted_rand_index(kmeans(x, 3, 7).labels, truth);
  std::vector<std::size_t> truth100;
  const auto y = blobs(100, 5, 5.0, 1.0, 4, truth100);
  const double trust = trustworthiness(y, umap_embed(y), 10);
  return {ari == 1.0 && trust >= 0.80, "k-means adjusted Rand " + fmt("%.4f", ari) +
                                           " (need 1.0); UMAP trustworthiness@10 " + fmt("%.4f", trust) +
                                           " (limit 0.80)"};
}

// --- 8 ----------------------------------------------------------------------

RunConfig small_config(const fs::path& dir) {
  RunConfig c;
  c.catalog = dir / "catalog.csv";
  c.stack_dir = dir / "stacks";
  c.out_dir = dir / "out";
  c.seed = 21;
  c.synth.n_fires = 12;
  c.synth.height = 20;
  c.synth.width = 20;
  c.holdout_fires = 3;
  c.epochs = 2;
  c.n_neighbors = 5;
  c.cluster_ks = {3, 5};
  c.tucker_r1 = 2;
  c.tucker_r2 = 2;
  c.tucker_r3 = 2;
  return c;
}

Verdict determinism() {
  std::vector<fs::path> outs;
  for (const char* name : {"det_a", "det_b"}) {
    const auto cfg = small_config(fresh_dir(name));
    Pipeline p(cfg);
    for (Stage s : kAllStages) p.run(s);
    outs.push_back(cfg.out_dir);
  }
  std::size_t files = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::recursive_directory_iterator(outs[0])) {
    if (e.path().extension() != ".csv") continue;
    const auto rel = fs::relative(e.path(), outs[0]);
    ++files;
    const auto other = outs[1] / rel;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  const bool k_same = fs::exists(outs[0] / "predictions.csv") &&
                      slurp(outs[0] / "predictions.csv") == slurp(outs[1] / "predictions.csv");
  return {files > 0 && differing == 0 && k_same,
          std::to_string(files) + " CSV files compared, " + std::to_string(differing) + " differ" +
              (first_diff.empty() ? "" : " (first: " + first_diff + ")") + "; k-hat " +
              (k_same ? "identical" : "DIFFERENT")};
}

struct Criterion {
  int id;
  const char* title;
  double limit_s;  // 0 when the runtime is not part of the verdict
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", 120, gradient_check},
      {2, "logistic refit oracle", 60, logistic_oracle},
      {3, "tucker planted recovery", 60, tucker_recovery},
      {4, "end-to-end synthetic quantiles", 0, end_to_end_quantiles},
      {5, "preprocessing identities", 0, preprocess_identities},
      {6, "imputation accuracy", 0, imputation_accuracy},
      {7, "clustering", 60, clustering},
      {8, "determinism", 0, determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      try {
        wanted.insert(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "usage: regrowth_acceptance [criterion ...] [--work DIR]\n";
        return 2;
      }
    }
  }
  bool ok = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = "runtime " + fmt("%.1f", secs) + " s";
    if (c.limit_s > 0) {
      timing += " (limit " + fmt("%.0f", c.limit_s) + " s)";
      if (secs >= c.limit_s) v.pass = false;
    }
    std::cout << "criterion " << c.id << " " << (v.pass ? "PASS" : "FAIL") << " [" << c.title << "] " << v.detail
              << "; " << timing << std::endl;
    ok = ok && v.pass;
  }
  return ok ? 0 : 1;
}
