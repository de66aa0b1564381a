#include "regrowth/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "regrowth/checkpoint.hpp"
#include "regrowth/convlstm.hpp"
#include "regrowth/embed_cluster.hpp"
#include "regrowth/error.hpp"
#include "regrowth/preprocess.hpp"
#include "regrowth/rng.hpp"
#include "regrowth/svg.hpp"
#include "regrowth/synth.hpp"
#include "regrowth/tucker.hpp"
#include "text.hpp"

namespace fs = std::filesystem;

namespace regrowth {

namespace {

constexpr std::array<std::string_view, 10> kStageNames = {
    "synth", "preprocess", "train", "forecast", "fit-logistic", "tucker-fit", "predict-k", "cluster", "eval", "report"};

const std::vector<std::string> kSampleChannels = {std::string(channel::kNdvi), std::string(channel::kEvi),
                                                  std::string(channel::kLst), std::string(channel::kFireMask),
                                                  std::string(channel::kPrecip)};

// Removes the lock file when the stage finishes, successfully or not.
class DirectoryLock {
 public:
  explicit DirectoryLock(fs::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      if (fs::exists(path_)) {
        throw IoError("output directory is locked by another stage (" + path_.string() +
                      "); remove the file if no stage is running");
      }
      throw IoError("cannot create lock file " + path_.string());
    }
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

struct SplitTable {
  std::map<std::string, std::string> role;  // train | val | holdout

  std::vector<std::string> with_role(std::string_view r) const {
    std::vector<std::string> out;
    for (const auto& [id, v] : role) {
      if (v == r) out.push_back(id);
    }
    return out;
  }
  std::vector<std::string> all() const {
    std::vector<std::string> out;
    for (const auto& [id, v] : role) out.push_back(id);
    return out;
  }
};

std::pair<std::size_t, std::size_t> parse_subgrid_key(const std::string& key) {
  const auto c = key.find('c');
  if (key.size() < 4 || key[0] != 'r' || c == std::string::npos) throw FormatError("bad subgrid key '" + key + "'");
  return {static_cast<std::size_t>(text::to_int(key.substr(1, c - 1), "subgrid row")),
          static_cast<std::size_t>(text::to_int(key.substr(c + 1), "subgrid col"))};
}

RasterStack as_sample_channels(const RasterStack& s) {
  if (s.channels() == kSampleChannels) return s;
  return s.select_channels(kSampleChannels);
}

// NDVI channel of `stack` in [t][r][c] order as doubles.
std::vector<double> ndvi_series(const RasterStack& stack) {
  const std::size_t ch = stack.channel(channel::kNdvi);
  std::vector<double> out;
  out.reserve(stack.t_len() * stack.frame_pixels());
  for (std::size_t t = 0; t < stack.t_len(); ++t) {
    for (std::size_t r = 0; r < stack.height(); ++r) {
      for (std::size_t c = 0; c < stack.width(); ++c) out.push_back(stack.at(t, r, c, ch));
    }
  }
  return out;
}

Frame frame_of(const RasterStack& s, std::size_t t) {
  const std::size_t n = s.frame_pixels() * s.channel_count();
  const auto data = s.data().subspan(t * n, n);
  return Frame(data.begin(), data.end());
}

Frame channel_frame(const RasterStack& s, std::size_t t, std::size_t ch) {
  Frame out(s.frame_pixels());
  for (std::size_t r = 0; r < s.height(); ++r) {
    for (std::size_t c = 0; c < s.width(); ++c) out[r * s.width() + c] = s.at(t, r, c, ch);
  }
  return out;
}

// Appends the per-subgrid frames into a [B][H][W][C] batch frame.
void append_frame(Frame& batch, const Frame& part) { batch.insert(batch.end(), part.begin(), part.end()); }

}  // namespace

std::string_view stage_name(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(std::string_view name) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    if (kStageNames[i] == name) return kAllStages[i];
  }
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

// --- evaluation ---------------------------------------------------------------

double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty set");
  if (q < 0.0 || q > 1.0) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

EvalReport eval_k_errors(std::span<const FireRecovery> predicted, std::span<const FireRecovery> baseline,
                         double bin_width, double max_error) {
  if (predicted.empty()) throw ValidationError("eval: no predictions to evaluate");
  if (!(bin_width > 0.0) || !(max_error > 0.0)) throw ValidationError("eval: histogram bins must be positive");
  EvalReport r;
  r.bin_width = bin_width;
  r.max_error = max_error;
  for (const auto& p : predicted) {
    const auto it = std::find_if(baseline.begin(), baseline.end(), [&](const FireRecovery& b) { return b.fire_id == p.fire_id; });
    if (it == baseline.end()) throw ValidationError("eval: fire " + p.fire_id + " has no logistic baseline");
    r.fire_ids.push_back(p.fire_id);
    r.k_hat.push_back(p.mean_k);
    r.k_fit.push_back(it->mean_k);
    r.errors.push_back(std::abs(p.mean_k - it->mean_k));
  }
  r.p50 = quantile_linear(r.errors, 0.50);
  r.p75 = quantile_linear(r.errors, 0.75);
  r.p90 = quantile_linear(r.errors, 0.90);
  const auto bins = static_cast<std::size_t>(std::llround(std::ceil(max_error / bin_width - 1e-9)));
  r.histogram.assign(bins, 0);
  for (double e : r.errors) {
    if (e >= max_error) {
      ++r.overflow;
      continue;
    }
    r.histogram[std::min(bins - 1, static_cast<std::size_t>(e / bin_width))] += 1;
  }
  return r;
}

std::string eval_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "fire_id,k_hat,k_fit,abs_error\n";
  for (std::size_t i = 0; i < r.fire_ids.size(); ++i) {
    out << r.fire_ids[i] << ',' << text::num(r.k_hat[i]) << ',' << text::num(r.k_fit[i]) << ','
        << text::num(r.errors[i]) << '\n';
  }
  return out.str();
}

std::string eval_summary_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "metric,value\n"
      << "n_fires," << r.errors.size() << '\n'
      << "p50," << text::num(r.p50) << '\n'
      << "p75," << text::num(r.p75) << '\n'
      << "p90," << text::num(r.p90) << '\n';
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    out << "bin_" << text::num(static_cast<double>(b) * r.bin_width) << ',' << r.histogram[b] << '\n';
  }
  out << "overflow," << r.overflow << '\n';
  return out.str();
}

std::string eval_svg(const EvalReport& r) {
  constexpr double kWidth = 640, kHeight = 420, kLeft = 60, kRight = 20, kTop = 50, kBottom = 60;
  SvgWriter svg(kWidth, kHeight);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const std::size_t peak = std::max<std::size_t>(1, *std::max_element(r.histogram.begin(), r.histogram.end()));
  const double x_scale = plot_w / r.max_error;
  const double y_scale = plot_h / static_cast<double>(peak);
  const double base = kTop + plot_h;

  svg.text(kWidth / 2, 28, "Absolute error of predicted k (held-out fires)", 15, "middle");
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    const double h = static_cast<double>(r.histogram[b]) * y_scale;
    svg.rect(kLeft + static_cast<double>(b) * r.bin_width * x_scale, base - h, r.bin_width * x_scale, h, "#4c72b0",
             "white");
  }
  svg.line(kLeft, base, kLeft + plot_w, base, "black");
  svg.line(kLeft, base, kLeft, kTop, "black");
  for (int i = 0; i <= 6; ++i) {
    const double v = r.max_error * i / 6.0;
    svg.text(kLeft + v * x_scale, base + 16, text::num(std::round(v * 100.0) / 100.0), 10, "middle");
  }
  for (std::size_t c = 0; c <= peak; c += std::max<std::size_t>(1, peak / 5)) {
    svg.text(kLeft - 6, base - static_cast<double>(c) * y_scale + 3, std::to_string(c), 10, "end");
  }
  static constexpr std::array<std::string_view, 3> kLabels = {"50%", "75%", "90%"};
  for (std::size_t i = 0; i < kErrorTargets.size(); ++i) {
    const double x = kLeft + kErrorTargets[i] * x_scale;
    svg.line(x, base, x, kTop, "#c44e52", 1.5, "6,4");
    svg.text(x + 3, kTop + 12 + 14.0 * static_cast<double>(i), std::string(kLabels[i]) + " target " +
             text::num(kErrorTargets[i]), 10);
  }
  svg.text(kWidth / 2, kHeight - 20, "|k_hat - k_fit|", 12, "middle");
  std::ostringstream q;
  q << "P50 " << text::num(std::round(r.p50 * 1000) / 1000) << "  P75 " << text::num(std::round(r.p75 * 1000) / 1000)
    << "  P90 " << text::num(std::round(r.p90 * 1000) / 1000) << "  (n=" << r.errors.size() << ")";
  svg.text(kLeft + plot_w, kTop - 6, q.str(), 11, "end");
  return svg.str();
}

// --- hashing / errors -----------------------------------------------------------

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_hex(std::string_view text) {
  return fnv1a_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const IoError*>(&error) != nullptr) return 2;
  return 1;
}

// --- pipeline -------------------------------------------------------------------

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) { config_.validate(); }

void Pipeline::note(const std::string& message) const {
  if (progress_) progress_(message);
}

void Pipeline::require(const fs::path& path, std::string_view stage) const {
  if (!fs::exists(path)) {
    throw ValidationError("missing " + path.string() + ": run " + std::string(stage) + " first");
  }
}

void Pipeline::record_input(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  inputs_.emplace_back(path.lexically_normal().string(), fnv1a_hex(bytes));
}

StageOutcome Pipeline::run(Stage stage) {
  fs::create_directories(config_.out_dir);
  DirectoryLock lock(artifact(".lock"));
  inputs_.clear();
  const auto start = std::chrono::steady_clock::now();
  switch (stage) {
    case Stage::kSynth: synth(); break;
    case Stage::kPreprocess: preprocess(); break;
    case Stage::kTrain: train(); break;
    case Stage::kForecast: forecast(); break;
    case Stage::kFitLogistic: fit_logistic(); break;
    case Stage::kTuckerFit: tucker_fit(); break;
    case Stage::kPredictK: predict_k(); break;
    case Stage::kCluster: cluster(); break;
    case Stage::kEval: eval(); break;
    case Stage::kReport: report(); break;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::sort(inputs_.begin(), inputs_.end());
  std::ostringstream line;
  line << stage_name(stage) << "\tinputs=";
  for (std::size_t i = 0; i < inputs_.size(); ++i) line << (i ? "," : "") << inputs_[i].first << ':' << inputs_[i].second;
  char dur[32];
  std::snprintf(dur, sizeof dur, "%.3f", seconds);
  line << "\tconfig=" << fnv1a_hex(config_.to_text()) << "\tduration_s=" << dur;
  std::ofstream log(artifact("run.log"), std::ios::app);
  if (!log) throw IoError("cannot append to " + artifact("run.log").string());
  log << line.str() << '\n';
  return {stage, seconds, line.str()};
}

void Pipeline::synth() {
  const auto out = synth_generate(config_.synth, config_.seed);
  if (config_.catalog.has_parent_path()) fs::create_directories(config_.catalog.parent_path());
  fs::create_directories(config_.stack_dir);
  write_catalog(out.catalog, config_.catalog);
  std::ostringstream truth;
  truth << "fire_id,burned_fraction,mean_burned_k\n";
  for (std::size_t i = 0; i < out.catalog.size(); ++i) {
    const auto& id = out.catalog[i].id;
    const auto& t = out.truth.fires[i];
    write_stack(out.stacks[i], config_.stack_dir / (id + ".rst"));
    write_stack(t.reference, config_.stack_dir / (id + ".ref.rst"));
    write_stack(truth_to_stack(t), config_.stack_dir / (id + ".truth.rst"));
    truth << id << ',' << text::num(t.burned_fraction()) << ',' << text::num(t.mean_burned_k()) << '\n';
  }
  write_text_file(artifact("synth_truth.csv"), truth.str());
  note("synth: wrote " + std::to_string(out.catalog.size()) + " fires");
}

void Pipeline::preprocess() {
  require(config_.catalog, "synth");
  record_input(config_.catalog);
  const auto catalog = read_catalog(config_.catalog);

  std::vector<std::string> ids;
  std::vector<RasterStack> processed;
  for (const auto& fire : catalog) {
    if (!meets_size_threshold(fire)) {
      note("preprocess: skipping " + fire.id + " (below the acreage threshold)");
      continue;
    }
    const auto raw_path = config_.stack_dir / (fire.id + ".rst");
    const auto ref_path = config_.stack_dir / (fire.id + ".ref.rst");
    require(raw_path, "synth");
    require(ref_path, "synth");
    record_input(raw_path);
    record_input(ref_path);
    processed.push_back(
        preprocess_fire(read_stack(raw_path), read_stack(ref_path), fire.month_index(), {config_.knn_k}));
    ids.push_back(fire.id);
  }

  std::vector<NamedStack> named;
  for (std::size_t i = 0; i < ids.size(); ++i) named.push_back({ids[i], &processed[i]});
  const auto verdicts =
      filter_erratic(named, {config_.erratic_max_step, config_.erratic_max_mean, config_.erratic_min_mean});
  write_text_file(artifact("erratic.tsv"), erratic_report(verdicts));

  fs::create_directories(artifact("preprocess"));
  std::vector<std::string> included;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!verdicts[i].included) continue;
    write_stack(processed[i], artifact("preprocess") / (ids[i] + ".rst"));
    included.push_back(ids[i]);
  }
  std::sort(included.begin(), included.end());
  if (included.size() <= config_.holdout_fires + 1) {
    throw ValidationError("preprocess: " + std::to_string(included.size()) + " fires pass the filter, need more than " +
                          std::to_string(config_.holdout_fires + 1) + " for the hold-out and train/val split");
  }
  std::vector<std::string> shuffled = included;
  Rng rng(config_.seed ^ 0x686f6c646f7574ULL);
  rng.shuffle(std::span(shuffled));
  std::vector<std::string> pool(shuffled.begin() + static_cast<std::ptrdiff_t>(config_.holdout_fires), shuffled.end());
  const auto split = split_fires(pool, config_.split_fraction, config_.seed);

  SplitTable table;
  for (std::size_t i = 0; i < config_.holdout_fires; ++i) table.role[shuffled[i]] = "holdout";
  for (const auto& id : split.train) table.role[id] = "train";
  for (const auto& id : split.val) table.role[id] = "val";
  std::ostringstream out;
  out << "fire_id,role\n";
  for (const auto& [id, role] : table.role) out << id << ',' << role << '\n';
  write_text_file(artifact("split.csv"), out.str());
  note("preprocess: " + std::to_string(included.size()) + " of " + std::to_string(ids.size()) + " fires kept; " +
       std::to_string(split.train.size()) + " train, " + std::to_string(split.val.size()) + " val, " +
       std::to_string(config_.holdout_fires) + " held out");
}

namespace {

SplitTable read_split(const fs::path& path) {
  SplitTable t;
  const auto rows = text::lines(read_text_file(path));
  if (rows.empty() || rows[0] != "fire_id,role") throw FormatError("split.csv: unexpected header");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = text::split(rows[i]);
    if (f.size() != 2) throw FormatError("split.csv line " + std::to_string(i + 1) + ": expected 2 fields");
    t.role[f[0]] = f[1];
  }
  return t;
}

}  // namespace

void Pipeline::train() {
  require(artifact("split.csv"), "preprocess");
  record_input(artifact("split.csv"));
  const auto split = read_split(artifact("split.csv"));

  const std::size_t tile = config_.tile;
  SampleTensor train_set(config_.synth.t_len, tile, tile, sample_channel::kCount);
  SampleTensor val_set(config_.synth.t_len, tile, tile, sample_channel::kCount);
  for (const auto& [id, role] : split.role) {
    if (role == "holdout") continue;
    const auto path = artifact("preprocess") / (id + ".rst");
    require(path, "preprocess");
    record_input(path);
    const auto stack = as_sample_channels(read_stack(path));
    for (const auto& sub : partition_subgrids(stack, tile)) {
      if (sub.burn_fraction < config_.train_min_burn) continue;
      (role == "train" ? train_set : val_set)
          .append(sub.stack, {id, sub.row_offset, sub.col_offset, sub.burn_fraction});
    }
  }
  note("train: " + std::to_string(train_set.samples()) + " train / " + std::to_string(val_set.samples()) +
       " val subgrids");

  ConvLSTMModel<float> model;
  model.initialize(config_.seed);
  nn::Adam<float> adam;
  TrainOptions options;
  options.epochs = config_.epochs;
  options.batch = config_.batch;
  options.schedule = {config_.lr0, config_.lr_decay, config_.lr_step};
  options.seed = config_.seed;
  options.on_epoch = [this](const EpochLog& e) {
    std::ostringstream msg;
    msg << "train: epoch " << e.epoch << " lr " << e.lr << " train_mae " << e.train_mae << " val_mae " << e.val_mae;
    note(msg.str());
  };
  const auto report = regrowth::train(model, adam, train_set, val_set, options);

  Checkpoint ckp;
  model.save(ckp);
  ckp.put_scalar("optimizer/step", static_cast<double>(adam.step_count()));
  ckp.put_scalar("train/best_epoch", static_cast<double>(report.best_epoch));
  ckp.put_scalar("train/best_val_mae", report.best_val_mae);
  write_checkpoint(ckp, artifact(config_.checkpoint.string()));
  write_text_file(artifact("training_log.csv"), training_log_csv(report.history));
}

void Pipeline::forecast() {
  require(artifact("split.csv"), "preprocess");
  const auto ckp_path = artifact(config_.checkpoint.string());
  require(ckp_path, "train");
  record_input(artifact("split.csv"));
  record_input(ckp_path);
  require(config_.catalog, "synth");
  record_input(config_.catalog);
  const auto split = read_split(artifact("split.csv"));
  const auto catalog = read_catalog(config_.catalog);
  ConvLSTMModel<float> model;
  model.load(read_checkpoint(ckp_path));
  const auto policy = parse_exogenous_policy(config_.exogenous_policy);

  const std::size_t n_obs = config_.observed_frames;
  fs::create_directories(artifact("forecast"));
  std::ostringstream mae;
  mae << "fire_id,frame,mae\n";
  for (const auto& id : split.all()) {
    const auto rec = std::find_if(catalog.begin(), catalog.end(), [&](const FireRecord& f) { return f.id == id; });
    if (rec == catalog.end()) throw ValidationError("forecast: fire " + id + " is not in the catalog");
    const auto path = artifact("preprocess") / (id + ".rst");
    const auto ref_path = config_.stack_dir / (id + ".ref.rst");
    require(path, "preprocess");
    record_input(path);
    record_input(ref_path);
    const auto stack = as_sample_channels(read_stack(path));
    const auto reference = read_stack(ref_path);
    const std::size_t T = stack.t_len();
    if (T <= n_obs) throw ValidationError("forecast: fire " + id + " has too few frames");
    const std::size_t horizon = T - n_obs;
    const int start = rec->month_index();

    std::vector<Subgrid> qualifying;
    for (auto& sub : partition_subgrids(stack, config_.tile)) {
      if (sub.burn_fraction >= config_.burn_threshold) qualifying.push_back(std::move(sub));
    }
    RasterStack out(T, stack.height(), stack.width(), {std::string(channel::kNdvi)});
    std::fill(out.missing_mask().begin(), out.missing_mask().end(), std::uint8_t{1});
    if (qualifying.empty()) {
      note("forecast: " + id + " has no subgrid with burn fraction >= " + text::num(config_.burn_threshold));
      write_stack(out, artifact("forecast") / (id + ".rst"));
      continue;
    }

    RolloutContext ctx;
    ctx.batch = qualifying.size();
    ctx.height = config_.tile;
    ctx.width = config_.tile;
    ctx.horizon = horizon;
    ctx.min_observed = n_obs;
    ctx.policy = policy;
    std::vector<Frame> observed(n_obs);
    ctx.evi_reference.assign(horizon, {});
    ctx.actual_ndvi.assign(horizon, {});
    if (policy == ExogenousPolicy::kActual) ctx.actual_future.assign(horizon - 1, {});
    const std::size_t ndvi = stack.channel(channel::kNdvi);
    for (const auto& sub : qualifying) {
      for (std::size_t t = 0; t < n_obs; ++t) append_frame(observed[t], frame_of(sub.stack, t));
      const auto ref = reference.window(sub.row_offset, sub.col_offset, config_.tile, config_.tile);
      for (std::size_t k = 0; k < horizon; ++k) {
        const std::size_t t = n_obs + k;
        const auto month = static_cast<std::size_t>((start + static_cast<int>(t)) % 12);
        append_frame(ctx.evi_reference[k], channel_frame(ref, month, 0));
        append_frame(ctx.actual_ndvi[k], channel_frame(sub.stack, t, ndvi));
        if (policy == ExogenousPolicy::kActual && k + 1 < horizon) append_frame(ctx.actual_future[k], frame_of(sub.stack, t));
      }
    }
    const auto result = rollout_forecast(model, observed, ctx);

    const std::size_t plane = config_.tile * config_.tile;
    for (std::size_t b = 0; b < qualifying.size(); ++b) {
      const auto& sub = qualifying[b];
      for (std::size_t t = 0; t < T; ++t) {
        const Frame& src = t < n_obs ? result.observed[t] : result.predicted[t - n_obs];
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t r = sub.row_offset + p / config_.tile;
          const std::size_t c = sub.col_offset + p % config_.tile;
          out.at(t, r, c, 0) = src[b * plane + p];
          out.set_missing(t, r, c, 0, false);
        }
      }
    }
    write_stack(out, artifact("forecast") / (id + ".rst"));
    for (std::size_t k = 0; k < result.frame_mae.size(); ++k) {
      mae << id << ',' << (n_obs + k) << ',' << text::num(result.frame_mae[k]) << '\n';
    }
  }
  write_text_file(artifact("forecast_mae.csv"), mae.str());
}

void Pipeline::fit_logistic() {
  require(artifact("split.csv"), "preprocess");
  record_input(artifact("split.csv"));
  const auto split = read_split(artifact("split.csv"));
  std::string grids_csv = "fire_id,subgrid,mean_k,mean_L,n_pixels,flags\n";
  std::vector<FireRecovery> recoveries;
  for (const auto& id : split.all()) {
    const auto path = artifact("preprocess") / (id + ".rst");
    require(path, "preprocess");
    record_input(path);
    const auto stack = read_stack(path);
    std::vector<GridFit> fits;
    for (const auto& sub : partition_subgrids(stack, config_.tile)) {
      auto fit = fit_grid(sub.stack, burned_pixels(sub.stack), config_.burn_threshold);
      if (!fit) continue;
      fit->row_offset = sub.row_offset;
      fit->col_offset = sub.col_offset;
      fits.push_back(std::move(*fit));
    }
    grids_csv += grid_fits_csv(id, fits, false);
    try {
      recoveries.push_back(aggregate_fire(id, fits));
    } catch (const ValidationError& e) {
      note(std::string("fit-logistic: ") + e.what());
    }
  }
  write_text_file(artifact("logistic_subgrids.csv"), grids_csv);
  write_text_file(artifact("recoveries.csv"), recoveries_csv(recoveries));
}

void Pipeline::tucker_fit() {
  require(artifact("split.csv"), "preprocess");
  require(artifact("logistic_subgrids.csv"), "fit-logistic");
  record_input(artifact("split.csv"));
  record_input(artifact("logistic_subgrids.csv"));
  const auto split = read_split(artifact("split.csv"));
  const auto rows = text::lines(read_text_file(artifact("logistic_subgrids.csv")));

  std::map<std::string, RasterStack> stacks;
  std::vector<TuckerSample> k_samples, L_samples;
  Dims3 dims{};
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = text::split(rows[i]);
    if (f.size() != 6) throw FormatError("logistic_subgrids.csv line " + std::to_string(i + 1) + ": expected 6 fields");
    const auto role = split.role.find(f[0]);
    if (role == split.role.end() || role->second == "holdout") continue;
    if (text::to_int(f[4], "n_pixels") == 0) continue;
    if (!stacks.count(f[0])) {
      const auto path = artifact("preprocess") / (f[0] + ".rst");
      record_input(path);
      stacks.emplace(f[0], read_stack(path));
    }
    const auto [r, c] = parse_subgrid_key(f[1]);
    const auto window = stacks.at(f[0]).window(r, c, config_.tile, config_.tile);
    dims = {window.t_len(), window.height(), window.width()};
    auto x = ndvi_series(window);
    k_samples.push_back({x, text::to_double(f[2], "mean_k")});
    L_samples.push_back({std::move(x), text::to_double(f[3], "mean_L")});
  }
  if (k_samples.size() < 2) throw ValidationError("tucker-fit: fewer than 2 qualifying training subgrids");

  TuckerConfig cfg;
  cfg.ranks = {config_.tucker_r1, config_.tucker_r2, config_.tucker_r3};
  cfg.lambda = config_.tucker_lambda;
  cfg.max_sweeps = config_.tucker_sweeps;
  cfg.tolerance = config_.tucker_tol;
  cfg.seed = config_.seed;
  const auto fit_k = regrowth::tucker_fit(k_samples, dims, cfg);
  const auto fit_L = regrowth::tucker_fit(L_samples, dims, cfg);

  Checkpoint ckp;
  save_tucker(ckp, "tucker_k", fit_k.weights);
  save_tucker(ckp, "tucker_L", fit_L.weights);
  write_checkpoint(ckp, artifact("tucker.ckp"));
  std::ostringstream trace;
  trace << "sweep,objective_k,objective_L\n";
  for (std::size_t s = 0; s < std::max(fit_k.objective.size(), fit_L.objective.size()); ++s) {
    trace << s << ',' << (s < fit_k.objective.size() ? text::num(fit_k.objective[s]) : "") << ','
          << (s < fit_L.objective.size() ? text::num(fit_L.objective[s]) : "") << '\n';
  }
  write_text_file(artifact("tucker_trace.csv"), trace.str());
  note("tucker-fit: " + std::to_string(k_samples.size()) + " subgrids, " + std::to_string(fit_k.objective.size() - 1) +
       " / " + std::to_string(fit_L.objective.size() - 1) + " sweeps");
}

void Pipeline::predict_k() {
  require(artifact("split.csv"), "preprocess");
  require(artifact("tucker.ckp"), "tucker-fit");
  record_input(artifact("split.csv"));
  record_input(artifact("tucker.ckp"));
  const auto split = read_split(artifact("split.csv"));
  const auto ckp = read_checkpoint(artifact("tucker.ckp"));
  const auto tk = load_tucker(ckp, "tucker_k");
  const auto tL = load_tucker(ckp, "tucker_L");

  std::vector<FireRecovery> predictions;
  for (const auto& id : split.all()) {
    const auto fpath = artifact("forecast") / (id + ".rst");
    require(fpath, "forecast");
    record_input(fpath);
    const auto forecast_stack = read_stack(fpath);
    const auto stack = read_stack(artifact("preprocess") / (id + ".rst"));
    std::vector<SubgridSeries> series;
    std::size_t pixels = 0;
    for (const auto& sub : partition_subgrids(stack, config_.tile)) {
      if (sub.burn_fraction < config_.burn_threshold) continue;
      const auto window = forecast_stack.window(sub.row_offset, sub.col_offset, config_.tile, config_.tile);
      if (window.any_missing()) throw ValidationError("predict-k: forecast for " + id + " is incomplete; run forecast first");
      const auto burned = burned_pixels(sub.stack);
      const auto n = static_cast<std::size_t>(std::count(burned.begin(), burned.end(), 1));
      series.push_back({ndvi_series(window), static_cast<double>(n)});
      pixels += n;
    }
    if (series.empty()) {
      note("predict-k: " + id + " has no qualifying subgrid");
      continue;
    }
    const auto pred = predict_fire(tk, tL, series);
    predictions.push_back({id, pred.k_hat, pred.L_hat, pixels, series.size()});
  }
  write_text_file(artifact("predictions.csv"), recoveries_csv(predictions));
}

void Pipeline::cluster() {
  require(artifact("predictions.csv"), "predict-k");
  require(config_.catalog, "synth");
  record_input(artifact("predictions.csv"));
  record_input(config_.catalog);
  const auto predictions = parse_recoveries_csv(read_text_file(artifact("predictions.csv")));
  const auto catalog = read_catalog(config_.catalog);
  std::map<std::string, RasterStack> stacks;
  for (const auto& p : predictions) {
    const auto path = config_.stack_dir / (p.fire_id + ".rst");
    require(path, "synth");
    record_input(path);
    stacks.emplace(p.fire_id, read_stack(path));
  }
  const auto features = build_features(predictions, catalog, stacks);
  const auto normalized = minmax_normalize(feature_matrix(features));
  UmapConfig ucfg;
  ucfg.n_neighbors = config_.n_neighbors;
  ucfg.min_dist = config_.min_dist;
  ucfg.epochs = config_.umap_epochs;
  ucfg.seed = config_.seed;
  const auto embedding = umap_embed(normalized.points, ucfg);

  std::vector<ClusterAssignment> assignments;
  for (auto k : config_.cluster_ks) assignments.push_back(assign_clusters(features, embedding, k, config_.seed));
  const auto geo = export_geo(assignments, features);
  write_text_file(artifact("clusters.csv"), geo.csv);
  for (const auto& [k, svg] : geo.svg) write_text_file(artifact("clusters_k" + std::to_string(k) + ".svg"), svg);
  std::ostringstream emb;
  emb << "fire_id,u,v\n";
  for (std::size_t i = 0; i < features.size(); ++i) {
    emb << features[i].fire_id << ',' << text::num(embedding(static_cast<long>(i), 0)) << ','
        << text::num(embedding(static_cast<long>(i), 1)) << '\n';
  }
  write_text_file(artifact("embedding.csv"), emb.str());
}

void Pipeline::eval() {
  require(artifact("predictions.csv"), "predict-k");
  require(artifact("recoveries.csv"), "fit-logistic");
  require(artifact("split.csv"), "preprocess");
  record_input(artifact("predictions.csv"));
  record_input(artifact("recoveries.csv"));
  record_input(artifact("split.csv"));
  const auto split = read_split(artifact("split.csv"));
  const auto predictions = parse_recoveries_csv(read_text_file(artifact("predictions.csv")));
  const auto baseline = parse_recoveries_csv(read_text_file(artifact("recoveries.csv")));
  std::vector<FireRecovery> held_out;
  for (const auto& p : predictions) {
    const auto role = split.role.find(p.fire_id);
    if (role != split.role.end() && role->second == "holdout") held_out.push_back(p);
  }
  const auto report = eval_k_errors(held_out, baseline, config_.hist_bin, config_.hist_max);
  write_text_file(artifact("eval.csv"), eval_csv(report));
  write_text_file(artifact("eval_summary.csv"), eval_summary_csv(report));
  write_text_file(artifact("eval_hist.svg"), eval_svg(report));
  note("eval: P50 " + text::num(report.p50) + " P75 " + text::num(report.p75) + " P90 " + text::num(report.p90));
}

void Pipeline::report() {
  require(artifact("eval_summary.csv"), "eval");
  record_input(artifact("eval_summary.csv"));
  std::map<std::string, std::string> summary;
  for (const auto& row : text::lines(read_text_file(artifact("eval_summary.csv")))) {
    const auto f = text::split(row);
    if (f.size() == 2) summary[f[0]] = f[1];
  }
  std::ostringstream md;
  md << "# Run report\n\n## Held-out k error\n\n"
     << "| quantile | measured | reference |\n|---|---|---|\n"
     << "| P50 | " << summary["p50"] << " | 0.12 |\n"
     << "| P75 | " << summary["p75"] << " | 0.24 |\n"
     << "| P90 | " << summary["p90"] << " | 0.48 |\n\n"
     << "Fires evaluated: " << summary["n_fires"] << ". Histogram: eval_hist.svg.\n";
  if (fs::exists(artifact("training_log.csv"))) {
    record_input(artifact("training_log.csv"));
    const auto rows = text::lines(read_text_file(artifact("training_log.csv")));
    double best = std::numeric_limits<double>::infinity();
    std::string best_epoch;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = text::split(rows[i]);
      const double v = text::to_double(f[3], "val_mae");
      if (v < best) {
        best = v;
        best_epoch = f[0];
      }
    }
    md << "\n## Training\n\nEpochs: " << (rows.size() - 1) << ". Best validation MAE " << text::num(best)
       << " at epoch " << best_epoch << ".\n";
  }
  if (fs::exists(artifact("forecast_mae.csv"))) {
    record_input(artifact("forecast_mae.csv"));
    std::map<long long, std::pair<double, std::size_t>> per_frame;
    const auto rows = text::lines(read_text_file(artifact("forecast_mae.csv")));
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = text::split(rows[i]);
      auto& acc = per_frame[text::to_int(f[1], "frame")];
      acc.first += text::to_double(f[2], "mae");
      acc.second += 1;
    }
    md << "\n## Forecast MAE by frame (all fires)\n\n| frame | mean MAE |\n|---|---|\n";
    for (const auto& [frame, acc] : per_frame) {
      md << "| " << frame << " | " << text::num(acc.first / static_cast<double>(acc.second)) << " |\n";
    }
  }
  write_text_file(artifact("report.md"), md.str());
}

}  // namespace regrowth
