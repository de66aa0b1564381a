#include "regrowth/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "regrowth/error.hpp"

namespace regrowth {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw FormatError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() || !std::isfinite(v)) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ValidationError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  if (v < 0) throw ValidationError("config key '" + key + "' must be non-negative");
  return v;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    std::size_t end = value.find(',', pos);
    if (end == std::string::npos) end = value.size();
    out.push_back(static_cast<std::size_t>(parse_int(key, std::string(trim(value.substr(pos, end - pos))))));
    pos = end + 1;
  }
  return out;
}

void RunConfig::validate() const {
  synth.validate();
  if (knn_k == 0) throw ValidationError("knn_k must be positive");
  if (!(split_fraction > 0.0 && split_fraction <= 1.0)) {
    throw ValidationError("split_fraction must lie in (0, 1]");
  }
  if (erratic_max_step <= 0.0) throw ValidationError("erratic_max_step must be positive");
  if (erratic_max_mean <= erratic_min_mean) {
    throw ValidationError("erratic_max_mean must exceed erratic_min_mean");
  }
  if (tile == 0) throw ValidationError("tile must be positive");
  if (batch == 0) throw ValidationError("batch must be positive");
  if (lr0 <= 0.0) throw ValidationError("lr0 must be positive");
  if (lr_decay <= 0.0 || lr_decay > 1.0) throw ValidationError("lr_decay must lie in (0, 1]");
  if (lr_step == 0) throw ValidationError("lr_step must be positive");
  if (observed_frames == 0 || observed_frames >= synth.t_len) {
    throw ValidationError("observed_frames must lie in [1, t_len)");
  }
  if (exogenous_policy != "persistence+season" && exogenous_policy != "actual") {
    throw ValidationError("exogenous_policy must be 'persistence+season' or 'actual'");
  }
  if (burn_threshold < 0.0 || burn_threshold > 1.0) {
    throw ValidationError("burn_threshold must lie in [0, 1]");
  }
  if (train_min_burn < 0.0 || train_min_burn > 1.0) {
    throw ValidationError("train_min_burn must lie in [0, 1]");
  }
  if (tucker_r1 == 0 || tucker_r2 == 0 || tucker_r3 == 0) {
    throw ValidationError("tucker ranks must be positive");
  }
  if (tucker_lambda < 0.0) throw ValidationError("tucker_lambda must be >= 0");
  if (n_neighbors < 2) throw ValidationError("n_neighbors must be at least 2");
  if (min_dist < 0.0) throw ValidationError("min_dist must be >= 0");
  if (cluster_ks.empty()) throw ValidationError("cluster_ks must not be empty");
  for (auto k : cluster_ks) {
    if (k == 0) throw ValidationError("cluster_ks entries must be positive");
  }
  if (hist_bin <= 0.0 || hist_max <= 0.0) throw ValidationError("histogram bins must be positive");
}

RunConfig run_config_from(const std::map<std::string, std::string>& values) {
  RunConfig cfg;
  auto as_size = [](const std::string& k, const std::string& v) {
    return static_cast<std::size_t>(parse_int(k, v));
  };
  for (const auto& [key, value] : values) {
    if (key == "catalog") cfg.catalog = value;
    else if (key == "stack_dir") cfg.stack_dir = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "n_fires") cfg.synth.n_fires = as_size(key, value);
    else if (key == "height") cfg.synth.height = as_size(key, value);
    else if (key == "width") cfg.synth.width = as_size(key, value);
    else if (key == "t_len") cfg.synth.t_len = as_size(key, value);
    else if (key == "sigma") cfg.synth.sigma = parse_double(key, value);
    else if (key == "dropout") cfg.synth.dropout = parse_double(key, value);
    else if (key == "knn_k") cfg.knn_k = as_size(key, value);
    else if (key == "erratic_max_step") cfg.erratic_max_step = parse_double(key, value);
    else if (key == "erratic_max_mean") cfg.erratic_max_mean = parse_double(key, value);
    else if (key == "erratic_min_mean") cfg.erratic_min_mean = parse_double(key, value);
    else if (key == "split_fraction") cfg.split_fraction = parse_double(key, value);
    else if (key == "holdout_fires") cfg.holdout_fires = as_size(key, value);
    else if (key == "tile") cfg.tile = as_size(key, value);
    else if (key == "epochs") cfg.epochs = as_size(key, value);
    else if (key == "batch") cfg.batch = as_size(key, value);
    else if (key == "lr0") cfg.lr0 = parse_double(key, value);
    else if (key == "lr_decay") cfg.lr_decay = parse_double(key, value);
    else if (key == "lr_step") cfg.lr_step = as_size(key, value);
    else if (key == "observed_frames") cfg.observed_frames = as_size(key, value);
    else if (key == "exogenous_policy") cfg.exogenous_policy = value;
    else if (key == "burn_threshold") cfg.burn_threshold = parse_double(key, value);
    else if (key == "train_min_burn") cfg.train_min_burn = parse_double(key, value);
    else if (key == "tucker_r1") cfg.tucker_r1 = as_size(key, value);
    else if (key == "tucker_r2") cfg.tucker_r2 = as_size(key, value);
    else if (key == "tucker_r3") cfg.tucker_r3 = as_size(key, value);
    else if (key == "tucker_lambda") cfg.tucker_lambda = parse_double(key, value);
    else if (key == "tucker_sweeps") cfg.tucker_sweeps = as_size(key, value);
    else if (key == "tucker_tol") cfg.tucker_tol = parse_double(key, value);
    else if (key == "n_neighbors") cfg.n_neighbors = as_size(key, value);
    else if (key == "min_dist") cfg.min_dist = parse_double(key, value);
    else if (key == "umap_epochs") cfg.umap_epochs = as_size(key, value);
    else if (key == "cluster_ks") cfg.cluster_ks = parse_size_list(key, value);
    else if (key == "hist_bin") cfg.hist_bin = parse_double(key, value);
    else if (key == "hist_max") cfg.hist_max = parse_double(key, value);
    else throw ValidationError("unknown config key '" + key + "'");
  }
  cfg.synth.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  return run_config_from(parse_key_values(read_text_file(path)));
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "catalog=" << catalog.string() << '\n'
      << "stack_dir=" << stack_dir.string() << '\n'
      << "out_dir=" << out_dir.string() << '\n'
      << "checkpoint=" << checkpoint.string() << '\n'
      << "seed=" << seed << '\n'
      << "n_fires=" << synth.n_fires << '\n'
      << "height=" << synth.height << '\n'
      << "width=" << synth.width << '\n'
      << "t_len=" << synth.t_len << '\n'
      << "sigma=" << synth.sigma << '\n'
      << "dropout=" << synth.dropout << '\n'
      << "knn_k=" << knn_k << '\n'
      << "erratic_max_step=" << erratic_max_step << '\n'
      << "erratic_max_mean=" << erratic_max_mean << '\n'
      << "erratic_min_mean=" << erratic_min_mean << '\n'
      << "split_fraction=" << split_fraction << '\n'
      << "holdout_fires=" << holdout_fires << '\n'
      << "tile=" << tile << '\n'
      << "epochs=" << epochs << '\n'
      << "batch=" << batch << '\n'
      << "lr0=" << lr0 << '\n'
      << "lr_decay=" << lr_decay << '\n'
      << "lr_step=" << lr_step << '\n'
      << "observed_frames=" << observed_frames << '\n'
      << "exogenous_policy=" << exogenous_policy << '\n'
      << "burn_threshold=" << burn_threshold << '\n'
      << "train_min_burn=" << train_min_burn << '\n'
      << "tucker_r1=" << tucker_r1 << '\n'
      << "tucker_r2=" << tucker_r2 << '\n'
      << "tucker_r3=" << tucker_r3 << '\n'
      << "tucker_lambda=" << tucker_lambda << '\n'
      << "tucker_sweeps=" << tucker_sweeps << '\n'
      << "tucker_tol=" << tucker_tol << '\n'
      << "n_neighbors=" << n_neighbors << '\n'
      << "min_dist=" << min_dist << '\n'
      << "umap_epochs=" << umap_epochs << '\n'
      << "cluster_ks=";
  for (std::size_t i = 0; i < cluster_ks.size(); ++i) out << (i ? "," : "") << cluster_ks[i];
  out << '\n' << "hist_bin=" << hist_bin << '\n' << "hist_max=" << hist_max << '\n';
  return out.str();
}

}  // namespace regrowth
