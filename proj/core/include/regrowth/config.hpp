#pragma once

// Flat key=value configuration files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "regrowth/synth.hpp"

namespace regrowth {

// Parses "key = value" lines; '#' starts a comment. Duplicate keys and lines
// without '=' are FormatErrors.
std::map<std::string, std::string> parse_key_values(std::string_view text);

double parse_double(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);

struct RunConfig {
  // paths
  std::filesystem::path catalog = "catalog.csv";
  std::filesystem::path stack_dir = "stacks";
  std::filesystem::path out_dir = "run";
  std::filesystem::path checkpoint = "model.ckp";

  std::uint64_t seed = 7;

  SynthConfig synth;

  // preprocess
  std::size_t knn_k = 8;
  double erratic_max_step = 0.5;
  double erratic_max_mean = 3.0;
  double erratic_min_mean = 0.0;
  double split_fraction = 0.8;
  std::size_t holdout_fires = 15;
  std::size_t tile = 10;

  // training
  std::size_t epochs = 100;
  std::size_t batch = 8;
  double lr0 = 1e-3;
  double lr_decay = 0.5;
  std::size_t lr_step = 25;
  std::size_t observed_frames = 5;
  std::string exogenous_policy = "persistence+season";
  // Subgrids below this burned share are left out of ConvLSTM training.
  double train_min_burn = 0.0;

  // logistic / regression targets
  double burn_threshold = 0.5;

  // tucker
  std::size_t tucker_r1 = 4;
  std::size_t tucker_r2 = 3;
  std::size_t tucker_r3 = 3;
  double tucker_lambda = 1e-3;
  std::size_t tucker_sweeps = 100;
  double tucker_tol = 1e-6;

  // clustering
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  std::size_t umap_epochs = 500;
  std::vector<std::size_t> cluster_ks = {3, 5, 10};

  // evaluation
  double hist_bin = 0.06;
  double hist_max = 1.2;

  void validate() const;
  // Canonical key=value rendering; also the input to the config hash.
  std::string to_text() const;
};

RunConfig run_config_from(const std::map<std::string, std::string>& values);
RunConfig read_run_config(const std::filesystem::path& path);

}  // namespace regrowth
