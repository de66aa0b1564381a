#pragma once

// Stage orchestration over on-disk artifacts. Every stage reads its inputs
// from the previous stages' outputs under `out_dir` (raw data under
// `catalog` / `stack_dir`) and appends a manifest line to out_dir/run.log.

#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "regrowth/config.hpp"
#include "regrowth/logistic.hpp"

namespace regrowth {

enum class Stage {
  kSynth,
  kPreprocess,
  kTrain,
  kForecast,
  kFitLogistic,
  kTuckerFit,
  kPredictK,
  kCluster,
  kEval,
  kReport,
};

inline constexpr std::array<Stage, 10> kAllStages = {
    Stage::kSynth,     Stage::kPreprocess, Stage::kTrain,   Stage::kForecast, Stage::kFitLogistic,
    Stage::kTuckerFit, Stage::kPredictK,   Stage::kCluster, Stage::kEval,     Stage::kReport};

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

// --- evaluation ---------------------------------------------------------------

inline constexpr std::array<double, 3> kErrorTargets = {0.12, 0.24, 0.48};

struct EvalReport {
  std::vector<std::string> fire_ids;
  std::vector<double> k_hat;
  std::vector<double> k_fit;
  std::vector<double> errors;
  double p50 = 0.0;
  double p75 = 0.0;
  double p90 = 0.0;
  double bin_width = 0.06;
  double max_error = 1.2;
  std::vector<std::size_t> histogram;
  std::size_t overflow = 0;  // errors >= max_error
};

// Linear interpolation between order statistics, position q (n - 1).
double quantile_linear(std::vector<double> values, double q);

// Joins on fire id, in the order of `predicted`; fires absent from the
// baseline are an error.
EvalReport eval_k_errors(std::span<const FireRecovery> predicted, std::span<const FireRecovery> baseline,
                         double bin_width = 0.06, double max_error = 1.2);

std::string eval_csv(const EvalReport& report);
std::string eval_summary_csv(const EvalReport& report);
std::string eval_svg(const EvalReport& report);

// --- pipeline -----------------------------------------------------------------

std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string fnv1a_hex(std::string_view text);

struct StageOutcome {
  Stage stage = Stage::kSynth;
  double seconds = 0.0;
  std::string manifest_line;
};

class Pipeline {
 public:
  explicit Pipeline(RunConfig config);

  void set_progress(std::function<void(const std::string&)> sink) { progress_ = std::move(sink); }

  // Takes the output-directory lock, runs the stage, appends to run.log.
  StageOutcome run(Stage stage);

  const RunConfig& config() const { return config_; }
  std::filesystem::path artifact(std::string_view name) const { return config_.out_dir / std::string(name); }

 private:
  void synth();
  void preprocess();
  void train();
  void forecast();
  void fit_logistic();
  void tucker_fit();
  void predict_k();
  void cluster();
  void eval();
  void report();

  // Throws ValidationError naming `stage` when `path` does not exist.
  void require(const std::filesystem::path& path, std::string_view stage) const;
  void record_input(const std::filesystem::path& path);
  void note(const std::string& message) const;

  RunConfig config_;
  std::function<void(const std::string&)> progress_;
  std::vector<std::pair<std::string, std::string>> inputs_;
};

// 1 for validation and format errors, 2 for I/O errors, 1 otherwise.
int exit_code_for(const std::exception& error);

}  // namespace regrowth
