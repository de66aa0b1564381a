// regrowth: one subcommand per pipeline stage, plus `all`.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "regrowth/config.hpp"
#include "regrowth/error.hpp"
#include "regrowth/pipeline.hpp"
#include "regrowth/raster_io.hpp"

namespace {

regrowth::RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  std::map<std::string, std::string> values;
  if (!path.empty()) values = regrowth::parse_key_values(regrowth::read_text_file(path));
  if (seed) values["seed"] = std::to_string(*seed);
  return regrowth::run_config_from(values);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-fire vegetation regrowth pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("--config", config_path, "key=value run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the configured seed");
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  std::map<CLI::App*, regrowth::Stage> stages;
  for (auto stage : regrowth::kAllStages) {
    auto* sub = app.add_subcommand(std::string(regrowth::stage_name(stage)));
    stages[sub] = stage;
  }
  app.get_subcommand("synth")->description("generate the synthetic fire corpus");
  app.get_subcommand("preprocess")->description("mask, impute, de-seasonalize, filter, split");
  app.get_subcommand("train")->description("train the ConvLSTM on observed subgrid sequences");
  app.get_subcommand("forecast")->description("roll the trained model forward from the first frames");
  app.get_subcommand("fit-logistic")->description("fit per-pixel logistic curves on actual frames");
  app.get_subcommand("tucker-fit")->description("fit Tucker regressions for k and L");
  app.get_subcommand("predict-k")->description("predict per-fire k and L from forecasts");
  app.get_subcommand("cluster")->description("UMAP embedding and k-means clusters with map SVGs");
  app.get_subcommand("eval")->description("held-out k error quantiles and histogram");
  app.get_subcommand("report")->description("markdown summary of the run");
  auto* all = app.add_subcommand("all", "run every stage in order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    regrowth::Pipeline pipeline(load_config(config_path, seed));
    if (!quiet) pipeline.set_progress([](const std::string& m) { std::cerr << m << '\n'; });
    std::vector<regrowth::Stage> todo;
    if (all->parsed()) {
      todo.assign(regrowth::kAllStages.begin(), regrowth::kAllStages.end());
    } else {
      for (const auto& [sub, stage] : stages) {
        if (sub->parsed()) todo.push_back(stage);
      }
    }
    for (auto stage : todo) {
      const auto outcome = pipeline.run(stage);
      if (!quiet) std::fprintf(stderr, "%s done in %.2f s\n", std::string(regrowth::stage_name(stage)).c_str(), outcome.seconds);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return regrowth::exit_code_for(e);
  }
  return 0;
}
