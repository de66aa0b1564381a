#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "regrowth/checkpoint.hpp"
#include "regrowth/config.hpp"
#include "regrowth/error.hpp"
#include "regrowth/pipeline.hpp"
#include "regrowth/raster_io.hpp"
#include "regrowth/tucker.hpp"
#include "test_util.hpp"

using namespace regrowth;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig small_config(const fs::path& root) {
  RunConfig c;
  c.catalog = root / "catalog.csv";
  c.stack_dir = root / "stacks";
  c.out_dir = root / "out";
  c.seed = 5;
  c.synth.n_fires = 8;
  c.synth.height = 20;
  c.synth.width = 20;
  c.holdout_fires = 2;
  c.epochs = 1;
  c.umap_epochs = 50;
  c.n_neighbors = 3;
  c.cluster_ks = {2, 3};
  c.tucker_r1 = 2;
  c.tucker_r2 = 2;
  c.tucker_r3 = 2;
  c.tucker_sweeps = 20;
  return c;
}

}  // namespace

TEST(Config, ParsesAndRejects) {
  const auto kv = parse_key_values("# comment\nseed = 3\nepochs=2 # trailing\n");
  const auto c = run_config_from(kv);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.epochs, 2u);
  EXPECT_THROW(run_config_from(parse_key_values("bogus = 1\n")), ValidationError);
  EXPECT_THROW(parse_key_values("seed = 1\nseed = 2\n"), FormatError);
  EXPECT_THROW(parse_key_values("seed\n"), FormatError);
  EXPECT_THROW(run_config_from(parse_key_values("epochs = -1\n")), ValidationError);
  EXPECT_THROW(run_config_from(parse_key_values("exogenous_policy = magic\n")), ValidationError);
}

TEST(Config, TextRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.cluster_ks = {4, 6};
  c.tucker_lambda = 0.25;
  const auto back = run_config_from(parse_key_values(c.to_text()));
  EXPECT_EQ(back.to_text(), c.to_text());
}

TEST(Eval, Quantiles) {
  EXPECT_DOUBLE_EQ(quantile_linear({0.1, 0.2, 0.3, 0.4}, 0.5), 0.25);
  EXPECT_DOUBLE_EQ(quantile_linear({0.4, 0.1, 0.3, 0.2}, 0.75), 0.325);
  EXPECT_DOUBLE_EQ(quantile_linear({7.0}, 0.9), 7.0);
}

TEST(Eval, IdenticalInputsGiveZero) {
  std::vector<FireRecovery> a = {{"A", 0.2, 1, 4, 1}, {"B", -0.3, 1, 4, 1}};
  const auto r = eval_k_errors(a, a);
  EXPECT_EQ(r.p50, 0.0);
  EXPECT_EQ(r.p90, 0.0);
  EXPECT_EQ(r.histogram.front(), 2u);
}

TEST(Eval, HistogramAndJoin) {
  std::vector<FireRecovery> base = {{"A", 0.0, 1, 4, 1}, {"B", 0.0, 1, 4, 1}, {"C", 0.0, 1, 4, 1}};
  std::vector<FireRecovery> pred = {{"C", 0.07, 1, 4, 1}, {"A", 0.01, 1, 4, 1}, {"B", 2.0, 1, 4, 1}};
  const auto r = eval_k_errors(pred, base);
  ASSERT_EQ(r.histogram.size(), 20u);
  EXPECT_EQ(r.histogram[0], 1u);
  EXPECT_EQ(r.histogram[1], 1u);
  EXPECT_EQ(r.overflow, 1u);
  EXPECT_EQ(r.fire_ids.front(), "C");
  pred.push_back({"Z", 0.0, 1, 4, 1});
  EXPECT_THROW(eval_k_errors(pred, base), ValidationError);
  EXPECT_NE(eval_svg(r).find("stroke-dasharray"), std::string::npos);
}

TEST(Hash, Fnv1a) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(IoError("x")), 2);
  EXPECT_EQ(exit_code_for(ValidationError("x")), 1);
  EXPECT_EQ(exit_code_for(FormatError("x")), 1);
}

TEST(Pipeline, MissingUpstreamNamesStage) {
  test::TempDir dir;
  Pipeline p(small_config(dir.path()));
  try {
    p.run(Stage::kEval);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("run predict-k first"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir.path() / "out" / ".lock"));
}

TEST(Pipeline, LockBlocksSecondWriter) {
  test::TempDir dir;
  const auto cfg = small_config(dir.path());
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / ".lock") << "held";
  Pipeline p(cfg);
  EXPECT_THROW(p.run(Stage::kSynth), IoError);
  fs::remove(cfg.out_dir / ".lock");
  EXPECT_NO_THROW(p.run(Stage::kSynth));
}

TEST(Pipeline, EndToEndDeterministic) {
  test::TempDir a, b;
  std::vector<std::string> logs;
  for (const auto* dir : {&a, &b}) {
    Pipeline p(small_config(dir->path()));
    for (Stage s : kAllStages) p.run(s);
  }
  for (const char* name : {"split.csv", "recoveries.csv", "predictions.csv", "eval.csv", "clusters.csv",
                           "forecast_mae.csv", "training_log.csv"}) {
    const auto pa = a.path() / "out" / name;
    ASSERT_TRUE(fs::exists(pa)) << name;
    EXPECT_EQ(slurp(pa), slurp(b.path() / "out" / name)) << name;
  }
  const auto log = slurp(a.path() / "out" / "run.log");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), long(kAllStages.size()));
  EXPECT_NE(log.find("predict-k\t"), std::string::npos);
  EXPECT_TRUE(fs::exists(a.path() / "out" / "report.md"));
  EXPECT_TRUE(fs::exists(a.path() / "out" / "clusters_k3.svg"));
}

// Tucker trained on actual frames reproduces the fitted k of training fires
// when it is fed their actual frames.
TEST(Pipeline, TuckerInSampleConsistency) {
  test::TempDir dir;
  auto cfg = small_config(dir.path());
  cfg.synth = SynthConfig{};
  cfg.synth.n_fires = 20;
  cfg.holdout_fires = 5;
  cfg.tucker_r1 = 4;
  cfg.tucker_r2 = 3;
  cfg.tucker_r3 = 3;
  cfg.tucker_sweeps = 100;
  Pipeline p(cfg);
  for (Stage s : {Stage::kSynth, Stage::kPreprocess, Stage::kFitLogistic, Stage::kTuckerFit}) p.run(s);

  Checkpoint ckp = read_checkpoint(cfg.out_dir / "tucker.ckp");
  const auto wk = load_tucker(ckp, "tucker_k"), wl = load_tucker(ckp, "tucker_L");
  std::map<std::string, std::string> role;
  {
    std::istringstream in(slurp(cfg.out_dir / "split.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) role[line.substr(0, line.find(','))] = line.substr(line.find(',') + 1);
  }
  std::map<std::string, std::vector<SubgridSeries>> series;
  std::istringstream rows(slurp(cfg.out_dir / "logistic_subgrids.csv"));
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (role[f[0]] != "train" || std::stoul(f[4]) == 0) continue;
    const auto r = std::stoul(f[1].substr(1, f[1].find('c') - 1)), c = std::stoul(f[1].substr(f[1].find('c') + 1));
    const auto stack = read_stack(cfg.out_dir / "preprocess" / (f[0] + ".rst"));
    const auto w = stack.window(r, c, 10, 10);
    const auto ch = w.channel("NDVI");
    SubgridSeries s;
    s.weight = double(std::stoul(f[4]));
    for (std::size_t t = 0; t < w.t_len(); ++t)
      for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) s.ndvi.push_back(w.at(t, i, j, ch));
    series[f[0]].push_back(std::move(s));
  }
  const auto recoveries = parse_recoveries_csv(slurp(cfg.out_dir / "recoveries.csv"));
  std::vector<double> errors;
  for (const auto& rec : recoveries) {
    if (!series.count(rec.fire_id)) continue;
    errors.push_back(std::abs(predict_fire(wk, wl, series[rec.fire_id]).k_hat - rec.mean_k));
  }
  ASSERT_GE(errors.size(), 8u);
  std::sort(errors.begin(), errors.end());
  EXPECT_LT(errors[errors.size() / 2], 0.05);
  std::cout << "in-sample |k_hat - k_fit|: median " << errors[errors.size() / 2] << ", max " << errors.back() << '\n';
}
