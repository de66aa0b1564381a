#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "regrowth/error.hpp"
#include "regrowth/preprocess.hpp"
#include "regrowth/rng.hpp"
#include "regrowth/synth.hpp"

using namespace regrowth;

namespace {

RasterStack smooth_field(std::size_t t_len, std::size_t h, std::size_t w) {
  RasterStack s(t_len, h, w, {"NDVI"});
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        s.at(t, r, c, 0) = static_cast<float>(std::sin(r / 5.0) * std::cos(c / 5.0) + 0.05 * t);
  return s;
}

RasterStack with_qa(std::size_t t_len, std::size_t h, std::size_t w) {
  RasterStack s(t_len, h, w, {"NDVI", "EVI", "LST", "QA"});
  for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] = 0.4f;
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) s.at(t, r, c, 3) = 0.0f;
  return s;
}

// Brute-force inverse-distance kNN over observed pixels, lexicographic ties.
float knn_oracle(const RasterStack& s, std::size_t t, std::size_t r, std::size_t c, std::size_t k) {
  struct Cand {
    long d2;
    std::size_t t, r, c;
  };
  std::vector<Cand> all;
  for (std::size_t tt = 0; tt < s.t_len(); ++tt)
    for (std::size_t rr = 0; rr < s.height(); ++rr)
      for (std::size_t cc = 0; cc < s.width(); ++cc) {
        if (s.missing(tt, rr, cc, 0)) continue;
        const long dt = long(tt) - long(t), dr = long(rr) - long(r), dc = long(cc) - long(c);
        all.push_back({dt * dt + dr * dr + dc * dc, tt, rr, cc});
      }
  std::sort(all.begin(), all.end(), [](const Cand& a, const Cand& b) {
    return std::tie(a.d2, a.t, a.r, a.c) < std::tie(b.d2, b.t, b.r, b.c);
  });
  double num = 0, den = 0;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    const double wgt = 1.0 / std::sqrt(static_cast<double>(all[i].d2));
    num += wgt * s.at(all[i].t, all[i].r, all[i].c, 0);
    den += wgt;
  }
  return static_cast<float>(num / den);
}

}  // namespace

TEST(MaskUnreliable, CleanQaKeepsMask) {
  const auto s = with_qa(3, 4, 4);
  const auto out = mask_unreliable(s);
  EXPECT_EQ(out.channel_count(), 3u);
  EXPECT_FALSE(out.find_channel("QA").has_value());
  EXPECT_EQ(out.missing_count(), 0u);
}

TEST(MaskUnreliable, Qa2MasksNdviAndEvi) {
  auto s = with_qa(5, 3, 3);
  s.at(3, 1, 1, 3) = 2.0f;
  const auto out = mask_unreliable(s);
  EXPECT_TRUE(out.missing(3, 1, 1, out.channel("NDVI")));
  EXPECT_TRUE(out.missing(3, 1, 1, out.channel("EVI")));
  EXPECT_FALSE(out.missing(3, 1, 1, out.channel("LST")));
  EXPECT_EQ(out.missing_count(), 2u);
}

TEST(MaskUnreliable, AllQa3MasksEverythingAndImputeRejects) {
  auto s = with_qa(2, 3, 3);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) s.at(t, r, c, 3) = 3.0f;
  const auto out = mask_unreliable(s);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(out.missing(t, r, c, out.channel("NDVI")));
  EXPECT_THROW(knn_impute(out), ValidationError);
}

TEST(KnnImpute, NoMissingIsIdentity) {
  const auto s = smooth_field(2, 6, 7);
  EXPECT_TRUE(knn_impute(s).identical(s));
}

TEST(KnnImpute, ConstantNeighbours) {
  RasterStack s(1, 3, 3, {"NDVI"});
  for (auto& v : s.data()) v = 0.6f;
  s.at(0, 1, 1, 0) = -5.0f;
  s.set_missing(0, 1, 1, 0, true);
  const auto out = knn_impute(s);
  EXPECT_FLOAT_EQ(out.at(0, 1, 1, 0), 0.6f);
  EXPECT_EQ(out.missing_count(), 0u);
}

TEST(KnnImpute, MatchesBruteForceOracle) {
  Rng rng(3);
  RasterStack s(3, 6, 5, {"NDVI"});
  for (auto& v : s.data()) v = static_cast<float>(rng.uniform());
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.3 ? 1 : 0;
  const auto out = knn_impute(s, 8);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        if (s.missing(t, r, c, 0)) {
          EXPECT_NEAR(out.at(t, r, c, 0), knn_oracle(s, t, r, c, 8), 1e-6) << t << ' ' << r << ' ' << c;
        } else {
          EXPECT_EQ(out.at(t, r, c, 0), s.at(t, r, c, 0));
        }
      }
}

TEST(KnnImpute, Idempotent) {
  Rng rng(5);
  auto s = smooth_field(4, 10, 10);
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.25 ? 1 : 0;
  const auto once = knn_impute(s);
  EXPECT_TRUE(knn_impute(once).identical(once));
}

// 20% of a single 50x50 frame of sin(r/5)cos(c/5) masked. The expected RMSE
// comes from the brute-force oracle above and is frozen here.
TEST(KnnImpute, SmoothFieldAccuracy) {
  constexpr double kFrozenRmse = 0.0380420;
  RasterStack truth(1, 50, 50, {"NDVI"});
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t c = 0; c < 50; ++c) truth.at(0, r, c, 0) = static_cast<float>(std::sin(r / 5.0) * std::cos(c / 5.0));
  auto s = truth;
  Rng rng(11);
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.2 ? 1 : 0;
  const auto out = knn_impute(s);
  double se = 0.0, se_oracle = 0.0;
  std::size_t masked = 0;
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t c = 0; c < 50; ++c) {
      if (!s.missing(0, r, c, 0)) continue;
      const double d = out.at(0, r, c, 0) - truth.at(0, r, c, 0);
      const double d_oracle = knn_oracle(s, 0, r, c, 8) - truth.at(0, r, c, 0);
      se += d * d;
      se_oracle += d_oracle * d_oracle;
      ++masked;
    }
  const double rmse = std::sqrt(se / double(masked));
  EXPECT_NEAR(std::sqrt(se_oracle / double(masked)), kFrozenRmse, 1e-6);
  EXPECT_NEAR(rmse, kFrozenRmse, 1e-6);
}

TEST(Deseasonalize, IdenticalToReferenceGivesOnes) {
  Rng rng(2);
  RasterStack ref(12, 4, 4, {"NDVI"});
  for (auto& v : ref.data()) v = static_cast<float>(rng.uniform(0.2, 0.9));
  RasterStack post(25, 4, 4, {"NDVI", "LST"});
  const int start = 7;
  for (std::size_t t = 0; t < 25; ++t)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        post.at(t, r, c, 0) = ref.at((start + t) % 12, r, c, 0);
        post.at(t, r, c, 1) = 300.0f;
      }
  const auto out = deseasonalize(post, ref, start);
  for (std::size_t t = 0; t < 25; ++t)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_EQ(out.at(t, r, c, 0), 1.0f);
        EXPECT_EQ(out.at(t, r, c, 1), 300.0f);
      }
}

TEST(Deseasonalize, RatioAndGuard) {
  RasterStack ref(12, 1, 2, {"NDVI"});
  for (auto& v : ref.data()) v = 0.6f;
  ref.at(0, 0, 1, 0) = 0.01f;
  RasterStack post(1, 1, 2, {"NDVI"});
  post.at(0, 0, 0, 0) = 0.3f;
  post.at(0, 0, 1, 0) = 0.3f;
  const auto out = deseasonalize(post, ref, 0);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0, 0), 0.5f);
  EXPECT_TRUE(out.missing(0, 0, 1, 0));
  EXPECT_NE(out.at(0, 0, 1, 0), 30.0f);
}

TEST(Deseasonalize, GuardedPixelsReimputeInRange) {
  SynthConfig cfg;
  cfg.n_fires = 1;
  const auto syn = synth_generate(cfg, 3);
  auto ref = syn.truth.fires[0].reference;
  for (std::size_t m = 0; m < 12; ++m) ref.at(m, 10, 10, 0) = 0.01f;
  const auto out = preprocess_fire(syn.stacks[0], ref, syn.truth.fires[0].start_month);
  EXPECT_EQ(out.missing_count(), 0u);
  const auto ndvi = out.channel("NDVI");
  for (std::size_t t = 0; t < out.t_len(); ++t) {
    EXPECT_GE(out.at(t, 10, 10, ndvi), 0.0f);
    EXPECT_LE(out.at(t, 10, 10, ndvi), 3.0f);
  }
}

TEST(ScaleChannels, Endpoints) {
  RasterStack s(1, 1, 3, {"NDVI", "LST", "PRECIP", "FIREMASK"});
  const float lst[] = {240.0f, 285.0f, 330.0f};
  for (std::size_t c = 0; c < 3; ++c) {
    s.at(0, 0, c, 0) = 1.7f;
    s.at(0, 0, c, 1) = lst[c];
    s.at(0, 0, c, 2) = 0.0f;
    s.at(0, 0, c, 3) = c == 1 ? 0.9f : 0.2f;
  }
  const auto out = scale_channels(s, ChannelScaling::fit(s));
  EXPECT_FLOAT_EQ(out.at(0, 0, 0, 1), 0.0f);
  EXPECT_NEAR(out.at(0, 0, 1, 1), 0.5f, 1e-6);
  EXPECT_FLOAT_EQ(out.at(0, 0, 2, 1), 1.0f);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(out.at(0, 0, c, 0), 1.7f);
    EXPECT_EQ(out.at(0, 0, c, 2), 0.0f);
    EXPECT_EQ(out.at(0, 0, c, 3), c == 1 ? 1.0f : 0.0f);
  }
}

TEST(ScaleChannels, OutputsInUnitInterval) {
  SynthConfig cfg;
  cfg.n_fires = 2;
  const auto syn = synth_generate(cfg, 5);
  const auto out = preprocess_fire(syn.stacks[1], syn.truth.fires[1].reference, syn.truth.fires[1].start_month);
  for (const char* name : {"EVI", "LST", "FIREMASK", "PRECIP"}) {
    const auto ch = out.channel(name);
    for (std::size_t i = ch; i < out.size(); i += out.channel_count()) {
      if (std::string(name) == "EVI") continue;
      EXPECT_GE(out.data()[i], 0.0f);
      EXPECT_LE(out.data()[i], 1.0f);
    }
  }
}

TEST(Partition, TwentyFiveTiles) {
  Rng rng(8);
  RasterStack s(2, 50, 50, {"NDVI", "FIREMASK"});
  for (auto& v : s.data()) v = static_cast<float>(rng.uniform());
  const auto tiles = partition_subgrids(s, 10);
  ASSERT_EQ(tiles.size(), 25u);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(tiles[0].stack.at(1, r, c, 0), s.at(1, r, c, 0));
  EXPECT_EQ(tiles[7].row_offset, 10u);
  EXPECT_EQ(tiles[7].col_offset, 20u);
  EXPECT_TRUE(reassemble_subgrids(tiles, 50, 50).identical(s));
}

TEST(Partition, BijectionOnMissingMask) {
  Rng rng(9);
  RasterStack s(3, 20, 30, {"NDVI", "FIREMASK"});
  for (auto& v : s.data()) v = static_cast<float>(rng.normal());
  for (auto& m : s.missing_mask()) m = rng.uniform() < 0.1;
  EXPECT_TRUE(reassemble_subgrids(partition_subgrids(s, 10), 20, 30).identical(s));
}

TEST(Partition, FullFireMask) {
  RasterStack s(2, 50, 50, {"NDVI", "FIREMASK"});
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t r = 0; r < 50; ++r)
      for (std::size_t c = 0; c < 50; ++c) s.at(t, r, c, 1) = 1.0f;
  for (const auto& tile : partition_subgrids(s, 10)) EXPECT_EQ(tile.burn_fraction, 1.0);
}

TEST(Partition, RejectsNonDividingTile) {
  RasterStack s(1, 15, 20, {"NDVI", "FIREMASK"});
  EXPECT_THROW(partition_subgrids(s, 10), ValidationError);
}

namespace {

RasterStack series_stack(const std::vector<double>& means) {
  RasterStack s(means.size(), 2, 2, {"NDVI"});
  for (std::size_t t = 0; t < means.size(); ++t)
    for (std::size_t p = 0; p < 4; ++p) s.at(t, p / 2, p % 2, 0) = static_cast<float>(means[t]);
  return s;
}

}  // namespace

TEST(FilterErratic, Examples) {
  const auto flat = series_stack(std::vector<double>(25, 1.0));
  std::vector<double> jump(25, 0.5);
  for (std::size_t t = 10; t < 25; ++t) jump[t] = 3.0;
  const auto jumpy = series_stack(jump);
  std::vector<double> rise(25);
  for (std::size_t t = 0; t < 25; ++t) rise[t] = 0.6 + 0.4 * t / 24.0;
  const auto rising = series_stack(rise);
  std::vector<NamedStack> fires = {{"flat", &flat}, {"jump", &jumpy}, {"rise", &rising}};
  const auto v = filter_erratic(fires);
  EXPECT_TRUE(v[0].included);
  EXPECT_FALSE(v[1].included);
  EXPECT_FALSE(v[1].rule.empty());
  EXPECT_TRUE(v[2].included);
}

TEST(FilterErratic, MeanBounds) {
  const auto high = series_stack(std::vector<double>(5, 3.2));
  const auto low = series_stack(std::vector<double>(5, -0.1));
  std::vector<NamedStack> fires = {{"high", &high}, {"low", &low}};
  const auto v = filter_erratic(fires);
  EXPECT_FALSE(v[0].included);
  EXPECT_FALSE(v[1].included);
}

namespace {

SampleTensor fire_samples(std::size_t n_fires, std::size_t per_fire) {
  SampleTensor samples(2, 2, 2, 1);
  RasterStack s(2, 2, 2, {"NDVI"});
  for (std::size_t f = 0; f < n_fires; ++f)
    for (std::size_t i = 0; i < per_fire; ++i) {
      s.at(0, 0, 0, 0) = static_cast<float>(f);
      samples.append(s, {"F" + std::to_string(f), i, 0, 1.0});
    }
  return samples;
}

}  // namespace

TEST(SplitTrainVal, ByFire) {
  const auto samples = fire_samples(10, 3);
  const auto split = split_train_val(samples, 0.8, 7);
  EXPECT_EQ(split.fires.train.size(), 8u);
  EXPECT_EQ(split.train.samples(), 24u);
  EXPECT_EQ(split.val.samples(), 6u);
  std::set<std::string> train_ids, val_ids;
  for (std::size_t i = 0; i < split.train.samples(); ++i) train_ids.insert(split.train.provenance(i).fire_id);
  for (std::size_t i = 0; i < split.val.samples(); ++i) val_ids.insert(split.val.provenance(i).fire_id);
  for (const auto& id : val_ids) EXPECT_EQ(train_ids.count(id), 0u);
}

TEST(SplitTrainVal, DeterministicAndBoundary) {
  const auto samples = fire_samples(10, 2);
  const auto a = split_train_val(samples, 0.8, 3);
  const auto b = split_train_val(samples, 0.8, 3);
  EXPECT_EQ(a.fires.train, b.fires.train);
  const auto all = split_train_val(samples, 1.0, 3);
  EXPECT_TRUE(all.fires.empty_validation);
  EXPECT_EQ(all.val.samples(), 0u);
  EXPECT_THROW(split_train_val(fire_samples(1, 4), 0.8, 3), ValidationError);
}

TEST(SampleTensor, RejectsMissingAndShapeMismatch) {
  SampleTensor samples(2, 2, 2, 1);
  RasterStack s(2, 2, 2, {"NDVI"});
  s.set_missing(1, 1, 1, 0, true);
  EXPECT_THROW(samples.append(s, {"F", 0, 0, 0.0}), ValidationError);
  RasterStack wrong(3, 2, 2, {"NDVI"});
  EXPECT_THROW(samples.append(wrong, {"F", 0, 0, 0.0}), ValidationError);
}
