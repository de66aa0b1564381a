#include "regrowth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "regrowth/config.hpp"
#include "regrowth/error.hpp"
#include "regrowth/rng.hpp"

namespace regrowth {

void SynthConfig::validate() const {
  if (n_fires == 0) throw ValidationError("synth: n_fires must be positive");
  if (height == 0 || width == 0) throw ValidationError("synth: grid dimensions must be positive");
  if (t_len == 0) throw ValidationError("synth: t_len must be positive");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("synth: sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout <= 1.0)) {
    throw ValidationError("synth: dropout must lie in [0, 1]");
  }
}

SynthConfig synth_config_from(const std::map<std::string, std::string>& values) {
  SynthConfig cfg;
  for (const auto& [key, value] : values) {
    if (key == "n_fires") {
      cfg.n_fires = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "height") {
      cfg.height = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "width") {
      cfg.width = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "t_len") {
      cfg.t_len = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "sigma") {
      cfg.sigma = parse_double(key, value);
    } else if (key == "dropout") {
      cfg.dropout = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else {
      throw ValidationError("unknown synth config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
  return synth_config_from(parse_key_values(read_text_file(path)));
}

double FireTruth::burned_fraction() const {
  if (burned.empty()) return 0.0;
  return static_cast<double>(std::count(burned.begin(), burned.end(), 1)) /
         static_cast<double>(burned.size());
}

double FireTruth::mean_burned_k() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (burned[i]) {
      sum += k[i];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Sum of three random low-frequency plane waves, scaled into [-1, 1].
std::vector<double> smooth_field(Rng& rng, std::size_t h, std::size_t w) {
  struct Wave {
    double amp, fu, fv, phase;
  };
  Wave waves[3];
  double total = 0.0;
  for (auto& wave : waves) {
    wave = {rng.uniform(0.3, 1.0), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
            rng.uniform(0.0, kTwoPi)};
    total += wave.amp;
  }
  std::vector<double> field(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double v = 0.0;
      for (const auto& wave : waves) {
        v += wave.amp * std::cos(kTwoPi * (wave.fu * static_cast<double>(r) / static_cast<double>(h) +
                                           wave.fv * static_cast<double>(c) / static_cast<double>(w)) +
                                 wave.phase);
      }
      field[r * w + c] = v / total;
    }
  }
  return field;
}

// Connected region grown from the centre by random frontier expansion.
std::vector<std::uint8_t> burn_blob(Rng& rng, std::size_t h, std::size_t w, double fraction) {
  const std::size_t target =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(h * w))));
  std::vector<std::uint8_t> region(h * w, 0);
  std::vector<std::uint8_t> queued(h * w, 0);
  std::vector<std::size_t> frontier{(h / 2) * w + w / 2};
  queued[frontier[0]] = 1;
  std::size_t filled = 0;
  while (filled < target && !frontier.empty()) {
    const std::size_t pick = rng.index(frontier.size());
    const std::size_t cell = frontier[pick];
    frontier[pick] = frontier.back();
    frontier.pop_back();
    region[cell] = 1;
    ++filled;
    const std::size_t r = cell / w;
    const std::size_t c = cell % w;
    auto push = [&](std::size_t rr, std::size_t cc) {
      const std::size_t idx = rr * w + cc;
      if (!queued[idx]) {
        queued[idx] = 1;
        frontier.push_back(idx);
      }
    };
    if (r > 0) push(r - 1, c);
    if (r + 1 < h) push(r + 1, c);
    if (c > 0) push(r, c - 1);
    if (c + 1 < w) push(r, c + 1);
  }
  return region;
}

std::uint64_t fire_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finaliser over (seed, index)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct GeneratedFire {
  FireRecord record;
  RasterStack stack;
  FireTruth truth;
};

GeneratedFire generate_fire(const SynthConfig& cfg, std::uint64_t seed, std::size_t index) {
  Rng rng(fire_seed(seed, index));
  const std::size_t h = cfg.height;
  const std::size_t w = cfg.width;
  const std::size_t pixels = h * w;

  GeneratedFire out;
  char id[32];
  std::snprintf(id, sizeof id, "SYN%03zu", index);
  const int year = 2013 + static_cast<int>(rng.index(8));
  const int month = 1 + static_cast<int>(rng.index(12));
  char ym[16];
  std::snprintf(ym, sizeof ym, "%04d-%02d", year, month);
  out.record.id = id;
  out.record.name = "Synthetic Fire " + std::to_string(index);
  out.record.lon = rng.uniform(-124.0, -114.5);
  out.record.lat = rng.uniform(32.6, 41.9);
  out.record.containment_month = ym;
  out.record.acres = std::round(3000.0 * std::exp(rng.uniform(0.0, std::log(100.0))));

  FireTruth& truth = out.truth;
  truth.fire_id = id;
  truth.height = h;
  truth.width = w;
  truth.start_month = month - 1;

  // Reference NDVI by calendar month.
  const auto ref_field = smooth_field(rng, h, w);
  const double season_phase = rng.uniform(0.0, kTwoPi);
  truth.reference = RasterStack(12, h, w, {std::string(channel::kNdvi)});
  std::vector<double> ref_max(pixels, 0.0);
  for (std::size_t m = 0; m < 12; ++m) {
    const double season = kSynthRefAmplitude * std::sin(kTwoPi * static_cast<double>(m) / 12.0 + season_phase);
    for (std::size_t p = 0; p < pixels; ++p) {
      const float v = static_cast<float>(kSynthRefMean + 0.05 * ref_field[p] + season);
      truth.reference.at(m, p / w, p % w, 0) = v;
      ref_max[p] = std::max(ref_max[p], static_cast<double>(v));
    }
  }

  // Recovery parameters.
  truth.burned = burn_blob(rng, h, w, rng.uniform(0.4, 0.9));
  const double k_fire = rng.uniform() < 0.8 ? rng.uniform(0.05, 0.7) : rng.uniform(-1.2, -0.05);
  const double l_fire = rng.uniform(0.8, 1.25);
  const double t0_fire = rng.uniform(0.0, 4.0);
  const auto k_field = smooth_field(rng, h, w);
  const auto l_field = smooth_field(rng, h, w);
  const auto t0_field = smooth_field(rng, h, w);
  truth.k.resize(pixels);
  truth.capacity.resize(pixels);
  truth.midpoint.resize(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    if (truth.burned[p]) {
      truth.k[p] = static_cast<float>(std::clamp(k_fire + 0.1 * k_field[p], kSynthKMin, kSynthKMax));
      // Keep L * ref <= 1 so noiseless NDVI stays inside the sensor range.
      truth.capacity[p] = static_cast<float>(std::min(l_fire + 0.05 * l_field[p], 1.0 / ref_max[p]));
      truth.midpoint[p] = static_cast<float>(t0_fire + 0.5 * t0_field[p]);
    } else {
      truth.k[p] = 0.0f;
      truth.capacity[p] = 2.0f;
      truth.midpoint[p] = 0.0f;
    }
  }

  // Exogenous fields.
  const auto lst_field = smooth_field(rng, h, w);
  const auto precip_field = smooth_field(rng, h, w);
  const double lst_phase = rng.uniform(0.0, kTwoPi);
  const double precip_scale = rng.uniform(0.6, 1.6);

  out.stack = RasterStack(cfg.t_len, h, w, default_channels());
  RasterStack& s = out.stack;
  for (std::size_t t = 0; t < cfg.t_len; ++t) {
    const std::size_t m = (static_cast<std::size_t>(truth.start_month) + t) % 12;
    const double angle = kTwoPi * static_cast<double>(m) / 12.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t r = p / w;
      const std::size_t c = p % w;
      const double ref = truth.reference.at(m, r, c, 0);
      const double ratio = truth.capacity[p] /
                           (1.0 + std::exp(-static_cast<double>(truth.k[p]) *
                                           (static_cast<double>(t) - truth.midpoint[p])));
      double ndvi = ref * ratio;
      if (cfg.sigma > 0.0) ndvi *= 1.0 + cfg.sigma * rng.normal();
      ndvi = std::clamp(ndvi, -0.2, 1.0);
      float qa = rng.uniform() < 0.3 ? 1.0f : 0.0f;
      if (cfg.dropout > 0.0 && rng.uniform() < cfg.dropout) {
        qa = rng.uniform() < 0.5 ? 2.0f : 3.0f;
        ndvi = rng.uniform(-0.2, 0.1);  // cloud-contaminated retrieval
      }
      const double loss = truth.burned[p] ? std::clamp(1.0 - ratio, 0.0, 1.0) : 0.0;
      const double lst = 290.0 + 10.0 * std::sin(angle + lst_phase) + 2.0 * lst_field[p] + 3.0 * loss;
      const double precip =
          std::max(0.0, precip_scale * (1.5 + 1.5 * std::cos(angle)) * (1.0 + 0.2 * precip_field[p]));
      s.at(t, r, c, 0) = static_cast<float>(ndvi);
      s.at(t, r, c, 1) = static_cast<float>(0.9 * ndvi);
      s.at(t, r, c, 2) = static_cast<float>(lst);
      s.at(t, r, c, 3) = truth.burned[p] ? 1.0f : 0.0f;
      s.at(t, r, c, 4) = static_cast<float>(precip);
      s.at(t, r, c, 5) = qa;
    }
  }
  return out;
}

}  // namespace

SynthOutput synth_generate(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  SynthOutput out;
  out.truth.sigma = config.sigma;
  out.truth.dropout = config.dropout;
  for (std::size_t i = 0; i < config.n_fires; ++i) {
    auto fire = generate_fire(config, seed, i);
    out.catalog.push_back(std::move(fire.record));
    out.stacks.push_back(std::move(fire.stack));
    out.truth.fires.push_back(std::move(fire.truth));
  }
  return out;
}

RasterStack truth_to_stack(const FireTruth& truth) {
  RasterStack s(1, truth.height, truth.width, {"k", "L", "t0", "burned"});
  for (std::size_t p = 0; p < truth.height * truth.width; ++p) {
    const std::size_t r = p / truth.width;
    const std::size_t c = p % truth.width;
    s.at(0, r, c, 0) = truth.k[p];
    s.at(0, r, c, 1) = truth.capacity[p];
    s.at(0, r, c, 2) = truth.midpoint[p];
    s.at(0, r, c, 3) = truth.burned[p] ? 1.0f : 0.0f;
  }
  return s;
}

}  // namespace regrowth
