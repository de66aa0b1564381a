#include "regrowth/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

#include "regrowth/error.hpp"
#include "regrowth/rng.hpp"

namespace regrowth {

RasterStack mask_unreliable(const RasterStack& stack) {
  const auto qa_idx = stack.find_channel(channel::kQa);
  if (!qa_idx) throw ValidationError("mask_unreliable: stack has no QA channel");
  RasterStack out = stack;
  const auto ndvi = stack.find_channel(channel::kNdvi);
  const auto evi = stack.find_channel(channel::kEvi);
  for (std::size_t t = 0; t < stack.t_len(); ++t) {
    for (std::size_t r = 0; r < stack.height(); ++r) {
      for (std::size_t c = 0; c < stack.width(); ++c) {
        const float qa = std::round(stack.at(t, r, c, *qa_idx));
        if (qa == 2.0f || qa == 3.0f) {
          if (ndvi) out.set_missing(t, r, c, *ndvi, true);
          if (evi) out.set_missing(t, r, c, *evi, true);
        }
      }
    }
  }
  return out.without_channel(channel::kQa);
}

namespace {

struct Candidate {
  long d2;
  std::size_t t, r, c;
  bool operator<(const Candidate& o) const {
    return std::tie(d2, t, r, c) < std::tie(o.d2, o.t, o.r, o.c);
  }
};

}  // namespace

RasterStack knn_impute(const RasterStack& stack, std::size_t k) {
  if (k == 0) throw ValidationError("knn_impute: k must be positive");
  RasterStack out = stack;
  if (!stack.any_missing()) return out;

  const long T = static_cast<long>(stack.t_len());
  const long H = static_cast<long>(stack.height());
  const long W = static_cast<long>(stack.width());
  const long max_radius = std::max({T, H, W});

  std::vector<Candidate> found;
  for (std::size_t ch = 0; ch < stack.channel_count(); ++ch) {
    std::size_t observed = 0;
    std::size_t missing = 0;
    for (long t = 0; t < T; ++t)
      for (long r = 0; r < H; ++r)
        for (long c = 0; c < W; ++c) {
          if (stack.missing(t, r, c, ch)) ++missing;
          else ++observed;
        }
    if (missing == 0) continue;
    if (observed == 0) {
      throw ValidationError("knn_impute: channel '" + stack.channels()[ch] + "' is entirely missing");
    }
    const std::size_t want = std::min(k, observed);

    for (long t = 0; t < T; ++t) {
      for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
          if (!stack.missing(t, r, c, ch)) continue;
          found.clear();
          for (long radius = 1; radius <= max_radius; ++radius) {
            for (long dt = -radius; dt <= radius; ++dt) {
              const long tt = t + dt;
              if (tt < 0 || tt >= T) continue;
              for (long dr = -radius; dr <= radius; ++dr) {
                const long rr = r + dr;
                if (rr < 0 || rr >= H) continue;
                const bool on_shell_tr = std::abs(dt) == radius || std::abs(dr) == radius;
                for (long dc = -radius; dc <= radius; ++dc) {
                  if (!on_shell_tr && std::abs(dc) != radius) continue;
                  const long cc = c + dc;
                  if (cc < 0 || cc >= W) continue;
                  if (stack.missing(tt, rr, cc, ch)) continue;
                  found.push_back({dt * dt + dr * dr + dc * dc, static_cast<std::size_t>(tt),
                                   static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)});
                }
              }
            }
            // Anything outside the cube of this radius is farther than `radius`.
            const long bound = radius * radius;
            const auto settled = static_cast<std::size_t>(std::count_if(
                found.begin(), found.end(), [bound](const Candidate& cand) { return cand.d2 <= bound; }));
            if (settled >= want) break;
          }
          std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(want), found.end());
          double weighted = 0.0;
          double weights = 0.0;
          for (std::size_t i = 0; i < want; ++i) {
            const double w = 1.0 / std::sqrt(static_cast<double>(found[i].d2));
            weighted += w * stack.at(found[i].t, found[i].r, found[i].c, ch);
            weights += w;
          }
          out.at(t, r, c, ch) = static_cast<float>(weighted / weights);
          out.set_missing(t, r, c, ch, false);
        }
      }
    }
  }
  return out;
}

RasterStack deseasonalize(const RasterStack& post, const RasterStack& reference, int start_month) {
  const std::size_t ndvi = post.channel(channel::kNdvi);
  const auto ref_ch = reference.find_channel(channel::kNdvi);
  if (!ref_ch) throw ValidationError("deseasonalize: reference has no NDVI channel");
  if (reference.height() != post.height() || reference.width() != post.width()) {
    throw ValidationError("deseasonalize: reference frame size differs from stack");
  }
  if (start_month < 0 || start_month > 11) {
    throw ValidationError("deseasonalize: start month must lie in [0, 11]");
  }
  RasterStack out = post;
  for (std::size_t t = 0; t < post.t_len(); ++t) {
    const std::size_t month = (static_cast<std::size_t>(start_month) + t) % 12;
    if (month >= reference.t_len()) {
      throw ValidationError("deseasonalize: missing reference frame for month " + std::to_string(month + 1));
    }
    for (std::size_t r = 0; r < post.height(); ++r) {
      for (std::size_t c = 0; c < post.width(); ++c) {
        if (reference.missing(month, r, c, *ref_ch)) {
          throw ValidationError("deseasonalize: reference frame for month " + std::to_string(month + 1) +
                                " has missing pixels");
        }
        const float ref = reference.at(month, r, c, *ref_ch);
        if (std::fabs(ref) < kReferenceGuard) {
          out.at(t, r, c, ndvi) = 0.0f;
          out.set_missing(t, r, c, ndvi, true);
        } else {
          out.at(t, r, c, ndvi) = post.at(t, r, c, ndvi) / ref;
        }
      }
    }
  }
  return out;
}

float ChannelTransform::apply(float x) const {
  double v = x;
  switch (kind) {
    case Kind::kIdentity:
      return x;
    case Kind::kBinarize:
      return x > 0.5f ? 1.0f : 0.0f;
    case Kind::kLogAffine:
      v = std::log1p(std::max(0.0, v));
      [[fallthrough]];
    case Kind::kAffine:
      return static_cast<float>(std::clamp((v - offset) * scale, 0.0, 1.0));
  }
  return x;
}

float ChannelTransform::invert(float y) const {
  switch (kind) {
    case Kind::kIdentity:
    case Kind::kBinarize:
      return y;
    case Kind::kAffine:
      return static_cast<float>(y / scale + offset);
    case Kind::kLogAffine:
      return static_cast<float>(std::expm1(y / scale + offset));
  }
  return y;
}

ChannelScaling ChannelScaling::fit(const RasterStack& stack) {
  ChannelScaling scaling;
  using Kind = ChannelTransform::Kind;
  for (const auto& name : stack.channels()) {
    ChannelTransform tr;
    if (name == channel::kLst) {
      tr = {Kind::kAffine, kLstMinKelvin, 1.0 / (kLstMaxKelvin - kLstMinKelvin)};
    } else if (name == channel::kFireMask) {
      tr.kind = Kind::kBinarize;
    } else if (name == channel::kPrecip) {
      const std::size_t ch = stack.channel(name);
      double lo = INFINITY;
      double hi = -INFINITY;
      for (std::size_t i = ch; i < stack.size(); i += stack.channel_count()) {
        const double v = std::log1p(std::max(0.0, static_cast<double>(stack.data()[i])));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      tr.kind = Kind::kLogAffine;
      tr.offset = std::isfinite(lo) ? lo : 0.0;
      tr.scale = (hi > lo) ? 1.0 / (hi - lo) : 1.0;
    }
    scaling.transforms[name] = tr;
  }
  return scaling;
}

RasterStack scale_channels(const RasterStack& stack, const ChannelScaling& scaling) {
  RasterStack out = stack;
  const std::size_t nc = stack.channel_count();
  for (std::size_t ch = 0; ch < nc; ++ch) {
    auto it = scaling.transforms.find(stack.channels()[ch]);
    if (it == scaling.transforms.end()) continue;
    auto data = out.data();
    for (std::size_t i = ch; i < data.size(); i += nc) data[i] = it->second.apply(data[i]);
  }
  return out;
}

std::vector<std::uint8_t> burned_pixels(const RasterStack& stack) {
  const std::size_t mask = stack.channel(channel::kFireMask);
  std::vector<std::uint8_t> out(stack.frame_pixels(), 0);
  if (stack.t_len() == 0) return out;
  for (std::size_t r = 0; r < stack.height(); ++r) {
    for (std::size_t c = 0; c < stack.width(); ++c) {
      out[r * stack.width() + c] = stack.at(0, r, c, mask) > 0.5f ? 1 : 0;
    }
  }
  return out;
}

double burn_fraction(const RasterStack& stack) {
  const auto burned = burned_pixels(stack);
  if (burned.empty()) return 0.0;
  return static_cast<double>(std::count(burned.begin(), burned.end(), 1)) /
         static_cast<double>(burned.size());
}

std::vector<Subgrid> partition_subgrids(const RasterStack& stack, std::size_t tile) {
  if (tile == 0 || stack.height() % tile != 0 || stack.width() % tile != 0) {
    throw ValidationError("partition_subgrids: " + std::to_string(stack.height()) + "x" +
                          std::to_string(stack.width()) + " is not divisible into " +
                          std::to_string(tile) + "x" + std::to_string(tile) + " tiles");
  }
  std::vector<Subgrid> tiles;
  for (std::size_t r = 0; r < stack.height(); r += tile) {
    for (std::size_t c = 0; c < stack.width(); c += tile) {
      Subgrid sg;
      sg.stack = stack.window(r, c, tile, tile);
      sg.row_offset = r;
      sg.col_offset = c;
      sg.burn_fraction = sg.stack.find_channel(channel::kFireMask) ? burn_fraction(sg.stack) : 0.0;
      tiles.push_back(std::move(sg));
    }
  }
  return tiles;
}

RasterStack reassemble_subgrids(std::span<const Subgrid> tiles, std::size_t height, std::size_t width) {
  if (tiles.empty()) throw ValidationError("reassemble_subgrids: no tiles");
  const auto& first = tiles.front().stack;
  RasterStack out(first.t_len(), height, width, first.channels());
  const std::size_t nc = first.channel_count();
  for (const auto& sg : tiles) {
    const auto& s = sg.stack;
    if (sg.row_offset + s.height() > height || sg.col_offset + s.width() > width) {
      throw ValidationError("reassemble_subgrids: tile exceeds target extent");
    }
    for (std::size_t t = 0; t < s.t_len(); ++t)
      for (std::size_t r = 0; r < s.height(); ++r)
        for (std::size_t c = 0; c < s.width(); ++c)
          for (std::size_t ch = 0; ch < nc; ++ch) {
            out.at(t, sg.row_offset + r, sg.col_offset + c, ch) = s.at(t, r, c, ch);
            out.set_missing(t, sg.row_offset + r, sg.col_offset + c, ch, s.missing(t, r, c, ch));
          }
  }
  return out;
}

std::vector<double> mean_ndvi_series(const RasterStack& stack) {
  const std::size_t ndvi = stack.channel(channel::kNdvi);
  std::vector<double> means(stack.t_len(), 0.0);
  for (std::size_t t = 0; t < stack.t_len(); ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < stack.height(); ++r)
      for (std::size_t c = 0; c < stack.width(); ++c) {
        if (stack.missing(t, r, c, ndvi)) continue;
        sum += stack.at(t, r, c, ndvi);
        ++n;
      }
    means[t] = n ? sum / static_cast<double>(n) : 0.0;
  }
  return means;
}

std::vector<ErraticVerdict> filter_erratic(std::span<const NamedStack> fires,
                                           const ErraticThresholds& thresholds) {
  std::vector<ErraticVerdict> verdicts;
  verdicts.reserve(fires.size());
  char buf[160];
  for (const auto& fire : fires) {
    ErraticVerdict v;
    v.fire_id = fire.fire_id;
    const auto series = mean_ndvi_series(*fire.stack);
    for (std::size_t t = 0; t < series.size() && v.included; ++t) {
      if (series[t] > thresholds.max_mean) {
        std::snprintf(buf, sizeof buf, "mean ratio %.4f exceeds %.4g at t=%zu", series[t],
                      thresholds.max_mean, t);
        v = {fire.fire_id, false, buf};
      } else if (series[t] < thresholds.min_mean) {
        std::snprintf(buf, sizeof buf, "mean ratio %.4f below %.4g at t=%zu", series[t],
                      thresholds.min_mean, t);
        v = {fire.fire_id, false, buf};
      } else if (t > 0 && std::fabs(series[t] - series[t - 1]) > thresholds.max_step) {
        std::snprintf(buf, sizeof buf, "mean ratio step %.4f -> %.4f exceeds %.4g at t=%zu",
                      series[t - 1], series[t], thresholds.max_step, t);
        v = {fire.fire_id, false, buf};
      }
    }
    verdicts.push_back(std::move(v));
  }
  return verdicts;
}

std::string erratic_report(std::span<const ErraticVerdict> verdicts) {
  std::ostringstream out;
  std::size_t excluded = 0;
  for (const auto& v : verdicts) excluded += v.included ? 0 : 1;
  out << "# erratic-fire filter: " << verdicts.size() - excluded << " included, " << excluded
      << " excluded\n";
  for (const auto& v : verdicts) {
    if (!v.included) out << v.fire_id << "\texcluded\t" << v.rule << '\n';
  }
  return out.str();
}

SampleTensor::SampleTensor(std::size_t timesteps, std::size_t rows, std::size_t cols,
                           std::size_t channels)
    : timesteps_(timesteps), rows_(rows), cols_(cols), channels_(channels) {}

void SampleTensor::append(const RasterStack& stack, SampleProvenance provenance) {
  if (stack.t_len() != timesteps_ || stack.height() != rows_ || stack.width() != cols_ ||
      stack.channel_count() != channels_) {
    throw ValidationError("SampleTensor::append: stack shape does not match sample shape");
  }
  if (stack.any_missing()) {
    throw ValidationError("SampleTensor::append: stack still has missing values");
  }
  data_.insert(data_.end(), stack.data().begin(), stack.data().end());
  provenance_.push_back(std::move(provenance));
}

SampleTensor SampleTensor::subset(std::span<const std::size_t> indices) const {
  SampleTensor out(timesteps_, rows_, cols_, channels_);
  out.data_.reserve(indices.size() * sample_size());
  for (auto i : indices) {
    const auto s = sample(i);
    out.data_.insert(out.data_.end(), s.begin(), s.end());
    out.provenance_.push_back(provenance_[i]);
  }
  return out;
}

FireSplit split_fires(std::vector<std::string> fire_ids, double fraction, std::uint64_t seed) {
  std::sort(fire_ids.begin(), fire_ids.end());
  fire_ids.erase(std::unique(fire_ids.begin(), fire_ids.end()), fire_ids.end());
  if (fire_ids.size() < 2) throw ValidationError("split_train_val: need at least 2 fires");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("split_train_val: fraction must lie in (0, 1]");
  }
  Rng rng(seed);
  rng.shuffle(std::span(fire_ids));
  auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(fire_ids.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, fire_ids.size());
  FireSplit split;
  split.train.assign(fire_ids.begin(), fire_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(fire_ids.begin() + static_cast<std::ptrdiff_t>(n_train), fire_ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  split.empty_validation = split.val.empty();
  return split;
}

SampleSplit split_train_val(const SampleTensor& samples, double fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.samples(); ++i) ids.push_back(samples.provenance(i).fire_id);
  SampleSplit out;
  out.fires = split_fires(ids, fraction, seed);
  const std::set<std::string> train_ids(out.fires.train.begin(), out.fires.train.end());
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  for (std::size_t i = 0; i < samples.samples(); ++i) {
    (train_ids.count(samples.provenance(i).fire_id) ? train_idx : val_idx).push_back(i);
  }
  out.train = samples.subset(train_idx);
  out.val = samples.subset(val_idx);
  return out;
}

RasterStack preprocess_fire(const RasterStack& raw, const RasterStack& reference, int start_month,
                            const PreprocessOptions& options) {
  RasterStack s = mask_unreliable(raw);
  s = knn_impute(s, options.knn_k);
  s = deseasonalize(s, reference, start_month);
  s = knn_impute(s, options.knn_k);
  return scale_channels(s, ChannelScaling::fit(s));
}

}  // namespace regrowth
