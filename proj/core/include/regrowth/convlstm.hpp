#pragma once

// ConvLSTM forecaster: three ConvLSTM layers (32, 128, 64 filters, 3x3
// kernels), batch norm + ReLU after the first two, and a single-filter
// 3x3x3 Conv3D head over the hidden sequence. The head is causal in time so
// the prediction emitted at step t (for frame t + 1) never sees input t + 1.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "regrowth/checkpoint.hpp"
#include "regrowth/nn.hpp"
#include "regrowth/preprocess.hpp"
#include "regrowth/rng.hpp"

namespace regrowth {

// Channel order of preprocessed stacks and samples.
namespace sample_channel {
inline constexpr std::size_t kNdvi = 0;
inline constexpr std::size_t kEvi = 1;
inline constexpr std::size_t kLst = 2;
inline constexpr std::size_t kFireMask = 3;
inline constexpr std::size_t kPrecip = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace sample_channel

// Gate columns are ordered (i, f, g, o), each `filters` wide.
template <typename T>
class ConvLSTMCell {
 public:
  ConvLSTMCell() = default;
  ConvLSTMCell(const std::string& name, std::size_t in_channels, std::size_t filters);

  std::size_t in_channels() const { return in_channels_; }
  std::size_t filters() const { return filters_; }

  // Glorot-uniform kernels, zero biases except the forget gate (1.0).
  void initialize(Rng& rng);

  nn::Param<T> input_kernel;   // [3,3,Cin,4F]
  nn::Param<T> hidden_kernel;  // [3,3,F,4F]
  nn::Param<T> bias;           // [4F]

 private:
  std::size_t in_channels_ = 0;
  std::size_t filters_ = 0;
};

template <typename T>
struct CellOutput {
  nn::Tensor<T> hidden;
  nn::Tensor<T> cell;
};

// One ConvLSTM update. x is [H,W,Cin] or [B,H,W,Cin]; h_prev/c_prev match
// x with F channels.
template <typename T>
CellOutput<T> cell_step(const nn::Tensor<T>& x, const nn::Tensor<T>& h_prev, const nn::Tensor<T>& c_prev,
                        const ConvLSTMCell<T>& cell);

template <typename T>
class ConvLSTMModel {
 public:
  static constexpr std::array<std::size_t, 3> kFilters{32, 128, 64};

  // All parameters zero (head bias too); call initialize() for training.
  explicit ConvLSTMModel(std::size_t in_channels = sample_channel::kCount);

  void initialize(std::uint64_t seed);

  std::size_t in_channels() const { return in_channels_; }
  const ConvLSTMCell<T>& layer(std::size_t i) const { return cells_[i]; }
  ConvLSTMCell<T>& layer(std::size_t i) { return cells_[i]; }
  nn::BatchNorm<T>& norm(std::size_t i) { return norms_[i]; }
  nn::Param<T>& head_kernel() { return head_kernel_; }
  nn::Param<T>& head_bias() { return head_bias_; }

  std::vector<nn::Param<T>*> params();
  void zero_grad();

  // inputs [B,T,H,W,C] -> [B,T,H,W,1]; output t is the prediction of the
  // frame after input t. Caches activations for one backward().
  nn::Tensor<T> forward(const nn::Tensor<T>& inputs, nn::BatchNormMode mode);
  // Accumulates parameter gradients. Throws unless preceded by a forward().
  void backward(const nn::Tensor<T>& grad_output);

  void save(Checkpoint& ckp, bool with_moments = true) const;
  void load(const Checkpoint& ckp);

  // Incremental inference-mode evaluation, one frame per call.
  class Stepper {
   public:
    Stepper(const ConvLSTMModel& model, std::size_t batch, std::size_t height, std::size_t width);
    // frame [B,H,W,C] -> next-frame prediction [B,H,W]
    std::vector<T> step(std::span<const T> frame);

   private:
    const ConvLSTMModel& model_;
    std::size_t batch_, height_, width_;
    std::array<std::vector<T>, 3> hidden_;
    std::array<std::vector<T>, 3> cell_;
    std::vector<std::vector<T>> head_history_;
    std::size_t steps_ = 0;
  };

 private:
  struct LayerTrace {
    std::vector<T> input;   // [T, rows, Cin]
    std::vector<T> hidden;  // [T, rows, F]
    std::vector<T> cell;    // [T, rows, F]
    std::vector<T> gates;   // [T, rows, 4F], post-activation
  };

  std::size_t in_channels_;
  std::array<ConvLSTMCell<T>, 3> cells_;
  std::array<nn::BatchNorm<T>, 2> norms_;
  nn::Param<T> head_kernel_;  // [3,3,3,64,1]
  nn::Param<T> head_bias_;    // [1]

  std::array<LayerTrace, 3> traces_;
  std::array<std::vector<std::uint8_t>, 2> relu_active_;
  nn::Tensor<T> head_input_;  // [B,T,H,W,64]
  std::size_t batch_ = 0, steps_ = 0, height_ = 0, width_ = 0;
  bool fresh_ = false;
};

// Inputs are frames [0, T-1) of every sample, targets the NDVI channel of
// frames [1, T).
template <typename T>
struct SequenceBatch {
  nn::Tensor<T> inputs;   // [B,T-1,H,W,C]
  nn::Tensor<T> targets;  // [B,T-1,H,W,1]
};

template <typename T>
SequenceBatch<T> make_sequence_batch(const SampleTensor& samples, std::span<const std::size_t> indices);

// One-step-ahead predictions [S,T-1,H,W,1] for every sample.
template <typename T>
nn::Tensor<T> forward_sequence(ConvLSTMModel<T>& model, const SampleTensor& samples,
                               nn::BatchNormMode mode = nn::BatchNormMode::kInfer);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch = 8;
  nn::LrSchedule schedule{};
  std::uint64_t seed = 7;
  // Training aborts when val MAE exceeds factor * max(initial val MAE, floor).
  double divergence_factor = 10.0;
  double divergence_floor = 0.1;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainReport {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  double initial_val_mae = 0.0;
};

// Mean absolute one-step error over `samples` in inference mode.
double evaluate_mae(ConvLSTMModel<float>& model, const SampleTensor& samples, std::size_t batch = 8);

// Teacher-forced training; restores the best-validation parameters on
// return. With an empty validation set, selection uses the training MAE.
TrainReport train(ConvLSTMModel<float>& model, nn::Adam<float>& optimizer, const SampleTensor& train_set,
                  const SampleTensor& val_set, const TrainOptions& options);

std::string training_log_csv(std::span<const EpochLog> history);

// --- autoregressive rollout ------------------------------------------------

enum class ExogenousPolicy {
  // EVI = 0.9 * predicted NDVI; LST/PRECIP from the observed frame of the
  // same calendar month when one exists, else the last observed frame;
  // FIREMASK held at the last observed frame.
  kPersistenceSeason,
  // EVI, LST, FIREMASK and PRECIP from supplied actual frames.
  kActual,
};

ExogenousPolicy parse_exogenous_policy(const std::string& name);

// Frame layout everywhere below is [B,H,W,C] (or [B,H,W] for NDVI-only).
using Frame = std::vector<float>;
using NextFrameFn = std::function<Frame(std::span<const float> frame)>;

struct RolloutContext {
  std::size_t batch = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t horizon = 20;
  std::size_t min_observed = 5;
  ExogenousPolicy policy = ExogenousPolicy::kPersistenceSeason;
  // Optional per-forecast-step reference NDVI [B,H,W]; EVI is then
  // 0.9 * ratio * reference, otherwise 0.9 * ratio.
  std::vector<Frame> evi_reference;
  // kActual: the full-channel frames for each forecast step.
  std::vector<Frame> actual_future;
  // Optional actual NDVI ratio per forecast step, for per-frame MAE.
  std::vector<Frame> actual_ndvi;
};

struct ForecastResult {
  std::vector<Frame> observed;   // NDVI of the observed frames, [B,H,W]
  std::vector<Frame> predicted;  // horizon frames, [B,H,W]
  std::vector<double> frame_mae;  // empty unless actual_ndvi supplied
};

ForecastResult rollout_forecast(const NextFrameFn& next_frame, std::span<const Frame> observed,
                                const RolloutContext& context);
ForecastResult rollout_forecast(const ConvLSTMModel<float>& model, std::span<const Frame> observed,
                                const RolloutContext& context);

}  // namespace regrowth
