#pragma once

// Dense tensors and the handful of differentiable ops the ConvLSTM needs.
// Every op has an explicit adjoint; there is no general autodiff tape.
// Kernels are laid out [kh][kw][Cin][Cout] (conv3d: [kt][kh][kw][Cin][Cout])
// and activations channel-last, so a 3x3 "same" convolution is an im2col
// followed by one GEMM.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace regrowth::nn {

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0));
  Tensor(std::vector<std::size_t> shape, std::vector<T> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T value);
  Tensor reshaped(std::vector<std::size_t> shape) const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> first_moment;
  Tensor<T> second_moment;

  Param() = default;
  Param(std::string param_name, std::vector<std::size_t> shape);

  void zero_grad() { grad.fill(T(0)); }
};

// --- convolution ---------------------------------------------------------

// rows = batch * height * width, cols = ksize * ksize * channels; "same" zero
// padding, stride 1. `cols` must hold rows * ksize^2 * channels values.
template <typename T>
void im2col(const T* input, std::size_t batch, std::size_t height, std::size_t width,
            std::size_t channels, std::size_t ksize, T* cols);

// Adjoint of im2col: scatter-adds the column matrix back onto `input_grad`.
template <typename T>
void col2im_accumulate(const T* cols, std::size_t batch, std::size_t height, std::size_t width,
                       std::size_t channels, std::size_t ksize, T* input_grad);

// input [H,W,Cin] or [B,H,W,Cin]; kernel [k,k,Cin,Cout], k odd; bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_output);

enum class TimePadding {
  kSame,    // taps at t-1, t, t+1
  kCausal,  // taps at t-2, t-1, t
};

// input [T,H,W,Cin] or [B,T,H,W,Cin]; kernel [3,3,3,Cin,Cout]; bias [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 TimePadding padding = TimePadding::kSame);

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_output, TimePadding padding = TimePadding::kSame);

// --- normalisation -------------------------------------------------------

enum class BatchNormMode { kTrain, kInfer };

template <typename T>
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels);

  std::size_t channels() const { return gain.value.size(); }

  // x is [rows, C] flattened (any leading shape). Train mode normalises with
  // batch statistics and folds them into the running averages.
  Tensor<T> forward(const Tensor<T>& x, BatchNormMode mode);
  // Accumulates gain/offset gradients; returns dL/dx for the last forward.
  Tensor<T> backward(const Tensor<T>& grad_output);

  Param<T> gain;
  Param<T> offset;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  BatchNormMode last_mode_ = BatchNormMode::kInfer;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

// --- elementwise ---------------------------------------------------------

template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// --- loss ----------------------------------------------------------------

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

// Mean |pred - target| over elements whose mask entry is nonzero (all when
// mask is empty). Gradient is sign(pred - target) / n with sign(0) = 0.
template <typename T>
LossResult<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target,
                       std::span<const std::uint8_t> mask = {});

// --- optimisation --------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Bias-corrected first/second moment update of every param, in place.
  void step(std::span<Param<T>* const> params, double lr);

  std::uint64_t step_count() const { return steps_; }
  void set_step_count(std::uint64_t steps) { steps_ = steps; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
};

struct LrSchedule {
  double initial = 1e-3;
  double decay = 0.5;
  std::size_t step = 25;

  // initial * decay^floor(epoch / step)
  double operator()(std::size_t epoch) const;
};

inline double lr_schedule(std::size_t epoch) { return LrSchedule{}(epoch); }

}  // namespace regrowth::nn
