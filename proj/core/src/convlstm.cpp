#include "regrowth/convlstm.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "regrowth/error.hpp"

namespace regrowth {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

template <typename T>
void glorot(nn::Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-limit, limit));
}

// One cell update over rows = batch * height * width pixels. `gates` receives
// the post-activation (i, f, g, o) values. Null h_prev/c_prev mean zero state.
template <typename T>
void layer_step(const ConvLSTMCell<T>& cell, const T* x, const T* h_prev, const T* c_prev, std::size_t batch,
                std::size_t height, std::size_t width, T* gates, T* c_out, T* h_out, std::vector<T>& cols) {
  const std::size_t rows = batch * height * width;
  const std::size_t cin = cell.in_channels();
  const std::size_t F = cell.filters();
  const std::size_t G = 4 * F;

  MatMap<T> pre(gates, static_cast<long>(rows), static_cast<long>(G));
  cols.resize(rows * kTaps * cin);
  nn::im2col(x, batch, height, width, cin, kKernel, cols.data());
  pre.noalias() = ConstMatMap<T>(cols.data(), static_cast<long>(rows), static_cast<long>(kTaps * cin)) *
                  ConstMatMap<T>(cell.input_kernel.value.ptr(), static_cast<long>(kTaps * cin), static_cast<long>(G));
  if (h_prev != nullptr) {
    cols.resize(rows * kTaps * F);
    nn::im2col(h_prev, batch, height, width, F, kKernel, cols.data());
    pre.noalias() += ConstMatMap<T>(cols.data(), static_cast<long>(rows), static_cast<long>(kTaps * F)) *
                     ConstMatMap<T>(cell.hidden_kernel.value.ptr(), static_cast<long>(kTaps * F), static_cast<long>(G));
  }

  pre.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(cell.bias.value.ptr(), static_cast<long>(G));
  const long R = static_cast<long>(rows);
  const long Fl = static_cast<long>(F);
  pre.leftCols(2 * Fl) = pre.leftCols(2 * Fl).array().logistic();
  pre.middleCols(2 * Fl, Fl) = pre.middleCols(2 * Fl, Fl).array().tanh();
  pre.rightCols(Fl) = pre.rightCols(Fl).array().logistic();

  MatMap<T> c(c_out, R, Fl);
  MatMap<T> h(h_out, R, Fl);
  if (c_prev != nullptr) {
    c.array() = pre.middleCols(Fl, Fl).array() * ConstMatMap<T>(c_prev, R, Fl).array() +
                pre.leftCols(Fl).array() * pre.middleCols(2 * Fl, Fl).array();
  } else {
    c.array() = pre.leftCols(Fl).array() * pre.middleCols(2 * Fl, Fl).array();
  }
  h.array() = pre.rightCols(Fl).array() * c.array().tanh();
}

// Backpropagation through time for one layer. `grad_hidden` is dL/dh_t from
// the layer above, [steps, rows, F]. Input gradients are accumulated into
// `grad_input` when non-null.
template <typename T>
void layer_backward(ConvLSTMCell<T>& cell, const std::vector<T>& input, const std::vector<T>& hidden,
                    const std::vector<T>& cell_state, const std::vector<T>& gates, const std::vector<T>& grad_hidden,
                    std::size_t steps, std::size_t batch, std::size_t height, std::size_t width, T* grad_input) {
  const std::size_t rows = batch * height * width;
  const std::size_t cin = cell.in_channels();
  const std::size_t F = cell.filters();
  const std::size_t G = 4 * F;
  const long R = static_cast<long>(rows);

  std::vector<T> dpre(rows * G);
  std::vector<T> dh_rec(rows * F, T(0));
  std::vector<T> dc_rec(rows * F, T(0));
  std::vector<T> cols;
  std::vector<T> dcols;

  MatMap<T> dwx(cell.input_kernel.grad.ptr(), static_cast<long>(kTaps * cin), static_cast<long>(G));
  MatMap<T> dwh(cell.hidden_kernel.grad.ptr(), static_cast<long>(kTaps * F), static_cast<long>(G));
  T* db = cell.bias.grad.ptr();

  for (std::size_t step = steps; step-- > 0;) {
    const T* gt = gates.data() + step * rows * G;
    const T* ct = cell_state.data() + step * rows * F;
    const T* cp = step > 0 ? cell_state.data() + (step - 1) * rows * F : nullptr;
    const T* gh = grad_hidden.data() + step * rows * F;
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t j = 0; j < F; ++j) {
        const std::size_t k = p * F + j;
        const T i_gate = gt[p * G + j];
        const T f_gate = gt[p * G + F + j];
        const T g_gate = gt[p * G + 2 * F + j];
        const T o_gate = gt[p * G + 3 * F + j];
        const T tc = std::tanh(ct[k]);
        const T dh = gh[k] + dh_rec[k];
        const T dc = dc_rec[k] + dh * o_gate * (T(1) - tc * tc);
        const T prev = cp != nullptr ? cp[k] : T(0);
        T* d = dpre.data() + p * G;
        d[j] = dc * g_gate * i_gate * (T(1) - i_gate);
        d[F + j] = dc * prev * f_gate * (T(1) - f_gate);
        d[2 * F + j] = dc * i_gate * (T(1) - g_gate * g_gate);
        d[3 * F + j] = dh * tc * o_gate * (T(1) - o_gate);
        dc_rec[k] = dc * f_gate;
      }
    }
    ConstMatMap<T> dp(dpre.data(), R, static_cast<long>(G));
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t j = 0; j < G; ++j) db[j] += dpre[p * G + j];
    }

    cols.resize(rows * kTaps * cin);
    nn::im2col(input.data() + step * rows * cin, batch, height, width, cin, kKernel, cols.data());
    ConstMatMap<T> xcols(cols.data(), R, static_cast<long>(kTaps * cin));
    dwx.noalias() += xcols.transpose() * dp;
    if (grad_input != nullptr) {
      dcols.resize(rows * kTaps * cin);
      MatMap<T>(dcols.data(), R, static_cast<long>(kTaps * cin)).noalias() =
          dp * ConstMatMap<T>(cell.input_kernel.value.ptr(), static_cast<long>(kTaps * cin), static_cast<long>(G))
                   .transpose();
      nn::col2im_accumulate(dcols.data(), batch, height, width, cin, kKernel, grad_input + step * rows * cin);
    }

    std::fill(dh_rec.begin(), dh_rec.end(), T(0));
    if (step > 0) {
      cols.resize(rows * kTaps * F);
      nn::im2col(hidden.data() + (step - 1) * rows * F, batch, height, width, F, kKernel, cols.data());
      ConstMatMap<T> hcols(cols.data(), R, static_cast<long>(kTaps * F));
      dwh.noalias() += hcols.transpose() * dp;
      dcols.resize(rows * kTaps * F);
      MatMap<T>(dcols.data(), R, static_cast<long>(kTaps * F)).noalias() =
          dp * ConstMatMap<T>(cell.hidden_kernel.value.ptr(), static_cast<long>(kTaps * F), static_cast<long>(G))
                   .transpose();
      nn::col2im_accumulate(dcols.data(), batch, height, width, F, kKernel, dh_rec.data());
    }
  }
}

// Batch norm followed by ReLU over a [rows, C] block; records the active mask.
template <typename T>
std::vector<T> norm_relu(nn::BatchNorm<T>& norm, const std::vector<T>& x, std::size_t channels,
                         nn::BatchNormMode mode, std::vector<std::uint8_t>& active) {
  nn::Tensor<T> y = norm.forward(nn::Tensor<T>({x.size() / channels, channels}, x), mode);
  std::vector<T> z(y.size());
  active.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    active[i] = y[i] > T(0) ? 1 : 0;
    z[i] = active[i] ? y[i] : T(0);
  }
  return z;
}

template <typename T>
void check_state(const nn::Tensor<T>& state, const nn::Tensor<T>& x, std::size_t filters, const char* what) {
  if (state.rank() != x.rank()) throw ValidationError(std::string("cell_step: ") + what + " rank differs from x");
  for (std::size_t a = 0; a + 1 < x.rank(); ++a) {
    if (state.extent(a) != x.extent(a)) throw ValidationError(std::string("cell_step: ") + what + " spatial shape differs from x");
  }
  if (state.shape().back() != filters) {
    throw ValidationError(std::string("cell_step: ") + what + " has " + std::to_string(state.shape().back()) +
                          " channels, cell has " + std::to_string(filters) + " filters");
  }
}

}  // namespace

// --- cell ------------------------------------------------------------------

template <typename T>
ConvLSTMCell<T>::ConvLSTMCell(const std::string& name, std::size_t in_channels, std::size_t filters)
    : input_kernel(name + "/input_kernel", {kKernel, kKernel, in_channels, 4 * filters}),
      hidden_kernel(name + "/hidden_kernel", {kKernel, kKernel, filters, 4 * filters}),
      bias(name + "/bias", {4 * filters}),
      in_channels_(in_channels),
      filters_(filters) {
  if (in_channels == 0 || filters == 0) throw ValidationError("ConvLSTMCell: channels and filters must be positive");
}

template <typename T>
void ConvLSTMCell<T>::initialize(Rng& rng) {
  glorot(input_kernel.value, kTaps * in_channels_, kTaps * 4 * filters_, rng);
  glorot(hidden_kernel.value, kTaps * filters_, kTaps * 4 * filters_, rng);
  bias.value.fill(T(0));
  for (std::size_t j = 0; j < filters_; ++j) bias.value[filters_ + j] = T(1);
}

template <typename T>
CellOutput<T> cell_step(const nn::Tensor<T>& x, const nn::Tensor<T>& h_prev, const nn::Tensor<T>& c_prev,
                        const ConvLSTMCell<T>& cell) {
  if (x.rank() != 3 && x.rank() != 4) throw ValidationError("cell_step: x must be [H,W,C] or [B,H,W,C]");
  if (x.shape().back() != cell.in_channels()) {
    throw ValidationError("cell_step: x has " + std::to_string(x.shape().back()) + " channels, kernel expects " +
                          std::to_string(cell.in_channels()));
  }
  const std::size_t F = cell.filters();
  check_state(h_prev, x, F, "h_prev");
  check_state(c_prev, x, F, "c_prev");
  const std::size_t batch = x.rank() == 4 ? x.extent(0) : 1;
  const std::size_t height = x.extent(x.rank() - 3);
  const std::size_t width = x.extent(x.rank() - 2);

  std::vector<std::size_t> state_shape = x.shape();
  state_shape.back() = F;
  CellOutput<T> out{nn::Tensor<T>(state_shape), nn::Tensor<T>(state_shape)};
  std::vector<T> gates(batch * height * width * 4 * F);
  std::vector<T> cols;
  layer_step(cell, x.ptr(), h_prev.ptr(), c_prev.ptr(), batch, height, width, gates.data(), out.cell.ptr(),
             out.hidden.ptr(), cols);
  return out;
}

// --- model -----------------------------------------------------------------

template <typename T>
ConvLSTMModel<T>::ConvLSTMModel(std::size_t in_channels)
    : in_channels_(in_channels),
      cells_{ConvLSTMCell<T>("convlstm/layer1", in_channels, kFilters[0]),
             ConvLSTMCell<T>("convlstm/layer2", kFilters[0], kFilters[1]),
             ConvLSTMCell<T>("convlstm/layer3", kFilters[1], kFilters[2])},
      norms_{nn::BatchNorm<T>("convlstm/norm1", kFilters[0]), nn::BatchNorm<T>("convlstm/norm2", kFilters[1])},
      head_kernel_("convlstm/head/kernel", {3, 3, 3, kFilters[2], 1}),
      head_bias_("convlstm/head/bias", {1}) {}

template <typename T>
void ConvLSTMModel<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& cell : cells_) cell.initialize(rng);
  for (auto& norm : norms_) {
    norm.gain.value.fill(T(1));
    norm.offset.value.fill(T(0));
    norm.running_mean.fill(T(0));
    norm.running_var.fill(T(1));
  }
  glorot(head_kernel_.value, 27 * kFilters[2], 27, rng);
  // A ratio of 1 is the pre-fire level.
  head_bias_.value.fill(T(1));
}

template <typename T>
std::vector<nn::Param<T>*> ConvLSTMModel<T>::params() {
  std::vector<nn::Param<T>*> out;
  for (auto& cell : cells_) {
    out.push_back(&cell.input_kernel);
    out.push_back(&cell.hidden_kernel);
    out.push_back(&cell.bias);
  }
  for (auto& norm : norms_) {
    out.push_back(&norm.gain);
    out.push_back(&norm.offset);
  }
  out.push_back(&head_kernel_);
  out.push_back(&head_bias_);
  return out;
}

template <typename T>
void ConvLSTMModel<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template <typename T>
nn::Tensor<T> ConvLSTMModel<T>::forward(const nn::Tensor<T>& inputs, nn::BatchNormMode mode) {
  if (inputs.rank() != 5) throw ValidationError("forward: inputs must be [B,T,H,W,C]");
  if (inputs.extent(4) != in_channels_) {
    throw ValidationError("forward: inputs have " + std::to_string(inputs.extent(4)) + " channels, model expects " +
                          std::to_string(in_channels_));
  }
  batch_ = inputs.extent(0);
  steps_ = inputs.extent(1);
  height_ = inputs.extent(2);
  width_ = inputs.extent(3);
  if (batch_ == 0 || steps_ == 0 || height_ == 0 || width_ == 0) throw ValidationError("forward: empty input");
  const std::size_t pixels = height_ * width_;
  const std::size_t rows = batch_ * pixels;

  // Batch-major -> time-major.
  auto& first = traces_[0];
  first.input.resize(steps_ * rows * in_channels_);
  for (std::size_t t = 0; t < steps_; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(inputs.ptr() + (b * steps_ + t) * pixels * in_channels_, pixels * in_channels_,
                  first.input.data() + (t * batch_ + b) * pixels * in_channels_);
    }
  }

  std::vector<T> cols;
  for (std::size_t l = 0; l < 3; ++l) {
    auto& tr = traces_[l];
    const auto& cell = cells_[l];
    const std::size_t F = cell.filters();
    const std::size_t cin = cell.in_channels();
    if (l > 0) {
      tr.input = norm_relu(norms_[l - 1], traces_[l - 1].hidden, cells_[l - 1].filters(), mode, relu_active_[l - 1]);
    }
    tr.hidden.resize(steps_ * rows * F);
    tr.cell.resize(steps_ * rows * F);
    tr.gates.resize(steps_ * rows * 4 * F);
    for (std::size_t t = 0; t < steps_; ++t) {
      const T* h_prev = t > 0 ? tr.hidden.data() + (t - 1) * rows * F : nullptr;
      const T* c_prev = t > 0 ? tr.cell.data() + (t - 1) * rows * F : nullptr;
      layer_step(cell, tr.input.data() + t * rows * cin, h_prev, c_prev, batch_, height_, width_,
                 tr.gates.data() + t * rows * 4 * F, tr.cell.data() + t * rows * F, tr.hidden.data() + t * rows * F,
                 cols);
    }
  }

  const std::size_t F3 = kFilters[2];
  head_input_ = nn::Tensor<T>({batch_, steps_, height_, width_, F3});
  const auto& h3 = traces_[2].hidden;
  for (std::size_t t = 0; t < steps_; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(h3.data() + (t * batch_ + b) * pixels * F3, pixels * F3,
                  head_input_.ptr() + (b * steps_ + t) * pixels * F3);
    }
  }
  fresh_ = true;
  return nn::conv3d(head_input_, head_kernel_.value, head_bias_.value, nn::TimePadding::kCausal);
}

template <typename T>
void ConvLSTMModel<T>::backward(const nn::Tensor<T>& grad_output) {
  if (!fresh_) throw ValidationError("backward: no forward pass to differentiate (graph already consumed)");
  fresh_ = false;
  const std::size_t pixels = height_ * width_;
  const std::size_t rows = batch_ * pixels;
  if (grad_output.size() != batch_ * steps_ * pixels) throw ValidationError("backward: gradient shape mismatch");

  const auto head = nn::conv3d_backward(head_input_, head_kernel_.value, grad_output, nn::TimePadding::kCausal);
  for (std::size_t i = 0; i < head.kernel.size(); ++i) head_kernel_.grad[i] += head.kernel[i];
  head_bias_.grad[0] += head.bias[0];

  const std::size_t F3 = kFilters[2];
  std::vector<T> grad_hidden(steps_ * rows * F3);
  for (std::size_t t = 0; t < steps_; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(head.input.ptr() + (b * steps_ + t) * pixels * F3, pixels * F3,
                  grad_hidden.data() + (t * batch_ + b) * pixels * F3);
    }
  }

  for (std::size_t l = 3; l-- > 0;) {
    auto& tr = traces_[l];
    std::vector<T> grad_input(l > 0 ? tr.input.size() : 0, T(0));
    layer_backward(cells_[l], tr.input, tr.hidden, tr.cell, tr.gates, grad_hidden, steps_, batch_, height_, width_,
                   l > 0 ? grad_input.data() : nullptr);
    if (l == 0) break;
    const auto& active = relu_active_[l - 1];
    for (std::size_t i = 0; i < grad_input.size(); ++i) {
      if (!active[i]) grad_input[i] = T(0);
    }
    const std::size_t C = cells_[l - 1].filters();
    const std::size_t norm_rows = grad_input.size() / C;
    nn::Tensor<T> dx = norms_[l - 1].backward(nn::Tensor<T>({norm_rows, C}, std::move(grad_input)));
    grad_hidden.assign(dx.data().begin(), dx.data().end());
  }
}

template <typename T>
void ConvLSTMModel<T>::save(Checkpoint& ckp, bool with_moments) const {
  auto* self = const_cast<ConvLSTMModel*>(this);
  ckp.put_scalar("convlstm/in_channels", static_cast<double>(in_channels_));
  for (auto* p : self->params()) {
    ckp.put<T>(p->name, p->value.shape(), p->value.data());
    if (with_moments) {
      ckp.put<T>(p->name + "/adam_m", p->first_moment.shape(), p->first_moment.data());
      ckp.put<T>(p->name + "/adam_v", p->second_moment.shape(), p->second_moment.data());
    }
  }
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    const std::string base = "convlstm/norm" + std::to_string(i + 1);
    ckp.put<T>(base + "/running_mean", norms_[i].running_mean.shape(), norms_[i].running_mean.data());
    ckp.put<T>(base + "/running_var", norms_[i].running_var.shape(), norms_[i].running_var.data());
  }
}

template <typename T>
void ConvLSTMModel<T>::load(const Checkpoint& ckp) {
  const auto channels = static_cast<std::size_t>(ckp.get_scalar("convlstm/in_channels"));
  if (channels != in_channels_) {
    throw FormatError("checkpoint: model has " + std::to_string(channels) + " input channels, expected " +
                      std::to_string(in_channels_));
  }
  for (auto* p : params()) {
    ckp.read_into<T>(p->name, p->value.data());
    if (ckp.has(p->name + "/adam_m")) {
      ckp.read_into<T>(p->name + "/adam_m", p->first_moment.data());
      ckp.read_into<T>(p->name + "/adam_v", p->second_moment.data());
    }
  }
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    const std::string base = "convlstm/norm" + std::to_string(i + 1);
    ckp.read_into<T>(base + "/running_mean", norms_[i].running_mean.data());
    ckp.read_into<T>(base + "/running_var", norms_[i].running_var.data());
  }
  fresh_ = false;
}

// --- stepper ---------------------------------------------------------------

template <typename T>
ConvLSTMModel<T>::Stepper::Stepper(const ConvLSTMModel& model, std::size_t batch, std::size_t height,
                                   std::size_t width)
    : model_(model), batch_(batch), height_(height), width_(width) {
  if (batch == 0 || height == 0 || width == 0) throw ValidationError("Stepper: empty frame shape");
}

template <typename T>
std::vector<T> ConvLSTMModel<T>::Stepper::step(std::span<const T> frame) {
  const std::size_t pixels = height_ * width_;
  const std::size_t rows = batch_ * pixels;
  if (frame.size() != rows * model_.in_channels_) {
    throw ValidationError("Stepper: frame has " + std::to_string(frame.size()) + " values, expected " +
                          std::to_string(rows * model_.in_channels_));
  }
  std::vector<T> x(frame.begin(), frame.end());
  std::vector<T> cols;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& cell = model_.cells_[l];
    const std::size_t F = cell.filters();
    if (l > 0) {
      // Inference-mode batch norm + ReLU.
      const auto& norm = model_.norms_[l - 1];
      const std::size_t C = cell.in_channels();
      for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t c = 0; c < C; ++c) {
          const T inv = T(1) / std::sqrt(norm.running_var[c] + static_cast<T>(nn::BatchNorm<T>::kEpsilon));
          const T y = (x[p * C + c] - norm.running_mean[c]) * inv * norm.gain.value[c] + norm.offset.value[c];
          x[p * C + c] = std::max(y, T(0));
        }
      }
    }
    std::vector<T> gates(rows * 4 * F);
    std::vector<T> h(rows * F);
    std::vector<T> c(rows * F);
    const bool first = steps_ == 0;
    layer_step(cell, x.data(), first ? nullptr : hidden_[l].data(), first ? nullptr : cell_[l].data(), batch_,
               height_, width_, gates.data(), c.data(), h.data(), cols);
    hidden_[l] = h;
    cell_[l] = std::move(c);
    x = std::move(h);
  }
  ++steps_;

  head_history_.push_back(x);
  if (head_history_.size() > 3) head_history_.erase(head_history_.begin());
  const std::size_t frames = head_history_.size();
  const std::size_t F3 = kFilters[2];
  nn::Tensor<T> window({batch_, frames, height_, width_, F3});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < batch_; ++b) {
      std::copy_n(head_history_[t].data() + b * pixels * F3, pixels * F3,
                  window.ptr() + (b * frames + t) * pixels * F3);
    }
  }
  const auto out = nn::conv3d(window, model_.head_kernel_.value, model_.head_bias_.value, nn::TimePadding::kCausal);
  std::vector<T> next(rows);
  for (std::size_t b = 0; b < batch_; ++b) {
    std::copy_n(out.ptr() + (b * frames + frames - 1) * pixels, pixels, next.data() + b * pixels);
  }
  return next;
}

// --- sequences ---------------------------------------------------------------

template <typename T>
SequenceBatch<T> make_sequence_batch(const SampleTensor& samples, std::span<const std::size_t> indices) {
  const std::size_t T_len = samples.timesteps();
  if (T_len < 2) throw ValidationError("sequence batch: need at least 2 timesteps, got " + std::to_string(T_len));
  if (indices.empty()) throw ValidationError("sequence batch: no samples selected");
  const std::size_t H = samples.rows();
  const std::size_t W = samples.cols();
  const std::size_t C = samples.channels();
  const std::size_t frame = H * W * C;
  const std::size_t steps = T_len - 1;
  SequenceBatch<T> out{nn::Tensor<T>({indices.size(), steps, H, W, C}),
                       nn::Tensor<T>({indices.size(), steps, H, W, 1})};
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= samples.samples()) throw ValidationError("sequence batch: sample index out of range");
    const auto s = samples.sample(indices[b]);
    std::copy(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(steps * frame),
              out.inputs.ptr() + b * steps * frame);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t p = 0; p < H * W; ++p) {
        out.targets[(b * steps + t) * H * W + p] =
            static_cast<T>(s[(t + 1) * frame + p * C + sample_channel::kNdvi]);
      }
    }
  }
  return out;
}

template <typename T>
nn::Tensor<T> forward_sequence(ConvLSTMModel<T>& model, const SampleTensor& samples, nn::BatchNormMode mode) {
  if (samples.timesteps() < 2) {
    throw ValidationError("forward_sequence: need at least 2 timesteps, got " + std::to_string(samples.timesteps()));
  }
  const std::size_t S = samples.samples();
  const std::size_t steps = samples.timesteps() - 1;
  const std::size_t plane = samples.rows() * samples.cols();
  nn::Tensor<T> out({S, steps, samples.rows(), samples.cols(), 1});
  // Train-mode statistics depend on the batch, so that mode runs in one pass.
  const std::size_t chunk = mode == nn::BatchNormMode::kTrain ? std::max<std::size_t>(S, 1) : 8;
  for (std::size_t first = 0; first < S; first += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, S - first));
    std::iota(idx.begin(), idx.end(), first);
    const auto batch = make_sequence_batch<T>(samples, idx);
    const auto pred = model.forward(batch.inputs, mode);
    std::copy_n(pred.ptr(), pred.size(), out.ptr() + first * steps * plane);
  }
  return out;
}

// --- training ----------------------------------------------------------------

double evaluate_mae(ConvLSTMModel<float>& model, const SampleTensor& samples, std::size_t batch) {
  if (samples.samples() == 0) throw ValidationError("evaluate_mae: empty sample set");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t first = 0; first < samples.samples(); first += batch) {
    std::vector<std::size_t> idx(std::min(batch, samples.samples() - first));
    std::iota(idx.begin(), idx.end(), first);
    const auto b = make_sequence_batch<float>(samples, idx);
    const auto pred = model.forward(b.inputs, nn::BatchNormMode::kInfer);
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(static_cast<double>(pred[i]) - b.targets[i]);
    count += pred.size();
  }
  return total / static_cast<double>(count);
}

TrainReport train(ConvLSTMModel<float>& model, nn::Adam<float>& optimizer, const SampleTensor& train_set,
                  const SampleTensor& val_set, const TrainOptions& options) {
  if (train_set.samples() == 0) throw ValidationError("train: empty training set");
  if (options.batch == 0) throw ValidationError("train: batch size must be positive");
  const bool has_val = val_set.samples() > 0;
  const SampleTensor& select_set = has_val ? val_set : train_set;

  TrainReport report;
  report.initial_val_mae = evaluate_mae(model, select_set, options.batch);
  report.best_val_mae = std::numeric_limits<double>::infinity();
  Checkpoint best;
  model.save(best, false);

  Rng rng(options.seed);
  std::vector<std::size_t> order(train_set.samples());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto params = model.params();

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.schedule(epoch);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t first = 0; first < order.size(); first += options.batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(options.batch, order.size() - first));
      const auto batch = make_sequence_batch<float>(train_set, idx);
      model.zero_grad();
      const auto pred = model.forward(batch.inputs, nn::BatchNormMode::kTrain);
      const auto loss = nn::mae_loss(pred, batch.targets);
      if (!std::isfinite(loss.value)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      model.backward(loss.grad);
      optimizer.step(params, lr);
      loss_sum += loss.value * static_cast<double>(pred.size());
      loss_count += pred.size();
    }

    EpochLog log{epoch + 1, lr, loss_sum / static_cast<double>(loss_count), 0.0};
    log.val_mae = has_val ? evaluate_mae(model, val_set, options.batch) : log.train_mae;
    report.history.push_back(log);
    if (options.on_epoch) options.on_epoch(log);

    const double limit = options.divergence_factor * std::max(report.initial_val_mae, options.divergence_floor);
    if (!std::isfinite(log.val_mae) || log.val_mae > limit) {
      std::ostringstream msg;
      msg << "train: diverged at epoch " << log.epoch << " (val MAE " << log.val_mae << " > " << limit
          << ", initial " << report.initial_val_mae << ", lr " << lr << ")";
      throw NumericalError(msg.str());
    }
    if (log.val_mae < report.best_val_mae) {
      report.best_val_mae = log.val_mae;
      report.best_epoch = log.epoch;
      best = Checkpoint{};
      model.save(best, false);
    }
  }
  if (report.best_epoch > 0) model.load(best);
  return report;
}

std::string training_log_csv(std::span<const EpochLog> history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,lr,train_mae,val_mae\n";
  for (const auto& e : history) out << e.epoch << ',' << e.lr << ',' << e.train_mae << ',' << e.val_mae << '\n';
  return out.str();
}

// --- rollout -----------------------------------------------------------------

ExogenousPolicy parse_exogenous_policy(const std::string& name) {
  if (name == "persistence+season") return ExogenousPolicy::kPersistenceSeason;
  if (name == "actual") return ExogenousPolicy::kActual;
  throw ValidationError("unknown exogenous policy '" + name + "' (expected persistence+season or actual)");
}

ForecastResult rollout_forecast(const NextFrameFn& next_frame, std::span<const Frame> observed,
                                const RolloutContext& context) {
  namespace ch = sample_channel;
  const std::size_t n_obs = observed.size();
  if (n_obs < std::max<std::size_t>(context.min_observed, 1)) {
    throw ValidationError("rollout: need at least " + std::to_string(context.min_observed) +
                          " observed frames, got " + std::to_string(n_obs));
  }
  const std::size_t pixels = context.batch * context.height * context.width;
  const std::size_t C = ch::kCount;
  if (pixels == 0) throw ValidationError("rollout: empty frame shape");
  for (const auto& f : observed) {
    if (f.size() != pixels * C) throw ValidationError("rollout: observed frame size mismatch");
  }
  if (context.policy == ExogenousPolicy::kActual && context.actual_future.size() + 1 < context.horizon) {
    throw ValidationError("rollout: the actual policy needs " + std::to_string(context.horizon - 1) +
                          " future frames, got " + std::to_string(context.actual_future.size()));
  }
  if (!context.evi_reference.empty() && context.evi_reference.size() < context.horizon) {
    throw ValidationError("rollout: EVI reference needs one frame per forecast step");
  }

  ForecastResult result;
  for (const auto& f : observed) {
    Frame ndvi(pixels);
    for (std::size_t p = 0; p < pixels; ++p) ndvi[p] = f[p * C + ch::kNdvi];
    result.observed.push_back(std::move(ndvi));
  }

  Frame prediction;
  for (const auto& f : observed) prediction = next_frame(f);
  for (std::size_t k = 0; k < context.horizon; ++k) {
    if (prediction.size() != pixels) throw ValidationError("rollout: step function returned a wrong-size frame");
    for (float v : prediction) {
      if (!std::isfinite(v)) throw NumericalError("rollout: non-finite prediction at forecast step " + std::to_string(k + 1));
    }
    result.predicted.push_back(prediction);
    if (k + 1 == context.horizon) break;

    // Input frame for absolute time n_obs + k.
    const std::size_t t = n_obs + k;
    Frame input(pixels * C);
    if (context.policy == ExogenousPolicy::kActual) {
      const auto& actual = context.actual_future[k];
      if (actual.size() != pixels * C) throw ValidationError("rollout: actual frame size mismatch");
      input = actual;
    } else {
      const std::size_t season = t % 12 < n_obs ? t % 12 : n_obs - 1;
      const auto& seasonal = observed[season];
      const auto& last = observed[n_obs - 1];
      for (std::size_t p = 0; p < pixels; ++p) {
        const float ref = context.evi_reference.empty() ? 1.0f : context.evi_reference[k][p];
        input[p * C + ch::kEvi] = 0.9f * prediction[p] * ref;
        input[p * C + ch::kLst] = seasonal[p * C + ch::kLst];
        input[p * C + ch::kPrecip] = seasonal[p * C + ch::kPrecip];
        input[p * C + ch::kFireMask] = last[p * C + ch::kFireMask];
      }
    }
    for (std::size_t p = 0; p < pixels; ++p) input[p * C + ch::kNdvi] = prediction[p];
    prediction = next_frame(input);
  }

  if (!context.actual_ndvi.empty()) {
    if (context.actual_ndvi.size() < context.horizon) throw ValidationError("rollout: too few actual NDVI frames");
    for (std::size_t k = 0; k < context.horizon; ++k) {
      double sum = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) sum += std::abs(result.predicted[k][p] - context.actual_ndvi[k][p]);
      result.frame_mae.push_back(sum / static_cast<double>(pixels));
    }
  }
  return result;
}

ForecastResult rollout_forecast(const ConvLSTMModel<float>& model, std::span<const Frame> observed,
                                const RolloutContext& context) {
  if (model.in_channels() != sample_channel::kCount) {
    throw ValidationError("rollout: model must take " + std::to_string(sample_channel::kCount) + " channels");
  }
  ConvLSTMModel<float>::Stepper stepper(model, context.batch, context.height, context.width);
  return rollout_forecast([&](std::span<const float> frame) { return stepper.step(frame); }, observed, context);
}

#define REGROWTH_INSTANTIATE_CONVLSTM(T)                                                                     \
  template class ConvLSTMCell<T>;                                                                           \
  template class ConvLSTMModel<T>;                                                                          \
  template CellOutput<T> cell_step<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, const nn::Tensor<T>&,   \
                                      const ConvLSTMCell<T>&);                                              \
  template SequenceBatch<T> make_sequence_batch<T>(const SampleTensor&, std::span<const std::size_t>);     \
  template nn::Tensor<T> forward_sequence<T>(ConvLSTMModel<T>&, const SampleTensor&, nn::BatchNormMode);

REGROWTH_INSTANTIATE_CONVLSTM(float)
REGROWTH_INSTANTIATE_CONVLSTM(double)

}  // namespace regrowth
