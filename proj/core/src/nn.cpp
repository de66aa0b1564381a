#include "regrowth/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "regrowth/error.hpp"

namespace regrowth::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, T fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  if (shape_.size() > 5) throw ValidationError("tensor rank exceeds 5");
}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_.size() > 5) throw ValidationError("tensor rank exceeds 5");
  if (data_.size() != shape_product(shape_)) {
    throw ValidationError("tensor data length does not match shape");
  }
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(std::vector<std::size_t> shape) const {
  return Tensor<T>(std::move(shape), data_);
}

template <typename T>
Param<T>::Param(std::string param_name, std::vector<std::size_t> shape)
    : name(std::move(param_name)),
      value(shape),
      grad(shape),
      first_moment(shape),
      second_moment(shape) {}

// --- convolution ---------------------------------------------------------

template <typename T>
void im2col(const T* input, std::size_t batch, std::size_t height, std::size_t width,
            std::size_t channels, std::size_t ksize, T* cols) {
  const long pad = static_cast<long>(ksize / 2);
  const long H = static_cast<long>(height);
  const long W = static_cast<long>(width);
  const std::size_t row_len = ksize * ksize * channels;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* image = input + b * height * width * channels;
    for (long r = 0; r < H; ++r) {
      for (long c = 0; c < W; ++c) {
        T* dst = cols + ((b * height + static_cast<std::size_t>(r)) * width + static_cast<std::size_t>(c)) * row_len;
        for (long dr = 0; dr < static_cast<long>(ksize); ++dr) {
          const long rr = r + dr - pad;
          for (long dc = 0; dc < static_cast<long>(ksize); ++dc, dst += channels) {
            const long cc = c + dc - pad;
            if (rr < 0 || rr >= H || cc < 0 || cc >= W) {
              std::fill_n(dst, channels, T(0));
            } else {
              std::copy_n(image + (static_cast<std::size_t>(rr) * width + static_cast<std::size_t>(cc)) * channels,
                          channels, dst);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* cols, std::size_t batch, std::size_t height, std::size_t width,
                       std::size_t channels, std::size_t ksize, T* input_grad) {
  const long pad = static_cast<long>(ksize / 2);
  const long H = static_cast<long>(height);
  const long W = static_cast<long>(width);
  const std::size_t row_len = ksize * ksize * channels;
  for (std::size_t b = 0; b < batch; ++b) {
    T* image = input_grad + b * height * width * channels;
    for (long r = 0; r < H; ++r) {
      for (long c = 0; c < W; ++c) {
        const T* src = cols + ((b * height + static_cast<std::size_t>(r)) * width + static_cast<std::size_t>(c)) * row_len;
        for (long dr = 0; dr < static_cast<long>(ksize); ++dr) {
          const long rr = r + dr - pad;
          for (long dc = 0; dc < static_cast<long>(ksize); ++dc, src += channels) {
            const long cc = c + dc - pad;
            if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
            T* dst = image + (static_cast<std::size_t>(rr) * width + static_cast<std::size_t>(cc)) * channels;
            for (std::size_t i = 0; i < channels; ++i) dst[i] += src[i];
          }
        }
      }
    }
  }
}

namespace {

struct Conv2dShape {
  std::size_t batch, height, width, cin, cout, ksize;
};

template <typename T>
Conv2dShape conv2d_shape(const Tensor<T>& input, const Tensor<T>& kernel) {
  if (kernel.rank() != 4 || kernel.extent(0) != kernel.extent(1) || kernel.extent(0) % 2 == 0) {
    throw ValidationError("conv2d: kernel must be [k,k,Cin,Cout] with odd k");
  }
  Conv2dShape s{};
  if (input.rank() == 3) {
    s = {1, input.extent(0), input.extent(1), input.extent(2), 0, 0};
  } else if (input.rank() == 4) {
    s = {input.extent(0), input.extent(1), input.extent(2), input.extent(3), 0, 0};
  } else {
    throw ValidationError("conv2d: input must be [H,W,C] or [B,H,W,C]");
  }
  if (kernel.extent(2) != s.cin) {
    throw ValidationError("conv2d: channel mismatch (input " + std::to_string(s.cin) + ", kernel " +
                          std::to_string(kernel.extent(2)) + ")");
  }
  s.cout = kernel.extent(3);
  s.ksize = kernel.extent(0);
  return s;
}

template <typename T>
std::vector<std::size_t> with_channels(const Tensor<T>& input, std::size_t channels) {
  auto shape = input.shape();
  shape.back() = channels;
  return shape;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const auto s = conv2d_shape(input, kernel);
  if (bias.size() != s.cout) throw ValidationError("conv2d: bias length must equal Cout");
  const std::size_t rows = s.batch * s.height * s.width;
  const std::size_t k = s.ksize * s.ksize * s.cin;
  std::vector<T> cols(rows * k);
  im2col(input.ptr(), s.batch, s.height, s.width, s.cin, s.ksize, cols.data());
  Tensor<T> out(with_channels(input, s.cout));
  MatMap<T> o(out.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(s.cout));
  o.noalias() = ConstMatMap<T>(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
                ConstMatMap<T>(kernel.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s.cout));
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.ptr(), static_cast<Eigen::Index>(s.cout));
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_output) {
  const auto s = conv2d_shape(input, kernel);
  const std::size_t rows = s.batch * s.height * s.width;
  const std::size_t k = s.ksize * s.ksize * s.cin;
  if (grad_output.size() != rows * s.cout) throw ValidationError("conv2d_backward: grad shape mismatch");
  const auto R = static_cast<Eigen::Index>(rows);
  const auto K = static_cast<Eigen::Index>(k);
  const auto C = static_cast<Eigen::Index>(s.cout);

  std::vector<T> cols(rows * k);
  im2col(input.ptr(), s.batch, s.height, s.width, s.cin, s.ksize, cols.data());
  ConstMatMap<T> g(grad_output.ptr(), R, C);

  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()), Tensor<T>({s.cout})};
  MatMap<T>(grads.kernel.ptr(), K, C).noalias() = ConstMatMap<T>(cols.data(), R, K).transpose() * g;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads.bias.ptr(), C) = g.colwise().sum();
  MatMap<T>(cols.data(), R, K).noalias() = g * ConstMatMap<T>(kernel.ptr(), K, C).transpose();
  col2im_accumulate(cols.data(), s.batch, s.height, s.width, s.cin, s.ksize, grads.input.ptr());
  return grads;
}

namespace {

struct Conv3dShape {
  std::size_t batch, time, height, width, cin, cout;
};

template <typename T>
Conv3dShape conv3d_shape(const Tensor<T>& input, const Tensor<T>& kernel) {
  if (kernel.rank() != 5 || kernel.extent(0) != 3 || kernel.extent(1) != 3 || kernel.extent(2) != 3) {
    throw ValidationError("conv3d: kernel must be [3,3,3,Cin,Cout]");
  }
  Conv3dShape s{};
  if (input.rank() == 4) {
    s = {1, input.extent(0), input.extent(1), input.extent(2), input.extent(3), 0};
  } else if (input.rank() == 5) {
    s = {input.extent(0), input.extent(1), input.extent(2), input.extent(3), input.extent(4), 0};
  } else {
    throw ValidationError("conv3d: input must be [T,H,W,C] or [B,T,H,W,C]");
  }
  if (kernel.extent(3) != s.cin) {
    throw ValidationError("conv3d: channel mismatch (input " + std::to_string(s.cin) + ", kernel " +
                          std::to_string(kernel.extent(3)) + ")");
  }
  s.cout = kernel.extent(4);
  return s;
}

// Visits every (output position, kernel tap, input position) triple.
template <typename Fn>
void for_each_conv3d_tap(const Conv3dShape& s, TimePadding padding, Fn&& fn) {
  const long t_off = padding == TimePadding::kSame ? 1 : 2;
  const long T = static_cast<long>(s.time);
  const long H = static_cast<long>(s.height);
  const long W = static_cast<long>(s.width);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (long t = 0; t < T; ++t) {
      for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
          const std::size_t out_pos = (((b * s.time + static_cast<std::size_t>(t)) * s.height +
                                        static_cast<std::size_t>(r)) * s.width + static_cast<std::size_t>(c));
          for (long dt = 0; dt < 3; ++dt) {
            const long tt = t + dt - t_off;
            if (tt < 0 || tt >= T) continue;
            for (long dr = 0; dr < 3; ++dr) {
              const long rr = r + dr - 1;
              if (rr < 0 || rr >= H) continue;
              for (long dc = 0; dc < 3; ++dc) {
                const long cc = c + dc - 1;
                if (cc < 0 || cc >= W) continue;
                const std::size_t in_pos = (((b * s.time + static_cast<std::size_t>(tt)) * s.height +
                                             static_cast<std::size_t>(rr)) * s.width + static_cast<std::size_t>(cc));
                const std::size_t tap = static_cast<std::size_t>((dt * 3 + dr) * 3 + dc);
                fn(out_pos, tap, in_pos);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 TimePadding padding) {
  const auto s = conv3d_shape(input, kernel);
  if (bias.size() != s.cout) throw ValidationError("conv3d: bias length must equal Cout");
  Tensor<T> out(with_channels(input, s.cout));
  const std::size_t positions = s.batch * s.time * s.height * s.width;
  for (std::size_t p = 0; p < positions; ++p) {
    std::copy_n(bias.ptr(), s.cout, out.ptr() + p * s.cout);
  }
  const T* in = input.ptr();
  const T* w = kernel.ptr();
  T* o = out.ptr();
  for_each_conv3d_tap(s, padding, [&](std::size_t out_pos, std::size_t tap, std::size_t in_pos) {
    const T* x = in + in_pos * s.cin;
    const T* k = w + tap * s.cin * s.cout;
    T* y = o + out_pos * s.cout;
    for (std::size_t i = 0; i < s.cin; ++i) {
      const T xi = x[i];
      for (std::size_t j = 0; j < s.cout; ++j) y[j] += xi * k[i * s.cout + j];
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_output, TimePadding padding) {
  const auto s = conv3d_shape(input, kernel);
  const std::size_t positions = s.batch * s.time * s.height * s.width;
  if (grad_output.size() != positions * s.cout) {
    throw ValidationError("conv3d_backward: grad shape mismatch");
  }
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()), Tensor<T>({s.cout})};
  const T* g = grad_output.ptr();
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < s.cout; ++j) grads.bias[j] += g[p * s.cout + j];
  }
  const T* in = input.ptr();
  const T* w = kernel.ptr();
  T* din = grads.input.ptr();
  T* dw = grads.kernel.ptr();
  for_each_conv3d_tap(s, padding, [&](std::size_t out_pos, std::size_t tap, std::size_t in_pos) {
    const T* x = in + in_pos * s.cin;
    const T* k = w + tap * s.cin * s.cout;
    const T* gy = g + out_pos * s.cout;
    T* dx = din + in_pos * s.cin;
    T* dk = dw + tap * s.cin * s.cout;
    for (std::size_t i = 0; i < s.cin; ++i) {
      T acc = T(0);
      for (std::size_t j = 0; j < s.cout; ++j) {
        dk[i * s.cout + j] += x[i] * gy[j];
        acc += k[i * s.cout + j] * gy[j];
      }
      dx[i] += acc;
    }
  });
  return grads;
}

// --- batch norm ------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels)
    : gain(name + "/gain", {channels}),
      offset(name + "/offset", {channels}),
      running_mean({channels}, T(0)),
      running_var({channels}, T(1)) {
  gain.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, BatchNormMode mode) {
  const std::size_t C = channels();
  if (x.empty() || x.shape().back() != C) throw ValidationError("batchnorm: channel mismatch or empty batch");
  const std::size_t rows = x.size() / C;
  if (rows == 0) throw ValidationError("batchnorm: zero batch");
  last_mode_ = mode;
  Tensor<T> out(x.shape());
  normalized_ = Tensor<T>(x.shape());
  inv_std_.assign(C, T(0));
  const T* in = x.ptr();

  std::vector<double> mean(C, 0.0);
  std::vector<double> var(C, 0.0);
  if (mode == BatchNormMode::kTrain) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) mean[c] += in[r * C + c];
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = in[r * C + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(rows);
      running_mean[c] = static_cast<T>(kMomentum * running_mean[c] + (1.0 - kMomentum) * mean[c]);
      running_var[c] = static_cast<T>(kMomentum * running_var[c] + (1.0 - kMomentum) * var[c]);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }
  for (std::size_t c = 0; c < C; ++c) inv_std_[c] = static_cast<T>(1.0 / std::sqrt(var[c] + kEpsilon));
  T* o = out.ptr();
  T* xh = normalized_.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const T v = static_cast<T>((in[r * C + c] - mean[c])) * inv_std_[c];
      xh[r * C + c] = v;
      o[r * C + c] = gain.value[c] * v + offset.value[c];
    }
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_output) {
  const std::size_t C = channels();
  if (grad_output.size() != normalized_.size()) throw ValidationError("batchnorm backward: shape mismatch");
  const std::size_t rows = grad_output.size() / C;
  const T* g = grad_output.ptr();
  const T* xh = normalized_.ptr();
  std::vector<double> sum_g(C, 0.0);
  std::vector<double> sum_gx(C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      sum_g[c] += g[r * C + c];
      sum_gx[c] += static_cast<double>(g[r * C + c]) * xh[r * C + c];
    }
  for (std::size_t c = 0; c < C; ++c) {
    gain.grad[c] += static_cast<T>(sum_gx[c]);
    offset.grad[c] += static_cast<T>(sum_g[c]);
  }
  Tensor<T> dx(grad_output.shape());
  T* d = dx.ptr();
  if (last_mode_ == BatchNormMode::kInfer) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) d[r * C + c] = g[r * C + c] * gain.value[c] * inv_std_[c];
    return dx;
  }
  const double n = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      // dxhat = g * gain; dx = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
      const double gc = gain.value[c];
      const double v = gc * (n * g[r * C + c] - sum_g[c] - xh[r * C + c] * sum_gx[c]);
      d[r * C + c] = static_cast<T>(inv_std_[c] * v / n);
    }
  }
  return dx;
}

// --- elementwise ------------------------------------------------------------

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

// --- loss ---------------------------------------------------------------

template <typename T>
LossResult<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size()) throw ValidationError("mae_loss: size mismatch");
  if (!mask.empty() && mask.size() != pred.size()) throw ValidationError("mae_loss: mask size mismatch");
  LossResult<T> out{0.0, Tensor<T>(pred.shape())};
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    sum += std::fabs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
    ++n;
  }
  if (n == 0) return out;
  out.value = sum / static_cast<double>(n);
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const T d = pred[i] - target[i];
    out.grad[i] = d > T(0) ? inv_n : (d < T(0) ? -inv_n : T(0));
  }
  return out;
}

// --- optimiser ------------------------------------------------------------

template <typename T>
void Adam<T>::step(std::span<Param<T>* const> params, double lr) {
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (Param<T>* p : params) {
    T* w = p->value.ptr();
    const T* g = p->grad.ptr();
    T* m = p->first_moment.ptr();
    T* v = p->second_moment.ptr();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

double LrSchedule::operator()(std::size_t epoch) const {
  return initial * std::pow(decay, static_cast<double>(epoch / step));
}

#define REGROWTH_NN_INSTANTIATE(T)                                                               \
  template class Tensor<T>;                                                                      \
  template struct Param<T>;                                                                      \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t,          \
                          std::size_t, T*);                                                      \
  template void col2im_accumulate<T>(const T*, std::size_t, std::size_t, std::size_t,            \
                                     std::size_t, std::size_t, T*);                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, TimePadding); \
  template ConvGrads<T> conv3d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                           TimePadding);                                         \
  template class BatchNorm<T>;                                                                   \
  template T sigmoid<T>(T);                                                                      \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                               \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                  \
  template LossResult<T> mae_loss<T>(const Tensor<T>&, const Tensor<T>&,                         \
                                     std::span<const std::uint8_t>);                             \
  template class Adam<T>;

REGROWTH_NN_INSTANTIATE(float)
REGROWTH_NN_INSTANTIATE(double)

#undef REGROWTH_NN_INSTANTIATE

}  // namespace regrowth::nn
