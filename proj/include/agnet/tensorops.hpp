#pragma once

// Dense T x C kernels for temporal models, plus a small reverse-mode tape.
//
// Every matrix is time-major: row t holds the channel vector of time step t.
// Kernels store their taps as a C_out x (k * C_in) matrix whose column
// j * C_in + c holds weight[o, c, j], so a convolution is one GEMM against the
// unfolded input.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace agnet {

using Index = Eigen::Index;

template <typename Scalar>
using TimeMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline std::string dims(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}
}  // namespace detail

/// Temporal convolution kernel: C_out x C_in x k taps, bias, dilation.
template <typename Scalar>
struct ConvKernel {
  TimeMatrix<Scalar> weights;  // C_out x (k * C_in)
  Vector<Scalar> bias;         // C_out
  Index kernel_size = 1;
  Index dilation = 1;

  static ConvKernel zeros(Index out_channels, Index in_channels, Index kernel_size = 1,
                          Index dilation = 1) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw std::invalid_argument("kernel size must be odd and positive, got " +
                                  std::to_string(kernel_size));
    if (dilation < 1)
      throw std::invalid_argument("dilation must be >= 1, got " + std::to_string(dilation));
    if (out_channels < 1 || in_channels < 1)
      throw std::invalid_argument("kernel channels must be positive");
    ConvKernel k;
    k.weights = TimeMatrix<Scalar>::Zero(out_channels, kernel_size * in_channels);
    k.bias = Vector<Scalar>::Zero(out_channels);
    k.kernel_size = kernel_size;
    k.dilation = dilation;
    return k;
  }

  Index out_channels() const { return weights.rows(); }
  Index in_channels() const { return kernel_size > 0 ? weights.cols() / kernel_size : 0; }
  Index parameter_count() const { return weights.size() + bias.size(); }

  /// Padding that keeps the sequence length unchanged.
  Index same_padding() const { return dilation * (kernel_size - 1) / 2; }
  /// Number of input steps one output step depends on.
  Index receptive_field() const { return dilation * (kernel_size - 1) + 1; }

  Scalar& at(Index out, Index in, Index tap) { return weights(out, tap * in_channels() + in); }
  Scalar at(Index out, Index in, Index tap) const {
    return weights(out, tap * in_channels() + in);
  }

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw std::invalid_argument("kernel size must be odd and positive");
    if (dilation < 1) throw std::invalid_argument("dilation must be >= 1");
    if (weights.cols() % kernel_size != 0 || bias.size() != weights.rows())
      throw ShapeError("kernel weights " + detail::dims(weights.rows(), weights.cols()) +
                       " inconsistent with k=" + std::to_string(kernel_size) +
                       " and bias length " + std::to_string(bias.size()));
  }

  bool operator==(const ConvKernel& o) const {
    return kernel_size == o.kernel_size && dilation == o.dilation &&
           weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           bias.size() == o.bias.size() && weights == o.weights && bias == o.bias;
  }
};

/// Same-shaped zero kernel, used for gradient and optimizer moment buffers.
template <typename Scalar>
ConvKernel<Scalar> zeros_like(const ConvKernel<Scalar>& k) {
  ConvKernel<Scalar> z;
  z.weights = TimeMatrix<Scalar>::Zero(k.weights.rows(), k.weights.cols());
  z.bias = Vector<Scalar>::Zero(k.bias.size());
  z.kernel_size = k.kernel_size;
  z.dilation = k.dilation;
  return z;
}

template <typename Scalar>
Index conv_output_length(Index input_length, const ConvKernel<Scalar>& kern, Index padding) {
  return input_length + 2 * padding - kern.dilation * (kern.kernel_size - 1);
}

/// im2col: row t, column j*C + c holds x[t + j*d - padding, c], zero outside [0, T).
template <typename Scalar>
TimeMatrix<Scalar> unfold(const TimeMatrix<Scalar>& x, Index kernel_size, Index dilation,
                          Index padding, Index out_length) {
  const Index length = x.rows();
  const Index channels = x.cols();
  TimeMatrix<Scalar> cols = TimeMatrix<Scalar>::Zero(out_length, kernel_size * channels);
  for (Index j = 0; j < kernel_size; ++j) {
    const Index offset = j * dilation - padding;
    const Index t_begin = std::max<Index>(0, -offset);
    const Index t_end = std::min<Index>(out_length, length - offset);
    if (t_end > t_begin)
      cols.block(t_begin, j * channels, t_end - t_begin, channels) =
          x.middleRows(t_begin + offset, t_end - t_begin);
  }
  return cols;
}

/// Adjoint of unfold: scatter-add columns back onto a length-T signal.
template <typename Scalar>
TimeMatrix<Scalar> fold(const TimeMatrix<Scalar>& cols, Index length, Index channels,
                        Index kernel_size, Index dilation, Index padding) {
  const Index out_length = cols.rows();
  TimeMatrix<Scalar> x = TimeMatrix<Scalar>::Zero(length, channels);
  for (Index j = 0; j < kernel_size; ++j) {
    const Index offset = j * dilation - padding;
    const Index t_begin = std::max<Index>(0, -offset);
    const Index t_end = std::min<Index>(out_length, length - offset);
    if (t_end > t_begin)
      x.middleRows(t_begin + offset, t_end - t_begin) +=
          cols.block(t_begin, j * channels, t_end - t_begin, channels);
  }
  return x;
}

template <typename Scalar>
void check_conv_input(const TimeMatrix<Scalar>& x, const ConvKernel<Scalar>& kern,
                      Index padding) {
  kern.validate();
  if (x.cols() != kern.in_channels())
    throw ShapeError("conv input has " + std::to_string(x.cols()) +
                     " channels, kernel expects " + std::to_string(kern.in_channels()));
  if (padding < 0) throw std::invalid_argument("negative padding");
  if (conv_output_length(x.rows(), kern, padding) < 1)
    throw ShapeError("conv output would be empty for input length " + std::to_string(x.rows()));
}

/// Centered dilated convolution:
/// y[t, o] = bias[o] + sum_{c,j} w[o,c,j] * xpad[t + j*d - padding, c].
/// With padding = d(k-1)/2 the output has the input's length.
template <typename Scalar>
TimeMatrix<Scalar> conv1d_dilated(const TimeMatrix<Scalar>& x, const ConvKernel<Scalar>& kern,
                                  Index padding) {
  check_conv_input(x, kern, padding);
  const Index out_length = conv_output_length(x.rows(), kern, padding);
  TimeMatrix<Scalar> y =
      unfold(x, kern.kernel_size, kern.dilation, padding, out_length) * kern.weights.transpose();
  y.rowwise() += kern.bias.transpose();
  return y;
}

/// Kernel-size-1 convolution: channel mixing per time step.
template <typename Scalar>
TimeMatrix<Scalar> pointwise_conv(const TimeMatrix<Scalar>& x, const ConvKernel<Scalar>& kern) {
  if (kern.kernel_size != 1)
    throw std::invalid_argument("pointwise_conv requires kernel size 1, got " +
                                std::to_string(kern.kernel_size));
  return conv1d_dilated(x, kern, 0);
}

/// max(x, 0). The subgradient at 0 is taken as 0.
template <typename Scalar>
TimeMatrix<Scalar> relu(const TimeMatrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Clamped so the result stays strictly inside (0, 1) even when exp saturates.
  constexpr Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / 2;
  Scalar y;
  if (x >= 0) {
    y = Scalar(1) / (Scalar(1) + std::exp(-x));
  } else {
    const Scalar e = std::exp(x);
    y = e / (Scalar(1) + e);
  }
  return std::min(std::max(y, lo), hi);
}

template <typename Scalar>
TimeMatrix<Scalar> sigmoid(const TimeMatrix<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

template <typename Scalar>
TimeMatrix<Scalar> hadamard(const TimeMatrix<Scalar>& a, const TimeMatrix<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("hadamard shapes differ: " + detail::dims(a.rows(), a.cols()) + " vs " +
                     detail::dims(b.rows(), b.cols()));
  return a.cwiseProduct(b);
}

/// Inverted-dropout keep mask: entries are 0 or 1/(1-p).
template <typename Scalar, typename Rng>
TimeMatrix<Scalar> dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
  TimeMatrix<Scalar> mask(rows, cols);
  const Scalar keep_scale = Scalar(1) / Scalar(1 - p);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = uniform(rng) < p ? Scalar(0) : keep_scale;
  return mask;
}

/// Inverted dropout; identity when not training or p == 0.
template <typename Scalar, typename Rng>
TimeMatrix<Scalar> dropout(const TimeMatrix<Scalar>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  return x.cwiseProduct(dropout_mask<Scalar>(x.rows(), x.cols(), p, rng));
}

/// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <typename Scalar>
struct TapeGradients {
  /// Gradients of every registered parameter, in registration order.
  std::vector<ConvKernel<Scalar>> parameters;
  /// Gradient of every recorded value, indexed by Var::id.
  std::vector<TimeMatrix<Scalar>> values;

  const TimeMatrix<Scalar>& operator[](Var v) const { return values.at(v.id); }
};

/// Records primitive operations of one forward pass and replays them backward.
///
/// Parameters are registered by pointer and must outlive the tape. A tape is
/// meant for a single forward/backward on one thread.
template <typename Scalar>
class GradTape {
 public:
  using Matrix = TimeMatrix<Scalar>;

  std::size_t parameter(const ConvKernel<Scalar>& kern) {
    kern.validate();
    params_.push_back(&kern);
    return params_.size() - 1;
  }

  Var input(Matrix value) { return push({Op::Input, {}, 0, 0, std::move(value), {}}); }

  Var conv(Var x, std::size_t param, Index padding) {
    const ConvKernel<Scalar>& kern = *params_.at(param);
    const Matrix& xv = value(x);
    check_conv_input(xv, kern, padding);
    const Index out_length = conv_output_length(xv.rows(), kern, padding);
    Matrix cols = unfold(xv, kern.kernel_size, kern.dilation, padding, out_length);
    Matrix y = cols * kern.weights.transpose();
    y.rowwise() += kern.bias.transpose();
    return push({Op::Conv, {x.id, 0}, param, padding, std::move(y), std::move(cols)});
  }

  /// Centered convolution with length-preserving padding.
  Var conv_same(Var x, std::size_t param) { return conv(x, param, params_.at(param)->same_padding()); }

  Var pointwise(Var x, std::size_t param) {
    if (params_.at(param)->kernel_size != 1)
      throw std::invalid_argument("pointwise requires kernel size 1");
    return conv(x, param, 0);
  }

  Var relu(Var x) { return push({Op::Relu, {x.id, 0}, 0, 0, agnet::relu(value(x)), {}}); }

  Var sigmoid(Var x) {
    return push({Op::Sigmoid, {x.id, 0}, 0, 0, agnet::sigmoid(value(x)), {}});
  }

  Var hadamard(Var a, Var b) {
    return push({Op::Hadamard, {a.id, b.id}, 0, 0, agnet::hadamard(value(a), value(b)), {}});
  }

  Var add(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw ShapeError("add shapes differ: " + detail::dims(av.rows(), av.cols()) + " vs " +
                       detail::dims(bv.rows(), bv.cols()));
    return push({Op::Add, {a.id, b.id}, 0, 0, av + bv, {}});
  }

  template <typename Rng>
  Var dropout(Var x, double p, bool training, Rng& rng) {
    const Matrix& xv = value(x);
    if (!(p >= 0.0 && p < 1.0))
      throw std::invalid_argument("dropout probability must be in [0, 1), got " +
                                  std::to_string(p));
    if (!training || p == 0.0) return push({Op::Dropout, {x.id, 0}, 0, 0, xv, {}});
    Matrix mask = dropout_mask<Scalar>(xv.rows(), xv.cols(), p, rng);
    Matrix y = xv.cwiseProduct(mask);
    return push({Op::Dropout, {x.id, 0}, 0, 0, std::move(y), std::move(mask)});
  }

  const Matrix& value(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("variable not recorded on this tape");
    return nodes_[v.id].value;
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return params_.size(); }

  /// Reverse pass seeded with d(loss)/d(output).
  TapeGradients<Scalar> backward(Var output, const Matrix& output_grad) const {
    if (nodes_.empty()) throw std::logic_error("backward called before any forward operation");
    const Matrix& out = value(output);
    if (out.rows() != output_grad.rows() || out.cols() != output_grad.cols())
      throw ShapeError("seed gradient " + detail::dims(output_grad.rows(), output_grad.cols()) +
                       " does not match output " + detail::dims(out.rows(), out.cols()));

    TapeGradients<Scalar> g;
    g.parameters.reserve(params_.size());
    for (const auto* p : params_) g.parameters.push_back(zeros_like(*p));
    g.values.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      g.values[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    g.values[output.id] = output_grad;

    for (std::size_t i = output.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      const Matrix& dy = g.values[i];
      switch (n.op) {
        case Op::Input:
          break;
        case Op::Conv: {
          const ConvKernel<Scalar>& kern = *params_[n.param];
          ConvKernel<Scalar>& dk = g.parameters[n.param];
          dk.weights.noalias() += dy.transpose() * n.aux;
          dk.bias += dy.colwise().sum().transpose();
          const Matrix dcols = dy * kern.weights;
          const Matrix& x = nodes_[n.inputs[0]].value;
          g.values[n.inputs[0]] +=
              fold(dcols, x.rows(), x.cols(), kern.kernel_size, kern.dilation, n.padding);
          break;
        }
        case Op::Relu: {
          const Matrix& x = nodes_[n.inputs[0]].value;
          g.values[n.inputs[0]] +=
              dy.cwiseProduct(x.unaryExpr([](Scalar v) { return v > 0 ? Scalar(1) : Scalar(0); }));
          break;
        }
        case Op::Sigmoid: {
          const Matrix& y = n.value;
          g.values[n.inputs[0]] +=
              dy.cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix()));
          break;
        }
        case Op::Hadamard: {
          const Matrix& a = nodes_[n.inputs[0]].value;
          const Matrix& b = nodes_[n.inputs[1]].value;
          g.values[n.inputs[0]] += dy.cwiseProduct(b);
          g.values[n.inputs[1]] += dy.cwiseProduct(a);
          break;
        }
        case Op::Add:
          g.values[n.inputs[0]] += dy;
          g.values[n.inputs[1]] += dy;
          break;
        case Op::Dropout:
          if (n.aux.size() == 0)
            g.values[n.inputs[0]] += dy;
          else
            g.values[n.inputs[0]] += dy.cwiseProduct(n.aux);
          break;
      }
    }
    return g;
  }

 private:
  enum class Op { Input, Conv, Relu, Sigmoid, Hadamard, Add, Dropout };

  struct Node {
    Op op;
    std::array<std::size_t, 2> inputs;
    std::size_t param;
    Index padding;
    Matrix value;
    Matrix aux;  // unfolded input (Conv) or keep mask (Dropout)
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<const ConvKernel<Scalar>*> params_;
};

}  // namespace agnet
