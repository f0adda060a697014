#pragma once

#include "contconv/types.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace contconv {

enum class Activation { None, Relu };
enum class Mode { Train, Infer };

/// Per-feature normalization over the row (point) axis.
template <typename Scalar>
struct BatchNorm {
  MatrixX<Scalar> gamma;  // 1 x C
  MatrixX<Scalar> beta;   // 1 x C
  MatrixX<Scalar> running_mean;
  MatrixX<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);
  // False until a training batch (or a checkpoint) has populated the running
  // statistics.
  bool tracked = false;

  explicit BatchNorm(Index channels = 0)
      : gamma(MatrixX<Scalar>::Ones(1, channels)),
        beta(MatrixX<Scalar>::Zero(1, channels)),
        running_mean(MatrixX<Scalar>::Zero(1, channels)),
        running_var(MatrixX<Scalar>::Ones(1, channels)) {}

  Index channels() const { return gamma.cols(); }
};

template <typename To, typename From>
BatchNorm<To> cast_batchnorm(const BatchNorm<From>& b) {
  BatchNorm<To> bn;
  bn.gamma = b.gamma.template cast<To>();
  bn.beta = b.beta.template cast<To>();
  bn.running_mean = b.running_mean.template cast<To>();
  bn.running_var = b.running_var.template cast<To>();
  bn.momentum = static_cast<To>(b.momentum);
  bn.eps = static_cast<To>(b.eps);
  bn.tracked = b.tracked;
  return bn;
}

template <typename Scalar>
struct BatchNormCache {
  MatrixX<Scalar> xhat;
  RowVectorX<Scalar> inv_std;
  RowVectorX<Scalar> batch_mean;
  RowVectorX<Scalar> batch_var;  // biased
  Mode mode = Mode::Train;
};

template <typename Scalar>
MatrixX<Scalar> batchnorm_forward(const BatchNorm<Scalar>& bn, const MatrixX<Scalar>& x, Mode mode,
                                  BatchNormCache<Scalar>& cache) {
  require_shape(x.cols() == bn.channels(), "batch-norm channel mismatch");
  cache.mode = mode;
  if (mode == Mode::Train) {
    if (x.rows() < 1) throw ShapeError("batch-norm needs at least one row in train mode");
    cache.batch_mean = x.colwise().mean();
    const MatrixX<Scalar> centered = x.rowwise() - cache.batch_mean;
    cache.batch_var = centered.array().square().colwise().mean().matrix();
    cache.inv_std = (cache.batch_var.array() + bn.eps).rsqrt().matrix();
    cache.xhat = centered.array().rowwise() * cache.inv_std.array();
  } else {
    cache.inv_std = (bn.running_var.array() + bn.eps).rsqrt().matrix();
    const RowVectorX<Scalar> mean = bn.running_mean;
    cache.xhat = (x.rowwise() - mean).array().rowwise() * cache.inv_std.array();
  }
  const RowVectorX<Scalar> g = bn.gamma;
  const RowVectorX<Scalar> b = bn.beta;
  return ((cache.xhat.array().rowwise() * g.array()).rowwise() + b.array()).matrix();
}

/// Returns dL/dx; accumulates dL/dgamma and dL/dbeta into `grad`.
template <typename Scalar>
MatrixX<Scalar> batchnorm_backward(const BatchNorm<Scalar>& bn, const BatchNormCache<Scalar>& cache,
                                   const MatrixX<Scalar>& dy, BatchNorm<Scalar>& grad) {
  require_shape(dy.rows() == cache.xhat.rows() && dy.cols() == cache.xhat.cols(),
                "batch-norm gradient shape does not match cache");
  grad.gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.beta += dy.colwise().sum();
  const RowVectorX<Scalar> g = bn.gamma;
  const MatrixX<Scalar> dxhat = dy.array().rowwise() * g.array();
  if (cache.mode == Mode::Infer) return dxhat.array().rowwise() * cache.inv_std.array();
  const Scalar m = static_cast<Scalar>(dy.rows());
  const RowVectorX<Scalar> sum_dxhat = dxhat.colwise().sum();
  const RowVectorX<Scalar> sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
  MatrixX<Scalar> dx = (dxhat * m).rowwise() - sum_dxhat;
  dx -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().rowwise() * (cache.inv_std.array() / m)).matrix();
}

/// Folds the batch statistics of a train-mode forward into the running
/// averages (unbiased variance, as is conventional).
template <typename Scalar>
void commit_batch_stats(BatchNorm<Scalar>& bn, const BatchNormCache<Scalar>& cache) {
  if (cache.mode != Mode::Train) return;
  const Scalar n = static_cast<Scalar>(cache.xhat.rows());
  const RowVectorX<Scalar> unbiased = n > 1 ? RowVectorX<Scalar>(cache.batch_var * (n / (n - 1)))
                                            : cache.batch_var;
  bn.running_mean = (Scalar(1) - bn.momentum) * bn.running_mean + bn.momentum * cache.batch_mean;
  bn.running_var = (Scalar(1) - bn.momentum) * bn.running_var + bn.momentum * unbiased;
  bn.tracked = true;
}

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  MatrixX<Scalar> bias;    // 1 x out
  std::optional<BatchNorm<Scalar>> norm;
  Activation activation = Activation::None;

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
};

/// Point-wise multi-layer perceptron. Used as the continuous kernel
/// g(z; theta) and for the fully connected heads.
template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  Index in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Index out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  bool has_batchnorm() const {
    for (const auto& l : layers)
      if (l.norm) return true;
    return false;
  }
  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out;
    for (const auto& l : layers) {
      DenseLayer<Other> c;
      c.weight = l.weight.template cast<Other>();
      c.bias = l.bias.template cast<Other>();
      c.activation = l.activation;
      if (l.norm) c.norm = cast_batchnorm<Other>(*l.norm);
      out.layers.push_back(std::move(c));
    }
    return out;
  }
};

template <typename Scalar>
using KernelNet = Mlp<Scalar>;

struct MlpLayout {
  Index in_dim = 0;
  std::vector<Index> hidden;
  Index out_dim = 0;
  Activation hidden_activation = Activation::Relu;
  Activation output_activation = Activation::None;
  bool hidden_batchnorm = false;
};

/// Glorot-uniform weights, zero biases, identity batch-norm.
template <typename Scalar, typename Rng>
Mlp<Scalar> make_mlp(const MlpLayout& layout, Rng& rng) {
  if (layout.in_dim < 1 || layout.out_dim < 1) throw ShapeError("MLP dimensions must be positive");
  Mlp<Scalar> net;
  std::vector<Index> dims{layout.in_dim};
  dims.insert(dims.end(), layout.hidden.begin(), layout.hidden.end());
  dims.push_back(layout.out_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l];
    const Index out = dims[l + 1];
    if (out < 1) throw ShapeError("MLP hidden dimensions must be positive");
    const bool last = l + 2 == dims.size();
    DenseLayer<Scalar> layer;
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    layer.weight.resize(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) layer.weight(r, c) = static_cast<Scalar>(u(rng));
    layer.bias = MatrixX<Scalar>::Zero(1, out);
    layer.activation = last ? layout.output_activation : layout.hidden_activation;
    if (!last && layout.hidden_batchnorm) layer.norm = BatchNorm<Scalar>(out);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

template <typename Scalar>
struct DenseLayerCache {
  MatrixX<Scalar> input;
  MatrixX<Scalar> pre_activation;
  BatchNormCache<Scalar> norm;
  Index in_dim = 0;
  Index out_dim = 0;
};

template <typename Scalar>
struct MlpCache {
  Mode mode = Mode::Train;
  Index rows = 0;
  std::vector<DenseLayerCache<Scalar>> layers;
};

template <typename Scalar>
struct MlpForward {
  MatrixX<Scalar> out;
  MlpCache<Scalar> cache;
};

/// Forward pass over the rows of z. Pure: train-mode batch statistics are
/// recorded in the cache and applied to the net by commit_batch_stats.
template <typename Scalar>
MlpForward<Scalar> mlp_forward(const Mlp<Scalar>& net, const MatrixX<Scalar>& z, Mode mode) {
  if (net.layers.empty()) throw ShapeError("MLP has no layers");
  require_shape(z.cols() == net.in_dim(), "MLP input has " + std::to_string(z.cols()) +
                                              " columns, expected " + std::to_string(net.in_dim()));
  MlpForward<Scalar> result;
  result.cache.mode = mode;
  result.cache.rows = z.rows();
  result.cache.layers.resize(net.layers.size());
  MatrixX<Scalar> x = z;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    auto& c = result.cache.layers[l];
    require_shape(x.cols() == layer.in_dim(), "MLP layer dimensions do not chain");
    c.in_dim = layer.in_dim();
    c.out_dim = layer.out_dim();
    MatrixX<Scalar> a = x * layer.weight.transpose();
    a.rowwise() += layer.bias.row(0);
    if (layer.norm) a = batchnorm_forward(*layer.norm, a, mode, c.norm);
    c.input = std::move(x);
    if (layer.activation == Activation::Relu) {
      c.pre_activation = a;
      x = a.cwiseMax(Scalar(0));
    } else {
      x = std::move(a);
    }
  }
  require_finite(x, "MLP output");
  result.out = std::move(x);
  return result;
}

template <typename Scalar>
void commit_batch_stats(Mlp<Scalar>& net, const MlpCache<Scalar>& cache) {
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    if (net.layers[l].norm) commit_batch_stats(*net.layers[l].norm, cache.layers[l].norm);
}

template <typename Scalar>
void collect_params(Mlp<Scalar>& net, ParamList<Scalar>& list, const std::string& prefix) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    list.add(p + "weight", layer.weight);
    list.add(p + "bias", layer.bias);
    if (layer.norm) {
      list.add(p + "bn.gamma", layer.norm->gamma);
      list.add(p + "bn.beta", layer.norm->beta);
    }
  }
}

/// Non-learnable state that a checkpoint must carry.
template <typename Scalar>
void collect_buffers(Mlp<Scalar>& net, ParamList<Scalar>& list, const std::string& prefix) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    if (!layer.norm) continue;
    const std::string p = prefix + "layer" + std::to_string(l) + ".bn.";
    list.add(p + "running_mean", layer.norm->running_mean);
    list.add(p + "running_var", layer.norm->running_var);
  }
}

/// Copy of a module with every learnable tensor zeroed; the container type for
/// its gradient.
template <typename Module>
Module zeros_like(const Module& m) {
  Module z = m;
  for (auto* v : params_of(z).values) v->setZero();
  return z;
}

template <typename Scalar>
ParamList<Scalar> params_of(Mlp<Scalar>& net) {
  ParamList<Scalar> list;
  collect_params(net, list, "");
  return list;
}

template <typename Scalar>
struct MlpBackward {
  Mlp<Scalar> grad;  // same shape as the net; learnable entries hold gradients
  MatrixX<Scalar> grad_input;
};

/// Exact reverse-mode gradients of sum(grad_out .* out).
template <typename Scalar>
MlpBackward<Scalar> mlp_backward(const Mlp<Scalar>& net, const MlpCache<Scalar>& cache,
                                 const MatrixX<Scalar>& grad_out) {
  if (cache.layers.size() != net.layers.size())
    throw ShapeError("stale MLP cache: layer count differs from the net");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (cache.layers[l].in_dim != net.layers[l].in_dim() ||
        cache.layers[l].out_dim != net.layers[l].out_dim())
      throw ShapeError("stale MLP cache: layer " + std::to_string(l) + " shape changed");
  }
  require_shape(grad_out.rows() == cache.rows && grad_out.cols() == net.out_dim(),
                "MLP output gradient does not match the cached forward");

  MlpBackward<Scalar> result;
  result.grad = net;
  for (auto& layer : result.grad.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
    if (layer.norm) {
      layer.norm->gamma.setZero();
      layer.norm->beta.setZero();
    }
  }
  MatrixX<Scalar> g = grad_out;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    const auto& c = cache.layers[li];
    auto& gl = result.grad.layers[li];
    if (layer.activation == Activation::Relu)
      g = (c.pre_activation.array() > Scalar(0)).select(g, Scalar(0));
    if (layer.norm) g = batchnorm_backward(*layer.norm, c.norm, g, *gl.norm);
    gl.weight.noalias() += g.transpose() * c.input;
    gl.bias += g.colwise().sum();
    g = g * layer.weight;
  }
  result.grad_input = std::move(g);
  return result;
}

/// Folds every batch-norm into its affine layer using the running
/// statistics. The result has no batch-norm layers.
template <typename Scalar>
Mlp<Scalar> fuse_batchnorm_linear(const Mlp<Scalar>& net) {
  Mlp<Scalar> fused;
  for (const auto& layer : net.layers) {
    DenseLayer<Scalar> f;
    f.activation = layer.activation;
    if (!layer.norm) {
      f.weight = layer.weight;
      f.bias = layer.bias;
    } else {
      const auto& bn = *layer.norm;
      if (!bn.tracked) throw NumericError("batch-norm has no running statistics to fuse");
      const RowVectorX<Scalar> scale =
          (bn.gamma.array() * (bn.running_var.array() + bn.eps).rsqrt()).matrix();
      f.weight = scale.transpose().asDiagonal() * layer.weight;
      f.bias = ((layer.bias - bn.running_mean).array() * scale.array() + bn.beta.array()).matrix();
    }
    fused.layers.push_back(std::move(f));
  }
  return fused;
}

/// Multiply-accumulate count of one forward row (affine, batch-norm and
/// activation each counted as flops).
template <typename Scalar>
double mlp_flops_per_row(const Mlp<Scalar>& net) {
  double f = 0.0;
  for (const auto& l : net.layers) {
    f += 2.0 * static_cast<double>(l.in_dim() * l.out_dim()) + static_cast<double>(l.out_dim());
    if (l.norm) f += 4.0 * static_cast<double>(l.out_dim());
    if (l.activation == Activation::Relu) f += static_cast<double>(l.out_dim());
  }
  return f;
}

}  // namespace contconv
