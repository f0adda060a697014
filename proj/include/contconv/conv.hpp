#pragma once

#include "contconv/mlp.hpp"
#include "contconv/spatial_index.hpp"
#include "contconv/types.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace contconv {

enum class Normalization { None, Mean };
enum class Formulation { Dense, Factorized };

/// Hyperparameters of one parametric continuous convolution layer.
struct ConvLayerSpec {
  Index in_dim = 1;       // F
  Index out_dim = 1;      // O
  Index support_dim = 3;  // D
  Window window = Window::knn(16);
  std::vector<Index> kernel_hidden{16};
  Normalization normalization = Normalization::Mean;
  Formulation formulation = Formulation::Factorized;
  bool residual = false;
  bool kernel_batchnorm = false;
  // Offsets are multiplied by this before entering the kernel.
  double offset_scale = 1.0;

  void validate() const {
    if (in_dim < 1 || out_dim < 1 || support_dim < 1)
      throw ShapeError("conv layer dimensions must be positive");
    if (window.is_knn() ? window.k < 1 : !(window.radius > 0.0))
      throw ShapeError("conv layer window needs K >= 1 or r > 0");
    if (kernel_hidden.empty()) throw ShapeError("kernel MLP needs at least one hidden layer");
    if (!(offset_scale > 0.0)) throw ShapeError("offset scale must be positive");
  }
  /// Number of kernel output channels: F*O when dense, O when factorized.
  Index kernel_channels() const {
    return formulation == Formulation::Dense ? in_dim * out_dim : out_dim;
  }
};

template <typename Scalar>
struct ConvLayer {
  KernelNet<Scalar> kernel;
  MatrixX<Scalar> mix;  // W1, F x O; empty for the dense formulation
};

template <typename To, typename From>
ConvLayer<To> cast_layer(const ConvLayer<From>& l) {
  return {l.kernel.template cast<To>(), l.mix.template cast<To>()};
}

template <typename Scalar, typename Rng>
ConvLayer<Scalar> make_conv_layer(const ConvLayerSpec& spec, Rng& rng) {
  spec.validate();
  MlpLayout layout;
  layout.in_dim = spec.support_dim;
  layout.hidden = spec.kernel_hidden;
  layout.out_dim = spec.kernel_channels();
  layout.hidden_batchnorm = spec.kernel_batchnorm;
  ConvLayer<Scalar> layer;
  layer.kernel = make_mlp<Scalar>(layout, rng);
  if (spec.formulation == Formulation::Factorized) {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    layer.mix.resize(spec.in_dim, spec.out_dim);
    for (Index r = 0; r < spec.in_dim; ++r)
      for (Index c = 0; c < spec.out_dim; ++c) layer.mix(r, c) = static_cast<Scalar>(u(rng));
  }
  return layer;
}

template <typename Scalar>
void collect_params(ConvLayer<Scalar>& layer, ParamList<Scalar>& list, const std::string& prefix) {
  collect_params(layer.kernel, list, prefix + "kernel.");
  if (layer.mix.size() > 0) list.add(prefix + "mix", layer.mix);
}

template <typename Scalar>
void collect_buffers(ConvLayer<Scalar>& layer, ParamList<Scalar>& list, const std::string& prefix) {
  collect_buffers(layer.kernel, list, prefix + "kernel.");
}

template <typename Scalar>
ParamList<Scalar> params_of(ConvLayer<Scalar>& layer) {
  ParamList<Scalar> list;
  collect_params(layer, list, "");
  return list;
}

/// g(z; theta) stacked over offset rows.
template <typename Scalar>
MatrixX<Scalar> eval_kernel(const KernelNet<Scalar>& net, const MatrixX<Scalar>& offsets,
                            Mode mode = Mode::Infer) {
  return mlp_forward(net, offsets, mode).out;
}

/// Per-output scale: 1 or 1/|S(i)|; rows with an empty support get 0.
template <typename Scalar>
VectorX<Scalar> support_norms(const NeighborIndex& nbr, Normalization normalization) {
  VectorX<Scalar> norms(nbr.num_outputs());
  for (Index i = 0; i < nbr.num_outputs(); ++i) {
    const Index n = nbr.row_size(i);
    norms(i) = n == 0 ? Scalar(0)
                      : (normalization == Normalization::Mean ? Scalar(1) / static_cast<Scalar>(n)
                                                              : Scalar(1));
  }
  return norms;
}

template <typename Scalar>
std::vector<std::uint8_t> empty_support_flags(const NeighborIndex& nbr) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(nbr.num_outputs()));
  for (Index i = 0; i < nbr.num_outputs(); ++i) flags[static_cast<std::size_t>(i)] = nbr.row_size(i) == 0;
  return flags;
}

template <typename Scalar>
using RowMap = Eigen::Map<const MatrixX<Scalar>>;

/// h_i = norm_i * sum_{t in S(i)} f_{j(t)}^T G_t with G_t the F x O block
/// stored row-major in kernel row t.
template <typename Scalar>
MatrixX<Scalar> contract_dense(const NeighborIndex& nbr, const MatrixX<Scalar>& kernel_values,
                               const MatrixX<Scalar>& features, const VectorX<Scalar>& norms,
                               Index out_dim) {
  const Index f_dim = features.cols();
  require_shape(kernel_values.rows() == nbr.num_entries() &&
                    kernel_values.cols() == f_dim * out_dim,
                "dense kernel tensor does not match neighbours x F x O");
  require_shape(features.rows() == nbr.num_inputs, "feature rows must equal support point count");
  MatrixX<Scalar> h = MatrixX<Scalar>::Zero(nbr.num_outputs(), out_dim);
  for (Index i = 0; i < nbr.num_outputs(); ++i) {
    RowVectorX<Scalar> acc = RowVectorX<Scalar>::Zero(out_dim);
    for (Index t = nbr.row_begin(i); t < nbr.row_end(i); ++t) {
      const RowMap<Scalar> g(kernel_values.row(t).data(), f_dim, out_dim);
      acc.noalias() += features.row(nbr.indices[static_cast<std::size_t>(t)]) * g;
    }
    h.row(i) = norms(i) * acc;
  }
  return h;
}

/// h_{i,k} = norm_i * sum_{t in S(i)} W2_{t,k} * mixed_{j(t),k}.
template <typename Scalar>
MatrixX<Scalar> contract_factorized(const NeighborIndex& nbr, const MatrixX<Scalar>& kernel_values,
                                    const MatrixX<Scalar>& mixed, const VectorX<Scalar>& norms) {
  const Index out_dim = mixed.cols();
  require_shape(kernel_values.rows() == nbr.num_entries() && kernel_values.cols() == out_dim,
                "factorized kernel tensor does not match neighbours x O");
  require_shape(mixed.rows() == nbr.num_inputs, "feature rows must equal support point count");
  MatrixX<Scalar> h(nbr.num_outputs(), out_dim);
  for (Index i = 0; i < nbr.num_outputs(); ++i) {
    RowVectorX<Scalar> acc = RowVectorX<Scalar>::Zero(out_dim);
    for (Index t = nbr.row_begin(i); t < nbr.row_end(i); ++t)
      acc += kernel_values.row(t).cwiseProduct(mixed.row(nbr.indices[static_cast<std::size_t>(t)]));
    h.row(i) = norms(i) * acc;
  }
  return h;
}

template <typename Scalar>
struct ConvCache {
  std::shared_ptr<const NeighborIndex> neighbors;
  Formulation formulation = Formulation::Factorized;
  Index in_dim = 0;
  Index out_dim = 0;
  MatrixX<Scalar> features;
  MatrixX<Scalar> kernel_values;
  MatrixX<Scalar> mixed;
  VectorX<Scalar> norms;
  MlpCache<Scalar> kernel_cache;
};

template <typename Scalar>
struct ConvOutput {
  MatrixX<Scalar> h;
  std::vector<std::uint8_t> empty_support;  // 1 where S(i) was empty and h_i = 0
  std::int64_t kernel_evaluations = 0;
  ConvCache<Scalar> cache;
};

namespace detail {

template <typename Scalar>
ConvOutput<Scalar> conv_prologue(const ConvLayerSpec& spec, const MatrixX<Scalar>& features,
                                 std::shared_ptr<const NeighborIndex> nbr,
                                 const ConvLayer<Scalar>& layer, Mode mode) {
  spec.validate();
  if (!nbr) throw ShapeError("conv layer needs a neighbour index");
  require_shape(features.cols() == spec.in_dim, "conv input has " + std::to_string(features.cols()) +
                                                    " channels, expected " +
                                                    std::to_string(spec.in_dim));
  require_shape(features.rows() == nbr->num_inputs, "feature rows must equal support point count");
  require_shape(nbr->dim() == spec.support_dim || nbr->num_entries() == 0,
                "neighbour offsets have the wrong support dimension");
  require_shape(layer.kernel.in_dim() == spec.support_dim &&
                    layer.kernel.out_dim() == spec.kernel_channels(),
                "kernel net shape does not match the layer spec");
  require_finite(features, "conv input features");

  ConvOutput<Scalar> out;
  auto& c = out.cache;
  c.formulation = spec.formulation;
  c.in_dim = spec.in_dim;
  c.out_dim = spec.out_dim;
  c.features = features;
  c.norms = support_norms<Scalar>(*nbr, spec.normalization);
  out.empty_support = empty_support_flags<Scalar>(*nbr);
  if (nbr->num_entries() > 0) {
    MatrixX<Scalar> offsets = (nbr->offsets * spec.offset_scale).template cast<Scalar>();
    auto k = mlp_forward(layer.kernel, offsets, mode);
    c.kernel_values = std::move(k.out);
    c.kernel_cache = std::move(k.cache);
  } else {
    c.kernel_values.resize(0, spec.kernel_channels());
  }
  out.kernel_evaluations = static_cast<std::int64_t>(c.kernel_values.size());
  c.neighbors = std::move(nbr);
  return out;
}

}  // namespace detail

/// Full kernel tensor: one kernel channel per (input, output) channel pair.
template <typename Scalar>
ConvOutput<Scalar> conv_forward_dense(const ConvLayerSpec& spec, const MatrixX<Scalar>& features,
                                      std::shared_ptr<const NeighborIndex> nbr,
                                      const ConvLayer<Scalar>& layer, Mode mode = Mode::Train) {
  if (spec.formulation != Formulation::Dense) throw ShapeError("layer spec is not dense");
  auto out = detail::conv_prologue(spec, features, std::move(nbr), layer, mode);
  auto& c = out.cache;
  out.h = contract_dense(*c.neighbors, c.kernel_values, c.features, c.norms, spec.out_dim);
  require_finite(out.h, "conv output");
  return out;
}

/// Kernel shared across input channels: W1 mixes features, W2 = g(offsets)
/// modulates each output channel.
template <typename Scalar>
ConvOutput<Scalar> conv_forward_factorized(const ConvLayerSpec& spec,
                                           const MatrixX<Scalar>& features,
                                           std::shared_ptr<const NeighborIndex> nbr,
                                           const ConvLayer<Scalar>& layer, Mode mode = Mode::Train) {
  if (spec.formulation != Formulation::Factorized) throw ShapeError("layer spec is not factorized");
  require_shape(layer.mix.rows() == spec.in_dim && layer.mix.cols() == spec.out_dim,
                "W1 must be F x O");
  auto out = detail::conv_prologue(spec, features, std::move(nbr), layer, mode);
  auto& c = out.cache;
  c.mixed = c.features * layer.mix;
  out.h = contract_factorized(*c.neighbors, c.kernel_values, c.mixed, c.norms);
  require_finite(out.h, "conv output");
  return out;
}

template <typename Scalar>
ConvOutput<Scalar> conv_forward(const ConvLayerSpec& spec, const MatrixX<Scalar>& features,
                                std::shared_ptr<const NeighborIndex> nbr,
                                const ConvLayer<Scalar>& layer, Mode mode = Mode::Train) {
  return spec.formulation == Formulation::Dense
             ? conv_forward_dense(spec, features, std::move(nbr), layer, mode)
             : conv_forward_factorized(spec, features, std::move(nbr), layer, mode);
}

template <typename Scalar>
struct ConvBackward {
  ConvLayer<Scalar> grad;
  MatrixX<Scalar> grad_features;
};

/// Exact gradients of sum(grad_h .* h) with respect to the kernel parameters,
/// W1 (factorized) and the input features. Offsets are treated as constants.
template <typename Scalar>
ConvBackward<Scalar> conv_backward(const ConvLayer<Scalar>& layer, const ConvCache<Scalar>& cache,
                                   const MatrixX<Scalar>& grad_h) {
  if (!cache.neighbors) throw ShapeError("stale conv cache: no forward recorded");
  const NeighborIndex& nbr = *cache.neighbors;
  require_shape(grad_h.rows() == nbr.num_outputs() && grad_h.cols() == cache.out_dim,
                "conv output gradient does not match the cached forward");
  const bool dense = cache.formulation == Formulation::Dense;
  require_shape(dense ? layer.mix.size() == 0
                      : (layer.mix.rows() == cache.in_dim && layer.mix.cols() == cache.out_dim),
                "stale conv cache: W1 shape changed");
  require_shape(layer.kernel.out_dim() == cache.kernel_values.cols(),
                "stale conv cache: kernel shape changed");

  ConvBackward<Scalar> result;
  result.grad = zeros_like(layer);
  const Index f_dim = cache.in_dim;
  const Index o_dim = cache.out_dim;
  MatrixX<Scalar> d_kernel(cache.kernel_values.rows(), cache.kernel_values.cols());

  if (dense) {
    result.grad_features = MatrixX<Scalar>::Zero(cache.features.rows(), f_dim);
    for (Index i = 0; i < nbr.num_outputs(); ++i) {
      const RowVectorX<Scalar> gi = cache.norms(i) * grad_h.row(i);
      for (Index t = nbr.row_begin(i); t < nbr.row_end(i); ++t) {
        const Index j = nbr.indices[static_cast<std::size_t>(t)];
        Eigen::Map<MatrixX<Scalar>> dg(d_kernel.row(t).data(), f_dim, o_dim);
        dg.noalias() = cache.features.row(j).transpose() * gi;
        const RowMap<Scalar> g(cache.kernel_values.row(t).data(), f_dim, o_dim);
        result.grad_features.row(j).noalias() += gi * g.transpose();
      }
    }
  } else {
    MatrixX<Scalar> d_mixed = MatrixX<Scalar>::Zero(cache.mixed.rows(), o_dim);
    for (Index i = 0; i < nbr.num_outputs(); ++i) {
      const RowVectorX<Scalar> gi = cache.norms(i) * grad_h.row(i);
      for (Index t = nbr.row_begin(i); t < nbr.row_end(i); ++t) {
        const Index j = nbr.indices[static_cast<std::size_t>(t)];
        d_kernel.row(t) = gi.cwiseProduct(cache.mixed.row(j));
        d_mixed.row(j) += gi.cwiseProduct(cache.kernel_values.row(t));
      }
    }
    result.grad.mix.noalias() = cache.features.transpose() * d_mixed;
    result.grad_features.noalias() = d_mixed * layer.mix.transpose();
  }

  if (nbr.num_entries() > 0) {
    auto kb = mlp_backward(layer.kernel, cache.kernel_cache, d_kernel);
    result.grad.kernel = std::move(kb.grad);
  }
  return result;
}

/// Analytic flop count of one factorized layer forward: per neighbour pair
/// the kernel MLP, the F x O feature mix and the O-wide modulate-accumulate.
template <typename Scalar>
double conv_layer_flops(const ConvLayerSpec& spec, const KernelNet<Scalar>& kernel, Index outputs,
                        Index neighbors_per_output) {
  const double pairs = static_cast<double>(outputs) * static_cast<double>(neighbors_per_output);
  const double f = static_cast<double>(spec.in_dim);
  const double o = static_cast<double>(spec.out_dim);
  return pairs * (o + f * o + mlp_flops_per_row(kernel));
}

}  // namespace contconv
