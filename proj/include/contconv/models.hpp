#pragma once

#include "contconv/adam.hpp"
#include "contconv/conv.hpp"
#include "contconv/mlp.hpp"
#include "contconv/spatial_index.hpp"
#include "contconv/types.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace contconv {

enum class PoolMode { None, ConcatGlobal, Global };
enum class LossKind { CrossEntropy, WeightedCrossEntropy, Mse, PerLayerMse };

/// One continuous convolution followed by optional batch-norm and activation.
/// conv.residual wraps it as y = x + block(x).
struct BlockSpec {
  ConvLayerSpec conv;
  bool batchnorm = true;
  Activation activation = Activation::Relu;
};

struct NetworkSpec {
  std::string name;
  Index support_dim = 3;
  Index input_dim = 1;
  std::vector<BlockSpec> blocks;
  PoolMode pool = PoolMode::None;
  std::vector<Index> head_hidden;
  // Width of the fully connected head; 0 means the last block is the output.
  Index num_outputs = 0;
  LossKind loss = LossKind::CrossEntropy;

  bool has_head() const { return num_outputs > 0; }
  Index block_width() const { return blocks.empty() ? 0 : blocks.back().conv.out_dim; }
  Index head_input_dim() const {
    return pool == PoolMode::ConcatGlobal ? 2 * block_width() : block_width();
  }
  Index output_dim() const { return has_head() ? num_outputs : block_width(); }
  bool is_classifier() const {
    return loss == LossKind::CrossEntropy || loss == LossKind::WeightedCrossEntropy;
  }
  void validate() const;
};

struct ArchOptions {
  Window window = Window::knn(16);
  std::vector<Index> kernel_hidden{16};
  Index width = 32;
  Formulation formulation = Formulation::Factorized;
  Normalization normalization = Normalization::Mean;
  bool kernel_batchnorm = false;
  double offset_scale = 1.0;
  // Flow only: window of the first layer, which matches source points against
  // both frames. Unset means `window`.
  std::optional<Window> cross_window;
};

NetworkSpec build_indoor_segnet(Index num_classes, Index support_dim = 3, Index input_dim = 6,
                                const ArchOptions& options = {});
NetworkSpec build_driving_segnet(Index num_classes, Index support_dim = 3, Index input_dim = 4,
                                 const ArchOptions& options = {});
NetworkSpec build_flownet(Index support_dim = 3, const ArchOptions& options = {});
NetworkSpec build_classnet(Index num_classes = 40, Index support_dim = 3, Index input_dim = 3,
                           const ArchOptions& options = {});

/// Text form carried inside checkpoints; parse(serialize(s)) == s.
std::string serialize_spec(const NetworkSpec& spec);
NetworkSpec parse_spec(const std::string& text);
bool operator==(const NetworkSpec& a, const NetworkSpec& b);

// Neighbourhoods for every block of one cloud. The first block gathers from
// `support` (which may differ from the output points, e.g. both flow frames);
// later blocks gather from the output points themselves. Blocks with equal
// windows share one index.
struct NetNeighbors {
  std::vector<std::shared_ptr<const NeighborIndex>> blocks;
};

NetNeighbors build_network_neighbors(const NetworkSpec& spec, const Eigen::MatrixXd& points,
                                     const Eigen::MatrixXd& support, int threads = 1);

template <typename Scalar>
struct NetInput {
  Eigen::MatrixXd points;   // N x D; every block outputs here
  Eigen::MatrixXd support;  // first block's support, empty = points
  MatrixX<Scalar> features; // rows follow the first block's support

  const Eigen::MatrixXd& first_support() const { return support.size() > 0 ? support : points; }
};

/// Flow input: both frames form the first support, with one-hot frame
/// indicators as features; predictions live on the source points.
template <typename Scalar>
NetInput<Scalar> flow_input(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target) {
  require_shape(source.cols() == target.cols(), "flow frames differ in dimension");
  NetInput<Scalar> in;
  in.points = source;
  in.support.resize(source.rows() + target.rows(), source.cols());
  in.support << source, target;
  in.features = MatrixX<Scalar>::Zero(in.support.rows(), 2);
  in.features.topRows(source.rows()).col(0).setOnes();
  in.features.bottomRows(target.rows()).col(1).setOnes();
  return in;
}

template <typename Scalar>
struct Block {
  ConvLayer<Scalar> conv;
  std::optional<BatchNorm<Scalar>> norm;
  MatrixX<Scalar> shortcut;  // F x O projection for residual blocks that change width
};

template <typename Scalar>
struct Network {
  NetworkSpec spec;
  std::vector<Block<Scalar>> blocks;
  Mlp<Scalar> head;
};

template <typename To, typename From>
Network<To> cast_network(const Network<From>& n) {
  Network<To> out;
  out.spec = n.spec;
  for (const auto& b : n.blocks) {
    Block<To> c;
    c.conv = cast_layer<To>(b.conv);
    if (b.norm) c.norm = cast_batchnorm<To>(*b.norm);
    c.shortcut = b.shortcut.template cast<To>();
    out.blocks.push_back(std::move(c));
  }
  out.head = n.head.template cast<To>();
  return out;
}

template <typename To, typename From>
NetInput<To> cast_input(const NetInput<From>& in) {
  return {in.points, in.support, in.features.template cast<To>()};
}

template <typename Scalar, typename Rng>
Network<Scalar> make_network(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Network<Scalar> net;
  net.spec = spec;
  for (const auto& bs : spec.blocks) {
    Block<Scalar> b;
    b.conv = make_conv_layer<Scalar>(bs.conv, rng);
    if (bs.batchnorm) b.norm = BatchNorm<Scalar>(bs.conv.out_dim);
    if (bs.conv.residual && bs.conv.in_dim != bs.conv.out_dim) {
      const double bound = std::sqrt(6.0 / static_cast<double>(bs.conv.in_dim + bs.conv.out_dim));
      std::uniform_real_distribution<double> u(-bound, bound);
      b.shortcut.resize(bs.conv.in_dim, bs.conv.out_dim);
      for (Index r = 0; r < b.shortcut.rows(); ++r)
        for (Index c = 0; c < b.shortcut.cols(); ++c) b.shortcut(r, c) = static_cast<Scalar>(u(rng));
    }
    net.blocks.push_back(std::move(b));
  }
  if (spec.has_head()) {
    MlpLayout layout;
    layout.in_dim = spec.head_input_dim();
    layout.hidden = spec.head_hidden;
    layout.out_dim = spec.num_outputs;
    net.head = make_mlp<Scalar>(layout, rng);
  }
  return net;
}

template <typename Scalar>
void collect_params(Network<Scalar>& net, ParamList<Scalar>& list, const std::string& prefix) {
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    auto& b = net.blocks[l];
    const std::string p = prefix + "block" + std::to_string(l) + ".";
    collect_params(b.conv, list, p + "conv.");
    if (b.norm) {
      list.add(p + "bn.gamma", b.norm->gamma);
      list.add(p + "bn.beta", b.norm->beta);
    }
    if (b.shortcut.size() > 0) list.add(p + "shortcut", b.shortcut);
  }
  if (!net.head.layers.empty()) collect_params(net.head, list, prefix + "head.");
}

template <typename Scalar>
void collect_buffers(Network<Scalar>& net, ParamList<Scalar>& list, const std::string& prefix) {
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    auto& b = net.blocks[l];
    const std::string p = prefix + "block" + std::to_string(l) + ".";
    collect_buffers(b.conv, list, p + "conv.");
    if (b.norm) {
      list.add(p + "bn.running_mean", b.norm->running_mean);
      list.add(p + "bn.running_var", b.norm->running_var);
    }
  }
  if (!net.head.layers.empty()) collect_buffers(net.head, list, prefix + "head.");
}

template <typename Scalar>
ParamList<Scalar> params_of(Network<Scalar>& net) {
  ParamList<Scalar> list;
  collect_params(net, list, "");
  return list;
}

/// Every batch-norm in the network, kernel MLPs included.
template <typename Scalar, typename Fn>
void for_each_batchnorm(Network<Scalar>& net, Fn&& fn) {
  for (auto& b : net.blocks) {
    for (auto& l : b.conv.kernel.layers)
      if (l.norm) fn(*l.norm);
    if (b.norm) fn(*b.norm);
  }
  for (auto& l : net.head.layers)
    if (l.norm) fn(*l.norm);
}

/// Zeroes the last scale of every residual branch so that each residual block
/// starts as the identity on its input features.
template <typename Scalar>
void zero_init_residual_branches(Network<Scalar>& net) {
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    if (!net.spec.blocks[l].conv.residual) continue;
    auto& b = net.blocks[l];
    if (b.norm) {
      b.norm->gamma.setZero();
      b.norm->beta.setZero();
    } else if (b.conv.mix.size() > 0) {
      b.conv.mix.setZero();
    } else {
      b.conv.kernel.layers.back().weight.setZero();
      b.conv.kernel.layers.back().bias.setZero();
    }
  }
}

template <typename Scalar>
struct BlockCache {
  ConvCache<Scalar> conv;
  BatchNormCache<Scalar> norm;
  MatrixX<Scalar> pre_activation;
};

template <typename Scalar>
struct NetForward {
  MatrixX<Scalar> out;
  std::vector<MatrixX<Scalar>> block_outputs;
  std::vector<BlockCache<Scalar>> blocks;
  std::vector<Index> argmax;  // row of the global max per channel
  MlpCache<Scalar> head;
  Mode mode = Mode::Train;
};

template <typename Scalar>
NetForward<Scalar> net_forward(const Network<Scalar>& net, const NetInput<Scalar>& input,
                               const NetNeighbors& nbrs, Mode mode) {
  const auto& spec = net.spec;
  require_shape(net.blocks.size() == spec.blocks.size(), "network parameters do not match its spec");
  require_shape(nbrs.blocks.size() == spec.blocks.size(), "neighbour set does not match the network");
  require_shape(input.features.cols() == spec.input_dim,
                "network input has " + std::to_string(input.features.cols()) +
                    " feature channels, expected " + std::to_string(spec.input_dim));
  NetForward<Scalar> fwd;
  fwd.mode = mode;
  fwd.blocks.resize(net.blocks.size());
  MatrixX<Scalar> x = input.features;
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    const auto& bs = spec.blocks[l];
    const auto& b = net.blocks[l];
    auto& c = fwd.blocks[l];
    try {
      auto conv = conv_forward(bs.conv, x, nbrs.blocks[l], b.conv, mode);
      MatrixX<Scalar> h = std::move(conv.h);
      c.conv = std::move(conv.cache);
      if (b.norm) h = batchnorm_forward(*b.norm, h, mode, c.norm);
      if (bs.activation == Activation::Relu) {
        c.pre_activation = h;
        h = h.cwiseMax(Scalar(0));
      }
      if (bs.conv.residual) {
        require_shape(x.rows() == h.rows(), "residual block needs matching input and output points");
        if (b.shortcut.size() > 0)
          h.noalias() += x * b.shortcut;
        else
          h += x;
      }
      require_finite(h, "block output");
      x = std::move(h);
    } catch (const NumericError& e) {
      throw NumericError("block " + std::to_string(l) + ": " + e.what());
    }
    fwd.block_outputs.push_back(x);
  }
  if (!spec.has_head()) {
    fwd.out = std::move(x);
    return fwd;
  }
  MatrixX<Scalar> z;
  if (spec.pool != PoolMode::None) {
    const Index c = x.cols();
    fwd.argmax.assign(static_cast<std::size_t>(c), 0);
    RowVectorX<Scalar> m(c);
    for (Index k = 0; k < c; ++k) {
      Index best = 0;
      for (Index i = 1; i < x.rows(); ++i)
        if (x(i, k) > x(best, k)) best = i;
      fwd.argmax[static_cast<std::size_t>(k)] = best;
      m(k) = x(best, k);
    }
    if (spec.pool == PoolMode::Global) {
      z = m;
    } else {
      z.resize(x.rows(), 2 * c);
      z.leftCols(c) = x;
      z.rightCols(c) = m.replicate(x.rows(), 1);
    }
  } else {
    z = std::move(x);
  }
  try {
    auto h = mlp_forward(net.head, z, mode);
    fwd.out = std::move(h.out);
    fwd.head = std::move(h.cache);
  } catch (const NumericError& e) {
    throw NumericError(std::string("head: ") + e.what());
  }
  return fwd;
}

template <typename Scalar>
struct NetBackward {
  Network<Scalar> grad;
  MatrixX<Scalar> grad_features;
};

/// Gradients of sum(grad_out .* out) + sum_l sum(block_grads[l] .* block_outputs[l]).
/// block_grads may be empty, or hold empty matrices for unsupervised blocks.
template <typename Scalar>
NetBackward<Scalar> net_backward(const Network<Scalar>& net, const NetForward<Scalar>& fwd,
                                 const MatrixX<Scalar>& grad_out,
                                 const std::vector<MatrixX<Scalar>>& block_grads = {}) {
  const auto& spec = net.spec;
  require_shape(fwd.blocks.size() == net.blocks.size(), "stale network cache");
  require_shape(grad_out.rows() == fwd.out.rows() && grad_out.cols() == fwd.out.cols(),
                "network output gradient does not match the cached forward");
  NetBackward<Scalar> result;
  result.grad = zeros_like(net);

  MatrixX<Scalar> gx;
  if (spec.has_head()) {
    auto hb = mlp_backward(net.head, fwd.head, grad_out);
    result.grad.head = std::move(hb.grad);
    const MatrixX<Scalar>& last = fwd.block_outputs.back();
    const Index c = last.cols();
    RowVectorX<Scalar> gm;
    if (spec.pool == PoolMode::None) {
      gx = std::move(hb.grad_input);
    } else if (spec.pool == PoolMode::Global) {
      gx = MatrixX<Scalar>::Zero(last.rows(), c);
      gm = hb.grad_input.row(0);
    } else {
      gx = hb.grad_input.leftCols(c);
      gm = hb.grad_input.rightCols(c).colwise().sum();
    }
    for (Index k = 0; k < gm.size(); ++k) gx(fwd.argmax[static_cast<std::size_t>(k)], k) += gm(k);
  } else {
    gx = grad_out;
  }

  for (std::size_t l = net.blocks.size(); l-- > 0;) {
    const auto& bs = spec.blocks[l];
    const auto& b = net.blocks[l];
    const auto& c = fwd.blocks[l];
    auto& gb = result.grad.blocks[l];
    if (l < block_grads.size() && block_grads[l].size() > 0) {
      require_shape(block_grads[l].rows() == gx.rows() && block_grads[l].cols() == gx.cols(),
                    "per-block gradient shape mismatch");
      gx += block_grads[l];
    }
    MatrixX<Scalar> g = gx;
    MatrixX<Scalar> g_skip;
    if (bs.conv.residual) {
      if (b.shortcut.size() > 0) {
        gb.shortcut.noalias() = c.conv.features.transpose() * gx;
        g_skip.noalias() = gx * b.shortcut.transpose();
      } else {
        g_skip = gx;
      }
    }
    if (bs.activation == Activation::Relu) g = (c.pre_activation.array() > Scalar(0)).select(g, Scalar(0));
    if (b.norm) g = batchnorm_backward(*b.norm, c.norm, g, *gb.norm);
    auto cb = conv_backward(b.conv, c.conv, g);
    gb.conv = std::move(cb.grad);
    gx = std::move(cb.grad_features);
    if (g_skip.size() > 0) gx += g_skip;
  }
  result.grad_features = std::move(gx);
  return result;
}

template <typename Scalar>
void commit_batch_stats(Network<Scalar>& net, const NetForward<Scalar>& fwd) {
  if (fwd.mode != Mode::Train) return;
  for (std::size_t l = 0; l < net.blocks.size(); ++l) {
    auto& b = net.blocks[l];
    commit_batch_stats(b.conv.kernel, fwd.blocks[l].conv.kernel_cache);
    if (b.norm) commit_batch_stats(*b.norm, fwd.blocks[l].norm);
  }
  if (!net.head.layers.empty()) commit_batch_stats(net.head, fwd.head);
}

template <typename Scalar>
struct LossGrad {
  double loss = 0.0;
  MatrixX<Scalar> grad;
};

/// (1/N) sum_i w_{y_i} * -log softmax(logits_i)[y_i]; weights default to 1.
template <typename Scalar>
LossGrad<Scalar> cross_entropy(const MatrixX<Scalar>& logits, std::span<const int> labels,
                               std::span<const double> class_weights = {}) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  require_shape(static_cast<Index>(labels.size()) == n, "one label per logit row required");
  require_shape(class_weights.empty() || static_cast<Index>(class_weights.size()) == c,
                "class weight count must equal the class count");
  if (n == 0) throw ShapeError("cross-entropy over zero rows");
  LossGrad<Scalar> r;
  r.grad.resize(n, c);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw ShapeError("label " + std::to_string(y) + " out of range");
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    double mx = static_cast<double>(logits(i, 0));
    for (Index k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(logits(i, k)));
    double z = 0.0;
    for (Index k = 0; k < c; ++k) z += std::exp(static_cast<double>(logits(i, k)) - mx);
    const double log_z = mx + std::log(z);
    total += w * (log_z - static_cast<double>(logits(i, y)));
    for (Index k = 0; k < c; ++k) {
      const double p = std::exp(static_cast<double>(logits(i, k)) - log_z);
      r.grad(i, k) = static_cast<Scalar>(w * (p - (k == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

/// Mean over all entries of (pred - target)^2.
template <typename Scalar>
LossGrad<Scalar> mse_loss(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& target) {
  require_shape(pred.rows() == target.rows() && pred.cols() == target.cols(),
                "MSE operands differ in shape");
  if (pred.size() == 0) throw ShapeError("MSE over an empty tensor");
  LossGrad<Scalar> r;
  const double count = static_cast<double>(pred.size());
  double total = 0.0;
  r.grad.resize(pred.rows(), pred.cols());
  for (Index i = 0; i < pred.rows(); ++i) {
    for (Index k = 0; k < pred.cols(); ++k) {
      const double d = static_cast<double>(pred(i, k)) - static_cast<double>(target(i, k));
      total += d * d;
      r.grad(i, k) = static_cast<Scalar>(2.0 * d / count);
    }
  }
  r.loss = total / count;
  return r;
}

/// Inverse class frequency N / (C * n_c), clipped to [0.1, 10]; absent
/// classes get the upper clip.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, Index num_classes);

/// One point cloud with its supervision and cached neighbourhoods.
template <typename Scalar>
struct Sample {
  NetInput<Scalar> input;
  std::vector<int> labels;  // per point, or a single cloud label
  MatrixX<Scalar> flow;     // N x D ground truth for regression
  NetNeighbors neighbors;
};

template <typename Scalar>
struct NetLoss {
  double loss = 0.0;
  MatrixX<Scalar> grad_out;
  std::vector<MatrixX<Scalar>> block_grads;
};

template <typename Scalar>
NetLoss<Scalar> network_loss(const NetworkSpec& spec, const NetForward<Scalar>& fwd,
                             const Sample<Scalar>& sample, std::span<const double> class_weights) {
  NetLoss<Scalar> r;
  switch (spec.loss) {
    case LossKind::CrossEntropy:
    case LossKind::WeightedCrossEntropy: {
      auto ce = cross_entropy(fwd.out, sample.labels,
                              spec.loss == LossKind::WeightedCrossEntropy ? class_weights
                                                                          : std::span<const double>{});
      r.loss = ce.loss;
      r.grad_out = std::move(ce.grad);
      break;
    }
    case LossKind::Mse: {
      auto m = mse_loss(fwd.out, sample.flow);
      r.loss = m.loss;
      r.grad_out = std::move(m.grad);
      break;
    }
    case LossKind::PerLayerMse: {
      // The output is the last block, so its term enters through grad_out.
      // Earlier blocks may be wider; their leading channels are supervised.
      const Index d = fwd.out.cols();
      r.grad_out = MatrixX<Scalar>::Zero(fwd.out.rows(), d);
      r.block_grads.resize(fwd.block_outputs.size());
      for (std::size_t l = 0; l < fwd.block_outputs.size(); ++l) {
        const auto& y = fwd.block_outputs[l];
        auto m = mse_loss(MatrixX<Scalar>(y.leftCols(d)), sample.flow);
        r.loss += m.loss;
        r.block_grads[l] = MatrixX<Scalar>::Zero(y.rows(), y.cols());
        r.block_grads[l].leftCols(d) = m.grad;
      }
      break;
    }
  }
  return r;
}

struct TrainConfig {
  std::vector<double> class_weights;
};

struct EpochStats {
  double loss = 0.0;      // mean over clouds
  double accuracy = 0.0;  // classifiers: fraction of correct rows
  double epe = 0.0;       // regression: mean end-point error of the output
};

template <typename Scalar>
std::vector<int> argmax_rows(const MatrixX<Scalar>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename Scalar>
double mean_end_point_error(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& gt) {
  require_shape(pred.rows() == gt.rows() && pred.cols() == gt.cols(), "flow shapes differ");
  double s = 0.0;
  for (Index i = 0; i < pred.rows(); ++i)
    s += (pred.row(i).template cast<double>() - gt.row(i).template cast<double>()).norm();
  return pred.rows() > 0 ? s / static_cast<double>(pred.rows()) : 0.0;
}

namespace detail {

template <typename Scalar>
void accumulate_task_metric(const NetworkSpec& spec, const MatrixX<Scalar>& out,
                            const Sample<Scalar>& s, double& correct, double& rows, double& epe) {
  if (spec.is_classifier()) {
    const auto pred = argmax_rows(out);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == s.labels[i];
    rows += static_cast<double>(pred.size());
  } else {
    epe += mean_end_point_error(out, s.flow);
    rows += 1.0;
  }
}

}  // namespace detail

/// One optimizer step on one cloud. Returns the loss before the update.
template <typename Scalar>
NetLoss<Scalar> train_step(Network<Scalar>& net, const Sample<Scalar>& sample,
                           AdamState<Scalar>& opt, const TrainConfig& config,
                           MatrixX<Scalar>* out = nullptr) {
  auto fwd = net_forward(net, sample.input, sample.neighbors, Mode::Train);
  auto loss = network_loss(net.spec, fwd, sample, config.class_weights);
  if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss");
  auto back = net_backward(net, fwd, loss.grad_out, loss.block_grads);
  auto params = params_of(net);
  const auto grads = params_of(back.grad);
  adam_step(params, grads, opt);
  commit_batch_stats(net, fwd);
  if (out) *out = std::move(fwd.out);
  return loss;
}

/// Order of one epoch. Fisher-Yates on raw engine output so the permutation
/// does not depend on the standard library's distribution implementations.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

/// One pass over the dataset in seeded random order, one cloud per step.
template <typename Scalar>
EpochStats train_epoch(Network<Scalar>& net, const std::vector<Sample<Scalar>>& data,
                       AdamState<Scalar>& opt, std::mt19937_64& rng, const TrainConfig& config) {
  if (data.empty()) throw ShapeError("training set is empty");
  EpochStats stats;
  double correct = 0.0, rows = 0.0, epe = 0.0;
  const auto order = epoch_order(data.size(), rng);
  for (std::size_t b = 0; b < order.size(); ++b) {
    const auto& s = data[order[b]];
    MatrixX<Scalar> out;
    try {
      const auto loss = train_step(net, s, opt, config, &out);
      stats.loss += loss.loss;
    } catch (const NumericError& e) {
      throw NumericError("batch " + std::to_string(b) + " (cloud " + std::to_string(order[b]) +
                         "): " + e.what());
    }
    detail::accumulate_task_metric(net.spec, out, s, correct, rows, epe);
  }
  stats.loss /= static_cast<double>(data.size());
  if (net.spec.is_classifier())
    stats.accuracy = correct / rows;
  else
    stats.epe = epe / rows;
  return stats;
}

template <typename Scalar>
MatrixX<Scalar> predict(const Network<Scalar>& net, const Sample<Scalar>& sample) {
  return net_forward(net, sample.input, sample.neighbors, Mode::Infer).out;
}

/// Inference-mode loss and task metric over a dataset, no parameter change.
template <typename Scalar>
EpochStats evaluate(const Network<Scalar>& net, const std::vector<Sample<Scalar>>& data,
                    const TrainConfig& config) {
  EpochStats stats;
  double correct = 0.0, rows = 0.0, epe = 0.0;
  for (const auto& s : data) {
    const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Infer);
    stats.loss += network_loss(net.spec, fwd, s, config.class_weights).loss;
    detail::accumulate_task_metric(net.spec, fwd.out, s, correct, rows, epe);
  }
  if (data.empty()) return stats;
  stats.loss /= static_cast<double>(data.size());
  if (net.spec.is_classifier())
    stats.accuracy = correct / rows;
  else
    stats.epe = epe / rows;
  return stats;
}

}  // namespace contconv
