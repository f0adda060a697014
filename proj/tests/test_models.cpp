#include "contconv/checkpoint.hpp"
#include "contconv/finite_diff.hpp"
#include "contconv/models.hpp"
#include "fd_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace contconv;
using contconv::testing::grad_rel_error;
using contconv::testing::max_rel_error;
using contconv::testing::random_matrix;
using contconv::testing::uniform_points;

namespace {

template <typename S>
Sample<S> cloud_sample(const NetworkSpec& spec, Index n, std::mt19937_64& rng) {
  Sample<S> s;
  s.input.points = uniform_points(n, spec.support_dim, rng);
  s.input.features = random_matrix<S>(n, spec.input_dim, rng);
  s.neighbors = build_network_neighbors(spec, s.input.points, s.input.support);
  if (spec.has_head()) {
    const Index rows = spec.pool == PoolMode::Global ? 1 : n;
    std::uniform_int_distribution<int> y(0, static_cast<int>(spec.num_outputs) - 1);
    for (Index i = 0; i < rows; ++i) s.labels.push_back(y(rng));
  }
  return s;
}

template <typename S>
Sample<S> flow_sample(const NetworkSpec& spec, Index n, std::mt19937_64& rng) {
  Sample<S> s;
  const Eigen::MatrixXd src = uniform_points(n, spec.support_dim, rng);
  const Eigen::MatrixXd tgt = src.array() + 0.05;
  s.input = flow_input<S>(src, tgt);
  s.flow = MatrixX<S>::Constant(n, spec.support_dim, S(0.05));
  s.neighbors = build_network_neighbors(spec, s.input.points, s.input.support);
  return s;
}

// Zero biases put the self-offset row (z = 0) exactly on every ReLU kink,
// where central differences are meaningless; move off it.
template <typename S>
void jitter_biases(Network<S>& net, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& b : net.blocks)
    for (auto& l : b.conv.kernel.layers)
      for (Index k = 0; k < l.bias.size(); ++k) l.bias.data()[k] = static_cast<S>(n(rng));
}

ArchOptions small_options(int k = 8) {
  ArchOptions o;
  o.window = Window::knn(k);
  o.kernel_hidden = {8};
  o.width = 8;
  return o;
}

}  // namespace

TEST(IndoorSegNet, ShapeAndLayerCounts) {
  const auto spec = build_indoor_segnet(13);
  EXPECT_EQ(spec.blocks.size(), 8u);
  std::mt19937_64 rng(1);
  auto net = make_network<double>(spec, rng);
  EXPECT_EQ(net.head.layers.size(), 1u);
  EXPECT_EQ(spec.head_input_dim(), 256);
  for (std::size_t l = 0; l < 8; ++l) {
    EXPECT_TRUE(spec.blocks[l].batchnorm);
    EXPECT_EQ(spec.blocks[l].activation, Activation::Relu);
    EXPECT_EQ(spec.blocks[l].conv.out_dim, l == 7 ? 128 : 32);
  }
  const auto s = cloud_sample<double>(spec, 128, rng);
  const auto out = net_forward(net, s.input, s.neighbors, Mode::Train).out;
  EXPECT_EQ(out.rows(), 128);
  EXPECT_EQ(out.cols(), 13);
  EXPECT_TRUE(out.allFinite());
}

TEST(DrivingSegNet, SixteenResidualBlocks) {
  const auto spec = build_driving_segnet(5);
  EXPECT_EQ(spec.blocks.size(), 16u);
  EXPECT_EQ(spec.input_dim, 4);
  for (const auto& b : spec.blocks) EXPECT_TRUE(b.conv.residual);
}

TEST(DrivingSegNet, ZeroInitialisedResidualBlocksAreIdentity) {
  auto spec = build_driving_segnet(3, 3, 4, small_options());
  std::mt19937_64 rng(2);
  auto net = make_network<double>(spec, rng);
  zero_init_residual_branches(net);
  const auto s = cloud_sample<double>(spec, 40, rng);
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  // Block 0 changes width, so it reduces to its linear shortcut.
  EXPECT_LT(max_rel_error(fwd.block_outputs[0], MatrixX<double>(s.input.features * net.blocks[0].shortcut)),
            1e-14);
  for (std::size_t l = 1; l < fwd.block_outputs.size(); ++l)
    EXPECT_TRUE(fwd.block_outputs[l] == fwd.block_outputs[0]) << "block " << l;
}

TEST(DrivingSegNet, GradientReachesFirstKernel) {
  auto spec = build_driving_segnet(3, 3, 4, small_options());
  std::mt19937_64 rng(3);
  auto net = make_network<double>(spec, rng);
  const auto s = cloud_sample<double>(spec, 50, rng);
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  const auto loss = network_loss(spec, fwd, s, inverse_frequency_weights(s.labels, 3));
  const auto back = net_backward(net, fwd, loss.grad_out, loss.block_grads);
  double norm = 0.0;
  for (const auto& l : back.grad.blocks[0].conv.kernel.layers) norm += l.weight.squaredNorm();
  EXPECT_GT(norm, 0.0);
}

TEST(FlowNet, SevenLinearLayers) {
  ArchOptions o;
  o.cross_window = Window::ball(0.1);
  const auto spec = build_flownet(3, o);
  ASSERT_EQ(spec.blocks.size(), 7u);
  EXPECT_EQ(spec.blocks[0].conv.in_dim, 2);
  EXPECT_FALSE(spec.blocks[0].conv.window.is_knn());
  for (std::size_t l = 0; l < 7; ++l) {
    EXPECT_EQ(spec.blocks[l].activation, Activation::None);
    EXPECT_FALSE(spec.blocks[l].batchnorm);
    EXPECT_EQ(spec.blocks[l].conv.out_dim, l == 6 ? 3 : o.width);
    EXPECT_EQ(spec.blocks[l].conv.residual, l > 0);
    if (l > 0) EXPECT_TRUE(spec.blocks[l].conv.window.is_knn());
  }
  EXPECT_FALSE(spec.has_head());
  EXPECT_EQ(spec.output_dim(), 3);
  EXPECT_EQ(spec.loss, LossKind::PerLayerMse);
}

TEST(FlowNet, ZeroNetAndZeroFlowGiveZeroLoss) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(4);
  auto net = make_network<double>(spec, rng);
  for (auto& b : net.blocks) {
    b.conv.mix.setZero();
    b.shortcut.setZero();
  }
  auto s = flow_sample<double>(spec, 30, rng);
  s.flow.setZero();
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  EXPECT_EQ(network_loss(spec, fwd, s, {}).loss, 0.0);
}

TEST(FlowNet, PerLayerLossIsSumOfLayerMse) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(5);
  auto net = make_network<double>(spec, rng);
  const auto s = flow_sample<double>(spec, 30, rng);
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  double manual = 0.0;
  // Wider blocks are supervised through their leading three channels.
  for (const auto& h : fwd.block_outputs) {
    double acc = 0.0;
    for (Index i = 0; i < h.rows(); ++i)
      for (Index k = 0; k < 3; ++k) acc += std::pow(h(i, k) - s.flow(i, k), 2);
    manual += acc / static_cast<double>(3 * h.rows());
  }
  EXPECT_GT(fwd.block_outputs[0].cols(), 3);
  EXPECT_NEAR(network_loss(spec, fwd, s, {}).loss, manual, 1e-12 * manual);
  EXPECT_TRUE(fwd.out == fwd.block_outputs.back());
}

TEST(FlowNet, TranslatingBothFramesLeavesFlowUnchanged) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(6);
  auto net = make_network<double>(spec, rng);
  const auto s = flow_sample<double>(spec, 40, rng);
  Sample<double> moved = s;
  const Eigen::RowVector3d shift(3.0, -2.0, 0.5);
  moved.input.points.rowwise() += shift;
  moved.input.support.rowwise() += shift;
  moved.neighbors = build_network_neighbors(spec, moved.input.points, moved.input.support);
  EXPECT_LT(max_rel_error(predict(net, moved), predict(net, s), 1e-9), 1e-10);
}

TEST(ClassNet, GlobalFeatureAndPermutationInvariance) {
  const auto spec = build_classnet(10, 3, 3, small_options(6));
  EXPECT_EQ(spec.blocks.size(), 8u);
  EXPECT_EQ(spec.block_width(), 512);
  EXPECT_EQ(spec.head_input_dim(), 512);
  std::mt19937_64 rng(7);
  auto net = make_network<double>(spec, rng);
  auto net_head_layers = net.head.layers.size();
  EXPECT_EQ(net_head_layers, 2u);
  const auto s = cloud_sample<double>(spec, 60, rng);
  std::vector<Index> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Sample<double> p = s;
  for (Index i = 0; i < 60; ++i) {
    p.input.points.row(i) = s.input.points.row(perm[static_cast<std::size_t>(i)]);
    p.input.features.row(i) = s.input.features.row(perm[static_cast<std::size_t>(i)]);
  }
  p.neighbors = build_network_neighbors(spec, p.input.points, p.input.support);
  const auto a = net_forward(net, s.input, s.neighbors, Mode::Train).out;
  const auto b = net_forward(net, p.input, p.neighbors, Mode::Train).out;
  ASSERT_EQ(a.rows(), 1);
  EXPECT_LT(max_rel_error(a, b, 1e-9), 1e-10);
}

TEST(ClassNet, LargeCloudForwardBackwardIsFinite) {
  ArchOptions o;
  o.window = Window::knn(8);
  const auto spec = build_classnet(40, 3, 3, o);
  std::mt19937_64 rng(8);
  auto net = make_network<float>(spec, rng);
  const auto s = cloud_sample<float>(spec, 2048, rng);
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  const auto loss = network_loss(spec, fwd, s, {});
  const auto back = net_backward(net, fwd, loss.grad_out);
  for (const auto* g : params_of(const_cast<Network<float>&>(back.grad)).values) EXPECT_TRUE(g->allFinite());
}

TEST(SegNet, LogitsArePermutationEquivariant) {
  const auto spec = build_indoor_segnet(4, 3, 6, small_options());
  std::mt19937_64 rng(9);
  auto net = make_network<double>(spec, rng);
  const auto s = cloud_sample<double>(spec, 50, rng);
  std::vector<Index> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Sample<double> p = s;
  for (Index i = 0; i < 50; ++i) {
    p.input.points.row(i) = s.input.points.row(perm[static_cast<std::size_t>(i)]);
    p.input.features.row(i) = s.input.features.row(perm[static_cast<std::size_t>(i)]);
  }
  p.neighbors = build_network_neighbors(spec, p.input.points, p.input.support);
  const auto a = net_forward(net, s.input, s.neighbors, Mode::Train).out;
  const auto b = net_forward(net, p.input, p.neighbors, Mode::Train).out;
  MatrixX<double> a_perm(a.rows(), a.cols());
  for (Index i = 0; i < 50; ++i) a_perm.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
  EXPECT_LT(max_rel_error(a_perm, b, 1e-9), 1e-10);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  const MatrixX<double> logits = MatrixX<double>::Zero(5, 7);
  const std::vector<int> y{0, 1, 2, 3, 6};
  EXPECT_NEAR(cross_entropy(logits, y).loss, std::log(7.0), 1e-15);
}

TEST(CrossEntropy, HugeCorrectMarginGivesZero) {
  MatrixX<double> logits = MatrixX<double>::Zero(3, 4);
  const std::vector<int> y{2, 0, 3};
  for (Index i = 0; i < 3; ++i) logits(i, y[static_cast<std::size_t>(i)]) = 1000.0;
  EXPECT_LT(cross_entropy(logits, y).loss, 1e-300);
}

TEST(CrossEntropy, WeightedMeanMatchesScalarLoop) {
  std::mt19937_64 rng(10);
  const auto logits = random_matrix(12, 2, rng);
  std::vector<int> y;
  for (int i = 0; i < 12; ++i) y.push_back(i % 3 == 0);
  const std::vector<double> w{2.0, 1.0};
  double manual = 0.0;
  for (Index i = 0; i < 12; ++i) {
    const double z = std::exp(logits(i, 0)) + std::exp(logits(i, 1));
    manual += w[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] *
              -std::log(std::exp(logits(i, y[static_cast<std::size_t>(i)])) / z);
  }
  EXPECT_NEAR(cross_entropy(logits, y, w).loss, manual / 12.0, 1e-14);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto logits = random_matrix(6, 4, rng);
  const std::vector<int> y{0, 3, 1, 1, 2, 3};
  const std::vector<double> w{0.5, 1.0, 2.0, 3.0};
  const auto analytic = cross_entropy(logits, y, w).grad;
  ParamList<double> p;
  p.add("logits", logits);
  const auto fd = finite_diff_grad([&] { return cross_entropy(logits, y, w).loss; }, p, 1e-5);
  MatrixX<double> a = analytic;
  EXPECT_LT(grad_rel_error({&a}, fd), 1e-6);
}

TEST(ClassWeights, InverseFrequencyClipped) {
  std::vector<int> y(1000, 0);
  for (int i = 0; i < 10; ++i) y[static_cast<std::size_t>(i)] = 1;
  const auto w = inverse_frequency_weights(y, 3);
  EXPECT_NEAR(w[0], 1000.0 / (3 * 990), 1e-15);
  EXPECT_EQ(w[1], 10.0);  // 1000/30 clipped
  EXPECT_EQ(w[2], 10.0);  // absent
}

// Whole-network gradient: two blocks (residual + batch-norm + ReLU), concat
// pooling and a two-layer head, checked against central differences.
TEST(NetworkGradient, MatchesFiniteDifferencesEndToEnd) {
  NetworkSpec spec;
  spec.name = "micro";
  spec.support_dim = 2;
  spec.input_dim = 3;
  ConvLayerSpec c;
  c.support_dim = 2;
  c.window = Window::knn(5);
  c.kernel_hidden = {6};
  c.in_dim = 3;
  c.out_dim = 4;
  c.residual = true;
  spec.blocks.push_back({c, true, Activation::Relu});
  c.in_dim = 4;
  c.out_dim = 4;
  c.formulation = Formulation::Dense;
  spec.blocks.push_back({c, true, Activation::Relu});
  spec.pool = PoolMode::ConcatGlobal;
  spec.head_hidden = {5};
  spec.num_outputs = 3;
  spec.loss = LossKind::CrossEntropy;
  spec.validate();

  std::mt19937_64 rng(12);
  auto net = make_network<double>(spec, rng);
  jitter_biases(net, rng);
  auto s = cloud_sample<double>(spec, 16, rng);
  const auto loss_of = [&] {
    return network_loss(spec, net_forward(net, s.input, s.neighbors, Mode::Train), s, {}).loss;
  };
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  const auto l = network_loss(spec, fwd, s, {});
  auto back = net_backward(net, fwd, l.grad_out, l.block_grads);

  auto params = params_of(net);
  const auto fd = finite_diff_grad(loss_of, params, 1e-5);
  EXPECT_LT(grad_rel_error(params_of(back.grad).values, fd), 1e-5);

  ParamList<double> feats;
  feats.add("features", s.input.features);
  const auto fd_x = finite_diff_grad(loss_of, feats, 1e-5);
  EXPECT_LT(grad_rel_error({&back.grad_features}, fd_x), 1e-5);
}

TEST(NetworkGradient, PerLayerFlowLossMatchesFiniteDifferences) {
  using contconv::testing::Quad;
  const auto spec = build_flownet(3, small_options(6));
  std::mt19937_64 rng(13);
  auto net = make_network<double>(spec, rng);
  jitter_biases(net, rng);
  auto s = flow_sample<double>(spec, 16, rng);
  s.flow = random_matrix(16, 3, rng, 0.1);
  const auto fwd = net_forward(net, s.input, s.neighbors, Mode::Train);
  ASSERT_GT(contconv::testing::kink_margin(fwd), 1e-4);
  const auto l = network_loss(spec, fwd, s, {});
  auto back = net_backward(net, fwd, l.grad_out, l.block_grads);

  auto netq = cast_network<Quad>(net);
  const auto sq = contconv::testing::cast_sample<Quad>(s);
  auto pd = params_of(net);
  auto pq = params_of(netq);
  const auto r = contconv::testing::check_gradients(
      pd, pq, params_of(back.grad).values,
      [&] { return network_loss(spec, net_forward(net, s.input, s.neighbors, Mode::Train), s, {}).loss; },
      [&] { return contconv::testing::exact_loss(spec, net_forward(netq, sq.input, sq.neighbors, Mode::Train), sq); });
  EXPECT_GT(r.checked, 100);
  EXPECT_LT(r.worst, 1e-6) << r.worst_at;
}

TEST(Training, ZeroLearningRateLeavesParametersAndMatchesEvalLoss) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(14);
  auto net = make_network<float>(spec, rng);
  std::vector<Sample<float>> data{flow_sample<float>(spec, 40, rng)};
  const auto before = encode_checkpoint(to_checkpoint(net));
  AdamConfig cfg;
  cfg.lr = 0.0;
  AdamState<float> opt(cfg, params_of(net));
  std::mt19937_64 order(1);
  const auto stats = train_epoch(net, data, opt, order, {});
  EXPECT_EQ(encode_checkpoint(to_checkpoint(net)), before);
  EXPECT_EQ(stats.loss, evaluate(net, data, {}).loss);
}

TEST(Training, SeparableCloudLossDropsNinetyPercent) {
  // Two clusters whose labels follow the first feature's sign.
  ArchOptions o = small_options();
  const auto spec = build_indoor_segnet(2, 3, 2, o);
  std::mt19937_64 rng(15);
  auto net = make_network<float>(spec, rng);
  Sample<float> s;
  s.input.points = uniform_points(64, 3, rng);
  s.input.features.resize(64, 2);
  for (Index i = 0; i < 64; ++i) {
    const int y = i % 2;
    if (y) s.input.points.row(i).array() += 2.0;
    s.input.features(i, 0) = y ? 1.0f : -1.0f;
    s.input.features(i, 1) = 0.5f;
    s.labels.push_back(y);
  }
  s.neighbors = build_network_neighbors(spec, s.input.points, s.input.support);
  std::vector<Sample<float>> data{s};
  AdamState<float> opt(AdamConfig{}, params_of(net));
  std::mt19937_64 order(2);
  const double first = train_epoch(net, data, opt, order, {}).loss;
  double last = first;
  for (int step = 1; step < 200; ++step) last = train_epoch(net, data, opt, order, {}).loss;
  EXPECT_LT(last, 0.1 * first);
}

TEST(Training, SameSeedGivesBitIdenticalCheckpoints) {
  const auto spec = build_indoor_segnet(3, 3, 6, small_options());
  auto run = [&] {
    std::mt19937_64 rng(16);
    auto net = make_network<float>(spec, rng);
    std::vector<Sample<float>> data;
    for (int i = 0; i < 3; ++i) data.push_back(cloud_sample<float>(spec, 40, rng));
    AdamState<float> opt(AdamConfig{}, params_of(net));
    std::mt19937_64 order(3);
    for (int e = 0; e < 3; ++e) train_epoch(net, data, opt, order, {});
    return encode_checkpoint(to_checkpoint(net));
  };
  EXPECT_EQ(run(), run());
}

TEST(Training, NonFiniteLossReportsBatch) {
  const auto spec = build_indoor_segnet(3, 3, 6, small_options());
  std::mt19937_64 rng(17);
  auto net = make_network<float>(spec, rng);
  net.blocks[2].conv.mix(0, 0) = std::numeric_limits<float>::quiet_NaN();
  std::vector<Sample<float>> data{cloud_sample<float>(spec, 30, rng)};
  AdamState<float> opt(AdamConfig{}, params_of(net));
  std::mt19937_64 order(4);
  try {
    train_epoch(net, data, opt, order, {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("block 2"), std::string::npos) << msg;
  }
}

TEST(Training, EmptyDatasetIsAnError) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(18);
  auto net = make_network<float>(spec, rng);
  AdamState<float> opt(AdamConfig{}, params_of(net));
  EXPECT_THROW(train_epoch(net, std::vector<Sample<float>>{}, opt, rng, {}), ShapeError);
}

TEST(Spec, TextRoundTripForEveryBuilder) {
  ArchOptions o;
  o.window = Window::ball(0.37);
  o.offset_scale = 0.1;
  for (const auto& spec : {build_indoor_segnet(13), build_driving_segnet(7, 3, 4, o), build_flownet(),
                           build_classnet(40, 3, 3, o)}) {
    const auto text = serialize_spec(spec);
    EXPECT_TRUE(parse_spec(text) == spec) << spec.name;
    EXPECT_EQ(serialize_spec(parse_spec(text)), text);
  }
}

TEST(Spec, ChainMismatchIsRejected) {
  auto spec = build_indoor_segnet(4);
  spec.blocks[3].conv.in_dim = 7;
  EXPECT_THROW(spec.validate(), ConfigError);
  auto flow = build_flownet();
  flow.blocks[2].activation = Activation::Relu;
  EXPECT_THROW(flow.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto spec = build_indoor_segnet(4, 3, 6, small_options());
  std::mt19937_64 rng(19);
  auto net = make_network<float>(spec, rng);
  // Populate running statistics.
  const auto s = cloud_sample<float>(spec, 30, rng);
  commit_batch_stats(net, net_forward(net, s.input, s.neighbors, Mode::Train));
  const auto bytes = encode_checkpoint(to_checkpoint(net));
  EXPECT_EQ(bytes.substr(0, 4), "PCCN");
  auto loaded = network_from_checkpoint<float>(decode_checkpoint(bytes));
  EXPECT_TRUE(loaded.spec == spec);
  EXPECT_EQ(encode_checkpoint(to_checkpoint(loaded)), bytes);
  EXPECT_TRUE(predict(loaded, s) == predict(net, s));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto spec = build_flownet(3, small_options());
  std::mt19937_64 rng(20);
  auto net = make_network<float>(spec, rng);
  const auto bytes = encode_checkpoint(to_checkpoint(net));
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  auto ck = decode_checkpoint(bytes);
  ck.tensors.pop_back();
  EXPECT_THROW(network_from_checkpoint<float>(ck), CheckpointMismatch);
  ck = decode_checkpoint(bytes);
  ck.tensors[0].shape[0] += 1;
  EXPECT_THROW(network_from_checkpoint<float>(ck), CheckpointMismatch);
  ck = decode_checkpoint(bytes);
  ck.architecture = "name=flow\n";
  EXPECT_THROW(network_from_checkpoint<float>(ck), CheckpointMismatch);
}
