#include "contconv/datagen.hpp"
#include "contconv/keyvalue.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

using namespace contconv;

namespace {

RigidTransform random_transform(std::mt19937_64& rng, double max_t = 5.0) {
  // Full 3-D rotation from a random unit quaternion.
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  std::uniform_real_distribution<double> u(-max_t, max_t);
  return {q.toRotationMatrix(), Eigen::Vector3d(u(rng), u(rng), u(rng))};
}

Eigen::VectorXd random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-20, 20);
  return Eigen::Vector3d(u(rng), u(rng), u(rng));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("contconv_test_" + name);
}

}  // namespace

TEST(RigidTransform, YawIsProperRotation) {
  const auto t = RigidTransform::yaw(3, 0.7, Eigen::Vector3d(1, 2, 3));
  EXPECT_NO_THROW(t.validate());
  EXPECT_DOUBLE_EQ(t.R(2, 2), 1.0);
  RigidTransform bad = t;
  bad.R(0, 0) = -bad.R(0, 0);
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(StaticFlow, IdentityGivesZero) {
  std::mt19937_64 rng(1);
  const auto id = RigidTransform::identity(3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(static_flow(random_point(rng), id).norm(), 0.0);
}

TEST(StaticFlow, PureTranslation) {
  const RigidTransform t{Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0)};
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(static_flow(random_point(rng), t), Eigen::VectorXd(Eigen::Vector3d(-1, 0, 0)));
}

TEST(StaticFlow, InverseMapRecoversSource) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto ego = random_transform(rng);
    const Eigen::VectorXd x = random_point(rng);
    const Eigen::VectorXd f = static_flow(x, ego);
    EXPECT_LT((ego.R * (x + f) + ego.t - x).norm(), 1e-12);
  }
}

TEST(DynamicFlow, IdentityObjectReducesToStatic) {
  std::mt19937_64 rng(4);
  const auto id = RigidTransform::identity(3);
  for (int i = 0; i < 20; ++i) {
    const auto ego = random_transform(rng);
    const Eigen::VectorXd x = random_point(rng);
    EXPECT_EQ(dynamic_flow(x, ego, id), static_flow(x, ego));
  }
}

TEST(DynamicFlow, PureObjectTranslation) {
  const RigidTransform obj{Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.5, -2, 0.25)};
  const Eigen::VectorXd f = dynamic_flow(Eigen::Vector3d(3, 4, 5), RigidTransform::identity(3), obj);
  EXPECT_EQ(f, Eigen::VectorXd(-obj.t));
}

TEST(DynamicFlow, MatchesComposedInverseMotion) {
  // x + f is x carried by the inverse of (ego then object) written as one 4x4.
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto ego = random_transform(rng);
    const auto obj = random_transform(rng);
    Eigen::Matrix4d te = Eigen::Matrix4d::Identity(), to = Eigen::Matrix4d::Identity();
    te.topLeftCorner<3, 3>() = ego.R;
    te.topRightCorner<3, 1>() = ego.t;
    to.topLeftCorner<3, 3>() = obj.R;
    to.topRightCorner<3, 1>() = obj.t;
    const Eigen::Matrix4d inv = (te * to).inverse();
    const Eigen::Vector3d x = random_point(rng);
    const Eigen::Vector3d expect = (inv * x.homogeneous()).head<3>();
    EXPECT_LT((x + Eigen::Vector3d(dynamic_flow(x, ego, obj)) - expect).norm(), 1e-12);
  }
}

TEST(Warp, ZeroAndConstantFlow) {
  std::mt19937_64 rng(6);
  Eigen::MatrixXd p = Eigen::MatrixXd::Random(10, 3);
  EXPECT_EQ(warp(p, Eigen::MatrixXd::Zero(10, 3)), p);
  Eigen::MatrixXd c = Eigen::RowVector3d(1, -2, 3).replicate(10, 1);
  EXPECT_EQ(warp(p, c), p + c);
  EXPECT_THROW(warp(p, Eigen::MatrixXd::Zero(9, 3)), ShapeError);
}

TEST(FlowScene, IdentityMotionGivesZeroFlowAndEqualFrames) {
  FlowSceneSpec spec;
  spec.ego_yaw_deg = spec.ego_translation = spec.object_yaw_deg = spec.object_translation = 0;
  spec.shuffle_target = false;
  const auto s = gen_flow_scene(1, spec);
  EXPECT_EQ(s.flow.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.source, s.target);
}

TEST(FlowScene, WarpOverlaysTargetExactly) {
  const auto s = gen_flow_scene(7, FlowSceneSpec{});
  const Eigen::MatrixXd w = warp(s.source, s.flow);
  double worst = 0;
  for (Index i = 0; i < w.rows(); ++i)
    worst = std::max(worst, (w.row(i) - s.target.row(s.correspondence[static_cast<std::size_t>(i)])).norm());
  EXPECT_EQ(worst, 0.0);
}

TEST(FlowScene, FlowFollowsOwnerMasks) {
  FlowSceneSpec spec;
  spec.objects = 4;
  const auto s = gen_flow_scene(8, spec);
  ASSERT_EQ(s.objects.size(), 4u);
  std::vector<int> seen(4, 0);
  for (Index i = 0; i < s.source.rows(); ++i) {
    const int o = s.owner[static_cast<std::size_t>(i)];
    const Eigen::VectorXd x = s.source.row(i).transpose();
    const Eigen::VectorXd f = s.flow.row(i).transpose();
    if (o < 0) {
      EXPECT_EQ(f, static_flow(x, s.ego));
    } else {
      ++seen[static_cast<std::size_t>(o)];
      EXPECT_EQ(f, dynamic_flow(x, s.ego, s.objects[static_cast<std::size_t>(o)]));
    }
  }
  for (int c : seen) EXPECT_GT(c, 0);
  s.ego.validate();
  for (const auto& o : s.objects) o.validate();
}

TEST(FlowScene, MotionStaysInsideConfiguredRanges) {
  FlowSceneSpec spec;
  spec.objects = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = gen_flow_scene(seed, spec);
    EXPECT_LE(std::abs(std::atan2(s.ego.R(1, 0), s.ego.R(0, 0))), spec.ego_yaw_deg * std::numbers::pi / 180 + 1e-12);
    EXPECT_LE(s.ego.t.norm(), spec.ego_translation + 1e-12);
    EXPECT_EQ(s.ego.t.z(), 0.0);
  }
}

TEST(FlowScene, DeterministicPerSeed) {
  const auto a = gen_flow_scene(1, {});
  const auto b = gen_flow_scene(1, {});
  const auto c = gen_flow_scene(2, {});
  EXPECT_EQ(a.source, b.source);
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.flow, b.flow);
  EXPECT_NE(a.source, c.source);
}

TEST(FlowScene, NoiseLeavesFlowExact) {
  FlowSceneSpec spec;
  spec.noise_sigma = 0.02;
  FlowSceneSpec clean = spec;
  clean.noise_sigma = 0;
  const auto a = gen_flow_scene(3, spec);
  const auto b = gen_flow_scene(3, clean);
  EXPECT_EQ(a.flow, b.flow);
  EXPECT_GT((a.source - b.source).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FlowScene, DegenerateSpecsAreRejected) {
  FlowSceneSpec spec;
  spec.num_points = 0;
  EXPECT_THROW(gen_flow_scene(1, spec), ConfigError);
  spec = {};
  spec.static_boxes = spec.objects = 0;
  spec.ground_fraction = 0.5;
  EXPECT_THROW(gen_flow_scene(1, spec), ConfigError);
}

TEST(LabeledScene, FloorOnlySceneIsAllFloor) {
  LabeledSceneSpec spec;
  spec.proportions = {1, 0, 0, 0};
  spec.boxes = spec.cylinders = 0;
  const auto s = gen_labeled_scene(1, spec);
  for (int y : s.labels) EXPECT_EQ(y, 0);
  EXPECT_EQ(s.points.col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(LabeledScene, ClassHistogramMatchesProportions) {
  LabeledSceneSpec spec;
  spec.num_points = 10000;
  spec.proportions = {0.1, 0.2, 0.3, 0.4};
  const auto s = gen_labeled_scene(2, spec);
  std::vector<double> hist(4, 0.0);
  for (int y : s.labels) hist[static_cast<std::size_t>(y)] += 1.0 / 10000.0;
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(hist[c], spec.proportions[c], 0.05 * spec.proportions[c]);
}

TEST(LabeledScene, DeterministicPerSeed) {
  const auto a = gen_labeled_scene(5, {});
  const auto b = gen_labeled_scene(5, {});
  const auto c = gen_labeled_scene(6, {});
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.points, c.points);
}

TEST(LabeledScene, ConstantFeatureWithoutColor) {
  LabeledSceneSpec spec;
  spec.color_channels = 0;
  const auto s = gen_labeled_scene(5, spec);
  ASSERT_EQ(s.features.cols(), 1);
  EXPECT_TRUE((s.features.array() == 1.0).all());
}

TEST(PointFiles, RandomCloudRoundTripsBitExact) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1e3);
  PointFile p;
  p.points.resize(50, 3);
  p.features.resize(50, 2);
  p.flow.resize(50, 3);
  for (Index k = 0; k < p.points.size(); ++k) p.points.data()[k] = n(rng);
  for (Index k = 0; k < p.features.size(); ++k) p.features.data()[k] = n(rng) * 1e-300;
  for (Index k = 0; k < p.flow.size(); ++k) p.flow.data()[k] = n(rng) / 7.0;
  for (int i = 0; i < 50; ++i) p.labels.push_back(i % 5);
  for (const char* ext : {".pts", ".pcb"}) {
    const auto path = temp_path(std::string("roundtrip") + ext).string();
    write_points(path, p);
    const auto q = read_points(path);
    EXPECT_EQ(std::memcmp(q.points.data(), p.points.data(), sizeof(double) * 150), 0) << ext;
    EXPECT_EQ(std::memcmp(q.features.data(), p.features.data(), sizeof(double) * 100), 0) << ext;
    EXPECT_EQ(std::memcmp(q.flow.data(), p.flow.data(), sizeof(double) * 150), 0) << ext;
    EXPECT_EQ(q.labels, p.labels) << ext;
    std::filesystem::remove(path);
  }
}

TEST(PointFiles, EmptyOptionalChannelsRoundTrip) {
  PointFile p;
  p.points = Eigen::MatrixXd::Random(4, 2);
  p.features.resize(4, 0);
  const auto text = encode_points_text(p);
  EXPECT_EQ(text.substr(0, text.find('\n')), "PCCN v1 4 2 0 0 0");
  const auto q = decode_points_text(text, "mem");
  EXPECT_EQ(q.points, p.points);
  EXPECT_EQ(q.features.cols(), 0);
  EXPECT_TRUE(q.labels.empty());
  EXPECT_EQ(q.flow.cols(), 0);
  EXPECT_EQ(decode_points_binary(encode_points_binary(p), "mem").points, p.points);
}

TEST(PointFiles, MalformedInputReportsLine) {
  const auto line_of = [](const std::string& text) {
    try {
      decode_points_text(text, "mem");
    } catch (const ParseError& e) {
      return static_cast<long>(e.line());
    }
    return -1L;
  };
  EXPECT_EQ(line_of("PCCX v1 1 2 0 0 0\n1 2\n"), 1);
  EXPECT_EQ(line_of("PCCN v1 1 2 0 0 3\n1 2\n"), 1);  // flow dim must be 0 or D
  EXPECT_EQ(line_of("PCCN v1 2 2 0 0 0\n1 2\n1 x\n"), 3);
  EXPECT_EQ(line_of("PCCN v1 2 2 0 0 0\n1 2\n1 2 3\n"), 3);
  EXPECT_EQ(line_of("PCCN v1 3 2 0 0 0\n1 2\n"), 3);
  EXPECT_EQ(line_of("PCCN v1 1 2 0 1 0\n1 2 0.5\n"), 2);  // label must be an integer
  EXPECT_THROW(decode_points_binary("PCCB v1 2 2 0 0 0\nshort", "mem"), IoError);
}

TEST(ShapeCloud, LabelsAndDeterminism) {
  ShapeCloudSpec spec;
  spec.num_points = 256;
  for (int c = 0; c < kShapeClasses; ++c) {
    const auto a = gen_shape_cloud(3, c, spec);
    const auto b = gen_shape_cloud(3, c, spec);
    EXPECT_EQ(a.points, b.points);
    for (int y : a.labels) EXPECT_EQ(y, c);
    EXPECT_TRUE(a.points.allFinite());
    EXPECT_GE(a.points.col(2).minCoeff(), -1e-12);
  }
  // A sphere's points sit at one distance from its centre.
  const auto s = gen_shape_cloud(4, 2, spec);
  const Eigen::RowVector3d c = s.points.colwise().mean();
  const Eigen::VectorXd r = (s.points.rowwise() - c).rowwise().norm();
  EXPECT_LT(r.maxCoeff() - r.minCoeff(), 0.2 * r.mean());
  EXPECT_THROW(gen_shape_cloud(1, 4, spec), ConfigError);
}
