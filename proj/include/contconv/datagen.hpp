#pragma once

#include "contconv/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace contconv {

/// x -> R x + t.
struct RigidTransform {
  Eigen::MatrixXd R;
  Eigen::VectorXd t;

  static RigidTransform identity(Index dim);
  /// Rotation by `yaw` radians about the vertical (last) axis; in 2-D a plain
  /// planar rotation.
  static RigidTransform yaw(Index dim, double yaw, const Eigen::VectorXd& t);

  Index dim() const { return t.size(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return R * x + t; }
  /// x -> R^T (x - t), the inverse map.
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& x) const { return R.transpose() * (x - t); }
  /// Throws ShapeError unless R is a proper rotation (orthonormal, det +1, 1e-9).
  void validate() const;
};

/// Flow of a static point seen from a moving ego frame: R^T (x - t) - x.
Eigen::VectorXd static_flow(const Eigen::VectorXd& x, const RigidTransform& ego);
/// Flow of a point on an object that also moved: Ro^T (Re^T (x - te) - to) - x.
Eigen::VectorXd dynamic_flow(const Eigen::VectorXd& x, const RigidTransform& ego,
                             const RigidTransform& obj);

/// x + f row by row.
Eigen::MatrixXd warp(const Eigen::MatrixXd& points, const Eigen::MatrixXd& flow);

// --- rigid frame pairs -------------------------------------------------------

struct FlowSceneSpec {
  Index num_points = 1000;
  double extent = 20.0;            // ground plane covers [-extent, extent]^2
  int static_boxes = 4;
  int objects = 3;                 // moving car-sized boxes
  double ground_fraction = 0.5;    // share of points on the ground plane
  double ego_yaw_deg = 10.0;       // sampled uniformly in [-v, v]
  double ego_translation = 2.0;    // max norm of the horizontal ego translation
  double object_yaw_deg = 30.0;    // object rotation about its own centre
  double object_translation = 2.0;
  double noise_sigma = 0.0;        // added to both frames after the flow is fixed
  bool shuffle_target = true;      // store the target frame in random order

  void validate() const;
};

struct FlowScene {
  Eigen::MatrixXd source;  // N x 3
  Eigen::MatrixXd target;  // N x 3, transformed copies of the source points
  RigidTransform ego;
  std::vector<RigidTransform> objects;
  std::vector<int> owner;           // per source point: -1 static, else object id
  Eigen::MatrixXd flow;             // N x 3, exact for the noiseless geometry
  std::vector<Index> correspondence;  // target row holding source point i
};

FlowScene gen_flow_scene(std::uint64_t seed, const FlowSceneSpec& spec);

// --- labelled scenes ---------------------------------------------------------

/// Classes, in label order: floor, wall, box, cylinder.
inline constexpr int kSceneClasses = 4;

struct LabeledSceneSpec {
  Index num_points = 2000;
  std::vector<double> proportions{0.4, 0.2, 0.2, 0.2};  // per class, normalised
  double room = 4.0;         // room spans [-room, room]^2, walls at the border
  double wall_height = 2.5;
  int boxes = 3;
  int cylinders = 2;
  int color_channels = 3;    // 0 gives a single constant feature
  double color_noise = 0.15;

  void validate() const;
};

struct LabeledScene {
  Eigen::MatrixXd points;  // N x 3
  Eigen::MatrixXd features;
  std::vector<int> labels;
};

LabeledScene gen_labeled_scene(std::uint64_t seed, const LabeledSceneSpec& spec);

/// Single-object clouds for whole-cloud classification: the surface of a
/// randomly sized and turned box, cylinder, sphere or cone (labels 0..3).
inline constexpr int kShapeClasses = 4;

struct ShapeCloudSpec {
  Index num_points = 1024;
  double noise = 0.0;  // Gaussian position jitter
  void validate() const;
};

/// Every point carries `label`; features are a single constant channel.
LabeledScene gen_shape_cloud(std::uint64_t seed, int label, const ShapeCloudSpec& spec);

// --- point files -------------------------------------------------------------

/// A cloud with optional channels: features may have zero columns, labels may
/// be empty, flow may have zero columns.
struct PointFile {
  Eigen::MatrixXd points;
  Eigen::MatrixXd features;
  std::vector<int> labels;
  Eigen::MatrixXd flow;
};

/// Text: header `PCCN v1 N D F C FLOWDIM`, then one row per point. Binary
/// (`.pcb`): the same header line followed by little-endian doubles, row by
/// row, with the label stored as a double. Both round-trip bit-exactly.
void write_points(const std::string& path, const PointFile& cloud);
PointFile read_points(const std::string& path);

std::string encode_points_text(const PointFile& cloud);
PointFile decode_points_text(const std::string& text, const std::string& source);
std::string encode_points_binary(const PointFile& cloud);
PointFile decode_points_binary(const std::string& bytes, const std::string& source);

}  // namespace contconv
