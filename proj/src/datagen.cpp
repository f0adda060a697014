#include "contconv/datagen.hpp"

#include "contconv/keyvalue.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace contconv {

RigidTransform RigidTransform::identity(Index dim) {
  return {Eigen::MatrixXd::Identity(dim, dim), Eigen::VectorXd::Zero(dim)};
}

RigidTransform RigidTransform::yaw(Index dim, double yaw, const Eigen::VectorXd& t) {
  if (dim < 2) throw ShapeError("yaw rotation needs at least two dimensions");
  require_shape(t.size() == dim, "translation dimension differs from the rotation");
  RigidTransform r = identity(dim);
  const double c = std::cos(yaw), s = std::sin(yaw);
  r.R(0, 0) = c;
  r.R(0, 1) = -s;
  r.R(1, 0) = s;
  r.R(1, 1) = c;
  r.t = t;
  return r;
}

void RigidTransform::validate() const {
  require_shape(R.rows() == R.cols() && R.rows() == t.size(), "rigid transform shapes disagree");
  const Index d = t.size();
  if ((R.transpose() * R - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-9)
    throw ShapeError("rotation is not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9) throw ShapeError("rotation has determinant != +1");
}

Eigen::VectorXd static_flow(const Eigen::VectorXd& x, const RigidTransform& ego) {
  require_shape(x.size() == ego.dim(), "point and transform dimensions differ");
  return ego.R.transpose() * (x - ego.t) - x;
}

Eigen::VectorXd dynamic_flow(const Eigen::VectorXd& x, const RigidTransform& ego,
                             const RigidTransform& obj) {
  require_shape(x.size() == ego.dim() && x.size() == obj.dim(), "point and transform dimensions differ");
  return obj.R.transpose() * (ego.R.transpose() * (x - ego.t) - obj.t) - x;
}

Eigen::MatrixXd warp(const Eigen::MatrixXd& points, const Eigen::MatrixXd& flow) {
  require_shape(points.rows() == flow.rows() && points.cols() == flow.cols(),
                "flow must have one vector per point");
  return points + flow;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Splits n into parts proportional to `weights` (largest remainder; ties go
/// to the lower index), so the counts always sum to n.
std::vector<Index> apportion(Index n, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<Index> counts(weights.size(), 0);
  if (n == 0 || weights.empty()) return counts;
  std::vector<std::pair<double, std::size_t>> rest;
  Index used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<Index>(std::floor(exact));
    used += counts[i];
    rest.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++counts[rest[k % rest.size()].second];
  return counts;
}

/// Axis-aligned in its own frame, yawed about the vertical axis, resting on z = 0.
struct Box {
  Eigen::Vector3d center;  // z is the half height
  Eigen::Vector3d half;
  double yaw = 0.0;

  double area() const {  // five faces, no bottom
    return 4 * half.x() * half.y() + 8 * half.z() * (half.x() + half.y());
  }
  Eigen::Vector3d sample(std::mt19937_64& rng) const {
    const double top = 4 * half.x() * half.y();
    const double sx = 4 * half.y() * half.z();  // each of the two x faces
    const double sy = 4 * half.x() * half.z();
    double u = uniform(rng, 0.0, top + 2 * sx + 2 * sy);
    Eigen::Vector3d p(uniform(rng, -1, 1) * half.x(), uniform(rng, -1, 1) * half.y(),
                      uniform(rng, -1, 1) * half.z());
    if (u < top) {
      p.z() = half.z();
    } else if ((u -= top) < 2 * sx) {
      p.x() = u < sx ? half.x() : -half.x();
    } else {
      u -= 2 * sx;
      p.y() = u < sy ? half.y() : -half.y();
    }
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {center.x() + c * p.x() - s * p.y(), center.y() + s * p.x() + c * p.y(), center.z() + p.z()};
  }
};

struct Cylinder {
  Eigen::Vector2d center;
  double radius = 0.5;
  double height = 1.0;

  double area() const { return std::numbers::pi * radius * (radius + 2 * height); }
  Eigen::Vector3d sample(std::mt19937_64& rng) const {
    const double cap = std::numbers::pi * radius * radius;
    const double a = uniform(rng, 0.0, 2 * std::numbers::pi);
    if (uniform(rng, 0.0, area()) < cap) {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));
      return {center.x() + r * std::cos(a), center.y() + r * std::sin(a), height};
    }
    return {center.x() + radius * std::cos(a), center.y() + radius * std::sin(a), uniform(rng, 0.0, height)};
  }
};

template <typename Shape>
std::vector<Index> split_by_area(Index n, const std::vector<Shape>& shapes) {
  std::vector<double> w;
  for (const auto& s : shapes) w.push_back(s.area());
  return apportion(n, w);
}

}  // namespace

void FlowSceneSpec::validate() const {
  if (num_points <= 0) throw ConfigError("flow scene needs at least one point");
  if (extent <= 0) throw ConfigError("flow scene extent must be positive");
  if (static_boxes < 0 || objects < 0) throw ConfigError("negative structure counts");
  if (!(ground_fraction >= 0 && ground_fraction <= 1)) throw ConfigError("ground_fraction must lie in [0, 1]");
  if (ground_fraction < 1 && static_boxes + objects == 0)
    throw ConfigError("points off the ground need at least one box or object");
  if (ground_fraction == 0 && static_boxes == 0) throw ConfigError("flow scene needs static structure");
  for (double v : {ego_yaw_deg, ego_translation, object_yaw_deg, object_translation, noise_sigma})
    if (!(v >= 0 && std::isfinite(v))) throw ConfigError("motion ranges and noise must be finite and >= 0");
}

FlowScene gen_flow_scene(std::uint64_t seed, const FlowSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double e = spec.extent;

  const auto random_box = [&](double lx, double ly, double lz) {
    Box b;
    b.half = {lx / 2, ly / 2, lz / 2};
    b.center = {uniform(rng, -0.8 * e, 0.8 * e), uniform(rng, -0.8 * e, 0.8 * e), lz / 2};
    b.yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
    return b;
  };
  std::vector<Box> boxes;
  for (int i = 0; i < spec.static_boxes; ++i)
    boxes.push_back(random_box(uniform(rng, 1, 4), uniform(rng, 1, 4), uniform(rng, 1, 3)));
  for (int i = 0; i < spec.objects; ++i) boxes.push_back(random_box(4.5, 1.8, 1.5));

  const Index on_ground = boxes.empty() ? spec.num_points
                                        : static_cast<Index>(std::llround(spec.ground_fraction *
                                                                          static_cast<double>(spec.num_points)));
  const auto per_box = split_by_area(spec.num_points - on_ground, boxes);

  FlowScene s;
  s.source.resize(spec.num_points, 3);
  s.owner.assign(static_cast<std::size_t>(spec.num_points), -1);
  Index row = 0;
  for (; row < on_ground; ++row) s.source.row(row) << uniform(rng, -e, e), uniform(rng, -e, e), 0.0;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const int owner = b < static_cast<std::size_t>(spec.static_boxes) ? -1 : static_cast<int>(b) - spec.static_boxes;
    for (Index k = 0; k < per_box[b]; ++k, ++row) {
      s.source.row(row) = boxes[b].sample(rng).transpose();
      s.owner[static_cast<std::size_t>(row)] = owner;
    }
  }

  const auto horizontal = [&](double max_norm) {
    const double r = max_norm * std::sqrt(uniform(rng, 0.0, 1.0));
    const double a = uniform(rng, 0.0, 2 * std::numbers::pi);
    return Eigen::Vector3d(r * std::cos(a), r * std::sin(a), 0.0);
  };
  s.ego = RigidTransform::yaw(3, uniform(rng, -1, 1) * spec.ego_yaw_deg * kDeg, horizontal(spec.ego_translation));
  // Objects turn about their own centre (as seen after the ego motion) and
  // then shift; written as a single transform about the origin.
  for (int i = 0; i < spec.objects; ++i) {
    const Eigen::VectorXd c = s.ego.apply_inverse(boxes[static_cast<std::size_t>(spec.static_boxes + i)].center);
    auto obj = RigidTransform::yaw(3, uniform(rng, -1, 1) * spec.object_yaw_deg * kDeg, Eigen::VectorXd::Zero(3));
    obj.t = c - obj.R * c + obj.R * horizontal(spec.object_translation);
    s.objects.push_back(obj);
  }

  s.flow.resize(spec.num_points, 3);
  for (Index i = 0; i < spec.num_points; ++i) {
    const Eigen::VectorXd x = s.source.row(i).transpose();
    const int o = s.owner[static_cast<std::size_t>(i)];
    s.flow.row(i) = (o < 0 ? static_flow(x, s.ego) : dynamic_flow(x, s.ego, s.objects[static_cast<std::size_t>(o)]))
                        .transpose();
  }

  s.correspondence.resize(static_cast<std::size_t>(spec.num_points));
  std::iota(s.correspondence.begin(), s.correspondence.end(), Index{0});
  if (spec.shuffle_target)
    for (std::size_t i = s.correspondence.size(); i > 1; --i) std::swap(s.correspondence[i - 1], s.correspondence[rng() % i]);
  const Eigen::MatrixXd moved = warp(s.source, s.flow);
  s.target.resize(spec.num_points, 3);
  for (Index i = 0; i < spec.num_points; ++i) s.target.row(s.correspondence[static_cast<std::size_t>(i)]) = moved.row(i);

  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> n(0.0, spec.noise_sigma);
    for (Index k = 0; k < s.source.size(); ++k) s.source.data()[k] += n(rng);
    for (Index k = 0; k < s.target.size(); ++k) s.target.data()[k] += n(rng);
  }
  return s;
}

void LabeledSceneSpec::validate() const {
  if (num_points <= 0) throw ConfigError("labelled scene needs at least one point");
  if (proportions.size() != static_cast<std::size_t>(kSceneClasses))
    throw ConfigError("expected " + std::to_string(kSceneClasses) + " class proportions");
  double total = 0;
  for (double p : proportions) {
    if (!(p >= 0 && std::isfinite(p))) throw ConfigError("class proportions must be finite and >= 0");
    total += p;
  }
  if (total <= 0) throw ConfigError("class proportions sum to zero");
  if (proportions[2] > 0 && boxes <= 0) throw ConfigError("box points requested but no boxes");
  if (proportions[3] > 0 && cylinders <= 0) throw ConfigError("cylinder points requested but no cylinders");
  if (room <= 1.0 || wall_height <= 0) throw ConfigError("room too small");
  if (color_channels < 0 || color_channels > 3) throw ConfigError("color_channels must be in [0, 3]");
  if (!(color_noise >= 0)) throw ConfigError("color_noise must be >= 0");
}

LabeledScene gen_labeled_scene(std::uint64_t seed, const LabeledSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const double r = spec.room;
  const auto counts = apportion(spec.num_points, spec.proportions);

  std::vector<Box> boxes;
  for (int i = 0; i < spec.boxes; ++i) {
    Box b;
    b.half = {uniform(rng, 0.2, 0.6), uniform(rng, 0.2, 0.6), uniform(rng, 0.2, 0.6)};
    b.center = {uniform(rng, -r + 1, r - 1), uniform(rng, -r + 1, r - 1), b.half.z()};
    b.yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
    boxes.push_back(b);
  }
  std::vector<Cylinder> cylinders;
  for (int i = 0; i < spec.cylinders; ++i)
    cylinders.push_back({{uniform(rng, -r + 1, r - 1), uniform(rng, -r + 1, r - 1)},
                         uniform(rng, 0.15, 0.4), uniform(rng, 0.8, 2.0)});

  // Per class base colour; each primitive gets its own tint around it.
  static const double palette[kSceneClasses][3] = {
      {0.55, 0.45, 0.35}, {0.85, 0.85, 0.80}, {0.30, 0.45, 0.75}, {0.75, 0.30, 0.30}};
  const Index f = spec.color_channels == 0 ? 1 : spec.color_channels;
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto tint = [&](int cls) {
    Eigen::VectorXd c(f);
    for (Index k = 0; k < f; ++k)
      c[k] = spec.color_channels == 0 ? 1.0 : palette[cls][k] + uniform(rng, -0.05, 0.05);
    return c;
  };

  LabeledScene s;
  s.points.resize(spec.num_points, 3);
  s.features.resize(spec.num_points, f);
  s.labels.reserve(static_cast<std::size_t>(spec.num_points));
  Index row = 0;
  const auto emit = [&](const Eigen::Vector3d& p, int cls, const Eigen::VectorXd& color) {
    s.points.row(row) = p.transpose();
    for (Index k = 0; k < f; ++k)
      s.features(row, k) = spec.color_channels == 0 ? 1.0 : color[k] + spec.color_noise * noise(rng);
    s.labels.push_back(cls);
    ++row;
  };

  const Eigen::VectorXd floor_color = tint(0);
  for (Index k = 0; k < counts[0]; ++k) emit({uniform(rng, -r, r), uniform(rng, -r, r), 0.0}, 0, floor_color);

  const Eigen::VectorXd wall_color = tint(1);
  for (Index k = 0; k < counts[1]; ++k) {
    const double u = uniform(rng, -r, r), z = uniform(rng, 0.0, spec.wall_height);
    switch (rng() % 4) {
      case 0: emit({u, -r, z}, 1, wall_color); break;
      case 1: emit({u, r, z}, 1, wall_color); break;
      case 2: emit({-r, u, z}, 1, wall_color); break;
      default: emit({r, u, z}, 1, wall_color); break;
    }
  }

  const auto per_box = split_by_area(counts[2], boxes);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const Eigen::VectorXd c = tint(2);
    for (Index k = 0; k < per_box[b]; ++k) emit(boxes[b].sample(rng), 2, c);
  }
  const auto per_cyl = split_by_area(counts[3], cylinders);
  for (std::size_t b = 0; b < cylinders.size(); ++b) {
    const Eigen::VectorXd c = tint(3);
    for (Index k = 0; k < per_cyl[b]; ++k) emit(cylinders[b].sample(rng), 3, c);
  }

  // Interleave the classes so row order carries no label information.
  std::vector<Index> perm(static_cast<std::size_t>(spec.num_points));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  LabeledScene out;
  out.points.resize(s.points.rows(), 3);
  out.features.resize(s.features.rows(), f);
  out.labels.resize(s.labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto j = static_cast<Index>(i);
    out.points.row(j) = s.points.row(perm[i]);
    out.features.row(j) = s.features.row(perm[i]);
    out.labels[i] = s.labels[static_cast<std::size_t>(perm[i])];
  }
  return out;
}

void ShapeCloudSpec::validate() const {
  if (num_points <= 0) throw ConfigError("shape cloud needs at least one point");
  if (!(noise >= 0)) throw ConfigError("shape noise must be >= 0");
}

LabeledScene gen_shape_cloud(std::uint64_t seed, int label, const ShapeCloudSpec& spec) {
  spec.validate();
  if (label < 0 || label >= kShapeClasses) throw ConfigError("shape label out of range");
  std::mt19937_64 rng(seed);
  const double size = uniform(rng, 0.5, 1.5);
  const double yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
  Box box;
  box.half = {size * uniform(rng, 0.3, 1.0), size * uniform(rng, 0.3, 1.0), size * uniform(rng, 0.3, 1.0)};
  box.center = {0.0, 0.0, box.half.z()};
  box.yaw = yaw;
  const Cylinder cyl{{0.0, 0.0}, size * uniform(rng, 0.3, 0.6), size * uniform(rng, 0.8, 2.0)};
  const double radius = size * uniform(rng, 0.5, 1.0);
  const double cone_r = size * uniform(rng, 0.4, 0.8), cone_h = size * uniform(rng, 0.8, 2.0);
  std::normal_distribution<double> n(0.0, 1.0);

  LabeledScene s;
  s.points.resize(spec.num_points, 3);
  s.features = Eigen::MatrixXd::Ones(spec.num_points, 1);
  s.labels.assign(static_cast<std::size_t>(spec.num_points), label);
  for (Index i = 0; i < spec.num_points; ++i) {
    Eigen::Vector3d p;
    switch (label) {
      case 0: p = box.sample(rng); break;
      case 1: p = cyl.sample(rng); break;
      case 2: {
        Eigen::Vector3d d(n(rng), n(rng), n(rng));
        p = radius * d.normalized() + Eigen::Vector3d(0, 0, radius);
        break;
      }
      default: {
        // Lateral surface only; area density grows linearly towards the base.
        const double t = std::sqrt(uniform(rng, 0.0, 1.0));
        const double a = uniform(rng, 0.0, 2 * std::numbers::pi);
        p = {t * cone_r * std::cos(a), t * cone_r * std::sin(a), (1.0 - t) * cone_h};
        break;
      }
    }
    for (int k = 0; k < 3 && spec.noise > 0; ++k) p[k] += spec.noise * n(rng);
    s.points.row(i) = p.transpose();
  }
  return s;
}

// --- point files -------------------------------------------------------------

namespace {

struct Header {
  Index n = 0, d = 0, f = 0, c = 0, flow = 0;
};

void check_cloud(const PointFile& p) {
  const Index n = p.points.rows();
  require_shape(p.features.rows() == n || p.features.cols() == 0, "feature rows differ from point count");
  require_shape(p.labels.empty() || static_cast<Index>(p.labels.size()) == n, "label count differs from point count");
  require_shape(p.flow.cols() == 0 || (p.flow.rows() == n && p.flow.cols() == p.points.cols()),
                "flow must be N x D");
}

std::string header_line(const char* magic, const PointFile& p) {
  std::ostringstream h;
  h << magic << " v1 " << p.points.rows() << ' ' << p.points.cols() << ' ' << p.features.cols() << ' '
    << (p.labels.empty() ? 0 : 1) << ' ' << p.flow.cols() << '\n';
  return h.str();
}

Header parse_header(std::string_view line, const char* magic, const std::string& source) {
  std::istringstream in{std::string(line)};
  std::string m, v;
  Header h;
  if (!(in >> m >> v >> h.n >> h.d >> h.f >> h.c >> h.flow) || m != magic || v != "v1")
    throw ParseError(source, 1, std::string("expected header '") + magic + " v1 N D F C FLOWDIM'");
  std::string extra;
  if (in >> extra) throw ParseError(source, 1, "trailing tokens in header");
  if (h.n < 0 || h.d <= 0 || h.f < 0 || (h.c != 0 && h.c != 1) || (h.flow != 0 && h.flow != h.d))
    throw ParseError(source, 1, "inconsistent header counts");
  return h;
}

PointFile allocate(const Header& h) {
  PointFile p;
  p.points.resize(h.n, h.d);
  p.features.resize(h.n, h.f);
  if (h.c) p.labels.resize(static_cast<std::size_t>(h.n));
  p.flow.resize(h.flow ? h.n : 0, h.flow);
  return p;
}

}  // namespace

std::string encode_points_text(const PointFile& p) {
  check_cloud(p);
  std::string out = header_line("PCCN", p);
  for (Index i = 0; i < p.points.rows(); ++i) {
    std::string line;
    const auto put = [&](double v) {
      if (!line.empty()) line += ' ';
      line += format_double(v);
    };
    for (Index k = 0; k < p.points.cols(); ++k) put(p.points(i, k));
    for (Index k = 0; k < p.features.cols(); ++k) put(p.features(i, k));
    if (!p.labels.empty()) {
      line += ' ';
      line += std::to_string(p.labels[static_cast<std::size_t>(i)]);
    }
    for (Index k = 0; k < p.flow.cols(); ++k) put(p.flow(i, k));
    out += line;
    out += '\n';
  }
  return out;
}

PointFile decode_points_text(const std::string& text, const std::string& source) {
  std::size_t pos = text.find('\n');
  const Header h = parse_header(std::string_view(text).substr(0, pos), "PCCN", source);
  PointFile p = allocate(h);
  const Index width = h.d + h.f + h.c + h.flow;
  for (Index i = 0; i < h.n; ++i) {
    const std::size_t line_no = static_cast<std::size_t>(i) + 2;
    if (pos == std::string::npos || pos + 1 >= text.size())
      throw ParseError(source, line_no, "expected " + std::to_string(h.n) + " point rows");
    const std::size_t begin = pos + 1;
    pos = text.find('\n', begin);
    const std::string_view line =
        std::string_view(text).substr(begin, pos == std::string::npos ? std::string::npos : pos - begin);
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    const auto skip = [&] {
      while (cur < end && (*cur == ' ' || *cur == '\t' || *cur == '\r')) ++cur;
    };
    for (Index k = 0; k < width; ++k) {
      skip();
      const bool is_label = h.c && k == h.d + h.f;
      std::from_chars_result r{};
      double v = 0;
      int label = 0;
      r = is_label ? std::from_chars(cur, end, label) : std::from_chars(cur, end, v);
      if (r.ec != std::errc() || (r.ptr < end && *r.ptr != ' ' && *r.ptr != '\t' && *r.ptr != '\r'))
        throw ParseError(source, line_no, "field " + std::to_string(k + 1) + " is not a number");
      cur = r.ptr;
      if (k < h.d) p.points(i, k) = v;
      else if (k < h.d + h.f) p.features(i, k - h.d) = v;
      else if (is_label) p.labels[static_cast<std::size_t>(i)] = label;
      else p.flow(i, k - h.d - h.f - h.c) = v;
    }
    skip();
    if (cur != end) throw ParseError(source, line_no, "expected " + std::to_string(width) + " fields");
  }
  if (pos != std::string::npos && text.find_first_not_of(" \t\r\n", pos) != std::string::npos)
    throw ParseError(source, static_cast<std::size_t>(h.n) + 2, "unexpected rows after the declared count");
  return p;
}

std::string encode_points_binary(const PointFile& p) {
  check_cloud(p);
  std::string out = header_line("PCCB", p);
  const auto put = [&](double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
  };
  for (Index i = 0; i < p.points.rows(); ++i) {
    for (Index k = 0; k < p.points.cols(); ++k) put(p.points(i, k));
    for (Index k = 0; k < p.features.cols(); ++k) put(p.features(i, k));
    if (!p.labels.empty()) put(static_cast<double>(p.labels[static_cast<std::size_t>(i)]));
    for (Index k = 0; k < p.flow.cols(); ++k) put(p.flow(i, k));
  }
  return out;
}

PointFile decode_points_binary(const std::string& bytes, const std::string& source) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw ParseError(source, 1, "missing header line");
  const Header h = parse_header(std::string_view(bytes).substr(0, nl), "PCCB", source);
  const auto width = static_cast<std::size_t>(h.d + h.f + h.c + h.flow);
  if (bytes.size() - nl - 1 != 8 * width * static_cast<std::size_t>(h.n))
    throw IoError(source + ": binary payload size does not match the header");
  PointFile p = allocate(h);
  std::size_t at = nl + 1;
  const auto get = [&] {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at++])) << (8 * b);
    return std::bit_cast<double>(u);
  };
  for (Index i = 0; i < h.n; ++i) {
    for (Index k = 0; k < h.d; ++k) p.points(i, k) = get();
    for (Index k = 0; k < h.f; ++k) p.features(i, k) = get();
    if (h.c) p.labels[static_cast<std::size_t>(i)] = static_cast<int>(get());
    for (Index k = 0; k < h.flow; ++k) p.flow(i, k) = get();
  }
  return p;
}

void write_points(const std::string& path, const PointFile& cloud) {
  const bool binary = path.size() >= 4 && path.compare(path.size() - 4, 4, ".pcb") == 0;
  write_file_atomic(path, binary ? encode_points_binary(cloud) : encode_points_text(cloud));
}

PointFile read_points(const std::string& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.starts_with("PCCB")) return decode_points_binary(bytes, path);
  return decode_points_text(bytes, path);
}

}  // namespace contconv
