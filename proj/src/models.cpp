#include "contconv/models.hpp"

#include "contconv/keyvalue.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <tuple>

namespace contconv {

void NetworkSpec::validate() const {
  if (blocks.empty()) throw ConfigError("network '" + name + "' has no conv blocks");
  if (support_dim < 1 || input_dim < 1) throw ConfigError("network dimensions must be positive");
  Index width = input_dim;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& c = blocks[l].conv;
    try {
      c.validate();
    } catch (const ShapeError& e) {
      throw ConfigError("block " + std::to_string(l) + ": " + e.what());
    }
    if (c.in_dim != width)
      throw ConfigError("block " + std::to_string(l) + " expects " + std::to_string(c.in_dim) +
                        " channels but receives " + std::to_string(width));
    if (c.support_dim != support_dim)
      throw ConfigError("block " + std::to_string(l) + " has the wrong support dimension");
    width = c.out_dim;
  }
  if (pool != PoolMode::None && !has_head())
    throw ConfigError("global pooling needs a fully connected head");
  if (is_classifier() && (!has_head() || num_outputs < 2))
    throw ConfigError("cross-entropy needs a head with at least two classes");
  if (loss == LossKind::PerLayerMse) {
    if (has_head()) throw ConfigError("per-layer MSE supervises block outputs; no head allowed");
    for (const auto& b : blocks) {
      if (b.activation != Activation::None || b.batchnorm)
        throw ConfigError("per-layer MSE requires linear blocks (no ReLU, no batch-norm)");
      if (b.conv.out_dim < blocks.back().conv.out_dim)
        throw ConfigError("per-layer MSE reads the target from the leading channels of every block");
    }
  }
}

namespace {

ConvLayerSpec conv_spec(Index in, Index out, Index d, const ArchOptions& o, bool residual) {
  ConvLayerSpec s;
  s.in_dim = in;
  s.out_dim = out;
  s.support_dim = d;
  s.window = o.window;
  s.kernel_hidden = o.kernel_hidden;
  s.normalization = o.normalization;
  s.formulation = o.formulation;
  s.residual = residual;
  s.kernel_batchnorm = o.kernel_batchnorm;
  s.offset_scale = o.offset_scale;
  return s;
}

void require_classes(Index c) {
  if (c < 2) throw ConfigError("need at least two classes");
}

}  // namespace

NetworkSpec build_indoor_segnet(Index num_classes, Index d, Index f_in, const ArchOptions& o) {
  require_classes(num_classes);
  NetworkSpec s;
  s.name = "indoor-seg";
  s.support_dim = d;
  s.input_dim = f_in;
  Index in = f_in;
  for (int l = 0; l < 8; ++l) {
    const Index out = l == 7 ? 128 : o.width;
    s.blocks.push_back({conv_spec(in, out, d, o, false), true, Activation::Relu});
    in = out;
  }
  s.pool = PoolMode::ConcatGlobal;
  s.num_outputs = num_classes;
  s.loss = LossKind::CrossEntropy;
  s.validate();
  return s;
}

NetworkSpec build_driving_segnet(Index num_classes, Index d, Index f_in, const ArchOptions& o) {
  require_classes(num_classes);
  NetworkSpec s;
  s.name = "driving-seg";
  s.support_dim = d;
  s.input_dim = f_in;
  Index in = f_in;
  for (int l = 0; l < 16; ++l) {
    s.blocks.push_back({conv_spec(in, o.width, d, o, true), true, Activation::Relu});
    in = o.width;
  }
  s.num_outputs = num_classes;
  s.loss = LossKind::WeightedCrossEntropy;
  s.validate();
  return s;
}

NetworkSpec build_flownet(Index d, const ArchOptions& o) {
  NetworkSpec s;
  s.name = "flow";
  s.support_dim = d;
  s.input_dim = 2;
  // The first layer reads both frames and lands on the source points, so it
  // cannot carry an identity skip; the six after it are residual. Every block
  // is supervised through its first d channels, the rest carry context.
  const Index w = std::max(o.width, d);
  ConvLayerSpec cross = conv_spec(2, w, d, o, false);
  if (o.cross_window) cross.window = *o.cross_window;
  s.blocks.push_back({cross, false, Activation::None});
  for (int l = 1; l < 7; ++l) s.blocks.push_back({conv_spec(w, l == 6 ? d : w, d, o, true), false, Activation::None});
  s.loss = LossKind::PerLayerMse;
  s.validate();
  return s;
}

NetworkSpec build_classnet(Index num_classes, Index d, Index f_in, const ArchOptions& o) {
  require_classes(num_classes);
  NetworkSpec s;
  s.name = "classify";
  s.support_dim = d;
  s.input_dim = f_in;
  Index in = f_in;
  for (Index out : {o.width, o.width, o.width, o.width, o.width, o.width, Index{128}, Index{512}}) {
    s.blocks.push_back({conv_spec(in, out, d, o, false), true, Activation::Relu});
    in = out;
  }
  s.pool = PoolMode::Global;
  s.head_hidden = {256};
  s.num_outputs = num_classes;
  s.loss = LossKind::CrossEntropy;
  s.validate();
  return s;
}

namespace {

const char* pool_name(PoolMode p) {
  switch (p) {
    case PoolMode::None: return "none";
    case PoolMode::ConcatGlobal: return "concat";
    case PoolMode::Global: return "global";
  }
  return "";
}

const char* loss_name(LossKind l) {
  switch (l) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::WeightedCrossEntropy: return "weighted_cross_entropy";
    case LossKind::Mse: return "mse";
    case LossKind::PerLayerMse: return "per_layer_mse";
  }
  return "";
}

std::string window_text(const Window& w) {
  return w.is_knn() ? "knn:" + std::to_string(w.k) : "radius:" + format_double(w.radius);
}

template <typename E>
E pick(const KeyValue& kv, const std::string& src, std::initializer_list<std::pair<const char*, E>> opts) {
  for (const auto& [n, v] : opts)
    if (kv.value == n) return v;
  throw ParseError(src, kv.line, "unknown value '" + kv.value + "' for " + kv.key);
}

}  // namespace

std::string serialize_spec(const NetworkSpec& s) {
  std::string t;
  auto put = [&](const std::string& k, const std::string& v) { t += k + "=" + v + "\n"; };
  put("name", s.name);
  put("support_dim", std::to_string(s.support_dim));
  put("input_dim", std::to_string(s.input_dim));
  put("pool", pool_name(s.pool));
  put("head_hidden", format_index_list(s.head_hidden));
  put("num_outputs", std::to_string(s.num_outputs));
  put("loss", loss_name(s.loss));
  put("blocks", std::to_string(s.blocks.size()));
  for (std::size_t l = 0; l < s.blocks.size(); ++l) {
    const auto& b = s.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    put(p + "in", std::to_string(b.conv.in_dim));
    put(p + "out", std::to_string(b.conv.out_dim));
    put(p + "window", window_text(b.conv.window));
    put(p + "kernel_hidden", format_index_list(b.conv.kernel_hidden));
    put(p + "normalization", b.conv.normalization == Normalization::Mean ? "mean" : "none");
    put(p + "formulation", b.conv.formulation == Formulation::Dense ? "dense" : "factorized");
    put(p + "residual", b.conv.residual ? "1" : "0");
    put(p + "kernel_batchnorm", b.conv.kernel_batchnorm ? "1" : "0");
    put(p + "offset_scale", format_double(b.conv.offset_scale));
    put(p + "batchnorm", b.batchnorm ? "1" : "0");
    put(p + "activation", b.activation == Activation::Relu ? "relu" : "none");
  }
  return t;
}

NetworkSpec parse_spec(const std::string& text) {
  const std::string src = "<architecture>";
  const auto kvs = parse_key_values(text, src);
  std::map<std::string, const KeyValue*> by_key;
  for (const auto& kv : kvs) by_key[kv.key] = &kv;
  auto get = [&](const std::string& k) -> const KeyValue& {
    const auto it = by_key.find(k);
    if (it == by_key.end()) throw CheckpointMismatch("architecture is missing '" + k + "'");
    return *it->second;
  };
  NetworkSpec s;
  s.name = get("name").value;
  s.support_dim = parse_int(get("support_dim"), src);
  s.input_dim = parse_int(get("input_dim"), src);
  s.pool = pick<PoolMode>(get("pool"), src,
                          {{"none", PoolMode::None}, {"concat", PoolMode::ConcatGlobal}, {"global", PoolMode::Global}});
  s.head_hidden = parse_index_list(get("head_hidden"), src);
  s.num_outputs = parse_int(get("num_outputs"), src);
  s.loss = pick<LossKind>(get("loss"), src,
                          {{"cross_entropy", LossKind::CrossEntropy},
                           {"weighted_cross_entropy", LossKind::WeightedCrossEntropy},
                           {"mse", LossKind::Mse},
                           {"per_layer_mse", LossKind::PerLayerMse}});
  const auto n = parse_int(get("blocks"), src);
  if (n < 1 || n > 4096) throw CheckpointMismatch("implausible block count");
  std::size_t expected_keys = 8;
  for (std::int64_t l = 0; l < n; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    BlockSpec b;
    b.conv.support_dim = s.support_dim;
    b.conv.in_dim = parse_int(get(p + "in"), src);
    b.conv.out_dim = parse_int(get(p + "out"), src);
    const auto& w = get(p + "window");
    if (w.value.rfind("knn:", 0) == 0) {
      b.conv.window = Window::knn(static_cast<int>(parse_int({w.key, w.value.substr(4), w.line}, src)));
    } else if (w.value.rfind("radius:", 0) == 0) {
      b.conv.window = Window::ball(parse_double({w.key, w.value.substr(7), w.line}, src));
    } else {
      throw ParseError(src, w.line, "bad window '" + w.value + "'");
    }
    b.conv.kernel_hidden = parse_index_list(get(p + "kernel_hidden"), src);
    b.conv.normalization = pick<Normalization>(get(p + "normalization"), src,
                                               {{"mean", Normalization::Mean}, {"none", Normalization::None}});
    b.conv.formulation = pick<Formulation>(get(p + "formulation"), src,
                                           {{"dense", Formulation::Dense}, {"factorized", Formulation::Factorized}});
    b.conv.residual = parse_bool(get(p + "residual"), src);
    b.conv.kernel_batchnorm = parse_bool(get(p + "kernel_batchnorm"), src);
    b.conv.offset_scale = parse_double(get(p + "offset_scale"), src);
    b.batchnorm = parse_bool(get(p + "batchnorm"), src);
    b.activation = pick<Activation>(get(p + "activation"), src,
                                    {{"relu", Activation::Relu}, {"none", Activation::None}});
    s.blocks.push_back(std::move(b));
    expected_keys += 11;
  }
  if (kvs.size() != expected_keys) throw CheckpointMismatch("architecture has unexpected keys");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw CheckpointMismatch(std::string("stored architecture is invalid: ") + e.what());
  }
  return s;
}

bool operator==(const NetworkSpec& a, const NetworkSpec& b) { return serialize_spec(a) == serialize_spec(b); }

NetNeighbors build_network_neighbors(const NetworkSpec& spec, const Eigen::MatrixXd& points,
                                     const Eigen::MatrixXd& support, int threads) {
  require_shape(points.cols() == spec.support_dim, "points have the wrong dimension");
  const bool separate = support.size() > 0;
  const Eigen::MatrixXd& first = separate ? support : points;
  require_shape(first.cols() == spec.support_dim, "support has the wrong dimension");
  std::optional<KdTree> cloud_tree;
  std::optional<KdTree> support_tree;
  // Keyed by (reads from separate support, window).
  std::map<std::tuple<bool, int, int, double>, std::shared_ptr<const NeighborIndex>> cache;
  NetNeighbors out;
  for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
    const Window w = spec.blocks[l].conv.window;
    const bool from_support = l == 0 && separate;
    const auto key = std::make_tuple(from_support, static_cast<int>(w.kind), w.k, w.radius);
    auto it = cache.find(key);
    if (it == cache.end()) {
      auto& tree = from_support ? support_tree : cloud_tree;
      if (!tree) tree.emplace(from_support ? first : points);
      auto idx = std::make_shared<const NeighborIndex>(
          build_neighbors(*tree, from_support ? first : points, points, w, threads));
      it = cache.emplace(key, std::move(idx)).first;
    }
    out.blocks.push_back(it->second);
  }
  return out;
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, Index num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ShapeError("label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  std::vector<double> w(counts.size());
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    w[c] = counts[c] > 0 ? std::clamp(n / (static_cast<double>(num_classes) * counts[c]), 0.1, 10.0) : 10.0;
  return w;
}

}  // namespace contconv
