#include "contconv/dataset.hpp"

#include "contconv/keyvalue.hpp"

#include <cstdio>
#include <filesystem>
#include <map>

namespace fs = std::filesystem;

namespace contconv {

namespace {

std::string numbered(const char* stem, std::size_t i, const char* suffix, bool binary) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu%s%s", stem, i, suffix, binary ? ".pcb" : ".pcn");
  return buf;
}

std::string file_of(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

DatasetEntry from_labeled(const LabeledScene& s) {
  DatasetEntry e;
  e.source.points = s.points;
  e.source.features = s.features;
  e.source.labels = s.labels;
  return e;
}

}  // namespace

std::string data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::Segmentation: return "segmentation";
    case DataKind::Flow: return "flow";
    case DataKind::Classify: return "classify";
  }
  return "";
}

DataKind data_kind_for(Task t) {
  switch (t) {
    case Task::IndoorSeg:
    case Task::DrivingSeg: return DataKind::Segmentation;
    case Task::Flow: return DataKind::Flow;
    case Task::Classify: return DataKind::Classify;
  }
  return DataKind::Segmentation;
}

Index Dataset::input_dim() const {
  if (kind == DataKind::Flow) return 2;
  if (entries.empty()) return 1;
  return std::max<Index>(1, entries.front().source.features.cols());
}

Index Dataset::num_classes() const {
  if (kind == DataKind::Flow) return 0;
  int mx = -1;
  for (const auto& e : entries)
    for (int y : e.source.labels) mx = std::max(mx, y);
  return mx + 1;
}

void write_dataset(const std::string& dir, const Dataset& data, bool binary) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  for (std::size_t i = 0; i < data.entries.size(); ++i) {
    const auto& e = data.entries[i];
    if (data.kind == DataKind::Flow) {
      write_points(file_of(dir, numbered("pair", i, "_source", binary)), e.source);
      write_points(file_of(dir, numbered("pair", i, "_target", binary)), e.target);
    } else {
      write_points(file_of(dir, numbered("cloud", i, "", binary)), e.source);
    }
  }
  // The manifest goes last so a directory with one is complete.
  std::string m;
  m += "kind=" + data_kind_name(data.kind) + "\n";
  m += "count=" + std::to_string(data.entries.size()) + "\n";
  m += std::string("format=") + (binary ? "binary" : "text") + "\n";
  write_file_atomic(file_of(dir, "dataset.txt"), m);
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest = file_of(dir, "dataset.txt");
  const auto kvs = parse_key_values(read_text_file(manifest), manifest);
  std::map<std::string, const KeyValue*> by_key;
  for (const auto& kv : kvs) by_key[kv.key] = &kv;
  auto get = [&](const char* k) -> const KeyValue& {
    const auto it = by_key.find(k);
    if (it == by_key.end()) throw ParseError(manifest, 0, std::string("missing '") + k + "'");
    return *it->second;
  };
  if (kvs.size() != 3) throw ParseError(manifest, 0, "expected exactly kind, count and format");
  Dataset d;
  const auto& kind = get("kind");
  if (kind.value == "segmentation")
    d.kind = DataKind::Segmentation;
  else if (kind.value == "flow")
    d.kind = DataKind::Flow;
  else if (kind.value == "classify")
    d.kind = DataKind::Classify;
  else
    throw ParseError(manifest, kind.line, "unknown kind '" + kind.value + "'");
  const auto count = parse_int(get("count"), manifest);
  if (count < 0) throw ParseError(manifest, get("count").line, "negative count");
  const auto& format = get("format");
  if (format.value != "text" && format.value != "binary")
    throw ParseError(manifest, format.line, "format must be text or binary");
  const bool binary = format.value == "binary";

  Index features = -1;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto n = static_cast<std::size_t>(i);
    DatasetEntry e;
    if (d.kind == DataKind::Flow) {
      const auto src = file_of(dir, numbered("pair", n, "_source", binary));
      e.source = read_points(src);
      e.target = read_points(file_of(dir, numbered("pair", n, "_target", binary)));
      if (e.source.flow.cols() != e.source.points.cols())
        throw ShapeError(src + ": flow source needs a flow channel per coordinate");
      if (e.target.points.cols() != e.source.points.cols())
        throw ShapeError(src + ": frames differ in dimension");
    } else {
      const auto path = file_of(dir, numbered("cloud", n, "", binary));
      e.source = read_points(path);
      if (e.source.labels.empty()) throw ShapeError(path + ": cloud has no labels");
      if (features >= 0 && e.source.features.cols() != features)
        throw ShapeError(path + ": feature channel count differs from the first cloud");
      features = e.source.features.cols();
      if (d.kind == DataKind::Classify)
        for (int y : e.source.labels)
          if (y != e.source.labels.front()) throw ShapeError(path + ": classification cloud mixes labels");
    }
    if (e.source.points.cols() != 3) throw ShapeError("clouds must be three-dimensional");
    d.entries.push_back(std::move(e));
  }
  return d;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Dataset generate_split(const GenSpec& spec, std::uint64_t seed, int count, std::uint64_t split_tag) {
  Dataset d;
  d.kind = spec.kind == GenSpec::Kind::Flow       ? DataKind::Flow
           : spec.kind == GenSpec::Kind::Classify ? DataKind::Classify
                                                  : DataKind::Segmentation;
  const std::uint64_t base = splitmix64(seed ^ split_tag);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = splitmix64(base + static_cast<std::uint64_t>(i));
    switch (d.kind) {
      case DataKind::Segmentation:
        d.entries.push_back(from_labeled(gen_labeled_scene(s, spec.scene)));
        break;
      case DataKind::Classify:
        d.entries.push_back(from_labeled(gen_shape_cloud(s, i % kShapeClasses, spec.shape)));
        break;
      case DataKind::Flow: {
        const FlowScene f = gen_flow_scene(s, spec.flow);
        DatasetEntry e;
        e.source.points = f.source;
        e.source.flow = f.flow;
        e.target.points = f.target;
        d.entries.push_back(std::move(e));
        break;
      }
    }
  }
  return d;
}

void generate_dataset(const GenSpec& spec, std::uint64_t seed, const std::string& out) {
  write_dataset(file_of(out, "train"), generate_split(spec, seed, spec.train, 1), spec.binary);
  write_dataset(file_of(out, "test"), generate_split(spec, seed, spec.test, 2), spec.binary);
}

Sample<float> make_sample(const NetworkSpec& spec, DataKind kind, const DatasetEntry& e, int threads) {
  Sample<float> s;
  if (kind == DataKind::Flow) {
    s.input = flow_input<float>(e.source.points, e.target.points);
    s.flow = e.source.flow.cast<float>();
  } else {
    s.input.points = e.source.points;
    if (e.source.features.cols() > 0)
      s.input.features = e.source.features.cast<float>();
    else
      s.input.features = MatrixX<float>::Ones(e.source.points.rows(), 1);
    if (kind == DataKind::Classify)
      s.labels = {e.source.labels.front()};
    else
      s.labels = e.source.labels;
  }
  require_shape(s.input.features.cols() == spec.input_dim,
                "data has " + std::to_string(s.input.features.cols()) + " feature channels, the model expects " +
                    std::to_string(spec.input_dim));
  s.neighbors = build_network_neighbors(spec, s.input.points, s.input.support, threads);
  return s;
}

std::vector<Sample<float>> make_samples(const NetworkSpec& spec, const Dataset& data, int threads) {
  std::vector<Sample<float>> out;
  out.reserve(data.entries.size());
  for (const auto& e : data.entries) out.push_back(make_sample(spec, data.kind, e, threads));
  return out;
}

}  // namespace contconv
