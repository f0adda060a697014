#include "contconv/config.hpp"

#include "contconv/keyvalue.hpp"

#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <utility>

namespace contconv {

namespace {

// Keys are looked up by name; whatever is left unclaimed at the end is an
// error, as are keys claimed by a different task.
class Reader {
 public:
  Reader(const std::string& text, std::string source) : source_(std::move(source)) {
    kvs_ = parse_key_values(text, source_);
    for (const auto& kv : kvs_) by_key_[kv.key] = &kv;
  }

  const std::string& source() const { return source_; }

  const KeyValue* take(const std::string& key) {
    const auto it = by_key_.find(key);
    if (it == by_key_.end()) return nullptr;
    const KeyValue* kv = it->second;
    by_key_.erase(it);
    return kv;
  }
  const KeyValue& require(const std::string& key) {
    const KeyValue* kv = take(key);
    if (!kv) throw ConfigError(source_ + ": missing required key '" + key + "'");
    return *kv;
  }

  void real(const std::string& key, double& v) {
    if (const auto* kv = take(key)) v = parse_double(*kv, source_);
  }
  template <typename Int>
  void integer(const std::string& key, Int& v) {
    if (const auto* kv = take(key)) v = static_cast<Int>(parse_int(*kv, source_));
  }
  void boolean(const std::string& key, bool& v) {
    if (const auto* kv = take(key)) v = parse_bool(*kv, source_);
  }
  void string(const std::string& key, std::string& v) {
    if (const auto* kv = take(key)) v = kv->value;
  }
  void index_list(const std::string& key, std::vector<Index>& v) {
    if (const auto* kv = take(key)) v = parse_index_list(*kv, source_);
  }
  template <typename E>
  void choice(const std::string& key, E& v, std::initializer_list<std::pair<const char*, E>> opts) {
    const auto* kv = take(key);
    if (!kv) return;
    for (const auto& [name, value] : opts)
      if (kv->value == name) {
        v = value;
        return;
      }
    std::string names;
    for (const auto& [name, value] : opts) names += (names.empty() ? "" : ", ") + std::string(name);
    throw ParseError(source_, kv->line, "'" + key + "' must be one of " + names + ", got '" + kv->value + "'");
  }

  /// Keys left over after every known one was taken.
  void finish(const std::string& context) {
    if (by_key_.empty()) return;
    const KeyValue* first = nullptr;
    for (const auto& [k, kv] : by_key_)
      if (!first || kv->line < first->line) first = kv;
    throw ParseError(source_, first->line, "unknown key '" + first->key + "'" + context);
  }

 private:
  std::string source_;
  std::vector<KeyValue> kvs_;
  std::map<std::string, const KeyValue*> by_key_;
};

void check(bool ok, const std::string& source, const std::string& what) {
  if (!ok) throw ConfigError(source + ": " + what);
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

std::string config_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "indoor-seg") return Task::IndoorSeg;
  if (name == "driving-seg") return Task::DrivingSeg;
  if (name == "flow") return Task::Flow;
  if (name == "classify") return Task::Classify;
  throw ConfigError("unknown task '" + name + "' (indoor-seg, driving-seg, flow, classify)");
}

std::string task_name(Task t) {
  switch (t) {
    case Task::IndoorSeg: return "indoor-seg";
    case Task::DrivingSeg: return "driving-seg";
    case Task::Flow: return "flow";
    case Task::Classify: return "classify";
  }
  return "";
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  Reader r(text, source);
  RunConfig c;
  const auto& task = r.require("task");
  try {
    c.task = parse_task(task.value);
  } catch (const ConfigError& e) {
    throw ParseError(source, task.line, e.what());
  }
  c.seed = parse_u64(r.require("seed"), source);
  c.train_data = r.require("train_data").value;
  r.string("test_data", c.test_data);
  c.out_dir = r.require("out_dir").value;
  r.integer("epochs", c.epochs);
  r.real("lr", c.adam.lr);
  r.real("lr_decay", c.lr_decay);
  r.real("beta1", c.adam.beta1);
  r.real("beta2", c.adam.beta2);
  r.real("eps", c.adam.eps);

  Window::Kind kind = Window::Kind::Knn;
  int k = 16;
  double radius = 0.0;
  r.choice<Window::Kind>("window", kind, {{"knn", Window::Kind::Knn}, {"radius", Window::Kind::Radius}});
  r.integer("k", k);
  r.real("radius", radius);
  c.arch.window = kind == Window::Kind::Knn ? Window::knn(k) : Window::ball(radius);
  r.integer("width", c.arch.width);
  r.index_list("kernel_hidden", c.arch.kernel_hidden);
  r.choice<Formulation>("formulation", c.arch.formulation,
                        {{"factorized", Formulation::Factorized}, {"dense", Formulation::Dense}});
  r.choice<Normalization>("normalization", c.arch.normalization,
                          {{"mean", Normalization::Mean}, {"none", Normalization::None}});
  r.real("offset_scale", c.arch.offset_scale);
  r.boolean("kernel_batchnorm", c.arch.kernel_batchnorm);
  r.boolean("zero_init_residual", c.zero_init_residual);

  if (c.task == Task::Flow) {
    double cross = 0.0;
    r.real("cross_radius", cross);
    if (cross != 0.0) {
      check(cross > 0.0, source, "cross_radius must be positive");
      c.arch.cross_window = Window::ball(cross);
    }
    r.finish(" for task flow");
  } else {
    r.integer("num_classes", c.num_classes);
    c.class_weights = c.task == Task::DrivingSeg;
    r.boolean("class_weights", c.class_weights);
    r.finish(" for task " + task_name(c.task));
  }

  check(c.epochs >= 0, source, "epochs must be >= 0");
  check(c.adam.lr > 0.0, source, "lr must be positive");
  check(c.lr_decay > 0.0 && c.lr_decay <= 1.0, source, "lr_decay must lie in (0, 1]");
  check(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0, source, "beta1 must lie in [0, 1)");
  check(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0, source, "beta2 must lie in [0, 1)");
  check(c.adam.eps > 0.0, source, "eps must be positive");
  check(kind == Window::Kind::Knn ? k >= 1 : radius > 0.0, source,
        "window needs k >= 1 (knn) or radius > 0 (radius)");
  check(c.arch.width >= 1, source, "width must be >= 1");
  check(!c.arch.kernel_hidden.empty(), source, "kernel_hidden needs at least one layer");
  check(c.arch.offset_scale > 0.0, source, "offset_scale must be positive");
  check(c.num_classes >= 0, source, "num_classes must be >= 0");
  check(!(c.task == Task::Classify && c.class_weights), source, "class_weights applies to segmentation only");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = parse_run_config(read_text_file(path), path);
  const std::string base = config_dir(path);
  c.train_data = resolve(c.train_data, base);
  c.test_data = resolve(c.test_data, base);
  c.out_dir = resolve(c.out_dir, base);
  return c;
}

NetworkSpec network_spec(const RunConfig& c, Index input_dim) {
  switch (c.task) {
    case Task::IndoorSeg: return build_indoor_segnet(c.num_classes, 3, input_dim, c.arch);
    case Task::DrivingSeg: {
      NetworkSpec s = build_driving_segnet(c.num_classes, 3, input_dim, c.arch);
      if (!c.class_weights) s.loss = LossKind::CrossEntropy;
      return s;
    }
    case Task::Flow: return build_flownet(3, c.arch);
    case Task::Classify: return build_classnet(c.num_classes, 3, input_dim, c.arch);
  }
  throw ConfigError("unknown task");
}

GenSpec parse_gen_spec(const std::string& text, const std::string& source) {
  Reader r(text, source);
  GenSpec g;
  r.choice<GenSpec::Kind>("task", g.kind,
                          {{"segmentation", GenSpec::Kind::Segmentation},
                           {"flow", GenSpec::Kind::Flow},
                           {"classify", GenSpec::Kind::Classify}});
  r.integer("train", g.train);
  r.integer("test", g.test);
  r.choice<bool>("format", g.binary, {{"text", false}, {"binary", true}});
  switch (g.kind) {
    case GenSpec::Kind::Segmentation: {
      auto& s = g.scene;
      r.integer("points", s.num_points);
      if (const auto* kv = r.take("proportions")) {
        s.proportions.clear();
        std::size_t pos = 0;
        const std::string& v = kv->value;
        while (pos <= v.size()) {
          const auto comma = v.find(',', pos);
          const auto end = comma == std::string::npos ? v.size() : comma;
          std::string item = v.substr(pos, end - pos);
          item.erase(0, item.find_first_not_of(' '));
          item.erase(item.find_last_not_of(' ') + 1);
          s.proportions.push_back(parse_double({kv->key, item, kv->line}, source));
          pos = end + 1;
        }
      }
      r.real("room", s.room);
      r.real("wall_height", s.wall_height);
      r.integer("boxes", s.boxes);
      r.integer("cylinders", s.cylinders);
      r.integer("color_channels", s.color_channels);
      r.real("color_noise", s.color_noise);
      r.finish(" for task segmentation");
      break;
    }
    case GenSpec::Kind::Flow: {
      auto& f = g.flow;
      r.integer("points", f.num_points);
      r.real("extent", f.extent);
      r.integer("static_boxes", f.static_boxes);
      r.integer("objects", f.objects);
      r.real("ground_fraction", f.ground_fraction);
      r.real("ego_yaw_deg", f.ego_yaw_deg);
      r.real("ego_translation", f.ego_translation);
      r.real("object_yaw_deg", f.object_yaw_deg);
      r.real("object_translation", f.object_translation);
      r.real("noise", f.noise_sigma);
      r.boolean("shuffle_target", f.shuffle_target);
      r.finish(" for task flow");
      break;
    }
    case GenSpec::Kind::Classify:
      r.integer("points", g.shape.num_points);
      r.real("noise", g.shape.noise);
      r.finish(" for task classify");
      break;
  }
  check(g.train >= 0 && g.test >= 0, source, "train and test counts must be >= 0");
  try {
    g.scene.validate();
    g.flow.validate();
    g.shape.validate();
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return g;
}

GenSpec load_gen_spec(const std::string& path) { return parse_gen_spec(read_text_file(path), path); }

BenchConfig parse_bench_config(const std::string& text, const std::string& source) {
  Reader r(text, source);
  BenchConfig b;
  if (const auto* kv = r.take("seed")) b.seed = parse_u64(*kv, source);
  r.integer("points", b.points);
  r.integer("layers", b.layers);
  r.integer("width", b.width);
  r.integer("input_dim", b.input_dim);
  r.integer("k", b.k);
  r.index_list("kernel_hidden", b.kernel_hidden);
  r.integer("repeats", b.repeats);
  r.finish("");
  check(b.points >= 1, source, "points must be >= 1");
  check(b.layers >= 1, source, "layers must be >= 1");
  check(b.width >= 1 && b.input_dim >= 1, source, "width and input_dim must be >= 1");
  check(b.k >= 1, source, "k must be >= 1");
  check(!b.kernel_hidden.empty(), source, "kernel_hidden needs at least one layer");
  check(b.repeats >= 1, source, "repeats must be >= 1");
  return b;
}

BenchConfig load_bench_config(const std::string& path) {
  return parse_bench_config(read_text_file(path), path);
}

int thread_count_from_env() {
  const char* v = std::getenv("CONTCONV_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024)
    throw ConfigError(std::string("CONTCONV_THREADS must be an integer in [1, 1024], got '") + v + "'");
  return static_cast<int>(n);
}

}  // namespace contconv
