#pragma once

#include "contconv/adam.hpp"
#include "contconv/datagen.hpp"
#include "contconv/models.hpp"

#include <cstdint>
#include <string>

namespace contconv {

enum class Task { IndoorSeg, DrivingSeg, Flow, Classify };

Task parse_task(const std::string& name);
std::string task_name(Task t);
inline bool task_is_segmentation(Task t) { return t == Task::IndoorSeg || t == Task::DrivingSeg; }

/// `train` configuration. Flat `key = value` text; unknown keys, repeated keys
/// and keys that do not apply to the task are errors. Relative paths are taken
/// relative to the directory holding the config file.
struct RunConfig {
  Task task = Task::IndoorSeg;
  std::uint64_t seed = 0;
  std::string train_data;
  std::string test_data;  // optional; evaluated after every epoch
  std::string out_dir;
  int epochs = 30;
  Index num_classes = 0;  // classifiers only
  AdamConfig adam;
  double lr_decay = 1.0;  // lr of epoch e is lr * lr_decay^e
  ArchOptions arch;
  bool zero_init_residual = true;
  bool class_weights = false;  // inverse frequency; driving-seg defaults to on
};

RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::string& path);
/// The network the config describes for data with `input_dim` feature channels.
NetworkSpec network_spec(const RunConfig& config, Index input_dim);

/// `gendata` specification.
struct GenSpec {
  enum class Kind { Segmentation, Flow, Classify };
  Kind kind = Kind::Segmentation;
  int train = 64;
  int test = 16;
  bool binary = false;
  LabeledSceneSpec scene;
  FlowSceneSpec flow;
  ShapeCloudSpec shape;
};

GenSpec parse_gen_spec(const std::string& text, const std::string& source);
GenSpec load_gen_spec(const std::string& path);

/// `bench` configuration: a stack of conv layers on one synthetic cloud.
struct BenchConfig {
  std::uint64_t seed = 1;
  Index points = 2000;
  int layers = 8;
  Index width = 32;
  Index input_dim = 3;
  int k = 50;
  std::vector<Index> kernel_hidden{16};
  int repeats = 5;
};

BenchConfig parse_bench_config(const std::string& text, const std::string& source);
BenchConfig load_bench_config(const std::string& path);

/// Worker count from CONTCONV_THREADS (default 1). Malformed values are a
/// ConfigError.
int thread_count_from_env();

}  // namespace contconv
