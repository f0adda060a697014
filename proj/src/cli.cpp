#include "contconv/cli.hpp"

#include "contconv/bench.hpp"
#include "contconv/checkpoint.hpp"
#include "contconv/config.hpp"
#include "contconv/dataset.hpp"
#include "contconv/keyvalue.hpp"
#include "contconv/metrics.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace fs = std::filesystem;

namespace contconv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string kv(const std::string& key, double v) { return key + "=" + format_double(v) + "\n"; }
std::string kv(const std::string& key, std::int64_t v) { return key + "=" + std::to_string(v) + "\n"; }
std::string kv(const std::string& key, const std::string& v) { return key + "=" + v + "\n"; }

// Fixed-width number for the human-readable table lines.
std::string fixed(double v, int prec = 4) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

template <typename Fn>
auto as_config_error(Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

DataKind model_kind(const NetworkSpec& spec) {
  if (spec.name == "flow") return DataKind::Flow;
  if (spec.name == "classify") return DataKind::Classify;
  if (spec.name == "indoor-seg" || spec.name == "driving-seg") return DataKind::Segmentation;
  throw CheckpointMismatch("checkpoint holds an unknown network '" + spec.name + "'");
}

void require_kind(DataKind data, DataKind wanted, const std::string& where) {
  if (data != wanted)
    throw CheckpointMismatch(where + " holds " + data_kind_name(data) + " data, the model needs " +
                             data_kind_name(wanted));
}

std::vector<int> concat_labels(const std::vector<Sample<float>>& samples) {
  std::vector<int> out;
  for (const auto& s : samples) out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

// --- train -------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg = as_config_error([&] { return load_run_config(config_path); });
  const int threads = thread_count_from_env();
  const DataKind kind = data_kind_for(cfg.task);

  const Dataset train = load_dataset(cfg.train_data);
  if (train.kind != kind)
    throw ConfigError("task " + task_name(cfg.task) + " cannot train on " + data_kind_name(train.kind) + " data");
  if (train.entries.empty()) throw ConfigError(cfg.train_data + " holds no clouds");
  Dataset test;
  const bool has_test = !cfg.test_data.empty();
  if (has_test) {
    test = load_dataset(cfg.test_data);
    if (test.kind != kind) throw ConfigError(cfg.test_data + " does not hold " + data_kind_name(kind) + " data");
  }
  if (kind != DataKind::Flow && cfg.num_classes == 0)
    cfg.num_classes = std::max(train.num_classes(), has_test ? test.num_classes() : Index{0});
  if (kind != DataKind::Flow && has_test && test.num_classes() > cfg.num_classes)
    throw ConfigError("test labels exceed num_classes");

  NetworkSpec spec;
  try {
    spec = network_spec(cfg, train.input_dim());
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }

  const auto t_prep = Clock::now();
  const auto train_samples = make_samples(spec, train, threads);
  const auto test_samples = has_test ? make_samples(spec, test, threads) : std::vector<Sample<float>>{};
  err << "# neighbourhoods built in " << fixed(seconds_since(t_prep), 2) << " s\n";

  TrainConfig tc;
  if (cfg.class_weights) {
    const auto labels = concat_labels(train_samples);
    tc.class_weights = inverse_frequency_weights(labels, cfg.num_classes);
  }

  std::mt19937_64 rng(cfg.seed);
  Network<float> net = make_network<float>(spec, rng);
  if (cfg.zero_init_residual) zero_init_residual_branches(net);
  AdamState<float> opt(cfg.adam, params_of(net));

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());
  const std::string ckpt_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
  const std::string log_path = (fs::path(cfg.out_dir) / "metrics.txt").string();

  std::string log;
  log += kv("task", task_name(cfg.task));
  log += kv("seed", static_cast<std::int64_t>(cfg.seed));
  log += kv("parameters", static_cast<std::int64_t>(params_of(net).numel()));
  out << log;
  write_checkpoint(ckpt_path, to_checkpoint(net));
  write_file_atomic(log_path, log);

  const bool classifier = spec.is_classifier();
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = Clock::now();
    opt.config.lr = cfg.adam.lr * std::pow(cfg.lr_decay, e);
    const EpochStats st = train_epoch(net, train_samples, opt, rng, tc);
    std::string line = "epoch=" + std::to_string(e + 1) + " lr=" + format_double(opt.config.lr) +
                       " train_loss=" + format_double(st.loss) +
                       (classifier ? " train_accuracy=" + format_double(st.accuracy)
                                   : " train_epe=" + format_double(st.epe));
    if (has_test) {
      const EpochStats ev = evaluate(net, test_samples, tc);
      line += " test_loss=" + format_double(ev.loss) +
              (classifier ? " test_accuracy=" + format_double(ev.accuracy) : " test_epe=" + format_double(ev.epe));
    }
    line += "\n";
    out << line << std::flush;
    log += line;
    write_checkpoint(ckpt_path, to_checkpoint(net));
    write_file_atomic(log_path, log);
    err << "# epoch " << e + 1 << " took " << fixed(seconds_since(t0), 2) << " s\n";
  }
  out << kv("checkpoint", ckpt_path);
  return kExitOk;
}

// --- eval --------------------------------------------------------------------

std::string eval_report(const Network<float>& net, const std::vector<Sample<float>>& samples) {
  const auto& spec = net.spec;
  const DataKind kind = model_kind(spec);
  const EpochStats stats = evaluate(net, samples, TrainConfig{});
  std::string table, body;
  body += kv("kind", data_kind_name(kind));
  body += kv("clouds", static_cast<std::int64_t>(samples.size()));

  if (kind == DataKind::Flow) {
    Index n = 0;
    for (const auto& s : samples) n += s.input.points.rows();
    Eigen::MatrixXd pred(n, spec.output_dim()), gt(n, spec.output_dim());
    Index row = 0;
    double gt_norm = 0.0;
    for (const auto& s : samples) {
      const Index m = s.input.points.rows();
      pred.middleRows(row, m) = predict(net, s).cast<double>();
      gt.middleRows(row, m) = s.flow.cast<double>();
      row += m;
    }
    gt_norm = n > 0 ? gt.rowwise().norm().mean() : 0.0;
    const FlowMetrics fm = compute_epe_outliers(pred, gt);
    const FlowMetrics zero = compute_epe_outliers(Eigen::MatrixXd::Zero(n, gt.cols()), gt);
    table += "# metric            model      zero-flow\n";
    table += "# EPE (cm)          " + fixed(fm.epe_cm) + "     " + fixed(zero.epe_cm) + "\n";
    table += "# outliers >10 cm   " + fixed(fm.outlier_10) + "     " + fixed(zero.outlier_10) + "\n";
    table += "# outliers >20 cm   " + fixed(fm.outlier_20) + "     " + fixed(zero.outlier_20) + "\n";
    body += kv("points", static_cast<std::int64_t>(n));
    body += kv("loss", stats.loss);
    body += kv("epe_cm", fm.epe_cm);
    body += kv("outlier_10cm", fm.outlier_10);
    body += kv("outlier_20cm", fm.outlier_20);
    body += kv("zero_flow_epe_cm", zero.epe_cm);
    body += kv("mean_flow_norm_cm", 100.0 * gt_norm);
    return table + body;
  }

  std::vector<int> pred, gt;
  for (const auto& s : samples) {
    const auto p = argmax_rows(predict(net, s));
    pred.insert(pred.end(), p.begin(), p.end());
    gt.insert(gt.end(), s.labels.begin(), s.labels.end());
  }
  const int classes = static_cast<int>(spec.output_dim());
  for (int y : gt)
    if (y >= classes) throw CheckpointMismatch("data label " + std::to_string(y) + " exceeds the model's classes");
  const ConfusionMatrix cm(pred, gt, classes);
  const IouResult iou = compute_miou(pred, gt, classes);
  const double macc = compute_macc(pred, gt, classes);
  const double acc = point_accuracy(pred, gt);

  table += "# class  support  accuracy  iou\n";
  for (int c = 0; c < classes; ++c) {
    const auto support = cm.gt_count(c);
    const double ca = support > 0 ? static_cast<double>(cm.true_positive(c)) / static_cast<double>(support) : NAN;
    char buf[128];
    std::snprintf(buf, sizeof buf, "# %-5d  %-7lld  %-8s  %s\n", c, static_cast<long long>(support),
                  fixed(ca).c_str(), fixed(iou.per_class[static_cast<std::size_t>(c)]).c_str());
    table += buf;
  }
  body += kv(kind == DataKind::Classify ? "samples" : "points", static_cast<std::int64_t>(gt.size()));
  body += kv("loss", stats.loss);
  body += kv("accuracy", acc);
  body += kv("macc", macc);
  body += kv("miou", iou.mean);
  for (int c = 0; c < classes; ++c) body += kv("iou." + std::to_string(c), iou.per_class[static_cast<std::size_t>(c)]);
  return table + body;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, std::ostream& out, std::ostream& err) {
  const auto t0 = Clock::now();
  const int threads = thread_count_from_env();
  const Network<float> net = network_from_checkpoint<float>(read_checkpoint(ckpt_path));
  const Dataset data = load_dataset(data_dir);
  require_kind(data.kind, model_kind(net.spec), data_dir);
  const auto samples = make_samples(net.spec, data, threads);
  out << eval_report(net, samples);
  err << "# eval took " << fixed(seconds_since(t0), 2) << " s\n";
  return kExitOk;
}

// --- predict -----------------------------------------------------------------

int cmd_predict(const std::string& ckpt_path, const std::string& input, const std::string& target,
                const std::string& output, std::ostream& out) {
  const int threads = thread_count_from_env();
  const Network<float> net = network_from_checkpoint<float>(read_checkpoint(ckpt_path));
  const DataKind kind = model_kind(net.spec);
  DatasetEntry e;
  e.source = read_points(input);
  if (e.source.points.cols() != net.spec.support_dim)
    throw CheckpointMismatch(input + ": points are " + std::to_string(e.source.points.cols()) +
                             "-dimensional, the model expects " + std::to_string(net.spec.support_dim));
  if (kind == DataKind::Flow) {
    if (target.empty()) throw ConfigError("flow prediction needs --target");
    e.target = read_points(target);
    e.source.flow = Eigen::MatrixXd::Zero(e.source.points.rows(), e.source.points.cols());
  } else {
    if (!target.empty()) throw ConfigError("--target applies to flow models only");
    e.source.labels.assign(static_cast<std::size_t>(e.source.points.rows()), 0);
  }
  const Sample<float> s = make_sample(net.spec, kind, e, threads);
  const MatrixX<float> y = predict(net, s);

  PointFile result;
  result.points = e.source.points;
  if (kind == DataKind::Flow) {
    result.flow = y.cast<double>();
  } else {
    const auto labels = argmax_rows(y);
    if (kind == DataKind::Classify)
      result.labels.assign(static_cast<std::size_t>(result.points.rows()), labels.front());
    else
      result.labels = labels;
  }
  write_points(output, result);
  out << kv("kind", data_kind_name(kind));
  out << kv("points", static_cast<std::int64_t>(result.points.rows()));
  if (kind == DataKind::Classify) out << kv("class", static_cast<std::int64_t>(result.labels.front()));
  out << kv("output", output);
  return kExitOk;
}

// --- gendata -----------------------------------------------------------------

int cmd_gendata(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed, std::ostream& out) {
  const GenSpec g = as_config_error([&] { return load_gen_spec(spec_path); });
  generate_dataset(g, seed, out_dir);
  const char* kind = g.kind == GenSpec::Kind::Flow ? "flow" : g.kind == GenSpec::Kind::Classify ? "classify" : "segmentation";
  out << kv("kind", std::string(kind));
  out << kv("seed", static_cast<std::int64_t>(seed));
  out << kv("train", static_cast<std::int64_t>(g.train));
  out << kv("test", static_cast<std::int64_t>(g.test));
  out << kv("format", std::string(g.binary ? "binary" : "text"));
  return kExitOk;
}

// --- bench -------------------------------------------------------------------

int cmd_bench(const std::string& config_path, std::ostream& out) {
  const BenchConfig c = as_config_error([&] { return load_bench_config(config_path); });
  const int threads = thread_count_from_env();
  const BenchReport r = run_bench(c, threads);
  out << kv("points", static_cast<std::int64_t>(r.points));
  out << kv("layers", static_cast<std::int64_t>(c.layers));
  out << kv("k", static_cast<std::int64_t>(c.k));
  out << kv("threads", static_cast<std::int64_t>(threads));
  out << kv("neighbor_entries", static_cast<std::int64_t>(r.neighbor_entries));
  out << kv("kdtree_build_ms", r.kdtree_build_ms);
  out << kv("kdtree_query_ms", r.kdtree_query_ms);
  double total_ms = 0.0, total_flops = 0.0;
  for (std::size_t l = 0; l < r.layer_ms.size(); ++l) {
    out << kv("layer." + std::to_string(l) + ".ms", r.layer_ms[l]);
    out << kv("layer." + std::to_string(l) + ".gflop", r.layer_flops[l] * 1e-9);
    total_ms += r.layer_ms[l];
    total_flops += r.layer_flops[l];
  }
  out << kv("forward_ms", total_ms);
  out << kv("gflops_per_s", total_flops * 1e-9 / (total_ms * 1e-3));
  out << kv("kernel_unfused_ms", r.kernel_unfused_ms);
  out << kv("kernel_fused_ms", r.kernel_fused_ms);
  out << kv("fused_speedup", r.fused_speedup);
  out << kv("fused_max_abs_diff", r.fused_max_abs_diff);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parametric continuous convolution networks on point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "contconv 1.0");

  std::string config, checkpoint, data, input, target, output, spec, out_dir;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "train a network from a config file");
  train->add_option("--config", config, "run configuration (key = value)")->required();
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data, "dataset directory (holds dataset.txt)")->required();
  auto* pred = app.add_subcommand("predict", "run a checkpoint on one point file");
  pred->add_option("--checkpoint", checkpoint)->required();
  pred->add_option("--input", input, "point file (source frame for flow)")->required();
  pred->add_option("--target", target, "target frame (flow models)");
  pred->add_option("--output", output)->required();
  auto* gen = app.add_subcommand("gendata", "generate a synthetic dataset");
  gen->add_option("--spec", spec, "generator spec (key = value)")->required();
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--seed", seed)->required();
  auto* bench = app.add_subcommand("bench", "time layers, neighbour search and kernel fusion");
  bench->add_option("--config", config)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(config, out, err);
    if (*eval) return cmd_eval(checkpoint, data, out, err);
    if (*pred) return cmd_predict(checkpoint, input, target, output, out);
    if (*gen) return cmd_gendata(spec, out_dir, seed, out);
    if (*bench) return cmd_bench(config, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckpointMismatch& e) {
    err << "checkpoint mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const ShapeError& e) {
    err << "shape mismatch: " << e.what() << "\n";
    return kExitMismatch;
  }
  return kExitConfig;
}

}  // namespace contconv
