#include "contconv/bench.hpp"

#include "contconv/conv.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>

namespace contconv {

namespace {

template <typename Fn>
double min_ms(int repeats, Fn&& fn) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

BenchReport run_bench(const BenchConfig& c, int threads) {
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd pts(c.points, 3);
  for (Index i = 0; i < pts.rows(); ++i)
    for (Index d = 0; d < 3; ++d) pts(i, d) = u(rng);

  BenchReport r;
  r.points = c.points;
  r.kdtree_build_ms = min_ms(c.repeats, [&] { KdTree t(pts); });
  const KdTree tree(pts);
  const Window w = Window::knn(c.k);
  NeighborIndex idx;
  r.kdtree_query_ms = min_ms(c.repeats, [&] { idx = build_neighbors(tree, pts, pts, w, threads); });
  r.neighbor_entries = idx.num_entries();
  const auto nbr = std::make_shared<const NeighborIndex>(std::move(idx));
  const MatrixX<float> offsets = nbr->offsets.cast<float>();

  std::normal_distribution<double> n01(0.0, 1.0);
  MatrixX<float> x(c.points, c.input_dim);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(n01(rng));

  for (int l = 0; l < c.layers; ++l) {
    ConvLayerSpec s;
    s.in_dim = l == 0 ? c.input_dim : c.width;
    s.out_dim = c.width;
    s.window = w;
    s.kernel_hidden = c.kernel_hidden;
    s.kernel_batchnorm = true;
    ConvLayer<float> layer = make_conv_layer<float>(s, rng);
    // Stand-in running statistics so the fold is not the identity.
    for (auto& dl : layer.kernel.layers) {
      if (!dl.norm) continue;
      auto& bn = *dl.norm;
      for (Index k = 0; k < bn.channels(); ++k) {
        bn.gamma(0, k) = static_cast<float>(1.0 + 0.1 * n01(rng));
        bn.beta(0, k) = static_cast<float>(0.1 * n01(rng));
        bn.running_mean(0, k) = static_cast<float>(0.1 * n01(rng));
        bn.running_var(0, k) = static_cast<float>(0.5 + u(rng));
      }
      bn.tracked = true;
    }
    ConvLayer<float> fused = layer;
    fused.kernel = fuse_batchnorm_linear(layer.kernel);

    MatrixX<float> ku, kf;
    r.kernel_unfused_ms += min_ms(c.repeats, [&] { ku = eval_kernel(layer.kernel, offsets); });
    r.kernel_fused_ms += min_ms(c.repeats, [&] { kf = eval_kernel(fused.kernel, offsets); });
    r.fused_max_abs_diff = std::max(r.fused_max_abs_diff, static_cast<double>((ku - kf).cwiseAbs().maxCoeff()));

    MatrixX<float> y;
    r.layer_ms.push_back(min_ms(c.repeats, [&] { y = conv_forward(s, x, nbr, fused, Mode::Infer).h; }));
    r.layer_flops.push_back(conv_layer_flops(s, fused.kernel, c.points, std::min<Index>(c.k, c.points)));
    x = y.cwiseMax(0.0f);
  }
  r.fused_speedup = r.kernel_unfused_ms / r.kernel_fused_ms;
  return r;
}

}  // namespace contconv
