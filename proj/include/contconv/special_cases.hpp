#pragma once

#include "contconv/conv.hpp"

#include <functional>
#include <vector>

namespace contconv {

// Classical operators that the continuous convolution reduces to under a
// particular choice of support and kernel. Each comes as a direct reference
// implementation plus the same result computed through the continuous-conv
// contraction.

using Image = MatrixX<double>;
using Kernel3x3 = Eigen::Matrix3d;

/// Discrete 2D correlation with zero padding:
/// out(r, c) = sum_{a,b in -1..1} k(a+1, b+1) * img(r+a, c+b).
Image grid_conv_reference(const Image& image, const Kernel3x3& kernel);

/// Pixels as points of R^2, K = 9 support, and a kernel that looks up the
/// weight of each integer offset (zero outside the 3x3 footprint).
Image grid_conv_continuous(const Image& image, const Kernel3x3& kernel);

struct BilateralWidths {
  double spatial = 1.0;
  double range = 1.0;
};

/// out_i = sum_j G(p_i - p_j, f_i - f_j) f_j / sum_j G(...), G Gaussian.
MatrixX<double> bilateral_reference(const Eigen::MatrixXd& positions,
                                    const MatrixX<double>& features, BilateralWidths widths);

/// Support domain = [position, feature]; kernel g_{d,k}(z) = G(z) delta_{dk};
/// per-output normalization by the Gaussian partition sum.
MatrixX<double> bilateral_continuous(const Eigen::MatrixXd& positions,
                                     const MatrixX<double>& features, BilateralWidths widths);

struct GraphConvResult {
  MatrixX<double> out;
  std::vector<std::uint8_t> isolated;  // 1 where the node had no neighbours
};

/// out_i = sum_{j in N(i)} f_j W / |N(i)|, computed by message passing.
GraphConvResult graph_conv_reference(const std::vector<std::vector<Index>>& adjacency,
                                     const MatrixX<double>& features, const MatrixX<double>& weight);

/// Factorized continuous conv over the graph neighbourhoods with a constant
/// kernel, W1 = weight, mean normalization.
GraphConvResult graph_conv_continuous(const std::vector<std::vector<Index>>& adjacency,
                                      const MatrixX<double>& features,
                                      const MatrixX<double>& weight);

/// (1/N) sum_i f(y_i) g(x - y_i). Samples are rows of `points`.
double mc_convolution_estimate(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                               const std::function<double(const Eigen::VectorXd&)>& kernel,
                               const Eigen::VectorXd& x);

}  // namespace contconv
