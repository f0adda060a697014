#include "contconv/special_cases.hpp"

#include <cmath>
#include <limits>

namespace contconv {

Image grid_conv_reference(const Image& image, const Kernel3x3& kernel) {
  const Index h = image.rows();
  const Index w = image.cols();
  Image out = Image::Zero(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      double acc = 0.0;
      for (Index a = -1; a <= 1; ++a) {
        for (Index b = -1; b <= 1; ++b) {
          const Index rr = r + a;
          const Index cc = c + b;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          acc += kernel(a + 1, b + 1) * image(rr, cc);
        }
      }
      out(r, c) = acc;
    }
  }
  return out;
}

Image grid_conv_continuous(const Image& image, const Kernel3x3& kernel) {
  const Index h = image.rows();
  const Index w = image.cols();
  Eigen::MatrixXd positions(h * w, 2);
  MatrixX<double> features(h * w, 1);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      positions.row(r * w + c) << static_cast<double>(r), static_cast<double>(c);
      features(r * w + c, 0) = image(r, c);
    }
  }
  const auto nbr = build_neighbors(positions, positions, Window::knn(9));

  // Offset z = output - input = (-a, -b), so the weight is k(1 - z_r, 1 - z_c).
  MatrixX<double> values(nbr.num_entries(), 1);
  for (Index t = 0; t < nbr.num_entries(); ++t) {
    const double zr = nbr.offsets(t, 0);
    const double zc = nbr.offsets(t, 1);
    const bool inside = std::abs(zr) <= 1.0 && std::abs(zc) <= 1.0;
    values(t, 0) = inside ? kernel(static_cast<Index>(1 - zr), static_cast<Index>(1 - zc)) : 0.0;
  }
  const auto norms = support_norms<double>(nbr, Normalization::None);
  const MatrixX<double> flat = contract_dense(nbr, values, features, norms, 1);

  Image out(h, w);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) out(r, c) = flat(r * w + c, 0);
  return out;
}

namespace {

void check_widths(const BilateralWidths& widths) {
  if (!(widths.spatial > 0.0) || !(widths.range > 0.0))
    throw NumericError("bilateral filter needs positive Gaussian widths");
}

double gaussian_weight(double spatial2, double range2, const BilateralWidths& widths) {
  const double a = std::isinf(widths.spatial) ? 0.0 : spatial2 / (2.0 * widths.spatial * widths.spatial);
  const double b = std::isinf(widths.range) ? 0.0 : range2 / (2.0 * widths.range * widths.range);
  return std::exp(-(a + b));
}

}  // namespace

MatrixX<double> bilateral_reference(const Eigen::MatrixXd& positions,
                                    const MatrixX<double>& features, BilateralWidths widths) {
  check_widths(widths);
  require_shape(positions.rows() == features.rows(), "positions and features differ in count");
  const Index n = positions.rows();
  MatrixX<double> out(n, features.cols());
  for (Index i = 0; i < n; ++i) {
    RowVectorX<double> acc = RowVectorX<double>::Zero(features.cols());
    double total = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double ds = (positions.row(i) - positions.row(j)).squaredNorm();
      const double dr = (features.row(i) - features.row(j)).squaredNorm();
      const double wgt = gaussian_weight(ds, dr, widths);
      acc += wgt * features.row(j);
      total += wgt;
    }
    out.row(i) = acc / total;
  }
  return out;
}

MatrixX<double> bilateral_continuous(const Eigen::MatrixXd& positions,
                                     const MatrixX<double>& features, BilateralWidths widths) {
  check_widths(widths);
  require_shape(positions.rows() == features.rows(), "positions and features differ in count");
  const Index n = positions.rows();
  const Index ps = positions.cols();
  const Index fs = features.cols();
  Eigen::MatrixXd support(n, ps + fs);
  support << positions, features.cast<double>();
  const auto nbr = build_neighbors(support, support, Window::knn(static_cast<int>(n)));

  MatrixX<double> values = MatrixX<double>::Zero(nbr.num_entries(), fs * fs);
  VectorX<double> norms = VectorX<double>::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (Index t = nbr.row_begin(i); t < nbr.row_end(i); ++t) {
      const double ds = nbr.offsets.row(t).head(ps).squaredNorm();
      const double dr = nbr.offsets.row(t).tail(fs).squaredNorm();
      const double g = gaussian_weight(ds, dr, widths);
      for (Index d = 0; d < fs; ++d) values(t, d * fs + d) = g;
      norms(i) += g;
    }
    norms(i) = 1.0 / norms(i);
  }
  return contract_dense(nbr, values, features, norms, fs);
}

GraphConvResult graph_conv_reference(const std::vector<std::vector<Index>>& adjacency,
                                     const MatrixX<double>& features, const MatrixX<double>& weight) {
  require_shape(static_cast<Index>(adjacency.size()) == features.rows(),
                "adjacency must list every node");
  require_shape(features.cols() == weight.rows(), "feature width must match weight rows");
  GraphConvResult r;
  r.out = MatrixX<double>::Zero(features.rows(), weight.cols());
  r.isolated.assign(adjacency.size(), 0);
  for (std::size_t i = 0; i < adjacency.size(); ++i) {
    const auto& nb = adjacency[i];
    if (nb.empty()) {
      r.isolated[i] = 1;
      continue;
    }
    RowVectorX<double> message = RowVectorX<double>::Zero(weight.cols());
    for (Index j : nb) message += features.row(j) * weight;
    r.out.row(static_cast<Index>(i)) = message / static_cast<double>(nb.size());
  }
  return r;
}

GraphConvResult graph_conv_continuous(const std::vector<std::vector<Index>>& adjacency,
                                      const MatrixX<double>& features,
                                      const MatrixX<double>& weight) {
  require_shape(features.cols() == weight.rows(), "feature width must match weight rows");
  // Node positions carry no meaning for a constant kernel; place all at 0.
  const Eigen::MatrixXd positions = Eigen::MatrixXd::Zero(features.rows(), 1);
  const auto nbr = NeighborIndex::from_adjacency(adjacency, positions, positions);
  const MatrixX<double> values = MatrixX<double>::Ones(nbr.num_entries(), weight.cols());
  const MatrixX<double> mixed = features * weight;
  GraphConvResult r;
  r.out = contract_factorized(nbr, values, mixed, support_norms<double>(nbr, Normalization::Mean));
  r.isolated = empty_support_flags<double>(nbr);
  return r;
}

double mc_convolution_estimate(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                               const std::function<double(const Eigen::VectorXd&)>& kernel,
                               const Eigen::VectorXd& x) {
  if (points.rows() == 0) throw ShapeError("Monte-Carlo estimate needs at least one sample");
  require_shape(values.size() == points.rows(), "one feature value per sample is required");
  require_shape(points.cols() == x.size(), "sample and query dimensions differ");
  double acc = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd z = x - points.row(i).transpose();
    acc += values(i) * kernel(z);
  }
  return acc / static_cast<double>(points.rows());
}

}  // namespace contconv
