#include "contconv/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace contconv {

ConfusionMatrix::ConfusionMatrix(std::span<const int> pred, std::span<const int> gt, int c)
    : num_classes(c), counts(static_cast<std::size_t>(c), std::vector<std::int64_t>(static_cast<std::size_t>(c), 0)) {
  require_shape(pred.size() == gt.size(), "prediction and ground truth differ in length");
  if (c <= 0) throw ShapeError("confusion matrix needs at least one class");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= c || pred[i] < 0 || pred[i] >= c)
      throw ShapeError("label out of range at point " + std::to_string(i));
    ++counts[static_cast<std::size_t>(gt[i])][static_cast<std::size_t>(pred[i])];
  }
}

std::int64_t ConfusionMatrix::gt_count(int c) const {
  std::int64_t n = 0;
  for (auto v : counts[static_cast<std::size_t>(c)]) n += v;
  return n;
}

std::int64_t ConfusionMatrix::pred_count(int c) const {
  std::int64_t n = 0;
  for (const auto& row : counts) n += row[static_cast<std::size_t>(c)];
  return n;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (int c = 0; c < num_classes; ++c) n += gt_count(c);
  return n;
}

IouResult compute_miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  const ConfusionMatrix m(pred, gt, num_classes);
  IouResult r;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto tp = m.true_positive(c);
    const auto uni = m.gt_count(c) + m.pred_count(c) - tp;
    if (uni == 0) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    r.per_class.push_back(static_cast<double>(tp) / static_cast<double>(uni));
    r.mean += r.per_class.back();
    ++present;
  }
  r.mean = present ? r.mean / present : 0.0;
  return r;
}

double compute_macc(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  const ConfusionMatrix m(pred, gt, num_classes);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    const auto n = m.gt_count(c);
    if (n == 0) continue;
    sum += static_cast<double>(m.true_positive(c)) / static_cast<double>(n);
    ++present;
  }
  return present ? sum / present : 0.0;
}

double point_accuracy(std::span<const int> pred, std::span<const int> gt) {
  require_shape(pred.size() == gt.size(), "prediction and ground truth differ in length");
  if (gt.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hit += pred[i] == gt[i];
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

FlowMetrics compute_epe_outliers(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
  require_shape(pred.rows() == gt.rows() && pred.cols() == gt.cols(), "flow shapes differ");
  FlowMetrics m;
  if (gt.rows() == 0) return m;
  for (Index i = 0; i < gt.rows(); ++i) {
    const double e = (pred.row(i) - gt.row(i)).norm();
    m.epe_cm += e;
    m.outlier_10 += e > 0.10;
    m.outlier_20 += e > 0.20;
  }
  const auto n = static_cast<double>(gt.rows());
  m.epe_cm = 100.0 * m.epe_cm / n;
  m.outlier_10 /= n;
  m.outlier_20 /= n;
  return m;
}

}  // namespace contconv
