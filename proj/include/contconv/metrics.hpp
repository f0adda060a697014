#pragma once

#include "contconv/types.hpp"

#include <span>
#include <vector>

namespace contconv {

/// counts[g][p]: points with ground truth g predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::vector<std::int64_t>> counts;

  ConfusionMatrix(std::span<const int> pred, std::span<const int> gt, int num_classes);
  std::int64_t true_positive(int c) const { return counts[c][c]; }
  std::int64_t gt_count(int c) const;
  std::int64_t pred_count(int c) const;
  std::int64_t total() const;
};

struct IouResult {
  std::vector<double> per_class;  // NaN for classes absent from both
  double mean = 0.0;              // over the classes that are present
};

/// IOU_c = TP / (TP + FP + FN). Classes absent from both prediction and ground
/// truth are left out of the mean.
IouResult compute_miou(std::span<const int> pred, std::span<const int> gt, int num_classes);
/// Mean over classes present in the ground truth of TP / (TP + FN).
double compute_macc(std::span<const int> pred, std::span<const int> gt, int num_classes);
double point_accuracy(std::span<const int> pred, std::span<const int> gt);

struct FlowMetrics {
  double epe_cm = 0.0;    // mean end-point error in centimetres
  double outlier_10 = 0.0;  // fraction with error > 10 cm
  double outlier_20 = 0.0;
};

/// Flows in metres, one row per point.
FlowMetrics compute_epe_outliers(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt);

}  // namespace contconv
