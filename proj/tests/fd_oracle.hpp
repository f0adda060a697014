#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance tests.
//
// Central differences in double carry rounding noise of about eps*|L|/h, which
// for h = 1e-5 and O(1) losses swamps components near 1e-8. Components whose
// double estimate misses the tolerance are therefore re-estimated with the same
// step while the loss is evaluated in quad precision (noise ~1e-29 * |L| / h).

#include "contconv/models.hpp"

#include <boost/multiprecision/eigen.hpp>
#include <boost/multiprecision/float128.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace contconv::testing {

using Quad = boost::multiprecision::float128;

struct GradCheck {
  double worst = 0.0;     // max relative error over checked components
  Index checked = 0;      // components with |analytic| > floor
  Index refined = 0;      // of those, re-estimated in quad precision
  std::string worst_at;
};

/// `pd` and `pq` list the same tensors of a double and a quad copy of the
/// module (aligned with `analytic`); loss_d / loss_q evaluate the loss from the
/// current values of each copy.
template <typename LossD, typename LossQ>
GradCheck check_gradients(ParamList<double>& pd, ParamList<Quad>& pq,
                          const std::vector<MatrixX<double>*>& analytic, LossD&& loss_d,
                          LossQ&& loss_q, double h = 1e-5, double floor = 1e-8,
                          double tol = 1e-6) {
  GradCheck r;
  const Quad hq = Quad(h);
  for (std::size_t i = 0; i < pd.size(); ++i) {
    for (Index k = 0; k < pd.values[i]->size(); ++k) {
      const double a = analytic[i]->data()[k];
      if (!(std::abs(a) > floor)) continue;
      ++r.checked;
      double& x = pd.values[i]->data()[k];
      const double saved = x;
      x = saved + h;
      const double up = loss_d();
      x = saved - h;
      const double down = loss_d();
      x = saved;
      double n = (up - down) / (2.0 * h);
      double rel = std::abs(a - n) / std::max(std::abs(a), std::abs(n));
      if (!(rel < tol)) {
        ++r.refined;
        Quad& xq = pq.values[i]->data()[k];
        const Quad sq = xq;
        xq = sq + hq;
        const Quad uq = loss_q();
        xq = sq - hq;
        const Quad dq = loss_q();
        xq = sq;
        n = static_cast<double>((uq - dq) / (2 * hq));
        rel = std::abs(a - n) / std::max(std::abs(a), std::abs(n));
      }
      if (!(rel <= r.worst)) {
        r.worst = rel;
        r.worst_at = pd.names[i] + "[" + std::to_string(k) + "]";
      }
    }
  }
  return r;
}

template <typename To, typename From>
Sample<To> cast_sample(const Sample<From>& s) {
  return {cast_input<To>(s.input), s.labels, s.flow.template cast<To>(), s.neighbors};
}

/// The network loss evaluated entirely in Scalar (network_loss accumulates in
/// double, which would cap the quad path at double precision).
template <typename Scalar>
Scalar exact_loss(const NetworkSpec& spec, const NetForward<Scalar>& fwd, const Sample<Scalar>& s,
                  const std::vector<double>& class_weights = {}) {
  using std::exp;
  using std::log;
  const auto sq = [&](const MatrixX<Scalar>& y) {
    const MatrixX<Scalar> m = y.leftCols(s.flow.cols());
    return Scalar((m - s.flow).squaredNorm() / Scalar(static_cast<double>(m.size())));
  };
  if (spec.loss == LossKind::Mse) return sq(fwd.out);
  if (spec.loss == LossKind::PerLayerMse) {
    Scalar t(0);
    for (const auto& b : fwd.block_outputs) t += sq(b);
    return t;
  }
  const bool weighted = spec.loss == LossKind::WeightedCrossEntropy && !class_weights.empty();
  Scalar t(0);
  for (Index i = 0; i < fwd.out.rows(); ++i) {
    const int y = s.labels[static_cast<std::size_t>(i)];
    const Scalar mx = fwd.out.row(i).maxCoeff();
    Scalar z(0);
    for (Index k = 0; k < fwd.out.cols(); ++k) z += exp(Scalar(fwd.out(i, k) - mx));
    const Scalar w(weighted ? class_weights[static_cast<std::size_t>(y)] : 1.0);
    t += w * (mx + log(z) - fwd.out(i, y));
  }
  return t / Scalar(static_cast<double>(fwd.out.rows()));
}

/// Smallest |pre-activation| over every ReLU, and smallest gap between the
/// two largest entries of a pooled channel: how far the instance sits from a
/// point where the loss is not differentiable.
inline double kink_margin(const MlpCache<double>& c) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& l : c.layers)
    if (l.pre_activation.size() > 0) m = std::min(m, l.pre_activation.cwiseAbs().minCoeff());
  return m;
}

inline double kink_margin(const NetForward<double>& f) {
  double m = kink_margin(f.head);
  for (const auto& b : f.blocks) {
    m = std::min(m, kink_margin(b.conv.kernel_cache));
    if (b.pre_activation.size() > 0) m = std::min(m, b.pre_activation.cwiseAbs().minCoeff());
  }
  if (!f.argmax.empty()) {
    const auto& x = f.block_outputs.back();
    for (Index k = 0; k < x.cols(); ++k) {
      double best = -std::numeric_limits<double>::infinity(), second = best;
      for (Index i = 0; i < x.rows(); ++i) {
        if (x(i, k) > best) {
          second = best;
          best = x(i, k);
        } else if (x(i, k) > second) {
          second = x(i, k);
        }
      }
      if (x.rows() > 1) m = std::min(m, best - second);
    }
  }
  return m;
}

}  // namespace contconv::testing
