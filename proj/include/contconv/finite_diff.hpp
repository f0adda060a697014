#pragma once

#include "contconv/types.hpp"

#include <vector>

namespace contconv {

/// Central differences (L(p + h e) - L(p - h e)) / 2h for every coordinate of
/// a flat parameter vector.
template <typename Loss>
Eigen::VectorXd finite_diff_grad(Loss&& loss, Eigen::VectorXd params, double h) {
  Eigen::VectorXd grad(params.size());
  for (Index i = 0; i < params.size(); ++i) {
    const double saved = params(i);
    params(i) = saved + h;
    const double up = loss(params);
    params(i) = saved - h;
    const double down = loss(params);
    params(i) = saved;
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Same, perturbing the tensors of a module in place through its parameter
/// list. Every entry is restored bit-exactly before returning.
template <typename Loss>
std::vector<MatrixX<double>> finite_diff_grad(Loss&& loss, ParamList<double>& params, double h) {
  std::vector<MatrixX<double>> grads;
  for (auto* p : params.values) {
    MatrixX<double> g(p->rows(), p->cols());
    for (Index k = 0; k < p->size(); ++k) {
      double& x = p->data()[k];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      g.data()[k] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace contconv
