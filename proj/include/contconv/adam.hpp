#pragma once

#include "contconv/types.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace contconv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::vector<MatrixX<Scalar>> m;
  std::vector<MatrixX<Scalar>> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const AdamConfig& c, const ParamList<Scalar>& params) : config(c) {
    for (const auto* p : params.values) {
      m.push_back(MatrixX<Scalar>::Zero(p->rows(), p->cols()));
      v.push_back(MatrixX<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
};

/// One bias-corrected Adam update applied in place.
template <typename Scalar>
void adam_step(ParamList<Scalar>& params, const ParamList<Scalar>& grads, AdamState<Scalar>& state) {
  require_shape(params.size() == grads.size() && params.size() == state.m.size(),
                "Adam: parameter, gradient and moment lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(params.values[i]->rows() == grads.values[i]->rows() &&
                      params.values[i]->cols() == grads.values[i]->cols() &&
                      state.m[i].rows() == params.values[i]->rows() &&
                      state.m[i].cols() == params.values[i]->cols(),
                  "Adam: shape mismatch for " + params.names[i]);
    if (!all_finite(*grads.values[i]))
      throw NumericError("Adam: non-finite gradient for " + params.names[i]);
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(c.beta1);
  const Scalar b2 = static_cast<Scalar>(c.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, t));
  const Scalar lr = static_cast<Scalar>(c.lr);
  const Scalar eps = static_cast<Scalar>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = *grads.values[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    const auto m_hat = m.array() / correction1;
    const auto v_hat = v.array() / correction2;
    params.values[i]->array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

}  // namespace contconv
