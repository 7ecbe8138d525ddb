// SPDX-License-Identifier: Apache-2.0
#include "unlearn/optim.hpp"

#include <cmath>

#include "unlearn/error.hpp"

namespace unlearn {

void Adam::step(ModelState& state, const std::vector<float>& grads) {
  const std::size_t n = state.params.size();
  if (grads.size() != n) throw ParameterError("gradient size does not match parameters");
  for (float g : grads) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient passed to Adam");
  }
  if (m_.size() != n) {
    m_.assign(n, 0.0f);
    v_.assign(n, 0.0f);
  }
  const double t = static_cast<double>(t_ + 1);
  const double bc1 = 1.0 - std::pow(params_.beta1, t);
  const double bc2 = 1.0 - std::pow(params_.beta2, t);
  const auto b1 = static_cast<float>(params_.beta1);
  const auto b2 = static_cast<float>(params_.beta2);
  const auto step_size = static_cast<float>(params_.lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(params_.eps);

  std::vector<float> m(n), v(n), updated(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grads[i];
    m[i] = b1 * m_[i] + (1.0f - b1) * g;
    v[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    updated[i] = state.params[i] - step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    if (!std::isfinite(updated[i])) throw NumericError("non-finite parameter after Adam update");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  state.params = std::move(updated);
  state.step += 1;
  t_ += 1;
}

}  // namespace unlearn
