// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments and the bias-correction step count live
// here; every step also advances the model's own step counter.
class Adam {
 public:
  explicit Adam(AdamParams params = {}) : params_(params) {}

  const AdamParams& params() const { return params_; }
  void set_lr(double lr) { params_.lr = lr; }

  // Throws NumericError on non-finite gradients or updates; the state is left
  // untouched in that case.
  void step(ModelState& state, const std::vector<float>& grads);

 private:
  AdamParams params_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::uint64_t t_ = 0;
};

}  // namespace unlearn
