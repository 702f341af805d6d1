#pragma once

#include <cstdint>

#include "taxogloss/model.hpp"

namespace taxogloss {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  ModelParameters first_moment;
  ModelParameters second_moment;
  std::int64_t step = 0;
};

OptimizerState make_optimizer_state(const ModelParameters& params);

/// One AdamW update with decoupled weight decay: decayed parameters are first
/// scaled by (1 - lr * weight_decay), then moved by the bias-corrected Adam
/// step. Biases and normalization parameters are not decayed.
/// Throws ValidationError on non-finite gradients (before touching params).
void adamw_step(ModelParameters& params, const ModelParameters& grads, OptimizerState& state,
                double learning_rate, const AdamWConfig& config = {});

/// Linear warmup over the first warmup_fraction of steps, then linear decay
/// to zero. step is 0-based.
double scheduled_learning_rate(double peak, std::int64_t step, std::int64_t total_steps, double warmup_fraction);

}  // namespace taxogloss
