#include "taxogloss/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "taxogloss/error.hpp"

namespace taxogloss {

OptimizerState make_optimizer_state(const ModelParameters& params) {
  return OptimizerState{params.zeros_like(), params.zeros_like(), 0};
}

void adamw_step(ModelParameters& params, const ModelParameters& grads, OptimizerState& state,
                double learning_rate, const AdamWConfig& config) {
  auto p = params.slots();
  auto g = grads.slots();
  auto m = state.first_moment.slots();
  auto v = state.second_moment.slots();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ValidationError("adamw: parameter, gradient and state layouts differ");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].value->rows() != p[i].value->rows() || g[i].value->cols() != p[i].value->cols() ||
        m[i].value->size() != p[i].value->size() || v[i].value->size() != p[i].value->size())
      throw ValidationError("adamw: shape mismatch for " + p[i].name);
    if (!g[i].value->allFinite()) throw ValidationError("adamw: non-finite gradient for " + p[i].name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - learning_rate * config.weight_decay;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& w = *p[i].value;
    const auto& grad = *g[i].value;
    auto& m1 = *m[i].value;
    auto& m2 = *v[i].value;
    m1 = config.beta1 * m1 + (1.0 - config.beta1) * grad;
    m2 = config.beta2 * m2 + (1.0 - config.beta2) * grad.cwiseProduct(grad);
    if (p[i].decay) w *= decay;
    w.array() -= learning_rate * (m1.array() / bias1) / ((m2.array() / bias2).sqrt() + config.epsilon);
  }
}

double scheduled_learning_rate(double peak, std::int64_t step, std::int64_t total_steps, double warmup_fraction) {
  if (total_steps <= 0) return peak;
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const auto remaining = total_steps - warmup;
  if (remaining <= 0) return peak;
  return peak * std::max(0.0, static_cast<double>(total_steps - step) / static_cast<double>(remaining));
}

}  // namespace taxogloss
