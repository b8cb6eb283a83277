#pragma once

#include <cstdint>
#include <string>

#include "sdd/model.hpp"

namespace sdd {

/// Linear warmup to `peak_lr`, then linear decay to zero. In fine-tune mode
/// the rate is the constant `peak_lr`.
struct Schedule {
  double peak_lr = 1e-7;
  std::int64_t warmup_steps = 80'000;
  std::int64_t decay_steps = 800'000;
  bool constant = false;

  std::int64_t total_steps() const { return warmup_steps + decay_steps; }
  void validate() const;
};

/// Named presets: "faithful" (1e-7, 80k, 800k), "hubert-xl" (5e-6, 80k, 800k),
/// "toy" (1e-3, 500, 5000), "fine-tune" (constant 1e-6).
Schedule schedule_preset(const std::string& name);

double lr_at(std::int64_t step, const Schedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

template <typename Scalar>
struct OptimizerState {
  ParameterSet<Scalar> m;
  ParameterSet<Scalar> v;
  std::int64_t step = 0;

  static OptimizerState zeros_for(const ParameterSet<Scalar>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One AdamW update in place: decoupled shrink theta *= (1 - lr * wd), then the
/// bias-corrected Adam step. Throws on a non-finite gradient, naming the tensor.
template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, OptimizerState<Scalar>& opt,
                double lr, const AdamWConfig& cfg);

/// Global L2 norm of all gradients.
template <typename Scalar>
double global_norm(const ParameterSet<Scalar>& grads);

}  // namespace sdd
