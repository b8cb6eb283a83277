#include "sdd/optimizer.hpp"

#include <cmath>

#include "sdd/error.hpp"

namespace sdd {

void Schedule::validate() const {
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw UsageError("schedule: peak_lr must be a non-negative number");
  if (!constant && (warmup_steps <= 0 || decay_steps <= 0)) {
    throw UsageError("schedule: warmup_steps and decay_steps must be positive");
  }
}

Schedule schedule_preset(const std::string& name) {
  if (name == "faithful") return Schedule{};
  if (name == "hubert-xl") return Schedule{5e-6, 80'000, 800'000, false};
  if (name == "toy") return Schedule{1e-3, 500, 5'000, false};
  if (name == "fine-tune") return Schedule{1e-6, 1, 1, true};
  throw UsageError("unknown schedule preset '" + name + "'");
}

double lr_at(std::int64_t step, const Schedule& s) {
  if (s.constant) return s.peak_lr;
  if (step <= 0) return 0.0;
  if (step < s.warmup_steps) {
    return s.peak_lr * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  }
  const std::int64_t end = s.total_steps();
  if (step < end) {
    return s.peak_lr * (static_cast<double>(end - step) / static_cast<double>(s.decay_steps));
  }
  return 0.0;
}

template <typename Scalar>
double global_norm(const ParameterSet<Scalar>& grads) {
  double sq = 0.0;
  for (const auto& t : grads.tensors) sq += t.value.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, OptimizerState<Scalar>& opt,
                double lr, const AdamWConfig& cfg) {
  if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw Error("adamw_step: parameter, gradient and moment sets differ");
  }
  if (!(lr >= 0.0)) throw Error("adamw_step: negative learning rate");
  for (const auto& g : grads.tensors) {
    if (!g.value.allFinite()) throw Error("non-finite gradient in '" + g.name + "'");
  }
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    const double norm = global_norm(grads);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }

  ++opt.step;
  const auto t = static_cast<double>(opt.step);
  const auto shrink = static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto rate = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const auto clip = static_cast<Scalar>(clip_scale);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i];
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    if (theta.rows() != grads[i].rows() || theta.cols() != grads[i].cols()) {
      throw Error("adamw_step: shape mismatch for '" + params.tensors[i].name + "'");
    }
    const Matrix<Scalar> g = clip_scale == 1.0 ? grads[i] : Matrix<Scalar>(grads[i] * clip);
    theta *= shrink;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    theta.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

template void adamw_step<float>(ParameterSet<float>&, const ParameterSet<float>&, OptimizerState<float>&, double,
                                const AdamWConfig&);
template void adamw_step<double>(ParameterSet<double>&, const ParameterSet<double>&, OptimizerState<double>&,
                                 double, const AdamWConfig&);
template double global_norm<float>(const ParameterSet<float>&);
template double global_norm<double>(const ParameterSet<double>&);

}  // namespace sdd
