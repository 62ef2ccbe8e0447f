#include "prsfda/optimizer.hpp"

#include <cmath>
#include <string>

#include "prsfda/error.hpp"

namespace prsfda {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgdMomentum ? "sgd" : "adamw";
}

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgdMomentum;
  if (name == "adamw") return OptimizerKind::kAdamW;
  throw Error(ErrorKind::kConfig, "unknown optimizer '" + std::string(name) + "'");
}

OptimizerState make_optimizer(OptimizerKind kind, OptimizerHyperparameters hyper) {
  OptimizerState state;
  state.kind = kind;
  state.hyper = hyper;
  return state;
}

namespace {

void ensure_buffers(std::vector<Tensor>& buffers, std::span<Tensor> params) {
  if (!buffers.empty()) {
    if (buffers.size() != params.size()) throw Error(ErrorKind::kShape, "optimizer buffer count mismatch");
    return;
  }
  buffers.reserve(params.size());
  for (const Tensor& p : params) buffers.emplace_back(p.shape(), 0.0);
}

}  // namespace

void optimizer_step(OptimizerState& state, std::span<Tensor> params, const ParameterGradients& grads, double lr,
                    std::span<const double> lr_multipliers) {
  if (grads.size() != params.size()) {
    throw Error(ErrorKind::kShape, "got " + std::to_string(grads.size()) + " gradients for " +
                                       std::to_string(params.size()) + " parameters");
  }
  if (!lr_multipliers.empty() && lr_multipliers.size() != params.size()) {
    throw Error(ErrorKind::kShape, "learning-rate multiplier count mismatch");
  }
  if (!(lr >= 0.0)) throw Error(ErrorKind::kConfig, "learning rate must be non-negative");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw Error(ErrorKind::kShape, "gradient " + std::to_string(i) + " has shape " + grads[i].shape_string() +
                                         ", parameter has " + params[i].shape_string());
    }
    if (!grads[i].all_finite()) {
      throw Error(ErrorKind::kTrainingDivergence, "non-finite gradient in parameter tensor " + std::to_string(i));
    }
  }

  const auto& h = state.hyper;
  ensure_buffers(state.first, params);
  if (state.kind == OptimizerKind::kAdamW) ensure_buffers(state.second, params);
  ++state.step;

  const double bias1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));

  for (std::size_t t = 0; t < params.size(); ++t) {
    const double rate = lr * (lr_multipliers.empty() ? 1.0 : lr_multipliers[t]);
    auto p = params[t].data();
    auto g = grads[t].data();
    auto m = state.first[t].data();
    if (state.kind == OptimizerKind::kSgdMomentum) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = h.momentum * m[i] + g[i] + h.weight_decay * p[i];
        p[i] -= rate * m[i];
      }
    } else {
      auto v = state.second[t].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= rate * h.weight_decay * p[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        p[i] -= rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
      }
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t].all_finite()) {
      throw Error(ErrorKind::kTrainingDivergence, "update left non-finite values in parameter tensor " +
                                                      std::to_string(t));
    }
  }
}

double poly_lr(std::int64_t iter, std::int64_t total, double base_lr, double power) {
  if (total <= 0) throw Error(ErrorKind::kSchedule, "schedule length must be positive");
  if (iter < 0 || iter > total) {
    throw Error(ErrorKind::kSchedule, "iteration " + std::to_string(iter) + " outside [0, " +
                                          std::to_string(total) + "]");
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total);
  return base_lr * std::pow(frac, power);
}

void accumulate(ParameterGradients& into, const ParameterGradients& grads) {
  if (into.empty()) {
    into = grads;
    return;
  }
  if (into.size() != grads.size()) throw Error(ErrorKind::kShape, "gradient set size mismatch");
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (into[t].shape() != grads[t].shape()) throw Error(ErrorKind::kShape, "gradient shape mismatch");
    auto dst = into[t].data();
    auto src = grads[t].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

void scale(ParameterGradients& grads, double factor) {
  for (Tensor& g : grads) {
    for (double& v : g.data()) v *= factor;
  }
}

}  // namespace prsfda
