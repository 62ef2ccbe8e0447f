#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "prsfda/tensor.hpp"

namespace prsfda {

using ParameterGradients = std::vector<Tensor>;

enum class OptimizerKind { kSgdMomentum, kAdamW };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerHyperparameters {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

// SGD keeps its velocity in `first`; AdamW keeps first and second moments.
// Buffers are created on the first step with the shapes of the parameters.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  OptimizerHyperparameters hyper;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;
};

OptimizerState make_optimizer(OptimizerKind kind, OptimizerHyperparameters hyper = {});

// One update of `params` in place. `lr_multipliers` scales the learning rate
// per parameter tensor (empty means 1 everywhere).
//
// SGD:   v <- mu*v + g + wd*p;  p <- p - lr*v
// AdamW: p <- p - lr*wd*p, then the bias-corrected Adam step.
//
// Throws kTrainingDivergence on non-finite gradients, kShape on mismatches.
void optimizer_step(OptimizerState& state, std::span<Tensor> params, const ParameterGradients& grads,
                    double lr, std::span<const double> lr_multipliers = {});

// base_lr * (1 - iter/total)^power; kSchedule error when iter is outside [0, total].
double poly_lr(std::int64_t iter, std::int64_t total, double base_lr, double power = 0.9);

// Gradient bookkeeping for batch accumulation.
void accumulate(ParameterGradients& into, const ParameterGradients& grads);
void scale(ParameterGradients& grads, double factor);

}  // namespace prsfda
