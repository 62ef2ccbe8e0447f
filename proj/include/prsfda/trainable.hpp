#pragma once

#include <functional>
#include <memory>
#include <string>

#include "prsfda/optimizer.hpp"
#include "prsfda/tensor.hpp"

namespace prsfda {

// A scalar objective on a probability map together with its gradient with
// respect to that map.
struct LossOutput {
  double value = 0.0;
  Tensor grad_probs;
};

using ProbabilityLoss = std::function<LossOutput(const Tensor& probs)>;

struct ValueAndGradient {
  double loss = 0.0;
  ParameterGradients grads;
};

// The opaque handle the target-side phases operate on: predictions, parameter
// gradients, and parameter updates. Nothing about the architecture leaks
// through this interface.
class TrainableModel {
 public:
  virtual ~TrainableModel() = default;

  virtual std::size_t num_classes() const = 0;

  // image [H,W,channels] -> probabilities [H,W,num_classes]
  virtual Tensor forward(const Tensor& image) const = 0;

  // Gradient of sum(probs * grad_probs) with respect to every parameter.
  virtual ParameterGradients backward(const Tensor& image, const Tensor& grad_probs) const = 0;

  // forward -> loss(probs) -> backward. Implementations may share the forward pass.
  virtual ValueAndGradient value_and_gradient(const Tensor& image, const ProbabilityLoss& loss) const {
    LossOutput out = loss(forward(image));
    return {out.value, backward(image, out.grad_probs)};
  }

  virtual void apply_update(OptimizerState& state, const ParameterGradients& grads, double lr) = 0;

  virtual std::unique_ptr<TrainableModel> clone() const = 0;

  // Stable hex digest of the parameters.
  virtual std::string fingerprint() const = 0;
};

}  // namespace prsfda
