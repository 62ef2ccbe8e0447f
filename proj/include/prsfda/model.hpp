#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prsfda/trainable.hpp"

namespace prsfda {

struct ModelConfig {
  std::size_t num_classes = 8;
  std::size_t patch_size = 3;  // odd; k x k neighbourhood around each pixel
  std::size_t in_channels = 3;
  std::vector<std::size_t> hidden_sizes = {64, 64};
  double head_lr_multiplier = 10.0;

  // Throws kConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct DenseLayer {
  Tensor weight;  // [fan_in, fan_out]
  Tensor bias;    // [fan_out]
};

// Per-pixel classifier: the zero-padded k x k patch around a pixel is fed to
// an MLP with ReLU hidden layers and a softmax head.
class Model final : public TrainableModel {
 public:
  Model(ModelConfig config, std::vector<DenseLayer> layers, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::size_t num_classes() const override { return config_.num_classes; }
  Tensor forward(const Tensor& image) const override;
  ParameterGradients backward(const Tensor& image, const Tensor& grad_probs) const override;
  ValueAndGradient value_and_gradient(const Tensor& image, const ProbabilityLoss& loss) const override;
  void apply_update(OptimizerState& state, const ParameterGradients& grads, double lr) override;
  std::unique_ptr<TrainableModel> clone() const override;
  std::string fingerprint() const override;

  // Parameters in the order W0, b0, W1, b1, ...
  std::vector<Tensor*> parameters();
  std::vector<double> lr_multipliers() const;
  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);

  friend bool operator==(const Model& a, const Model& b) {
    return a.layers_ == b.layers_ && a.seed_ == b.seed_;
  }

 private:
  struct Activations;
  Activations run_forward(const Tensor& image) const;
  ParameterGradients run_backward(const Activations& acts, const Tensor& grad_probs) const;

  ModelConfig config_;
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_;
};

bool operator==(const DenseLayer& a, const DenseLayer& b);

// He-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero.
Model init_model(const ModelConfig& config, std::uint64_t seed);
// All parameters zero: every pixel predicts 1/C.
Model zero_model(const ModelConfig& config);

Tensor forward(const Model& model, const Tensor& image);
ParameterGradients backward(const Model& model, const Tensor& image, const Tensor& grad_probs);
void optimizer_step(OptimizerState& state, Model& model, const ParameterGradients& grads, double lr);

// Checkpoint: "PRSFDA1\n", JSON line {config, seed}, then W0, b0, W1, b1, ...
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace prsfda
