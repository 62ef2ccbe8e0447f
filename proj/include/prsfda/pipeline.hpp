#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prsfda/data.hpp"
#include "prsfda/metrics.hpp"
#include "prsfda/model.hpp"
#include "prsfda/optimizer.hpp"
#include "prsfda/pseudo.hpp"
#include "prsfda/trainable.hpp"

namespace prsfda {

enum class Regularizer { kEntropy, kMaxSquares };
std::string_view to_string(Regularizer r);
Regularizer regularizer_from_string(std::string_view name);

struct PhaseConfig {
  std::size_t source_epochs = 30;
  std::size_t adapt_epochs = 15;
  std::size_t self_train_epochs = 15;
  std::size_t batch_size = 2;
  OptimizerKind source_optimizer = OptimizerKind::kSgdMomentum;
  OptimizerKind target_optimizer = OptimizerKind::kAdamW;
  OptimizerHyperparameters optimizer;
  double source_lr = 1e-2;
  double target_lr = 1e-3;
  double lr_power = 0.9;
  double lambda_nl = 1.0;
  double confidence_threshold = kDefaultConfidenceThreshold;
  double augment_strength = 0.2;
  Regularizer regularizer = Regularizer::kMaxSquares;
  std::uint64_t seed = 0;

  // Throws kConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhaseConfig& c);
void from_json(const nlohmann::json& j, PhaseConfig& c);

struct EpochLoss {
  std::string phase;
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct RunRecord {
  std::vector<EpochLoss> loss_curve;
  std::vector<std::pair<std::string, MetricsReport>> reports;
  std::vector<std::string> checkpoints;
  std::string input_fingerprint;
  std::string output_fingerprint;
  // Self-training bookkeeping, one entry per epoch.
  std::vector<double> valid_fraction;
  std::vector<std::string> pseudo_label_hashes;
  std::vector<std::string> complementary_hashes;
  double wall_seconds = 0.0;

  // Digest of everything except wall-clock time.
  std::string digest() const;
  // `# key=value` metadata lines precede the header.
  std::string loss_curve_csv(const std::map<std::string, std::string>& metadata = {}) const;
};

struct SourceTrainResult {
  Model model;
  RunRecord record;
};

// CBCE on colour-perturbed source images with SGD-momentum and poly LR.
// Class weights come from the split's class frequencies.
SourceTrainResult train_source(const Dataset& source, const ModelConfig& model_config, const PhaseConfig& cfg);

// The target phases below accept only label-stripped images and an opaque
// model handle, and update the model in place.

// Minimises MSL (or ENT) over the target images with the target optimizer.
RunRecord adapt_unsupervised(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg);

// Pseudo labels and invalid masks are generated once from the input model;
// complementary labels are redrawn every step. Optimises the PL/NL mix.
RunRecord self_train_plnl(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg);

// Baseline: pseudo labels regenerated every epoch, invalid pixels dropped.
RunRecord naive_self_train(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg);

MetricsReport evaluate(const TrainableModel& model, const Dataset& eval_split);

// Mean over pixels of the per-pixel max probability.
double mean_confidence(const TrainableModel& model, const TargetImages& images);

// ---- ablation ------------------------------------------------------------

struct ExperimentConfig {
  DomainSpec spec = default_domain_spec();
  ModelConfig model;
  PhaseConfig phase;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<double> lambdas = {0.1, 0.5, 1.0};
  std::size_t jobs = 1;

  void validate() const;
  std::string hash() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct ArmFlags {
  bool aug = false;
  bool ent = false;
  bool msl = false;
  bool st = false;
  bool nlpl = false;
};

struct ArmResult {
  std::string arm;
  ArmFlags flags;
  std::optional<double> lambda_nl;  // set for NLPL arms
  std::uint64_t seed = 0;
  MetricsReport report;
  double mean_confidence = 0.0;
  std::string upstream_fingerprint;
  std::string fingerprint;
  RunRecord record;
};

struct AblationTable {
  std::string config_hash;
  std::vector<ArmResult> phase_rows;   // six arms per seed
  std::vector<ArmResult> lambda_rows;  // one row per lambda per seed

  // Mean target mIoU over seeds for an arm name (or a lambda value).
  double mean_miou(std::string_view arm) const;
  double mean_lambda_miou(double lambda) const;

  std::string phases_csv() const;
  std::string lambda_csv() const;
};

inline constexpr std::string_view kArmSo = "SO";
inline constexpr std::string_view kArmAug = "SO+AUG";
inline constexpr std::string_view kArmEnt = "SO+AUG+ENT";
inline constexpr std::string_view kArmMsl = "SO+AUG+MSL";
inline constexpr std::string_view kArmSt = "SO+AUG+MSL+ST";
inline constexpr std::string_view kArmNlpl = "SO+AUG+MSL+NLPL";

// Runs the six phase arms and the lambda sweep for every seed. Downstream
// arms branch from shared upstream checkpoints. When `out_dir` is given,
// checkpoints, per-arm reports and loss curves are written beneath it.
// Throws kPartialResults naming the completed arms when any arm fails.
AblationTable run_ablation(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace prsfda
