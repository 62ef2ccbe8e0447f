#include "prsfda/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <sstream>

#include "prsfda/error.hpp"
#include "prsfda/losses.hpp"
#include "prsfda/serialization.hpp"

namespace prsfda {

std::string_view to_string(Regularizer r) { return r == Regularizer::kEntropy ? "ent" : "msl"; }

Regularizer regularizer_from_string(std::string_view name) {
  if (name == "ent") return Regularizer::kEntropy;
  if (name == "msl") return Regularizer::kMaxSquares;
  throw Error(ErrorKind::kConfig, "unknown regularizer '" + std::string(name) + "' (expected ent or msl)");
}

void PhaseConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
  if (source_epochs == 0 || adapt_epochs == 0 || self_train_epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(source_lr >= 0.0) || !(target_lr >= 0.0)) fail("learning rates must be non-negative");
  if (!(lr_power >= 0.0)) fail("lr_power must be non-negative");
  if (!(lambda_nl >= 0.0) || !std::isfinite(lambda_nl)) fail("lambda_nl must be non-negative");
  if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) fail("confidence_threshold must lie in (0,1)");
  if (!(augment_strength >= 0.0) || !std::isfinite(augment_strength)) fail("augment_strength must be non-negative");
}

void to_json(nlohmann::json& j, const PhaseConfig& c) {
  j = nlohmann::json{{"source_epochs", c.source_epochs},
                     {"adapt_epochs", c.adapt_epochs},
                     {"self_train_epochs", c.self_train_epochs},
                     {"batch_size", c.batch_size},
                     {"source_optimizer", to_string(c.source_optimizer)},
                     {"target_optimizer", to_string(c.target_optimizer)},
                     {"momentum", c.optimizer.momentum},
                     {"weight_decay", c.optimizer.weight_decay},
                     {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
                     {"source_lr", c.source_lr},
                     {"target_lr", c.target_lr},
                     {"lr_power", c.lr_power},
                     {"lambda_nl", c.lambda_nl},
                     {"confidence_threshold", c.confidence_threshold},
                     {"augment_strength", c.augment_strength},
                     {"regularizer", to_string(c.regularizer)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PhaseConfig& c) {
  const PhaseConfig d;
  c.source_epochs = j.value("source_epochs", d.source_epochs);
  c.adapt_epochs = j.value("adapt_epochs", d.adapt_epochs);
  c.self_train_epochs = j.value("self_train_epochs", d.self_train_epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.source_optimizer = optimizer_kind_from_string(j.value("source_optimizer", std::string(to_string(d.source_optimizer))));
  c.target_optimizer = optimizer_kind_from_string(j.value("target_optimizer", std::string(to_string(d.target_optimizer))));
  c.optimizer.momentum = j.value("momentum", d.optimizer.momentum);
  c.optimizer.weight_decay = j.value("weight_decay", d.optimizer.weight_decay);
  if (j.contains("betas")) {
    const auto betas = j.at("betas").get<std::vector<double>>();
    if (betas.size() != 2) throw Error(ErrorKind::kConfig, "betas must hold two values");
    c.optimizer.beta1 = betas[0];
    c.optimizer.beta2 = betas[1];
  }
  c.source_lr = j.value("source_lr", d.source_lr);
  c.target_lr = j.value("target_lr", d.target_lr);
  c.lr_power = j.value("lr_power", d.lr_power);
  c.lambda_nl = j.value("lambda_nl", d.lambda_nl);
  c.confidence_threshold = j.value("confidence_threshold", d.confidence_threshold);
  c.augment_strength = j.value("augment_strength", d.augment_strength);
  c.regularizer = regularizer_from_string(j.value("regularizer", std::string(to_string(d.regularizer))));
  c.seed = j.value("seed", d.seed);
}

std::string RunRecord::digest() const {
  Fnv1a h;
  for (const auto& e : loss_curve) {
    h.update(e.phase);
    h.update(static_cast<std::uint64_t>(e.epoch));
    h.update(e.mean_loss);
  }
  for (const auto& [phase, report] : reports) {
    h.update(phase);
    h.update(report.miou);
  }
  h.update(input_fingerprint);
  h.update(output_fingerprint);
  for (double v : valid_fraction) h.update(v);
  for (const auto& s : pseudo_label_hashes) h.update(s);
  for (const auto& s : complementary_hashes) h.update(s);
  return h.hex();
}

std::string RunRecord::loss_curve_csv(const std::map<std::string, std::string>& metadata) const {
  std::ostringstream os;
  for (const auto& [key, value] : metadata) os << "# " << key << '=' << value << '\n';
  os << "phase,epoch,mean_loss\n";
  char buf[64];
  for (const auto& e : loss_curve) {
    std::snprintf(buf, sizeof buf, "%.9f", e.mean_loss);
    os << e.phase << ',' << e.epoch << ',' << buf << '\n';
  }
  return os.str();
}

namespace {

enum class Stream : std::uint32_t { kShuffle = 11, kAugment = 12, kComplement = 13 };
// Both self-training variants share one stream so that they visit images in
// the same order for a given seed.
enum class PhaseTag : std::uint32_t { kSource = 1, kAdapt = 2, kSelfTrain = 3 };

std::mt19937_64 derived_rng(std::uint64_t seed, PhaseTag phase, Stream stream, std::size_t a, std::size_t b = 0,
                            std::size_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(phase),   static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(a),       static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

struct TrainingSample {
  Tensor image;
  ProbabilityLoss loss;
};

struct LoopSettings {
  std::string_view phase;
  PhaseTag tag;
  OptimizerKind optimizer;
  double base_lr;
  std::size_t epochs;
  std::size_t num_images;
};

using Sampler = std::function<TrainingSample(std::size_t epoch, std::size_t step, std::size_t index)>;
using EpochHook = std::function<void(std::size_t epoch)>;

void train_epochs(TrainableModel& model, const PhaseConfig& cfg, const LoopSettings& loop, const Sampler& sample,
                  const EpochHook& on_epoch, RunRecord& record) {
  if (loop.num_images == 0) throw Error(ErrorKind::kInvalidInput, std::string(loop.phase) + ": no training images");
  const std::size_t batch = cfg.batch_size;
  const std::size_t steps_per_epoch = (loop.num_images + batch - 1) / batch;
  const auto total = static_cast<std::int64_t>(loop.epochs * steps_per_epoch);
  OptimizerState opt = make_optimizer(loop.optimizer, cfg.optimizer);
  std::int64_t iter = 0;

  std::vector<std::size_t> order(loop.num_images);
  for (std::size_t epoch = 0; epoch < loop.epochs; ++epoch) {
    if (on_epoch) on_epoch(epoch);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = derived_rng(cfg.seed, loop.tag, Stream::kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = step * batch;
      const std::size_t end = std::min(begin + batch, loop.num_images);
      ParameterGradients grads;
      for (std::size_t k = begin; k < end; ++k) {
        TrainingSample s = sample(epoch, step, order[k]);
        ValueAndGradient vg;
        try {
          vg = model.value_and_gradient(s.image, s.loss);
        } catch (const Error& e) {
          // Finite input with non-finite activations means the parameters blew up.
          if (e.kind() != ErrorKind::kInvalidInput || !s.image.all_finite()) throw;
          throw Error(ErrorKind::kTrainingDivergence,
                      std::string(loop.phase) + ": " + e.what() + " at epoch " + std::to_string(epoch));
        }
        if (!std::isfinite(vg.loss)) {
          throw Error(ErrorKind::kTrainingDivergence,
                      std::string(loop.phase) + ": non-finite loss at epoch " + std::to_string(epoch));
        }
        epoch_loss += vg.loss;
        accumulate(grads, vg.grads);
      }
      scale(grads, 1.0 / static_cast<double>(end - begin));
      const double lr = poly_lr(iter++, total, loop.base_lr, cfg.lr_power);
      try {
        model.apply_update(opt, grads, lr);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kTrainingDivergence) throw;
        throw Error(ErrorKind::kTrainingDivergence,
                    std::string(loop.phase) + ": " + e.what() + " at epoch " + std::to_string(epoch));
      }
    }
    record.loss_curve.push_back({std::string(loop.phase), epoch, epoch_loss / static_cast<double>(loop.num_images)});
  }
}

std::string hash_labels(const std::vector<LabelMap>& maps) {
  Fnv1a h;
  for (const auto& m : maps) {
    for (std::int32_t id : m.ids) h.update(static_cast<std::uint64_t>(id));
  }
  return h.hex();
}

std::string hash_pseudo(const std::vector<PseudoLabelSet>& sets) {
  Fnv1a h;
  for (const auto& s : sets) {
    for (std::int32_t id : s.labels.ids) h.update(static_cast<std::uint64_t>(id));
    h.update(std::span<const std::uint8_t>(s.invalid_mask.bits));
  }
  return h.hex();
}

std::vector<PseudoLabelSet> generate_pseudo_sets(const TrainableModel& model, const TargetImages& target,
                                                 double threshold, double& valid_fraction) {
  std::vector<PseudoLabelSet> sets;
  sets.reserve(target.size());
  std::size_t valid = 0;
  std::size_t total = 0;
  for (const Tensor& image : target) {
    sets.push_back(make_pseudo_set(model.forward(image), threshold));
    for (std::uint8_t bit : sets.back().invalid_mask.bits) valid += bit == 0 ? 1 : 0;
    total += sets.back().invalid_mask.size();
  }
  valid_fraction = total == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(total);
  return sets;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

SourceTrainResult train_source(const Dataset& source, const ModelConfig& model_config, const PhaseConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (source.role() != DomainRole::kSource) throw Error(ErrorKind::kRole, "train_source needs a source split");
  const auto& labels = source.labels();
  if (model_config.num_classes != source.num_classes()) {
    throw Error(ErrorKind::kConfig, "model num_classes does not match the dataset");
  }
  const ClassWeights weights = class_weights(class_frequencies(source));

  SourceTrainResult result{init_model(model_config, cfg.seed), {}};
  result.record.input_fingerprint = result.model.fingerprint();
  const LoopSettings loop{"source", PhaseTag::kSource, cfg.source_optimizer, cfg.source_lr, cfg.source_epochs,
                          source.size()};
  const Sampler sample = [&](std::size_t epoch, std::size_t, std::size_t index) {
    auto rng = derived_rng(cfg.seed, PhaseTag::kSource, Stream::kAugment, epoch, index);
    const LabelMap* y = &labels[index];
    return TrainingSample{color_perturb(source.images()[index], cfg.augment_strength, rng),
                          [y, &weights](const Tensor& p) { return cbce_loss(p, *y, weights); }};
  };
  train_epochs(result.model, cfg, loop, sample, {}, result.record);
  result.record.output_fingerprint = result.model.fingerprint();
  result.record.wall_seconds = seconds_since(start);
  return result;
}

RunRecord adapt_unsupervised(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  RunRecord record;
  record.input_fingerprint = model.fingerprint();
  const ProbabilityLoss loss = cfg.regularizer == Regularizer::kEntropy
                                   ? ProbabilityLoss([](const Tensor& p) { return entropy_loss(p); })
                                   : ProbabilityLoss([](const Tensor& p) { return msl_loss(p); });
  const LoopSettings loop{cfg.regularizer == Regularizer::kEntropy ? "adapt-ent" : "adapt-msl", PhaseTag::kAdapt,
                          cfg.target_optimizer, cfg.target_lr, cfg.adapt_epochs, target.size()};
  const Sampler sample = [&](std::size_t, std::size_t, std::size_t index) {
    return TrainingSample{target[index], loss};
  };
  train_epochs(model, cfg, loop, sample, {}, record);
  record.output_fingerprint = model.fingerprint();
  record.wall_seconds = seconds_since(start);
  return record;
}

RunRecord self_train_plnl(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  RunRecord record;
  record.input_fingerprint = model.fingerprint();

  double valid_fraction = 0.0;
  const std::vector<PseudoLabelSet> sets =
      generate_pseudo_sets(model, target, cfg.confidence_threshold, valid_fraction);
  if (valid_fraction == 0.0 && cfg.lambda_nl == 0.0) {
    throw Error(ErrorKind::kNoSignal, "every pixel is invalid and lambda_nl is 0");
  }
  const std::string pseudo_hash = hash_pseudo(sets);
  const std::size_t classes = model.num_classes();

  std::vector<LabelMap> epoch_complements(target.size());
  const LoopSettings loop{"self-train-plnl", PhaseTag::kSelfTrain, cfg.target_optimizer, cfg.target_lr,
                          cfg.self_train_epochs, target.size()};
  const Sampler sample = [&](std::size_t epoch, std::size_t step, std::size_t index) {
    auto rng = derived_rng(cfg.seed, PhaseTag::kSelfTrain, Stream::kComplement, epoch, step, index);
    epoch_complements[index] = complementary_labels(sets[index].labels, classes, rng);
    const PseudoLabelSet* set = &sets[index];
    const LabelMap* comp = &epoch_complements[index];
    const double lambda = cfg.lambda_nl;
    return TrainingSample{target[index], [set, comp, lambda](const Tensor& p) {
                            return plnl_loss(p, set->labels, *comp, set->invalid_mask, lambda);
                          }};
  };
  const EpochHook on_epoch = [&](std::size_t epoch) {
    if (epoch > 0) record.complementary_hashes.push_back(hash_labels(epoch_complements));
    record.valid_fraction.push_back(valid_fraction);
    record.pseudo_label_hashes.push_back(pseudo_hash);
  };
  train_epochs(model, cfg, loop, sample, on_epoch, record);
  record.complementary_hashes.push_back(hash_labels(epoch_complements));
  record.output_fingerprint = model.fingerprint();
  record.wall_seconds = seconds_since(start);
  return record;
}

RunRecord naive_self_train(TrainableModel& model, const TargetImages& target, const PhaseConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  RunRecord record;
  record.input_fingerprint = model.fingerprint();

  std::vector<PseudoLabelSet> sets;
  const LoopSettings loop{"self-train-naive", PhaseTag::kSelfTrain, cfg.target_optimizer, cfg.target_lr,
                          cfg.self_train_epochs, target.size()};
  // One round per epoch: relabel with the current model, keep confident pixels.
  const EpochHook on_epoch = [&](std::size_t) {
    double valid_fraction = 0.0;
    sets = generate_pseudo_sets(model, target, cfg.confidence_threshold, valid_fraction);
    if (valid_fraction == 0.0) throw Error(ErrorKind::kNoSignal, "no pixel passes the confidence threshold");
    record.valid_fraction.push_back(valid_fraction);
    record.pseudo_label_hashes.push_back(hash_pseudo(sets));
  };
  const Sampler sample = [&](std::size_t, std::size_t, std::size_t index) {
    const PseudoLabelSet* set = &sets[index];
    return TrainingSample{target[index], [set](const Tensor& p) {
                            // lambda 0: invalid pixels contribute nothing
                            return plnl_loss(p, set->labels, set->labels, set->invalid_mask, 0.0);
                          }};
  };
  train_epochs(model, cfg, loop, sample, on_epoch, record);
  record.output_fingerprint = model.fingerprint();
  record.wall_seconds = seconds_since(start);
  return record;
}

MetricsReport evaluate(const TrainableModel& model, const Dataset& eval_split) {
  return evaluate_model(model, eval_split);
}

double mean_confidence(const TrainableModel& model, const TargetImages& images) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Tensor& image : images) {
    const Tensor probs = model.forward(image);
    const std::size_t c = probs.channels();
    for (std::size_t i = 0; i < probs.rows(); ++i) {
      const auto row = probs.data().subspan(i * c, c);
      sum += *std::max_element(row.begin(), row.end());
    }
    count += probs.rows();
  }
  if (count == 0) throw Error(ErrorKind::kEmptyEvaluation, "no pixels to measure confidence on");
  return sum / static_cast<double>(count);
}

// ---- ablation ------------------------------------------------------------

void ExperimentConfig::validate() const {
  spec.validate();
  model.validate();
  phase.validate();
  if (seeds.empty()) throw Error(ErrorKind::kConfig, "at least one seed is required");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw Error(ErrorKind::kConfig, "lambda values must be non-negative");
  }
  if (model.num_classes != spec.num_classes) {
    throw Error(ErrorKind::kConfig, "model.num_classes must equal domain.num_classes");
  }
  if (model.in_channels != spec.in_channels) {
    throw Error(ErrorKind::kConfig, "model.in_channels must equal domain.in_channels");
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"domain", c.spec},   {"model", c.model},     {"training", c.phase},
                     {"seeds", c.seeds},   {"lambdas", c.lambdas}, {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.spec = j.contains("domain") ? j.at("domain").get<DomainSpec>() : d.spec;
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.phase = j.contains("training") ? j.at("training").get<PhaseConfig>() : d.phase;
  c.seeds = j.value("seeds", d.seeds);
  c.lambdas = j.value("lambdas", d.lambdas);
  c.jobs = j.value("jobs", d.jobs);
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = *this;
  j.erase("jobs");
  return hash_hex(j.dump());
}

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string arm_slug(const ArmResult& r) {
  std::string s = r.arm;
  for (char& ch : s) ch = ch == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (r.lambda_nl) s += "_lambda_" + fmt6(*r.lambda_nl);
  return s;
}

struct SeedOutcome {
  std::vector<ArmResult> phase_rows;
  std::vector<ArmResult> lambda_rows;
  std::vector<std::string> completed;
  std::optional<std::string> failure;
};

class SeedRunner {
 public:
  SeedRunner(const ExperimentConfig& cfg, std::uint64_t seed, std::string config_hash,
             std::optional<std::filesystem::path> out_dir)
      : cfg_(cfg), seed_(seed), config_hash_(std::move(config_hash)) {
    spec_ = cfg.spec;
    spec_.seed = seed;
    phase_ = cfg.phase;
    phase_.seed = seed;
    if (out_dir) dir_ = *out_dir / ("seed_" + std::to_string(seed));
  }

  SeedOutcome run() {
    try {
      run_arms();
    } catch (const std::exception& e) {
      outcome_.failure = "seed " + std::to_string(seed_) + ": " + e.what();
    }
    return std::move(outcome_);
  }

 private:
  void run_arms() {
    if (dir_) std::filesystem::create_directories(*dir_);
    const DomainPair data = generate_pair(spec_);
    target_ = data.target_train.images_only();
    eval_ = &data.target_eval;

    PhaseConfig no_aug = phase_;
    no_aug.augment_strength = 0.0;
    SourceTrainResult so = train_source(data.source_train, cfg_.model, no_aug);
    finish(std::string(kArmSo), {}, std::nullopt, so.model, "", std::move(so.record), true);

    SourceTrainResult aug = train_source(data.source_train, cfg_.model, phase_);
    finish(std::string(kArmAug), {.aug = true}, std::nullopt, aug.model, "", std::move(aug.record), true);
    const std::string aug_fp = aug.model.fingerprint();

    {
      Model ent = aug.model;
      PhaseConfig c = phase_;
      c.regularizer = Regularizer::kEntropy;
      RunRecord rec = adapt_unsupervised(ent, target_, c);
      finish(std::string(kArmEnt), {.aug = true, .ent = true}, std::nullopt, ent, aug_fp, std::move(rec), true);
    }

    Model msl = aug.model;
    {
      PhaseConfig c = phase_;
      c.regularizer = Regularizer::kMaxSquares;
      RunRecord rec = adapt_unsupervised(msl, target_, c);
      finish(std::string(kArmMsl), {.aug = true, .msl = true}, std::nullopt, msl, aug_fp, std::move(rec), true);
    }
    const std::string msl_fp = msl.fingerprint();

    {
      Model st = msl;
      RunRecord rec = naive_self_train(st, target_, phase_);
      finish(std::string(kArmSt), {.aug = true, .msl = true, .st = true}, std::nullopt, st, msl_fp, std::move(rec),
             true);
    }

    const ArmFlags nlpl_flags{.aug = true, .msl = true, .nlpl = true};
    {
      Model nlpl = msl;
      RunRecord rec = self_train_plnl(nlpl, target_, phase_);
      finish(std::string(kArmNlpl), nlpl_flags, std::nullopt, nlpl, msl_fp, std::move(rec), true);
    }
    const ArmResult nlpl_row = outcome_.phase_rows.back();

    for (double lambda : cfg_.lambdas) {
      if (lambda == phase_.lambda_nl) {
        ArmResult row = nlpl_row;
        row.lambda_nl = lambda;
        outcome_.lambda_rows.push_back(std::move(row));
        outcome_.completed.push_back("seed " + std::to_string(seed_) + " " + row.arm + " lambda " + fmt6(lambda));
        continue;
      }
      Model m = msl;
      PhaseConfig c = phase_;
      c.lambda_nl = lambda;
      RunRecord rec = self_train_plnl(m, target_, c);
      finish(std::string(kArmNlpl), nlpl_flags, lambda, m, msl_fp, std::move(rec), false);
    }
  }

  void finish(std::string arm, ArmFlags flags, std::optional<double> lambda, const Model& model,
              std::string upstream, RunRecord record, bool phase_row) {
    ArmResult row;
    row.arm = std::move(arm);
    row.flags = flags;
    row.lambda_nl = lambda;
    row.seed = seed_;
    row.report = evaluate(model, *eval_);
    row.mean_confidence = mean_confidence(model, eval_->images_only());
    row.upstream_fingerprint = std::move(upstream);
    row.fingerprint = model.fingerprint();
    row.report.metadata = {{"arm", row.arm},
                           {"seed", std::to_string(seed_)},
                           {"config_hash", config_hash_},
                           {"checkpoint", row.fingerprint}};
    if (lambda) row.report.metadata["lambda_nl"] = fmt6(*lambda);
    row.record = std::move(record);
    row.record.reports.emplace_back("target_eval", row.report);
    if (dir_) write_outputs(row, model);
    outcome_.completed.push_back("seed " + std::to_string(seed_) + " " + row.arm +
                                 (lambda ? " lambda " + fmt6(*lambda) : ""));
    (phase_row ? outcome_.phase_rows : outcome_.lambda_rows).push_back(std::move(row));
  }

  void write_outputs(ArmResult& row, const Model& model) {
    const std::string slug = arm_slug(row);
    const auto ckpt = *dir_ / (slug + ".ckpt");
    save_checkpoint(model, ckpt);
    row.record.checkpoints.push_back(ckpt.string());
    std::ofstream(*dir_ / (slug + "_report.csv")) << report_to_csv(row.report);
    std::ofstream(*dir_ / (slug + "_report.json")) << report_to_json(row.report).dump(2) << '\n';
    std::ofstream(*dir_ / (slug + "_loss.csv")) << row.record.loss_curve_csv(row.report.metadata);
  }

  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  std::string config_hash_;
  DomainSpec spec_;
  PhaseConfig phase_;
  std::optional<std::filesystem::path> dir_;
  TargetImages target_;
  const Dataset* eval_ = nullptr;
  SeedOutcome outcome_;
};

std::string flag(bool b) { return b ? "1" : "0"; }

std::string phase_row_csv(const ArmResult& r, const std::string& seed, double miou, double acc, double conf,
                          const std::string& config_hash) {
  std::ostringstream os;
  os << r.arm << ",1," << flag(r.flags.aug) << ',' << flag(r.flags.ent) << ',' << flag(r.flags.msl) << ','
     << flag(r.flags.st) << ',' << flag(r.flags.nlpl) << ',' << seed << ',' << fmt6(miou) << ',' << fmt6(acc) << ','
     << fmt6(conf) << ',' << r.upstream_fingerprint << ',' << (seed == "mean" ? "" : r.fingerprint) << ','
     << config_hash << '\n';
  return os.str();
}

}  // namespace

double AblationTable::mean_miou(std::string_view arm) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : phase_rows) {
    if (r.arm == arm) {
      sum += r.report.miou;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::kInvalidInput, "no rows for arm " + std::string(arm));
  return sum / static_cast<double>(n);
}

double AblationTable::mean_lambda_miou(double lambda) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : lambda_rows) {
    if (r.lambda_nl && *r.lambda_nl == lambda) {
      sum += r.report.miou;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::kInvalidInput, "no rows for lambda " + fmt6(lambda));
  return sum / static_cast<double>(n);
}

std::string AblationTable::phases_csv() const {
  std::ostringstream os;
  os << "arm,so,aug,ent,msl,st,st_nlpl,seed,miou,pixel_accuracy,mean_confidence,upstream,checkpoint,config_hash\n";
  std::vector<std::string> arms;
  for (const auto& r : phase_rows) {
    os << phase_row_csv(r, std::to_string(r.seed), r.report.miou, r.report.pixel_accuracy, r.mean_confidence,
                        config_hash);
    if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
  }
  for (const auto& arm : arms) {
    double miou = 0.0, acc = 0.0, conf = 0.0;
    std::size_t n = 0;
    const ArmResult* first = nullptr;
    for (const auto& r : phase_rows) {
      if (r.arm != arm) continue;
      if (!first) first = &r;
      miou += r.report.miou;
      acc += r.report.pixel_accuracy;
      conf += r.mean_confidence;
      ++n;
    }
    ArmResult summary = *first;
    summary.upstream_fingerprint.clear();
    const double dn = static_cast<double>(n);
    os << phase_row_csv(summary, "mean", miou / dn, acc / dn, conf / dn, config_hash);
  }
  return os.str();
}

std::string AblationTable::lambda_csv() const {
  std::ostringstream os;
  os << "lambda_nl,seed,miou,pixel_accuracy,mean_confidence,checkpoint,config_hash\n";
  std::vector<double> lambdas;
  for (const auto& r : lambda_rows) {
    os << fmt6(*r.lambda_nl) << ',' << r.seed << ',' << fmt6(r.report.miou) << ',' << fmt6(r.report.pixel_accuracy)
       << ',' << fmt6(r.mean_confidence) << ',' << r.fingerprint << ',' << config_hash << '\n';
    if (std::find(lambdas.begin(), lambdas.end(), *r.lambda_nl) == lambdas.end()) lambdas.push_back(*r.lambda_nl);
  }
  for (double l : lambdas) {
    double miou = 0.0, acc = 0.0, conf = 0.0;
    std::size_t n = 0;
    for (const auto& r : lambda_rows) {
      if (*r.lambda_nl != l) continue;
      miou += r.report.miou;
      acc += r.report.pixel_accuracy;
      conf += r.mean_confidence;
      ++n;
    }
    const double dn = static_cast<double>(n);
    os << fmt6(l) << ",mean," << fmt6(miou / dn) << ',' << fmt6(acc / dn) << ',' << fmt6(conf / dn) << ",,"
       << config_hash << '\n';
  }
  return os.str();
}

AblationTable run_ablation(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  AblationTable table;
  table.config_hash = cfg.hash();

  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
  for (std::size_t begin = 0; begin < cfg.seeds.size(); begin += jobs) {
    const std::size_t end = std::min(begin + jobs, cfg.seeds.size());
    if (end - begin == 1) {
      outcomes[begin] = SeedRunner(cfg, cfg.seeds[begin], table.config_hash, out_dir).run();
      continue;
    }
    std::vector<std::future<SeedOutcome>> futures;
    for (std::size_t i = begin; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] {
        return SeedRunner(cfg, cfg.seeds[i], table.config_hash, out_dir).run();
      }));
    }
    for (std::size_t i = begin; i < end; ++i) outcomes[i] = futures[i - begin].get();
  }

  std::vector<std::string> completed;
  std::vector<std::string> failures;
  for (auto& o : outcomes) {
    completed.insert(completed.end(), o.completed.begin(), o.completed.end());
    if (o.failure) failures.push_back(*o.failure);
    for (auto& r : o.phase_rows) table.phase_rows.push_back(std::move(r));
    for (auto& r : o.lambda_rows) table.lambda_rows.push_back(std::move(r));
  }
  if (!failures.empty()) {
    std::string msg = failures.front() + "; completed arms: ";
    for (std::size_t i = 0; i < completed.size(); ++i) msg += (i ? ", " : "") + completed[i];
    throw Error(ErrorKind::kPartialResults, msg);
  }
  return table;
}

}  // namespace prsfda
