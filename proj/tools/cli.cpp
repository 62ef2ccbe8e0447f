#include "cli.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prsfda/error.hpp"
#include "prsfda/pipeline.hpp"
#include "svg.hpp"

namespace prsfda::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Metadata = std::map<std::string, std::string>;

constexpr const char* kSeedEnv = "PRSFDA_SEED";
constexpr const char* kSplitNames[] = {"source_train", "source_val", "target_train", "target_eval"};

struct Options {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  bool report = false;
  std::string data;
  std::string checkpoint;
  std::string split = "target_eval";
  std::size_t jobs = 0;  // 0 keeps the config value
  bool naive = false;
};

std::string config_label(const Options& opt) { return opt.config.empty() ? "<defaults>" : opt.config; }

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  std::uint64_t seed = 0;
  const char* end = v + std::strlen(v);
  const auto [ptr, ec] = std::from_chars(v, end, seed);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::kConfig, std::string(kSeedEnv) + " must be an unsigned integer, got '" + v + "'");
  }
  return seed;
}

bool config_sets_seed(const json& raw) {
  if (raw.contains("seeds")) return true;
  for (const char* section : {"training", "domain"}) {
    if (raw.contains(section) && raw.at(section).is_object() && raw.at(section).contains("seed")) return true;
  }
  return false;
}

// Seed priority: --seed, then the config file, then PRSFDA_SEED. An override
// seeds the data, the training streams and the ablation seed list alike.
ExperimentConfig load_config(const Options& opt) {
  json raw = json::object();
  if (!opt.config.empty()) {
    std::ifstream in(opt.config);
    if (!in) throw Error(ErrorKind::kIo, "cannot read config " + opt.config);
    try {
      raw = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kConfig, "config " + opt.config + " is not valid JSON: " + e.what());
    }
    if (!raw.is_object()) throw Error(ErrorKind::kConfig, "config " + opt.config + " must be a JSON object");
  }
  ExperimentConfig cfg;
  try {
    cfg = raw.get<ExperimentConfig>();
    std::optional<std::uint64_t> seed = opt.seed;
    if (!seed && !config_sets_seed(raw)) seed = env_seed();
    if (seed) {
      cfg.spec.seed = *seed;
      cfg.phase.seed = *seed;
      cfg.seeds = {*seed};
    }
    if (opt.jobs > 0) cfg.jobs = opt.jobs;
    cfg.validate();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, "config " + config_label(opt) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), "config " + config_label(opt) + ": " + e.what());
  }
  return cfg;
}

fs::path prepare_out(const Options& opt) {
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create output directory " + opt.out + ": " + ec.message());
  return opt.out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
}

// Loads splits from --data lazily, or generates the full pair once.
class DataSource {
 public:
  DataSource(const Options& opt, const DomainSpec& spec) : dir_(opt.data), spec_(spec) {}

  Dataset get(std::string_view split) {
    const DomainRole role = split.starts_with("source") ? DomainRole::kSource : DomainRole::kTarget;
    if (!dir_.empty()) return load_dataset(fs::path(dir_) / (std::string(split) + ".ds"), role);
    if (!pair_) pair_ = generate_pair(spec_);
    if (split == "source_train") return pair_->source_train;
    if (split == "source_val") return pair_->source_val;
    if (split == "target_train") return pair_->target_train;
    return pair_->target_eval;
  }

 private:
  std::string dir_;
  DomainSpec spec_;
  std::optional<DomainPair> pair_;
};

Model read_checkpoint(const Options& opt) {
  if (opt.checkpoint.empty()) throw Error(ErrorKind::kConfig, "--checkpoint is required");
  return load_checkpoint(opt.checkpoint);
}

Metadata base_metadata(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {{"config_hash", cfg.hash()}, {"seed", std::to_string(seed)}};
}

std::string loss_svg(const RunRecord& record, const Metadata& metadata, const std::string& title) {
  Chart chart{title, "epoch", "mean loss", {}, {}, metadata};
  std::map<std::string, std::vector<double>> by_phase;
  for (const auto& e : record.loss_curve) by_phase[e.phase].push_back(e.mean_loss);
  for (auto& [phase, values] : by_phase) chart.series.push_back({phase, std::move(values)});
  return render_svg(chart);
}

// Checkpoint, metric report, loss curve and run summary for one phase.
void write_phase_outputs(const fs::path& out, const std::string& stem, const Model& model, RunRecord& record,
                         MetricsReport report, Metadata metadata, bool svg, json extra = json::object()) {
  const fs::path ckpt = out / (stem + ".ckpt");
  save_checkpoint(model, ckpt);
  record.checkpoints.push_back(ckpt.string());
  metadata["checkpoint"] = model.fingerprint();
  report.metadata = metadata;
  record.reports.emplace_back(stem, report);
  write_file(out / (stem + "_report.csv"), report_to_csv(report));
  write_file(out / (stem + "_report.json"), report_to_json(report).dump(2) + "\n");
  write_file(out / (stem + "_loss.csv"), record.loss_curve_csv(metadata));
  json summary = {{"metadata", metadata},
                  {"input_fingerprint", record.input_fingerprint},
                  {"output_fingerprint", record.output_fingerprint},
                  {"digest", record.digest()},
                  {"checkpoints", record.checkpoints},
                  {"valid_fraction", record.valid_fraction},
                  {"pseudo_label_hashes", record.pseudo_label_hashes},
                  {"complementary_hashes", record.complementary_hashes},
                  {"wall_seconds", record.wall_seconds}};
  summary.update(extra);
  write_file(out / (stem + "_record.json"), summary.dump(2) + "\n");
  if (svg) write_file(out / (stem + "_loss.svg"), loss_svg(record, metadata, stem + " loss"));
}

int generate_data(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  const fs::path dir = prepare_out(opt);
  const DomainPair pair = generate_pair(cfg.spec);
  save_dataset(pair.source_train, dir / "source_train.ds");
  save_dataset(pair.source_val, dir / "source_val.ds");
  save_dataset(pair.target_train, dir / "target_train.ds");
  save_dataset(pair.target_eval, dir / "target_eval.ds");
  const json meta = {{"config_hash", cfg.hash()}, {"seed", cfg.spec.seed}, {"domain", cfg.spec}};
  write_file(dir / "domain.json", meta.dump(2) + "\n");
  out << "wrote source_train/source_val/target_train/target_eval splits to " << dir.string() << '\n';
  return kExitOk;
}

int train_source_verb(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  DataSource data(opt, cfg.spec);
  const Dataset source = data.get("source_train");
  const Dataset val = data.get("source_val");
  const fs::path dir = prepare_out(opt);
  SourceTrainResult result = train_source(source, cfg.model, cfg.phase);
  const MetricsReport report = evaluate(result.model, val);
  write_phase_outputs(dir, "source", result.model, result.record, report, base_metadata(cfg, cfg.phase.seed),
                      opt.report, {{"split", "source_val"}});
  out << "source-val mIoU " << report.miou << '\n';
  return kExitOk;
}

int adapt_verb(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  Model model = read_checkpoint(opt);
  DataSource data(opt, cfg.spec);
  const TargetImages target = data.get("target_train").images_only();
  const Dataset eval = data.get("target_eval");
  const fs::path dir = prepare_out(opt);
  const double before = mean_confidence(model, eval.images_only());
  RunRecord record = adapt_unsupervised(model, target, cfg.phase);
  const double after = mean_confidence(model, eval.images_only());
  const MetricsReport report = evaluate(model, eval);
  write_phase_outputs(dir, "adapt", model, record, report, base_metadata(cfg, cfg.phase.seed), opt.report,
                      {{"split", "target_eval"},
                       {"regularizer", to_string(cfg.phase.regularizer)},
                       {"mean_confidence_before", before},
                       {"mean_confidence_after", after}});
  out << "target-eval mIoU " << report.miou << ", mean confidence " << before << " -> " << after << '\n';
  return kExitOk;
}

int self_train_verb(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  Model model = read_checkpoint(opt);
  DataSource data(opt, cfg.spec);
  const TargetImages target = data.get("target_train").images_only();
  const Dataset eval = data.get("target_eval");
  const fs::path dir = prepare_out(opt);
  RunRecord record = opt.naive ? naive_self_train(model, target, cfg.phase) : self_train_plnl(model, target, cfg.phase);
  const MetricsReport report = evaluate(model, eval);
  json extra = {{"split", "target_eval"}, {"variant", opt.naive ? "naive" : "plnl"}};
  if (!opt.naive) extra["lambda_nl"] = cfg.phase.lambda_nl;
  write_phase_outputs(dir, opt.naive ? "naive_self_train" : "self_train", model, record, report,
                      base_metadata(cfg, cfg.phase.seed), opt.report, extra);
  out << "target-eval mIoU " << report.miou << '\n';
  return kExitOk;
}

int evaluate_verb(const Options& opt, std::ostream& out) {
  const Model model = read_checkpoint(opt);
  const ExperimentConfig cfg = load_config(opt);
  DataSource data(opt, cfg.spec);
  const Dataset split = data.get(opt.split);
  const fs::path dir = prepare_out(opt);
  MetricsReport report = evaluate(model, split);
  report.metadata = base_metadata(cfg, cfg.spec.seed);
  report.metadata["checkpoint"] = model.fingerprint();
  report.metadata["split"] = opt.split;
  write_file(dir / ("evaluate_" + opt.split + ".csv"), report_to_csv(report));
  write_file(dir / ("evaluate_" + opt.split + ".json"), report_to_json(report).dump(2) + "\n");
  out << opt.split << " mIoU " << report.miou << '\n';
  return kExitOk;
}

std::string ablation_svg(const AblationTable& table, const ExperimentConfig& cfg) {
  const std::vector<std::string_view> arms = {kArmSo, kArmAug, kArmEnt, kArmMsl, kArmSt, kArmNlpl};
  Chart chart{"target mIoU per ablation arm", "arm", "mIoU", {}, {}, {{"config_hash", table.config_hash}}};
  std::string seeds;
  for (std::uint64_t s : cfg.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  chart.metadata["seeds"] = seeds;
  for (auto arm : arms) chart.x_ticks.emplace_back(arm);
  Series mean{"mean", {}};
  for (auto arm : arms) mean.values.push_back(table.mean_miou(arm));
  chart.series.push_back(std::move(mean));
  for (std::uint64_t s : cfg.seeds) {
    Series per_seed{"seed " + std::to_string(s), {}};
    for (auto arm : arms) {
      for (const auto& r : table.phase_rows) {
        if (r.seed == s && r.arm == arm) per_seed.values.push_back(r.report.miou);
      }
    }
    chart.series.push_back(std::move(per_seed));
  }
  return render_svg(chart);
}

int ablate_verb(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt);
  const fs::path dir = prepare_out(opt);
  const AblationTable table = run_ablation(cfg, dir);
  write_file(dir / "ablation_phases.csv", table.phases_csv());
  write_file(dir / "ablation_lambda.csv", table.lambda_csv());
  json means = json::object();
  for (auto arm : {kArmSo, kArmAug, kArmEnt, kArmMsl, kArmSt, kArmNlpl}) means[std::string(arm)] = table.mean_miou(arm);
  json lambdas = json::object();
  for (double l : cfg.lambdas) lambdas[std::to_string(l)] = table.mean_lambda_miou(l);
  const json summary = {{"config_hash", table.config_hash}, {"seeds", cfg.seeds},     {"config", cfg},
                        {"mean_miou", means},               {"lambda_miou", lambdas}};
  write_file(dir / "ablation.json", summary.dump(2) + "\n");
  if (opt.report) write_file(dir / "ablation.svg", ablation_svg(table, cfg));
  for (auto arm : {kArmSo, kArmAug, kArmEnt, kArmMsl, kArmSt, kArmNlpl}) {
    out << arm << " mean mIoU " << table.mean_miou(arm) << '\n';
  }
  return kExitOk;
}

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config, "Experiment config JSON (defaults when omitted)");
  sub->add_option("--out", opt.out, "Output directory; nothing is written outside it")->capture_default_str();
  sub->add_option("--seed", opt.seed, "Seed override (beats the config and PRSFDA_SEED)");
}

void add_report(CLI::App* sub, Options& opt) {
  sub->add_flag("--report", opt.report, "Also write an SVG curve");
}

void add_data(CLI::App* sub, Options& opt) {
  sub->add_option("--data", opt.data, "Directory written by generate-data (generated from the config when omitted)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source-free domain adaptation pipeline on a synthetic segmentation benchmark", "prsfda"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Options opt;

  CLI::App* gen = app.add_subcommand("generate-data", "Generate the four synthetic splits");
  add_common(gen, opt);

  CLI::App* src = app.add_subcommand("train-source", "Train on labelled source data (CBCE + augmentation)");
  add_common(src, opt);
  add_data(src, opt);
  add_report(src, opt);

  CLI::App* adapt = app.add_subcommand("adapt", "Unsupervised target adaptation (MSL or ENT)");
  add_common(adapt, opt);
  add_data(adapt, opt);
  add_report(adapt, opt);
  adapt->add_option("--checkpoint", opt.checkpoint, "Input checkpoint")->required();

  CLI::App* st = app.add_subcommand("self-train", "Pseudo-label self-training (PL/NL, or naive with --naive)");
  add_common(st, opt);
  add_data(st, opt);
  add_report(st, opt);
  st->add_option("--checkpoint", opt.checkpoint, "Input checkpoint")->required();
  st->add_flag("--naive", opt.naive, "Naive self-training baseline");

  CLI::App* ev = app.add_subcommand("evaluate", "Per-class IoU of a checkpoint on one split");
  add_common(ev, opt);
  add_data(ev, opt);
  ev->add_option("--checkpoint", opt.checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--split", opt.split, "Labelled split")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(kSplitNames), std::end(kSplitNames))))
      ->capture_default_str();

  CLI::App* ab = app.add_subcommand("ablate", "Six-arm ablation plus the lambda sweep");
  add_common(ab, opt);
  add_report(ab, opt);
  ab->add_option("--jobs", opt.jobs, "Seeds run concurrently (overrides the config)")->check(CLI::PositiveNumber);

  if (!args.empty() && !args.front().starts_with("-") && app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "prsfda: unknown verb '" << args.front() << "'\n" << app.help();
    return kExitUsage;
  }

  std::vector<const char*> argv{"prsfda"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return generate_data(opt, out);
    if (src->parsed()) return train_source_verb(opt, out);
    if (adapt->parsed()) return adapt_verb(opt, out);
    if (st->parsed()) return self_train_verb(opt, out);
    if (ev->parsed()) return evaluate_verb(opt, out);
    return ablate_verb(opt, out);
  } catch (const Error& e) {
    err << "prsfda: " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    err << "prsfda: io error: " << e.what() << '\n';
  }
  return kExitDomainError;
}

void configure_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace prsfda::cli
