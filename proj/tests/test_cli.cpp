#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using prsfda::cli::run;

namespace {

constexpr const char* kTinyConfig = R"({
  "domain": {"height": 24, "width": 24, "num_regions": 10,
             "splits": {"source_train": 12, "source_val": 4, "target_train": 12, "target_eval": 4}},
  "model": {"hidden_sizes": [12]},
  "training": {"source_epochs": 6, "adapt_epochs": 1, "self_train_epochs": 1, "target_lr": 3e-5,
               "confidence_threshold": 0.3},
  "seeds": [0, 1]
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::set<std::string> tree(const fs::path& root) {
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) files.insert(fs::relative(e.path(), root).string());
  return files;
}

// Each test runs inside its own scratch directory holding tiny.json.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("prsfda_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    previous_ = fs::current_path();
    fs::current_path(dir_);
    std::ofstream("tiny.json") << kTinyConfig;
    ::unsetenv("PRSFDA_SEED");
  }

  void TearDown() override {
    fs::current_path(previous_);
    fs::remove_all(dir_);
    ::unsetenv("PRSFDA_SEED");
  }

  int call(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run(args, out_, err_);
  }

  fs::path dir_;
  fs::path previous_;
  std::ostringstream out_;
  std::ostringstream err_;
};

}  // namespace

TEST_F(Cli, HelpExitsZeroWithUsage) {
  EXPECT_EQ(call({"--help"}), 0);
  EXPECT_NE(out_.str().find("Usage"), std::string::npos);
  EXPECT_EQ(call({"ablate", "--help"}), 0);
  EXPECT_NE(out_.str().find("--jobs"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}), 2);
  EXPECT_EQ(call({"bogus"}), 2);
  EXPECT_NE(err_.str().find("unknown verb 'bogus'"), std::string::npos) << err_.str();
  EXPECT_NE(err_.str().find("Usage"), std::string::npos);
  EXPECT_EQ(call({"adapt", "--config", "tiny.json"}), 2);  // --checkpoint missing
  EXPECT_EQ(call({"evaluate", "--checkpoint", "x.ckpt", "--split", "nowhere"}), 2);
  EXPECT_EQ(call({"ablate", "--jobs", "0"}), 2);
  EXPECT_EQ(call({"ablate", "--seed", "minus-one"}), 2);
}

TEST_F(Cli, MissingCheckpointNamesPath) {
  EXPECT_EQ(call({"evaluate", "--checkpoint", "missing.ckpt"}), 1);
  EXPECT_NE(err_.str().find("missing.ckpt"), std::string::npos) << err_.str();
  EXPECT_FALSE(fs::exists("runs"));
}

TEST_F(Cli, ConfigErrorsExitOneNamingThePath) {
  EXPECT_EQ(call({"ablate", "--config", "absent.json", "--out", "o"}), 1);
  EXPECT_NE(err_.str().find("absent.json"), std::string::npos) << err_.str();

  std::ofstream("broken.json") << "{not json";
  EXPECT_EQ(call({"generate-data", "--config", "broken.json", "--out", "o"}), 1);
  EXPECT_NE(err_.str().find("broken.json"), std::string::npos) << err_.str();

  std::ofstream("bad_threshold.json") << R"({"training": {"confidence_threshold": 1.5}})";
  EXPECT_EQ(call({"ablate", "--config", "bad_threshold.json", "--out", "o"}), 1);
  EXPECT_NE(err_.str().find("config error"), std::string::npos) << err_.str();

  std::ofstream("bad_spec.json") << R"({"domain": {"noise_sigma": -1}})";
  EXPECT_EQ(call({"generate-data", "--config", "bad_spec.json", "--out", "o"}), 1);
  EXPECT_NE(err_.str().find("spec error"), std::string::npos) << err_.str();
}

TEST_F(Cli, AblateTwiceGivesByteIdenticalCsv) {
  ASSERT_EQ(call({"ablate", "--config", "tiny.json", "--out", "runs_a", "--seed", "7"}), 0) << err_.str();
  ASSERT_EQ(call({"ablate", "--config", "tiny.json", "--out", "runs_b", "--seed", "7", "--jobs", "2"}), 0);
  for (const char* name : {"ablation_phases.csv", "ablation_lambda.csv"}) {
    const std::string a = slurp(fs::path("runs_a") / name);
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(fs::path("runs_b") / name)) << name;
  }
  for (const auto& rel : tree("runs_a")) {
    if (rel.ends_with(".csv")) {
      EXPECT_EQ(slurp("runs_a/" + rel), slurp("runs_b/" + rel)) << rel;
    }
  }
}

TEST_F(Cli, NothingIsWrittenOutsideOut) {
  const auto before = tree(dir_);
  ASSERT_EQ(call({"generate-data", "--config", "tiny.json", "--out", "box/data"}), 0);
  ASSERT_EQ(call({"train-source", "--config", "tiny.json", "--data", "box/data", "--out", "box/src", "--report"}), 0);
  ASSERT_EQ(call({"adapt", "--config", "tiny.json", "--data", "box/data", "--checkpoint", "box/src/source.ckpt", "--out",
                  "box/adapt"}),
            0);
  ASSERT_EQ(call({"self-train", "--config", "tiny.json", "--data", "box/data", "--checkpoint",
                  "box/adapt/adapt.ckpt", "--out", "box/st"}),
            0);
  ASSERT_EQ(call({"evaluate", "--config", "tiny.json", "--data", "box/data", "--checkpoint", "box/st/self_train.ckpt",
                  "--out", "box/eval"}),
            0);
  ASSERT_EQ(call({"ablate", "--config", "tiny.json", "--out", "box/ablate", "--report"}), 0);
  for (const auto& rel : tree(dir_)) {
    if (before.count(rel)) continue;
    EXPECT_TRUE(rel.starts_with("box")) << rel;
  }
}

TEST_F(Cli, ReportsEmbedConfigHashAndSeed) {
  ASSERT_EQ(call({"ablate", "--config", "tiny.json", "--out", "o", "--report"}), 0);
  ASSERT_EQ(call({"train-source", "--config", "tiny.json", "--out", "o/src", "--seed", "4", "--report"}), 0);
  std::size_t checked = 0;
  for (const auto& rel : tree("o")) {
    const fs::path p = fs::path("o") / rel;
    if (fs::is_directory(p) || rel.ends_with(".ckpt")) continue;
    const std::string text = slurp(p);
    EXPECT_NE(text.find("config_hash"), std::string::npos) << rel;
    EXPECT_NE(text.find("seed"), std::string::npos) << rel;
    ++checked;
  }
  EXPECT_GT(checked, 50u);
  EXPECT_NE(slurp("o/src/source_report.csv").find("# seed=4\n"), std::string::npos);
}

TEST_F(Cli, StepwiseVerbsReproduceAblationArms) {
  ASSERT_EQ(call({"ablate", "--config", "tiny.json", "--out", "abl"}), 0);
  ASSERT_EQ(call({"generate-data", "--config", "tiny.json", "--out", "d", "--seed", "1"}), 0);
  ASSERT_EQ(call({"train-source", "--config", "tiny.json", "--data", "d", "--out", "s", "--seed", "1"}), 0);
  ASSERT_EQ(call({"adapt", "--config", "tiny.json", "--data", "d", "--checkpoint", "s/source.ckpt", "--out", "a",
                  "--seed", "1"}),
            0);
  ASSERT_EQ(call({"self-train", "--config", "tiny.json", "--data", "d", "--checkpoint", "a/adapt.ckpt", "--out", "p",
                  "--seed", "1"}),
            0);
  ASSERT_EQ(call({"self-train", "--naive", "--config", "tiny.json", "--data", "d", "--checkpoint", "a/adapt.ckpt",
                  "--out", "n", "--seed", "1"}),
            0);
  const auto fp = [](const std::string& path) {
    return nlohmann::json::parse(slurp(path))["output_fingerprint"].get<std::string>();
  };
  const auto arm_fp = [](const std::string& path) {
    return nlohmann::json::parse(slurp(path))["metadata"]["checkpoint"].get<std::string>();
  };
  EXPECT_EQ(fp("s/source_record.json"), arm_fp("abl/seed_1/so_aug_report.json"));
  EXPECT_EQ(fp("a/adapt_record.json"), arm_fp("abl/seed_1/so_aug_msl_report.json"));
  EXPECT_EQ(fp("p/self_train_record.json"), arm_fp("abl/seed_1/so_aug_msl_nlpl_report.json"));
  EXPECT_EQ(fp("n/naive_self_train_record.json"), arm_fp("abl/seed_1/so_aug_msl_st_report.json"));
}

TEST_F(Cli, SeedPriorityFlagThenConfigThenEnvironment) {
  const auto seed_of = [](const std::string& dir) {
    return nlohmann::json::parse(slurp(fs::path(dir) / "domain.json"))["seed"].get<std::uint64_t>();
  };
  std::ofstream("seedless.json") << R"({"domain": {"height": 8, "width": 8}})";
  std::ofstream("seeded.json") << R"({"domain": {"height": 8, "width": 8, "seed": 5}})";

  ::setenv("PRSFDA_SEED", "11", 1);
  ASSERT_EQ(call({"generate-data", "--config", "seedless.json", "--out", "g1"}), 0);
  EXPECT_EQ(seed_of("g1"), 11u);
  ASSERT_EQ(call({"generate-data", "--config", "seeded.json", "--out", "g2"}), 0);
  EXPECT_EQ(seed_of("g2"), 5u);
  ASSERT_EQ(call({"generate-data", "--config", "seeded.json", "--out", "g3", "--seed", "9"}), 0);
  EXPECT_EQ(seed_of("g3"), 9u);

  ::setenv("PRSFDA_SEED", "eleven", 1);
  EXPECT_EQ(call({"generate-data", "--config", "seedless.json", "--out", "g4"}), 1);
  EXPECT_NE(err_.str().find("PRSFDA_SEED"), std::string::npos);
  ::unsetenv("PRSFDA_SEED");
  ASSERT_EQ(call({"generate-data", "--config", "seedless.json", "--out", "g5"}), 0);
  EXPECT_EQ(seed_of("g5"), 0u);
}

TEST_F(Cli, DataDirectoryRoleIsChecked) {
  ASSERT_EQ(call({"generate-data", "--config", "tiny.json", "--out", "d"}), 0);
  fs::copy_file("d/target_train.ds", "d/source_train.ds", fs::copy_options::overwrite_existing);
  EXPECT_EQ(call({"train-source", "--config", "tiny.json", "--data", "d", "--out", "s"}), 1);
  EXPECT_NE(err_.str().find("role error"), std::string::npos) << err_.str();
}

TEST(Svg, EscapesTextAndSkipsNonFinite) {
  prsfda::cli::Chart chart;
  chart.title = "a<b & c";
  chart.series = {{"s\"1", {1.0, std::nan(""), 3.0}}};
  chart.metadata = {{"config_hash", "abc"}, {"seed", "2"}};
  const std::string svg = prsfda::cli::render_svg(chart);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("a&lt;b &amp; c"), std::string::npos);
  EXPECT_NE(svg.find("s&quot;1"), std::string::npos);
  EXPECT_NE(svg.find("config_hash=abc;seed=2;"), std::string::npos);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
