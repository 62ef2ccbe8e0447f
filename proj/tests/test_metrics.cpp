#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "prsfda/error.hpp"
#include "prsfda/metrics.hpp"
#include "test_support.hpp"

using namespace prsfda;
using fixtures::error_kind;

namespace {

LabelMap row(std::vector<std::int32_t> ids) {
  const std::size_t n = ids.size();
  return LabelMap(1, n, std::move(ids));
}

}  // namespace

TEST(ConfusionMatrix, CountsTruthByPrediction) {
  const ConfusionMatrix cm = confusion_matrix(row({0, 1, 1, 2}), row({0, 1, 2, 2}), 3);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.at(2, 1), 1u);
  EXPECT_EQ(cm.at(2, 2), 1u);
  EXPECT_EQ(cm.total(), 4u);
}

TEST(IouReport, PerfectPrediction) {
  const auto r = iou_report(confusion_matrix(row({0, 1, 2, 1}), row({0, 1, 2, 1}), 3));
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.pixel_accuracy, 1.0);
}

TEST(IouReport, AbsentClassesExcluded) {
  const auto r = iou_report(confusion_matrix(row({0, 0, 1, 1}), row({0, 0, 1, 1}), 4));
  EXPECT_FALSE(r.per_class_iou[2].has_value());
  EXPECT_FALSE(r.per_class_iou[3].has_value());
  EXPECT_EQ(r.miou, 1.0);
}

TEST(IouReport, HandComputedExample) {
  // truth 0 0 1 1, pred 0 1 1 1: IoU0 = 1/2, IoU1 = 2/3.
  const auto r = iou_report(confusion_matrix(row({0, 1, 1, 1}), row({0, 0, 1, 1}), 2));
  EXPECT_NEAR(*r.per_class_iou[0], 0.5, 1e-15);
  EXPECT_NEAR(*r.per_class_iou[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.miou, (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.pixel_accuracy, 0.75, 1e-15);
}

TEST(IouReport, Errors) {
  EXPECT_EQ(error_kind([] { iou_report(ConfusionMatrix(3)); }), ErrorKind::kEmptyEvaluation);
  EXPECT_EQ(error_kind([] { confusion_matrix(row({0, 1}), row({0}), 2); }), ErrorKind::kShape);
  EXPECT_EQ(error_kind([] { confusion_matrix(row({0, 3}), row({0, 1}), 2); }), ErrorKind::kLabel);
}

TEST(IouOracle, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> classes(2, 9), images(1, 4), side(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = static_cast<std::size_t>(classes(rng));
    const int n = images(rng);
    std::vector<LabelMap> preds, gts;
    ConfusionMatrix total(c);
    for (int i = 0; i < n; ++i) {
      const auto h = static_cast<std::size_t>(side(rng)), w = static_cast<std::size_t>(side(rng));
      // Skewed classes so some are absent in some trials.
      std::uniform_int_distribution<std::int32_t> biased(0, static_cast<std::int32_t>(c) - 1 - (trial % 2));
      LabelMap p(h, w), g(h, w);
      for (auto& v : p.ids) v = biased(rng);
      for (auto& v : g.ids) v = biased(rng);
      total += confusion_matrix(p, g, c);
      preds.push_back(p);
      gts.push_back(g);
    }
    const auto oracle = fixtures::brute_force_iou(preds, gts, c);
    const auto report = iou_report(total);
    std::uint64_t pixels = 0;
    for (const auto& g : gts) pixels += g.size();
    EXPECT_EQ(total.total(), pixels);
    for (std::size_t k = 0; k < c; ++k) {
      ASSERT_EQ(report.per_class_iou[k].has_value(), oracle.per_class[k].has_value()) << "class " << k;
      if (oracle.per_class[k]) {
        EXPECT_NEAR(*report.per_class_iou[k], *oracle.per_class[k], 1e-12);
      }
    }
    EXPECT_NEAR(report.miou, oracle.miou, 1e-12);
  }
}

TEST(IouProperty, InvariantUnderPixelPermutation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const LabelMap p = fixtures::random_labels(rng, 5, 6, 4);
    const LabelMap g = fixtures::random_labels(rng, 5, 6, 4);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    LabelMap pp(5, 6), gg(5, 6);
    for (std::size_t i = 0; i < order.size(); ++i) {
      pp[i] = p[order[i]];
      gg[i] = g[order[i]];
    }
    EXPECT_EQ(iou_report(confusion_matrix(p, g, 4)), iou_report(confusion_matrix(pp, gg, 4)));
  }
}

TEST(IouProperty, AccumulationIsAdditive) {
  std::mt19937_64 rng(4);
  const LabelMap p1 = fixtures::random_labels(rng, 3, 3, 3), g1 = fixtures::random_labels(rng, 3, 3, 3);
  const LabelMap p2 = fixtures::random_labels(rng, 3, 3, 3), g2 = fixtures::random_labels(rng, 3, 3, 3);
  ConfusionMatrix sum = confusion_matrix(p1, g1, 3);
  sum += confusion_matrix(p2, g2, 3);
  LabelMap p(6, 3), g(6, 3);
  std::copy(p1.ids.begin(), p1.ids.end(), p.ids.begin());
  std::copy(p2.ids.begin(), p2.ids.end(), p.ids.begin() + 9);
  std::copy(g1.ids.begin(), g1.ids.end(), g.ids.begin());
  std::copy(g2.ids.begin(), g2.ids.end(), g.ids.begin() + 9);
  EXPECT_EQ(sum, confusion_matrix(p, g, 3));
}

TEST(ArgmaxLabels, TiesGoToLowestClass) {
  const Tensor p({1, 2, 3}, std::vector<double>{0.4, 0.4, 0.2, 0.1, 0.45, 0.45});
  EXPECT_EQ(argmax_labels(p).ids, (std::vector<std::int32_t>{0, 1}));
}

TEST(ReportCsv, Layout) {
  MetricsReport r = iou_report(confusion_matrix(row({0, 1, 1, 1}), row({0, 0, 1, 1}), 3));
  r.metadata["config_hash"] = "abc";
  r.metadata["seed"] = "3";
  EXPECT_EQ(report_to_csv(r),
            "# config_hash=abc\n# seed=3\nclass,iou\n0,0.500000\n1,0.666667\n2,absent\nmiou,0.583333\n"
            "pixel_accuracy,0.750000\n");
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["per_class_iou"][2].is_null());
  EXPECT_EQ(j["metadata"]["seed"], "3");
}

TEST(EvaluateModel, EmptySplitIsEmptyEvaluation) {
  fixtures::MockModel m(3, 2, 0);
  const Dataset empty(DomainRole::kTarget, 2, {}, std::vector<LabelMap>{});
  EXPECT_EQ(error_kind([&] { evaluate_model(m, empty); }), ErrorKind::kEmptyEvaluation);
}
