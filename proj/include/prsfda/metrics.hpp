#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prsfda/data.hpp"
#include "prsfda/tensor.hpp"
#include "prsfda/trainable.hpp"

namespace prsfda {

// counts[i * C + j] = pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * num_classes_ + pred]; }
  std::uint64_t total() const noexcept;
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);

struct MetricsReport {
  std::vector<std::optional<double>> per_class_iou;  // nullopt: class absent from both maps
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::map<std::string, std::string> metadata;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// IoU_i = p_ii / (row_i + col_i - p_ii); absent classes are excluded from the
// mean. Throws kEmptyEvaluation when every class is absent.
MetricsReport iou_report(const ConfusionMatrix& cm);

// Per-pixel argmax of a probability map [H,W,C], ties to the lowest class.
LabelMap argmax_labels(const Tensor& probs);

// Runs the model over a labeled split and reports IoU. This is the single
// place where evaluation ground truth is read.
MetricsReport evaluate_model(const TrainableModel& model, const Dataset& eval_split);

// class,iou rows then a miou row and a pixel_accuracy row; metadata as
// leading "# key=value" lines.
std::string report_to_csv(const MetricsReport& report);
nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace prsfda
