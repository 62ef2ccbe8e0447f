#include "prsfda/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "prsfda/error.hpp"

namespace prsfda {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 1) throw Error(ErrorKind::kConfig, "confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= num_classes_ || pred >= num_classes_) {
    throw Error(ErrorKind::kLabel, "class id outside [0, " + std::to_string(num_classes_) + ")");
  }
  counts_[truth * num_classes_ + pred] += n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw Error(ErrorKind::kShape, "confusion matrix class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size()) {
    throw Error(ErrorKind::kShape, "prediction and ground truth differ in shape");
  }
  ConfusionMatrix cm(num_classes);
  const auto classes = static_cast<std::int32_t>(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= classes || pred[i] < 0 || pred[i] >= classes) {
      throw Error(ErrorKind::kLabel, "label outside [0, " + std::to_string(num_classes) + ") at pixel " +
                                         std::to_string(i));
    }
    cm.add(static_cast<std::size_t>(gt[i]), static_cast<std::size_t>(pred[i]));
  }
  return cm;
}

MetricsReport iou_report(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_classes();
  MetricsReport report;
  report.per_class_iou.resize(c);
  double sum = 0.0;
  std::size_t defined = 0;
  std::uint64_t diagonal = 0;
  for (std::size_t i = 0; i < c; ++i) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    const std::uint64_t hit = cm.at(i, i);
    diagonal += hit;
    const std::uint64_t uni = row + col - hit;
    if (uni == 0) continue;
    const double iou = static_cast<double>(hit) / static_cast<double>(uni);
    report.per_class_iou[i] = iou;
    sum += iou;
    ++defined;
  }
  if (defined == 0) throw Error(ErrorKind::kEmptyEvaluation, "no class appears in prediction or ground truth");
  report.miou = sum / static_cast<double>(defined);
  report.pixel_accuracy = static_cast<double>(diagonal) / static_cast<double>(cm.total());
  return report;
}

LabelMap argmax_labels(const Tensor& probs) {
  if (probs.rank() != 3) throw Error(ErrorKind::kShape, "expected probabilities [H,W,C], got " + probs.shape_string());
  const std::size_t c = probs.channels();
  LabelMap out(probs.extent(0), probs.extent(1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = probs.data().data() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

MetricsReport evaluate_model(const TrainableModel& model, const Dataset& eval_split) {
  if (eval_split.empty()) throw Error(ErrorKind::kEmptyEvaluation, "evaluation split is empty");
  const auto& labels = eval_split.labels();
  ConfusionMatrix total(model.num_classes());
  for (std::size_t i = 0; i < eval_split.size(); ++i) {
    total += confusion_matrix(argmax_labels(model.forward(eval_split.images()[i])), labels[i], model.num_classes());
  }
  return iou_report(total);
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream os;
  for (const auto& [key, value] : report.metadata) os << "# " << key << '=' << value << '\n';
  os << "class,iou\n";
  for (std::size_t i = 0; i < report.per_class_iou.size(); ++i) {
    os << i << ',' << (report.per_class_iou[i] ? format_double(*report.per_class_iou[i]) : "absent") << '\n';
  }
  os << "miou," << format_double(report.miou) << '\n';
  os << "pixel_accuracy," << format_double(report.pixel_accuracy) << '\n';
  return os.str();
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json iou = nlohmann::json::array();
  for (const auto& v : report.per_class_iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return nlohmann::json{{"per_class_iou", iou},
                        {"miou", report.miou},
                        {"pixel_accuracy", report.pixel_accuracy},
                        {"metadata", report.metadata}};
}

}  // namespace prsfda
