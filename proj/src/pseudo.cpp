#include "prsfda/pseudo.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "prsfda/error.hpp"
#include "prsfda/serialization.hpp"

namespace prsfda {

namespace {
constexpr std::string_view kPseudoMagic = "PRSFDAPL1";
}

PseudoLabelSet make_pseudo_set(const Tensor& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::kConfig, "confidence threshold " + std::to_string(threshold) + " outside (0,1)");
  }
  if (probs.rank() != 3 || probs.channels() < 2) {
    throw Error(ErrorKind::kShape, "expected probabilities [H,W,C], got " + probs.shape_string());
  }
  const std::size_t h = probs.extent(0);
  const std::size_t w = probs.extent(1);
  const std::size_t c = probs.channels();

  PseudoLabelSet set{LabelMap(h, w), Tensor({h, w}), Mask(h, w), threshold};
  for (std::size_t i = 0; i < h * w; ++i) {
    const double* row = probs.data().data() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (row[k] > row[best]) best = k;
    }
    set.labels[i] = static_cast<std::int32_t>(best);
    set.confidence[i] = row[best];
    set.invalid_mask[i] = row[best] < threshold ? 1 : 0;
  }
  return set;
}

LabelMap complementary_labels(const LabelMap& labels, std::size_t num_classes, std::mt19937_64& rng) {
  if (num_classes < 2) throw Error(ErrorKind::kConfig, "complementary labels need at least 2 classes");
  const auto classes = static_cast<std::int32_t>(num_classes);
  std::vector<std::int32_t> remap(num_classes);
  std::uniform_int_distribution<std::int32_t> draw(0, classes - 1);
  for (std::int32_t lab = 0; lab < classes; ++lab) {
    std::int32_t tmp = draw(rng);
    while (tmp == lab) tmp = draw(rng);
    remap[static_cast<std::size_t>(lab)] = tmp;
  }
  LabelMap out = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t lab = labels[i];
    if (lab < 0 || lab >= classes) {
      throw Error(ErrorKind::kLabel, "label " + std::to_string(lab) + " outside [0, " + std::to_string(classes) + ")");
    }
    out[i] = remap[static_cast<std::size_t>(lab)];
  }
  return out;
}

void save_pseudo_set(const PseudoLabelSet& set, const std::string& source_checkpoint_hash,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  nlohmann::json meta{{"threshold", set.threshold},
                      {"source_checkpoint", source_checkpoint_hash},
                      {"height", set.labels.height},
                      {"width", set.labels.width}};
  write_header(out, kPseudoMagic, meta.dump());
  write_tensor(out, to_tensor(set.labels));
  write_tensor(out, set.confidence);
  write_tensor(out, to_tensor(set.invalid_mask));
}

PseudoLabelSet load_pseudo_set(const std::filesystem::path& path, std::string* source_checkpoint_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open pseudo-label file " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_header(in, kPseudoMagic));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "malformed pseudo-label metadata: " + std::string(e.what()));
  }
  PseudoLabelSet set;
  set.threshold = meta.at("threshold").get<double>();
  set.labels = to_label_map(read_tensor(in));
  set.confidence = read_tensor(in);
  set.invalid_mask = to_mask(read_tensor(in));
  if (source_checkpoint_hash) *source_checkpoint_hash = meta.value("source_checkpoint", "");
  return set;
}

}  // namespace prsfda
