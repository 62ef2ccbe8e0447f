#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "prsfda/tensor.hpp"

namespace prsfda {

inline constexpr double kDefaultConfidenceThreshold = 0.6;

struct PseudoLabelSet {
  LabelMap labels;       // per-pixel argmax, ties to the lowest class id
  Tensor confidence;     // [H,W] per-pixel max probability
  Mask invalid_mask;     // 1 where confidence < threshold
  double threshold = kDefaultConfidenceThreshold;

  friend bool operator==(const PseudoLabelSet&, const PseudoLabelSet&) = default;
};

// probs [H,W,C]; threshold must lie in (0,1) or kConfig is thrown.
PseudoLabelSet make_pseudo_set(const Tensor& probs, double threshold = kDefaultConfidenceThreshold);

// One complementary class per class id: each class `lab` is remapped to a
// uniformly drawn `tmp != lab`, and every pixel carrying `lab` gets `tmp`.
// Draws happen for every class in [0, C) in order, so the output is a pure
// function of (labels, C, rng state).
LabelMap complementary_labels(const LabelMap& labels, std::size_t num_classes, std::mt19937_64& rng);

// "PRSFDAPL1\n", JSON line {threshold, source_checkpoint, height, width},
// then labels, confidence, invalid mask as framed tensors.
void save_pseudo_set(const PseudoLabelSet& set, const std::string& source_checkpoint_hash,
                     const std::filesystem::path& path);
PseudoLabelSet load_pseudo_set(const std::filesystem::path& path, std::string* source_checkpoint_hash = nullptr);

}  // namespace prsfda
