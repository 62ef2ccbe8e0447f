#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prsfda/tensor.hpp"

namespace prsfda {

struct SplitSizes {
  std::size_t source_train = 200;
  std::size_t source_val = 50;
  std::size_t target_train = 200;
  std::size_t target_eval = 50;
};

// Synthetic two-domain benchmark. Scenes are Voronoi partitions whose cells
// carry class ids; a pixel's feature is its class colour plus Gaussian noise,
// and the target domain adds `palette_shift` to every colour.
struct DomainSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t num_classes = 8;
  std::size_t in_channels = 3;
  std::vector<double> class_frequencies;         // sums to 1
  std::vector<std::size_t> long_tail_classes;    // each below 3% frequency
  std::vector<std::vector<double>> palette;      // [C][in_channels] in [0,1]
  std::vector<double> palette_shift;             // [in_channels]
  double noise_sigma = 0.1;
  std::size_t num_regions = 24;                  // Voronoi cells per image
  SplitSizes splits;
  std::uint64_t seed = 0;

  // Throws kSpec.
  void validate() const;
  // Target colour of class c, clamped to [0,1].
  std::vector<double> target_color(std::size_t c) const;
};

DomainSpec default_domain_spec();

void to_json(nlohmann::json& j, const DomainSpec& s);
// Missing keys fall back to default_domain_spec().
void from_json(const nlohmann::json& j, DomainSpec& s);

enum class DomainRole { kSource, kTarget };
std::string_view to_string(DomainRole role);

class TargetImages;

// Images with optional per-pixel labels. Label access goes through labels(),
// which throws kMissingLabels when the split is unlabeled and kLabelAccess for
// a label-trap dataset.
class Dataset {
 public:
  Dataset(DomainRole role, std::size_t num_classes, std::vector<Tensor> images,
          std::optional<std::vector<LabelMap>> labels);

  // A dataset whose labels exist but whose every label access throws. Used to
  // prove that a code path never reads ground truth.
  static Dataset label_trap(DomainRole role, std::size_t num_classes, std::vector<Tensor> images,
                            std::vector<LabelMap> labels);

  DomainRole role() const noexcept { return role_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return images_->size(); }
  bool empty() const noexcept { return images_->empty(); }
  const std::vector<Tensor>& images() const noexcept { return *images_; }
  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<LabelMap>& labels() const;

  // Label-stripped view shared with this dataset.
  TargetImages images_only() const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  DomainRole role_;
  std::size_t num_classes_;
  std::shared_ptr<const std::vector<Tensor>> images_;
  std::optional<std::vector<LabelMap>> labels_;
  bool trap_ = false;
};

// The only data the target-side training phases accept: images, no labels.
class TargetImages {
 public:
  TargetImages() : images_(std::make_shared<const std::vector<Tensor>>()) {}
  explicit TargetImages(std::shared_ptr<const std::vector<Tensor>> images) : images_(std::move(images)) {}
  explicit TargetImages(std::vector<Tensor> images)
      : images_(std::make_shared<const std::vector<Tensor>>(std::move(images))) {}

  std::size_t size() const noexcept { return images_->size(); }
  bool empty() const noexcept { return images_->empty(); }
  const Tensor& operator[](std::size_t i) const { return (*images_)[i]; }
  auto begin() const noexcept { return images_->begin(); }
  auto end() const noexcept { return images_->end(); }

 private:
  std::shared_ptr<const std::vector<Tensor>> images_;
};

struct DomainPair {
  Dataset source_train;
  Dataset source_val;
  Dataset target_train;
  Dataset target_eval;
};

// Pure function of the DomainSpec (seed included). Throws kSpec on invalid specs.
DomainPair generate_pair(const DomainSpec& spec);

// Per-channel gain in [1-s, 1+s], offset in [-s, s], then pixel noise with
// sigma s/4; clamped to [0,1]. Strength 0 returns the input unchanged.
Tensor color_perturb(const Tensor& image, double strength, std::mt19937_64& rng);

// Pixel share of each class over the split. Throws kMissingLabels.
std::vector<double> class_frequencies(const Dataset& dataset);

// "PRSFDADS1\n", JSON metadata line, then per image its tensor followed by its
// label map (when labeled).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, std::optional<DomainRole> expected_role = std::nullopt);

}  // namespace prsfda
