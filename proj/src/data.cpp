#include "prsfda/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "prsfda/error.hpp"
#include "prsfda/serialization.hpp"

namespace prsfda {

namespace {

constexpr std::string_view kDatasetMagic = "PRSFDADS1";
constexpr double kLongTailCutoff = 0.03;

enum class Split : std::uint64_t { kSourceTrain = 1, kSourceVal = 2, kTargetTrain = 3, kTargetEval = 4 };

std::mt19937_64 image_rng(std::uint64_t seed, Split split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace

DomainSpec default_domain_spec() {
  DomainSpec s;
  s.class_frequencies = {0.30, 0.22, 0.16, 0.12, 0.09, 0.06, 0.025, 0.025};
  s.long_tail_classes = {6, 7};
  s.palette = {
      {0.20, 0.20, 0.20}, {0.70, 0.30, 0.30}, {0.30, 0.70, 0.30}, {0.30, 0.30, 0.70},
      {0.70, 0.70, 0.30}, {0.30, 0.70, 0.70}, {0.70, 0.30, 0.70}, {0.50, 0.50, 0.50},
  };
  s.palette_shift = {0.15, -0.10, 0.10};
  return s;
}

void DomainSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kSpec, msg); };
  if (height == 0 || width == 0) fail("image extents must be positive");
  if (num_classes < 2) fail("need at least 2 classes");
  if (in_channels == 0) fail("in_channels must be positive");
  if (class_frequencies.size() != num_classes) fail("class_frequencies must have one entry per class");
  double total = 0.0;
  for (double f : class_frequencies) {
    if (!(f >= 0.0) || !std::isfinite(f)) fail("class frequency " + std::to_string(f) + " is infeasible");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) fail("class frequencies sum to " + std::to_string(total));
  for (std::size_t c : long_tail_classes) {
    if (c >= num_classes) fail("long-tail class " + std::to_string(c) + " out of range");
    if (!(class_frequencies[c] < kLongTailCutoff)) fail("long-tail class " + std::to_string(c) + " is not below 3%");
  }
  if (palette.size() != num_classes) fail("palette must have one colour per class");
  for (const auto& colour : palette) {
    if (colour.size() != in_channels) fail("palette colour has the wrong channel count");
    for (double v : colour) {
      if (!(v >= 0.0 && v <= 1.0)) fail("palette values must lie in [0,1]");
    }
  }
  if (palette_shift.size() != in_channels) fail("palette_shift must have one entry per channel");
  for (double v : palette_shift) {
    if (!std::isfinite(v)) fail("palette_shift must be finite");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be non-negative");
  if (num_regions == 0) fail("num_regions must be positive");
}

std::vector<double> DomainSpec::target_color(std::size_t c) const {
  std::vector<double> out(in_channels);
  for (std::size_t k = 0; k < in_channels; ++k) out[k] = std::clamp(palette[c][k] + palette_shift[k], 0.0, 1.0);
  return out;
}

void to_json(nlohmann::json& j, const DomainSpec& s) {
  j = nlohmann::json{{"height", s.height},
                     {"width", s.width},
                     {"num_classes", s.num_classes},
                     {"in_channels", s.in_channels},
                     {"class_frequencies", s.class_frequencies},
                     {"long_tail_classes", s.long_tail_classes},
                     {"palette", s.palette},
                     {"palette_shift", s.palette_shift},
                     {"noise_sigma", s.noise_sigma},
                     {"num_regions", s.num_regions},
                     {"splits",
                      {{"source_train", s.splits.source_train},
                       {"source_val", s.splits.source_val},
                       {"target_train", s.splits.target_train},
                       {"target_eval", s.splits.target_eval}}},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DomainSpec& s) {
  const DomainSpec d = default_domain_spec();
  s.height = j.value("height", d.height);
  s.width = j.value("width", d.width);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.in_channels = j.value("in_channels", d.in_channels);
  s.class_frequencies = j.value("class_frequencies", d.class_frequencies);
  s.long_tail_classes = j.value("long_tail_classes", d.long_tail_classes);
  s.palette = j.value("palette", d.palette);
  s.palette_shift = j.value("palette_shift", d.palette_shift);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.num_regions = j.value("num_regions", d.num_regions);
  s.splits = d.splits;
  if (j.contains("splits")) {
    const auto& sp = j.at("splits");
    s.splits.source_train = sp.value("source_train", d.splits.source_train);
    s.splits.source_val = sp.value("source_val", d.splits.source_val);
    s.splits.target_train = sp.value("target_train", d.splits.target_train);
    s.splits.target_eval = sp.value("target_eval", d.splits.target_eval);
  }
  s.seed = j.value("seed", d.seed);
}

std::string_view to_string(DomainRole role) { return role == DomainRole::kSource ? "source" : "target"; }

Dataset::Dataset(DomainRole role, std::size_t num_classes, std::vector<Tensor> images,
                 std::optional<std::vector<LabelMap>> labels)
    : role_(role),
      num_classes_(num_classes),
      images_(std::make_shared<const std::vector<Tensor>>(std::move(images))),
      labels_(std::move(labels)) {
  if (labels_ && labels_->size() != images_->size()) {
    throw Error(ErrorKind::kShape, "dataset has " + std::to_string(images_->size()) + " images but " +
                                       std::to_string(labels_->size()) + " label maps");
  }
}

Dataset Dataset::label_trap(DomainRole role, std::size_t num_classes, std::vector<Tensor> images,
                            std::vector<LabelMap> labels) {
  Dataset d(role, num_classes, std::move(images), std::move(labels));
  d.trap_ = true;
  return d;
}

const std::vector<LabelMap>& Dataset::labels() const {
  if (trap_) throw Error(ErrorKind::kLabelAccess, "label access on a label-trap dataset");
  if (!labels_) throw Error(ErrorKind::kMissingLabels, std::string(to_string(role_)) + " dataset has no labels");
  return *labels_;
}

TargetImages Dataset::images_only() const { return TargetImages(images_); }

bool operator==(const Dataset& a, const Dataset& b) {
  return a.role_ == b.role_ && a.num_classes_ == b.num_classes_ && *a.images_ == *b.images_ &&
         a.labels_ == b.labels_;
}

namespace {

LabelMap voronoi_scene(const DomainSpec& spec, std::mt19937_64& rng, std::vector<std::size_t>& assigned,
                       std::size_t& pixels_so_far) {
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const std::size_t regions = spec.num_regions;
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(h));
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(w));
  std::vector<double> sy(regions), sx(regions);
  for (std::size_t r = 0; r < regions; ++r) {
    sy[r] = uy(rng);
    sx[r] = ux(rng);
  }

  std::vector<std::size_t> cell(h * w);
  std::vector<std::size_t> area(regions, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double py = static_cast<double>(y) + 0.5;
      const double px = static_cast<double>(x) + 0.5;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < regions; ++r) {
        const double d = (py - sy[r]) * (py - sy[r]) + (px - sx[r]) * (px - sx[r]);
        if (d < best_d) {
          best_d = d;
          best = r;
        }
      }
      cell[y * w + x] = best;
      ++area[best];
    }
  }

  // Cells go, in random order, to the class furthest behind its running
  // pixel quota for the split, so split-level frequencies track the DomainSpec frequencies.
  pixels_so_far += h * w;
  std::vector<std::size_t> order(regions);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::int32_t> cell_class(regions, 0);
  for (std::size_t r : order) {
    if (area[r] == 0) continue;
    std::size_t best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double deficit = spec.class_frequencies[c] * static_cast<double>(pixels_so_far) -
                             static_cast<double>(assigned[c]) - 0.5 * static_cast<double>(area[r]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = c;
      }
    }
    cell_class[r] = static_cast<std::int32_t>(best);
    assigned[best] += area[r];
  }

  LabelMap labels(h, w);
  for (std::size_t i = 0; i < h * w; ++i) labels[i] = cell_class[cell[i]];
  return labels;
}

Tensor render(const DomainSpec& spec, const LabelMap& labels, bool target, std::mt19937_64& rng) {
  const std::size_t ch = spec.in_channels;
  std::vector<std::vector<double>> colours(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) colours[c] = target ? spec.target_color(c) : spec.palette[c];
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor image({spec.height, spec.width, ch});
  auto data = image.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& colour = colours[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < ch; ++k) {
      data[i * ch + k] = std::clamp(colour[k] + spec.noise_sigma * noise(rng), 0.0, 1.0);
    }
  }
  return image;
}

Dataset generate_split(const DomainSpec& spec, Split split, std::size_t count) {
  const bool target = split == Split::kTargetTrain || split == Split::kTargetEval;
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
  images.reserve(count);
  labels.reserve(count);
  std::vector<std::size_t> assigned(spec.num_classes, 0);
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = image_rng(spec.seed, split, i);
    labels.push_back(voronoi_scene(spec, rng, assigned, pixels));
    images.push_back(render(spec, labels.back(), target, rng));
  }
  return Dataset(target ? DomainRole::kTarget : DomainRole::kSource, spec.num_classes, std::move(images),
                 std::move(labels));
}

}  // namespace

DomainPair generate_pair(const DomainSpec& spec) {
  spec.validate();
  return DomainPair{generate_split(spec, Split::kSourceTrain, spec.splits.source_train),
                    generate_split(spec, Split::kSourceVal, spec.splits.source_val),
                    generate_split(spec, Split::kTargetTrain, spec.splits.target_train),
                    generate_split(spec, Split::kTargetEval, spec.splits.target_eval)};
}

Tensor color_perturb(const Tensor& image, double strength, std::mt19937_64& rng) {
  if (!(strength >= 0.0) || !std::isfinite(strength)) {
    throw Error(ErrorKind::kInvalidInput, "perturbation strength must be non-negative");
  }
  if (image.rank() != 3) throw Error(ErrorKind::kShape, "expected image [H,W,C], got " + image.shape_string());
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::kInvalidInput, "image values must lie in [0,1]");
  }
  if (strength == 0.0) return image;

  const std::size_t ch = image.channels();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> gain(ch), offset(ch);
  for (std::size_t k = 0; k < ch; ++k) {
    gain[k] = 1.0 + strength * unit(rng);
    offset[k] = strength * unit(rng);
  }
  std::normal_distribution<double> noise(0.0, 0.25 * strength);
  Tensor out = image;
  auto data = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t k = i % ch;
    data[i] = std::clamp(gain[k] * data[i] + offset[k] + noise(rng), 0.0, 1.0);
  }
  return out;
}

std::vector<double> class_frequencies(const Dataset& dataset) {
  const auto& labels = dataset.labels();
  std::vector<double> counts(dataset.num_classes(), 0.0);
  double total = 0.0;
  for (const auto& map : labels) {
    for (std::int32_t id : map.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= counts.size()) {
        throw Error(ErrorKind::kLabel, "label " + std::to_string(id) + " out of range");
      }
      counts[static_cast<std::size_t>(id)] += 1.0;
    }
    total += static_cast<double>(map.size());
  }
  if (total == 0.0) throw Error(ErrorKind::kMissingLabels, "dataset has no labeled pixels");
  for (double& c : counts) c /= total;
  return counts;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  nlohmann::json meta{{"role", to_string(dataset.role())},
                      {"num_images", dataset.size()},
                      {"num_classes", dataset.num_classes()},
                      {"has_labels", dataset.has_labels()}};
  write_header(out, kDatasetMagic, meta.dump());
  const std::vector<LabelMap>* labels = dataset.has_labels() ? &dataset.labels() : nullptr;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    write_tensor(out, dataset.images()[i]);
    if (labels) write_tensor(out, to_tensor((*labels)[i]));
  }
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<DomainRole> expected_role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open dataset " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_header(in, kDatasetMagic));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "malformed dataset metadata in " + path.string() + ": " + e.what());
  }
  const std::string role_name = meta.at("role").get<std::string>();
  DomainRole role;
  if (role_name == "source") {
    role = DomainRole::kSource;
  } else if (role_name == "target") {
    role = DomainRole::kTarget;
  } else {
    throw Error(ErrorKind::kFormat, "unknown dataset role '" + role_name + "'");
  }
  if (expected_role && *expected_role != role) {
    throw Error(ErrorKind::kRole, path.string() + " holds a " + role_name + " split, expected " +
                                      std::string(to_string(*expected_role)));
  }
  const auto count = meta.at("num_images").get<std::size_t>();
  const bool has_labels = meta.at("has_labels").get<bool>();
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
  for (std::size_t i = 0; i < count; ++i) {
    images.push_back(read_tensor(in));
    if (has_labels) labels.push_back(to_label_map(read_tensor(in)));
  }
  std::optional<std::vector<LabelMap>> maybe_labels;
  if (has_labels) maybe_labels = std::move(labels);
  return Dataset(role, meta.at("num_classes").get<std::size_t>(), std::move(images), std::move(maybe_labels));
}

}  // namespace prsfda
