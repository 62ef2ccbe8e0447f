#include "prsfda/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Dense>

#include "prsfda/error.hpp"
#include "prsfda/numerics.hpp"
#include "prsfda/serialization.hpp"

namespace prsfda {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.extent(0)),
                        static_cast<Eigen::Index>(t.extent(1)));
}

constexpr std::string_view kCheckpointMagic = "PRSFDA1";

}  // namespace

void ModelConfig::validate() const {
  if (num_classes < 2) throw Error(ErrorKind::kConfig, "num_classes must be at least 2");
  if (patch_size < 1 || patch_size % 2 == 0) throw Error(ErrorKind::kConfig, "patch_size must be odd and >= 1");
  if (in_channels < 1) throw Error(ErrorKind::kConfig, "in_channels must be positive");
  if (hidden_sizes.empty()) throw Error(ErrorKind::kConfig, "hidden_sizes must be nonempty");
  for (std::size_t h : hidden_sizes) {
    if (h == 0) throw Error(ErrorKind::kConfig, "hidden layer width must be positive");
  }
  if (!(head_lr_multiplier > 0.0) || !std::isfinite(head_lr_multiplier)) {
    throw Error(ErrorKind::kConfig, "head_lr_multiplier must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_classes", c.num_classes},
                     {"patch_size", c.patch_size},
                     {"in_channels", c.in_channels},
                     {"hidden_sizes", c.hidden_sizes},
                     {"head_lr_multiplier", c.head_lr_multiplier}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.hidden_sizes = j.value("hidden_sizes", d.hidden_sizes);
  c.head_lr_multiplier = j.value("head_lr_multiplier", d.head_lr_multiplier);
}

bool operator==(const DenseLayer& a, const DenseLayer& b) { return a.weight == b.weight && a.bias == b.bias; }

Model::Model(ModelConfig config, std::vector<DenseLayer> layers, std::uint64_t seed)
    : config_(std::move(config)), layers_(std::move(layers)), seed_(seed) {
  config_.validate();
  std::size_t fan_in = config_.patch_size * config_.patch_size * config_.in_channels;
  if (layers_.size() != config_.hidden_sizes.size() + 1) {
    throw Error(ErrorKind::kShape, "layer count does not match hidden_sizes");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t fan_out = l < config_.hidden_sizes.size() ? config_.hidden_sizes[l] : config_.num_classes;
    const auto& layer = layers_[l];
    if (layer.weight.shape() != std::vector<std::size_t>{fan_in, fan_out} ||
        layer.bias.shape() != std::vector<std::size_t>{fan_out}) {
      throw Error(ErrorKind::kShape, "layer " + std::to_string(l) + " has shape " + layer.weight.shape_string() +
                                         "+" + layer.bias.shape_string() + ", expected [" +
                                         std::to_string(fan_in) + "," + std::to_string(fan_out) + "]");
    }
    if (!layer.weight.all_finite() || !layer.bias.all_finite()) {
      throw Error(ErrorKind::kInvalidInput, "non-finite parameter in layer " + std::to_string(l));
    }
    fan_in = fan_out;
  }
}

struct Model::Activations {
  RowMatrix patches;                 // [pixels, k*k*in]
  std::vector<RowMatrix> pre;        // pre-activation per layer
  std::vector<RowMatrix> post;       // ReLU output per hidden layer
  RowMatrix probs;                   // [pixels, C]
  std::size_t height = 0;
  std::size_t width = 0;
};

Model::Activations Model::run_forward(const Tensor& image) const {
  if (image.rank() != 3 || image.extent(2) != config_.in_channels) {
    throw Error(ErrorKind::kShape, "expected image [H,W," + std::to_string(config_.in_channels) + "], got " +
                                       image.shape_string());
  }
  const std::size_t h = image.extent(0);
  const std::size_t w = image.extent(1);
  const std::size_t k = config_.patch_size;
  if (h < k || w < k) throw Error(ErrorKind::kShape, "image smaller than the patch size");
  const std::size_t ch = config_.in_channels;
  const auto radius = static_cast<std::ptrdiff_t>(k / 2);

  Activations acts;
  acts.height = h;
  acts.width = w;
  acts.patches = RowMatrix::Zero(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k * k * ch));
  const auto src = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = acts.patches.row(static_cast<Eigen::Index>(y * w + x)).data();
      std::size_t col = 0;
      for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
        for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx, col += ch) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          const double* px = src.data() + (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * ch;
          for (std::size_t c = 0; c < ch; ++c) row[col + c] = px[c];
        }
      }
    }
  }

  const RowMatrix* input = &acts.patches;
  acts.pre.reserve(layers_.size());
  acts.post.reserve(layers_.size() - 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    RowMatrix z = (*input) * as_matrix(layers_[l].weight);
    z.rowwise() += ConstVectorMap(layers_[l].bias.data().data(), static_cast<Eigen::Index>(layers_[l].bias.size()));
    acts.pre.push_back(std::move(z));
    if (l + 1 < layers_.size()) {
      acts.post.push_back(acts.pre.back().cwiseMax(0.0));
      input = &acts.post.back();
    }
  }

  acts.probs = acts.pre.back();
  const std::size_t classes = config_.num_classes;
  for (Eigen::Index r = 0; r < acts.probs.rows(); ++r) {
    softmax_inplace(std::span<double>(acts.probs.row(r).data(), classes));
  }
  return acts;
}

ParameterGradients Model::run_backward(const Activations& acts, const Tensor& grad_probs) const {
  const std::size_t pixels = acts.height * acts.width;
  if (grad_probs.shape() != std::vector<std::size_t>{acts.height, acts.width, config_.num_classes}) {
    throw Error(ErrorKind::kShape, "grad_probs shape " + grad_probs.shape_string() + " does not match forward output");
  }
  ConstMatrixMap g(grad_probs.data().data(), static_cast<Eigen::Index>(pixels),
                   static_cast<Eigen::Index>(config_.num_classes));

  // Softmax Jacobian: dz_c = p_c * (g_c - sum_j p_j g_j)
  const RowMatrix pg = acts.probs.cwiseProduct(g);
  RowMatrix dz = pg - acts.probs.cwiseProduct(pg.rowwise().sum().replicate(1, acts.probs.cols()));

  ParameterGradients grads(layers_.size() * 2);
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const RowMatrix& input = l == 0 ? acts.patches : acts.post[l - 1];
    Tensor dw(layers_[l].weight.shape());
    Tensor db(layers_[l].bias.shape());
    MatrixMap(dw.data().data(), static_cast<Eigen::Index>(dw.extent(0)), static_cast<Eigen::Index>(dw.extent(1))) =
        input.transpose() * dz;
    Eigen::Map<Eigen::RowVectorXd>(db.data().data(), static_cast<Eigen::Index>(db.size())) = dz.colwise().sum();
    grads[2 * l] = std::move(dw);
    grads[2 * l + 1] = std::move(db);
    if (l > 0) {
      RowMatrix da = dz * as_matrix(layers_[l].weight).transpose();
      // ReLU subgradient is 0 at 0.
      dz = da.cwiseProduct((acts.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return grads;
}

Tensor Model::forward(const Tensor& image) const {
  Activations acts = run_forward(image);
  Tensor out({acts.height, acts.width, config_.num_classes});
  std::copy(acts.probs.data(), acts.probs.data() + acts.probs.size(), out.data().begin());
  return out;
}

ParameterGradients Model::backward(const Tensor& image, const Tensor& grad_probs) const {
  return run_backward(run_forward(image), grad_probs);
}

ValueAndGradient Model::value_and_gradient(const Tensor& image, const ProbabilityLoss& loss) const {
  Activations acts = run_forward(image);
  Tensor probs({acts.height, acts.width, config_.num_classes});
  std::copy(acts.probs.data(), acts.probs.data() + acts.probs.size(), probs.data().begin());
  LossOutput out = loss(probs);
  return {out.value, run_backward(acts, out.grad_probs)};
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> params;
  for (auto& layer : layers_) {
    params.push_back(&layer.weight);
    params.push_back(&layer.bias);
  }
  return params;
}

std::vector<double> Model::lr_multipliers() const {
  std::vector<double> mult(layers_.size() * 2, 1.0);
  mult[mult.size() - 2] = config_.head_lr_multiplier;
  mult[mult.size() - 1] = config_.head_lr_multiplier;
  return mult;
}

void Model::apply_update(OptimizerState& state, const ParameterGradients& grads, double lr) {
  std::vector<Tensor> params;
  params.reserve(layers_.size() * 2);
  for (auto& layer : layers_) {
    params.push_back(std::move(layer.weight));
    params.push_back(std::move(layer.bias));
  }
  auto restore = [&] {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight = std::move(params[2 * l]);
      layers_[l].bias = std::move(params[2 * l + 1]);
    }
  };
  const auto mult = lr_multipliers();
  try {
    optimizer_step(state, params, grads, lr, mult);
  } catch (...) {
    restore();
    throw;
  }
  restore();
}

std::unique_ptr<TrainableModel> Model::clone() const { return std::make_unique<Model>(*this); }

std::string Model::fingerprint() const {
  Fnv1a h;
  for (const auto& layer : layers_) {
    for (double v : layer.weight.data()) h.update(v);
    for (double v : layer.bias.data()) h.update(v);
  }
  return h.hex();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

std::vector<double> Model::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    flat.insert(flat.end(), layer.weight.data().begin(), layer.weight.data().end());
    flat.insert(flat.end(), layer.bias.data().begin(), layer.bias.data().end());
  }
  return flat;
}

void Model::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) throw Error(ErrorKind::kShape, "flat parameter length mismatch");
  std::size_t offset = 0;
  for (auto& layer : layers_) {
    for (Tensor* t : {&layer.weight, &layer.bias}) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), t->size(), t->data().begin());
      offset += t->size();
    }
  }
}

namespace {

std::vector<DenseLayer> shaped_layers(const ModelConfig& config) {
  std::vector<DenseLayer> layers;
  std::size_t fan_in = config.patch_size * config.patch_size * config.in_channels;
  for (std::size_t l = 0; l <= config.hidden_sizes.size(); ++l) {
    const std::size_t fan_out = l < config.hidden_sizes.size() ? config.hidden_sizes[l] : config.num_classes;
    layers.push_back({Tensor({fan_in, fan_out}), Tensor({fan_out})});
    fan_in = fan_out;
  }
  return layers;
}

}  // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto layers = shaped_layers(config);
  std::mt19937_64 rng(seed);
  for (auto& layer : layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.extent(0)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : layer.weight.data()) v = dist(rng);
  }
  return Model(config, std::move(layers), seed);
}

Model zero_model(const ModelConfig& config) {
  config.validate();
  return Model(config, shaped_layers(config), 0);
}

Tensor forward(const Model& model, const Tensor& image) { return model.forward(image); }

ParameterGradients backward(const Model& model, const Tensor& image, const Tensor& grad_probs) {
  return model.backward(image, grad_probs);
}

void optimizer_step(OptimizerState& state, Model& model, const ParameterGradients& grads, double lr) {
  model.apply_update(state, grads, lr);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  nlohmann::json meta{{"config", model.config()}, {"seed", model.seed()}};
  write_header(out, kCheckpointMagic, meta.dump());
  for (const auto& layer : model.layers()) {
    write_tensor(out, layer.weight);
    write_tensor(out, layer.bias);
  }
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::string line = read_header(in, kCheckpointMagic);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "checkpoint " + path.string() + " has a malformed JSON line: " + e.what());
  }
  const ModelConfig config = meta.at("config").get<ModelConfig>();
  config.validate();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l <= config.hidden_sizes.size(); ++l) {
    Tensor w = read_tensor(in);
    Tensor b = read_tensor(in);
    layers.push_back({std::move(w), std::move(b)});
  }
  return Model(config, std::move(layers), meta.value("seed", std::uint64_t{0}));
}

}  // namespace prsfda
