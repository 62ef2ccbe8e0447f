#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "prsfda/error.hpp"
#include "prsfda/losses.hpp"
#include "prsfda/model.hpp"
#include "prsfda/optimizer.hpp"
#include "test_support.hpp"

using namespace prsfda;
using fixtures::error_kind;

namespace {

// Straight-line reference forward: explicit zero-padded patch, dense layers,
// ReLU, softmax. Shares nothing with the Eigen implementation.
Tensor reference_forward(const Model& m, const Tensor& image) {
  const auto& cfg = m.config();
  const std::size_t h = image.extent(0), w = image.extent(1), ch = cfg.in_channels;
  const int r = static_cast<int>(cfg.patch_size / 2);
  Tensor out({h, w, cfg.num_classes});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::vector<double> act;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = static_cast<int>(y) + dy, xx = static_cast<int>(x) + dx;
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<int>(h) && xx < static_cast<int>(w);
          for (std::size_t c = 0; c < ch; ++c) {
            act.push_back(inside ? image[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * ch + c]
                                 : 0.0);
          }
        }
      }
      for (std::size_t l = 0; l < m.layers().size(); ++l) {
        const auto& layer = m.layers()[l];
        const std::size_t fan_out = layer.bias.size();
        std::vector<double> next(fan_out);
        for (std::size_t o = 0; o < fan_out; ++o) {
          double z = layer.bias[o];
          for (std::size_t i = 0; i < act.size(); ++i) z += act[i] * layer.weight[i * fan_out + o];
          next[o] = (l + 1 < m.layers().size()) ? std::max(z, 0.0) : z;
        }
        act = std::move(next);
      }
      double mx = act[0];
      for (double v : act) mx = std::max(mx, v);
      double sum = 0.0;
      for (double& v : act) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < act.size(); ++c) out[(y * w + x) * act.size() + c] = act[c] / sum;
    }
  }
  return out;
}

ModelConfig small_config() {
  ModelConfig c;
  c.num_classes = 3;
  c.patch_size = 3;
  c.in_channels = 2;
  c.hidden_sizes = {5, 4};
  return c;
}

}  // namespace

TEST(ModelInit, SameSeedSameParameters) {
  const ModelConfig c = small_config();
  EXPECT_EQ(init_model(c, 3), init_model(c, 3));
  EXPECT_NE(init_model(c, 3).fingerprint(), init_model(c, 4).fingerprint());
}

TEST(ModelInit, LayerShapesChain) {
  ModelConfig c;
  c.hidden_sizes = {4};
  c.num_classes = 3;
  c.patch_size = 1;
  c.in_channels = 2;
  const Model m = init_model(c, 0);
  ASSERT_EQ(m.layers().size(), 2u);
  EXPECT_EQ(m.layers()[0].weight.shape(), (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(m.layers()[0].bias.shape(), (std::vector<std::size_t>{4}));
  EXPECT_EQ(m.layers()[1].weight.shape(), (std::vector<std::size_t>{4, 3}));
  EXPECT_EQ(m.layers()[1].bias.shape(), (std::vector<std::size_t>{3}));
}

TEST(ModelInit, HeUniformBoundsAndZeroBias) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 9);
  std::size_t fan_in = 18;
  for (const auto& layer : m.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double v : layer.weight.data()) EXPECT_LE(std::abs(v), bound);
    for (double v : layer.bias.data()) EXPECT_EQ(v, 0.0);
    fan_in = layer.bias.size();
  }
}

TEST(ModelConfigValidation, RejectsBadConfigs) {
  ModelConfig c = small_config();
  c.num_classes = 1;
  EXPECT_EQ(error_kind([&] { init_model(c, 0); }), ErrorKind::kConfig);
  c = small_config();
  c.patch_size = 2;
  EXPECT_EQ(error_kind([&] { init_model(c, 0); }), ErrorKind::kConfig);
  c = small_config();
  c.hidden_sizes.clear();
  EXPECT_EQ(error_kind([&] { init_model(c, 0); }), ErrorKind::kConfig);
}

TEST(ModelForward, ZeroModelIsUniform) {
  ModelConfig c = small_config();
  c.num_classes = 4;
  std::mt19937_64 rng(1);
  const Tensor p = forward(zero_model(c), fixtures::random_image(rng, 4, 4, 2));
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ModelForward, ConstantImageGivesIdenticalInteriorRows) {
  const Model m = init_model(small_config(), 2);
  const Tensor img({6, 6, 2}, 0.4);
  const Tensor p = forward(m, img);
  const std::size_t c = 3;
  const std::size_t ref = (1 * 6 + 1) * c;
  for (std::size_t y = 1; y < 5; ++y) {
    for (std::size_t x = 1; x < 5; ++x) {
      for (std::size_t k = 0; k < c; ++k) EXPECT_EQ(p[(y * 6 + x) * c + k], p[ref + k]);
    }
  }
}

TEST(ModelForward, MatchesReferenceImplementation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m = init_model(small_config(), seed);
    std::mt19937_64 rng(100 + seed);
    const Tensor img = fixtures::random_image(rng, 5, 7, 2);
    const Tensor got = forward(m, img);
    const Tensor want = reference_forward(m, img);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(ModelForward, GoldenFixture) {
  ModelConfig c;
  c.num_classes = 4;
  c.hidden_sizes = {8, 8};
  const Model m = init_model(c, 7);
  std::mt19937_64 rng(13);
  const Tensor img = fixtures::random_image(rng, 5, 5, 3);
  const Tensor p = forward(m, img);
  const Tensor oracle = reference_forward(m, img);
  const std::vector<std::pair<std::size_t, double>> golden = {
      {0, 0.029227239894189804},   {1, 0.027761025776690186},  {2, 0.86102179558640446},
      {3, 0.081989938742715651},   {48, 0.0053857954326312664}, {49, 0.0068458473247135802},
      {50, 0.95425634090262412},   {51, 0.033512016340031099},  {96, 0.060043384628326417},
      {97, 0.050931200860323662},  {98, 0.7728585984256553},    {99, 0.11616681608569467}};
  for (const auto& [index, value] : golden) {
    EXPECT_NEAR(oracle[index], value, 1e-12) << "index " << index;
    EXPECT_NEAR(p[index], value, 1e-12) << "index " << index;
  }
}

TEST(ModelForward, ChannelMismatchIsShapeError) {
  const Model m = init_model(small_config(), 0);
  EXPECT_EQ(error_kind([&] { forward(m, Tensor({4, 4, 3})); }), ErrorKind::kShape);
  EXPECT_EQ(error_kind([&] { forward(m, Tensor({4, 4})); }), ErrorKind::kShape);
}

TEST(ModelBackward, ZeroUpstreamGivesZeroGradients) {
  const Model m = init_model(small_config(), 5);
  std::mt19937_64 rng(5);
  const Tensor img = fixtures::random_image(rng, 4, 4, 2);
  for (const Tensor& g : backward(m, img, Tensor({4, 4, 3}))) {
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ModelBackward, LinearInUpstreamGradient) {
  const Model m = init_model(small_config(), 6);
  std::mt19937_64 rng(6);
  const Tensor img = fixtures::random_image(rng, 4, 4, 2);
  Tensor g({4, 4, 3});
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : g.data()) v = n(rng);
  Tensor g2 = g;
  for (double& v : g2.data()) v *= 2.0;
  const auto a = backward(m, img, g);
  const auto b = backward(m, img, g2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) EXPECT_NEAR(b[t][i], 2.0 * a[t][i], 1e-12);
  }
}

TEST(ModelBackward, MatchesFiniteDifferences) {
  ModelConfig c = small_config();
  c.hidden_sizes = {6};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m = init_model(c, seed);
    std::mt19937_64 rng(seed + 50);
    const Tensor img = fixtures::random_image(rng, 4, 4, 2);
    Tensor weights({4, 4, 3});
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : weights.data()) v = n(rng);
    // Linear functional of the probabilities: its gradient is `weights`.
    const ProbabilityLoss linear = [&](const Tensor& p) {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * weights[i];
      return LossOutput{s, weights};
    };
    EXPECT_LT(fixtures::gradient_check_error(m, img, linear), 1e-4) << "seed " << seed;
  }
}

TEST(ModelBackward, ValueAndGradientAgreesWithSeparateCalls) {
  const Model m = init_model(small_config(), 8);
  std::mt19937_64 rng(8);
  const Tensor img = fixtures::random_image(rng, 4, 4, 2);
  const ProbabilityLoss loss = [](const Tensor& p) { return msl_loss(p); };
  const ValueAndGradient vg = m.value_and_gradient(img, loss);
  const LossOutput lo = msl_loss(forward(m, img));
  EXPECT_EQ(vg.loss, lo.value);
  const auto grads = backward(m, img, lo.grad_probs);
  ASSERT_EQ(grads.size(), vg.grads.size());
  for (std::size_t t = 0; t < grads.size(); ++t) EXPECT_EQ(grads[t], vg.grads[t]);
}

TEST(Optimizer, PlainSgdStep) {
  OptimizerHyperparameters hp;
  hp.momentum = 0.0;
  hp.weight_decay = 0.0;
  OptimizerState s = make_optimizer(OptimizerKind::kSgdMomentum, hp);
  std::vector<Tensor> p{Tensor({2}, std::vector<double>{1.0, -2.0})};
  optimizer_step(s, p, {Tensor({2}, std::vector<double>{0.5, 0.25})}, 0.1);
  EXPECT_NEAR(p[0][0], 0.95, 1e-15);
  EXPECT_NEAR(p[0][1], -2.025, 1e-15);
}

TEST(Optimizer, MomentumRecursion) {
  OptimizerHyperparameters hp;
  hp.momentum = 0.9;
  hp.weight_decay = 0.0;
  OptimizerState s = make_optimizer(OptimizerKind::kSgdMomentum, hp);
  std::vector<Tensor> p{Tensor({1}, 0.0)};
  const ParameterGradients g{Tensor({1}, 1.0)};
  // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
  optimizer_step(s, p, g, 0.1);
  EXPECT_NEAR(p[0][0], -0.1, 1e-15);
  optimizer_step(s, p, g, 0.1);
  EXPECT_NEAR(p[0][0], -0.29, 1e-15);
}

TEST(Optimizer, AdamWDecoupledDecayWithZeroGradient) {
  OptimizerHyperparameters hp;
  hp.weight_decay = 5e-4;
  OptimizerState s = make_optimizer(OptimizerKind::kAdamW, hp);
  std::vector<Tensor> p{Tensor({3}, std::vector<double>{1.0, -3.0, 0.5})};
  const std::vector<double> before(p[0].data().begin(), p[0].data().end());
  optimizer_step(s, p, {Tensor({3}, 0.0)}, 0.1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[0][i], before[i] * (1.0 - 5e-5), 1e-15);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  OptimizerHyperparameters hp;
  hp.weight_decay = 0.0;
  OptimizerState s = make_optimizer(OptimizerKind::kAdamW, hp);
  std::vector<Tensor> p{Tensor({2}, 0.0)};
  optimizer_step(s, p, {Tensor({2}, std::vector<double>{3.0, -0.2})}, 0.01);
  // Bias-corrected m/sqrt(v) equals sign(g) on the first step, up to eps.
  EXPECT_NEAR(p[0][0], -0.01, 1e-9);
  EXPECT_NEAR(p[0][1], 0.01, 1e-9);
}

TEST(Optimizer, ZeroLearningRateIsIdentity) {
  for (OptimizerKind kind : {OptimizerKind::kSgdMomentum, OptimizerKind::kAdamW}) {
    Model m = init_model(small_config(), 1);
    const Model before = m;
    std::mt19937_64 rng(1);
    const Tensor img = fixtures::random_image(rng, 4, 4, 2);
    OptimizerState s = make_optimizer(kind);
    const auto grads = backward(m, img, msl_loss(forward(m, img)).grad_probs);
    optimizer_step(s, m, grads, 0.0);
    EXPECT_EQ(m, before);
  }
}

TEST(Optimizer, HeadLayerUsesMultiplier) {
  OptimizerHyperparameters hp;
  hp.momentum = 0.0;
  hp.weight_decay = 0.0;
  Model m = init_model(small_config(), 4);
  const Model before = m;
  ParameterGradients grads;
  for (const auto& layer : m.layers()) {
    grads.emplace_back(layer.weight.shape(), 1.0);
    grads.emplace_back(layer.bias.shape(), 1.0);
  }
  OptimizerState s = make_optimizer(OptimizerKind::kSgdMomentum, hp);
  optimizer_step(s, m, grads, 0.01);
  EXPECT_NEAR(m.layers()[0].weight[0], before.layers()[0].weight[0] - 0.01, 1e-15);
  EXPECT_NEAR(m.layers()[1].bias[0], before.layers()[1].bias[0] - 0.01, 1e-15);
  EXPECT_NEAR(m.layers()[2].weight[0], before.layers()[2].weight[0] - 0.1, 1e-15);
  EXPECT_NEAR(m.layers()[2].bias[0], before.layers()[2].bias[0] - 0.1, 1e-15);
}

TEST(Optimizer, NonFiniteGradientIsDivergence) {
  OptimizerState s = make_optimizer(OptimizerKind::kSgdMomentum);
  std::vector<Tensor> p{Tensor({2}, 0.0)};
  EXPECT_EQ(error_kind([&] { optimizer_step(s, p, {Tensor({2}, std::vector<double>{1.0, NAN})}, 0.1); }),
            ErrorKind::kTrainingDivergence);
  EXPECT_EQ(error_kind([&] { optimizer_step(s, p, {Tensor({3}, 0.0)}, 0.1); }), ErrorKind::kShape);
  EXPECT_EQ(error_kind([&] { optimizer_step(s, p, {Tensor({2}, 0.0)}, -1.0); }), ErrorKind::kConfig);
}

TEST(PolyLr, Examples) {
  EXPECT_EQ(poly_lr(0, 100, 0.01), 0.01);
  EXPECT_EQ(poly_lr(100, 100, 0.01), 0.0);
  EXPECT_NEAR(poly_lr(50, 100, 1.0), 0.53589, 1e-5);
  EXPECT_NEAR(poly_lr(50, 100, 1.0), std::pow(0.5, 0.9), 1e-15);
}

TEST(PolyLr, MonotoneNonIncreasing) {
  for (std::int64_t total : {1, 7, 100, 1000}) {
    double prev = poly_lr(0, total, 0.3);
    for (std::int64_t it = 1; it <= total; ++it) {
      const double cur = poly_lr(it, total, 0.3);
      EXPECT_LE(cur, prev);
      prev = cur;
    }
  }
}

TEST(PolyLr, OutOfRangeIsScheduleError) {
  EXPECT_EQ(error_kind([] { poly_lr(11, 10, 0.1); }), ErrorKind::kSchedule);
  EXPECT_EQ(error_kind([] { poly_lr(-1, 10, 0.1); }), ErrorKind::kSchedule);
  EXPECT_EQ(error_kind([] { poly_lr(0, 0, 0.1); }), ErrorKind::kSchedule);
}

TEST(Checkpoint, RoundTripPreservesForward) {
  const auto dir = std::filesystem::temp_directory_path() / "prsfda_test_ckpt";
  std::filesystem::create_directories(dir);
  const Model m = init_model(small_config(), 21);
  save_checkpoint(m, dir / "m.ckpt");
  const Model loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded, m);
  EXPECT_EQ(loaded.config().hidden_sizes, m.config().hidden_sizes);
  std::mt19937_64 rng(21);
  const Tensor img = fixtures::random_image(rng, 5, 5, 2);
  EXPECT_EQ(forward(loaded, img), forward(m, img));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BadMagicAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "prsfda_test_ckpt_bad";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT\n{}\n";
  }
  EXPECT_EQ(error_kind([&] { load_checkpoint(dir / "bad.ckpt"); }), ErrorKind::kFormat);
  try {
    load_checkpoint(dir / "missing.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
    EXPECT_NE(std::string(e.what()).find("missing.ckpt"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
