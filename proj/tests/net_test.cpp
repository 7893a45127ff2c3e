#include <gtest/gtest.h>

#include <sstream>

#include "matteforge/net.hpp"
#include "matteforge/optim.hpp"
#include "support.hpp"

namespace {

using namespace matteforge;

ModelConfig small_config() {
  ModelConfig c;
  c.base_channels = 4;
  c.d_channels = 4;
  c.f_channels = 4;
  c.d_layers = 6;
  c.input_height = 32;
  c.input_width = 32;
  return c;
}

Tensor<double> random_image(std::uint64_t seed, std::size_t n, std::size_t h, std::size_t w) {
  std::mt19937_64 rng(seed);
  return mft::random_tensor(rng, Shape{n, 3, h, w}, 0.0, 1.0);
}

Tensor<double>& param(Model<double>& m, const std::string& name) {
  static std::vector<NamedTensor<double>> keep;
  keep = m.parameters();
  for (auto& p : keep)
    if (p.name == name) return p.tensor;
  throw std::runtime_error("no parameter " + name);
}

// Closed-form parameter count for the layer layout described in the README.
std::size_t analytic_count(const ModelConfig& c) {
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; };
  const std::size_t b = c.base_channels, dc = c.d_channels, fc = c.f_channels;
  std::size_t stages = 0;
  for (int f = c.s_downsample_factor; f > 1; f /= 2) ++stages;
  std::size_t n = 0, cin = 3, cout = 0;
  for (std::size_t i = 0; i < stages; ++i) {
    cout = i + 1 == stages ? 4 * b : (i == 0 ? b : 2 * b);
    n += conv(cin, cout, 3);
    cin = cout;
  }
  const std::size_t sc = cout;
  if (c.use_se_block) n += conv(sc, sc / c.se_reduction, 1) + conv(sc / c.se_reduction, sc, 1);
  n += conv(sc, 1, 1);
  n += conv(3, dc, 3) + conv(dc + b + sc, dc, 3) + (c.d_layers - 3) * conv(dc, dc, 3) + conv(dc, 1, 3);
  n += conv(sc + dc, fc, 1) + conv(fc, fc, 3) + conv(fc, 1, 1);
  return n;
}

TEST(Build, SameSeedGivesIdenticalParameters) {
  auto a = Model<double>::build(ModelConfig{}, 0);
  auto b = Model<double>::build(ModelConfig{}, 0);
  auto c = Model<double>::build(ModelConfig{}, 1);
  EXPECT_EQ(a.flat_parameters(), b.flat_parameters());
  EXPECT_NE(a.flat_parameters(), c.flat_parameters());
}

TEST(Build, ParameterCountMatchesClosedForm) {
  auto m = Model<float>::build(ModelConfig{}, 0);
  EXPECT_EQ(m.parameter_count(), analytic_count(ModelConfig{}));
  EXPECT_EQ(m.parameter_count(), 71579U);
  EXPECT_LE(m.parameter_count(), 100000U);
  auto s = Model<float>::build(small_config(), 0);
  EXPECT_EQ(s.parameter_count(), analytic_count(small_config()));
}

TEST(Build, ConfigBoundsAreEnforced) {
  ModelConfig c;
  c.d_channels = 65;
  EXPECT_THROW(Model<float>::build(c, 0), ConfigError);
  c = ModelConfig{};
  c.s_downsample_factor = 12;
  EXPECT_THROW(Model<float>::build(c, 0), ConfigError);
  c = ModelConfig{};
  c.se_reduction = 3;
  EXPECT_THROW(Model<float>::build(c, 0), ConfigError);
}

TEST(Forward, ShapeContractAt64) {
  auto m = Model<float>::build(ModelConfig{}, 0);
  Graph<float> g(false);
  auto out = m.forward(g, random_image(1, 1, 64, 64).cast<float>());
  EXPECT_EQ(out.s_p.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(out.d_p.shape(), (Shape{1, 1, 64, 64}));
  EXPECT_EQ(out.alpha_p.shape(), (Shape{1, 1, 64, 64}));
  for (const auto* t : {&out.s_p, &out.d_p, &out.alpha_p}) {
    for (float v : t->values()) {
      EXPECT_GT(v, 0.0F);
      EXPECT_LT(v, 1.0F);
    }
  }
}

TEST(Forward, ShapeContractForEveryMultipleOf16UpTo128) {
  auto m = Model<float>::build(small_config(), 0);
  for (std::size_t h = 16; h <= 128; h += 16) {
    const std::size_t w = 144 - h;
    Graph<float> g(false);
    auto out = m.forward(g, random_image(h, 1, h, w).cast<float>(), Mode::eval);
    EXPECT_EQ(out.s_p.shape(), (Shape{1, 1, h / 16, w / 16}));
    EXPECT_EQ(out.alpha_p.shape(), (Shape{1, 1, h, w}));
    EXPECT_EQ(out.d_p.shape(), (Shape{1, 1, h, w}));
  }
}

TEST(Forward, IndivisibleInputThrows) {
  auto m = Model<float>::build(small_config(), 0);
  Graph<float> g(false);
  EXPECT_THROW(m.forward(g, Tensor<float>(Shape{1, 3, 40, 32})), ShapeError);
  EXPECT_THROW(m.forward(g, Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
}

TEST(Forward, IsPure) {
  auto m = Model<double>::build(small_config(), 3);
  const auto x = random_image(2, 2, 32, 32);
  Graph<double> g1(false), g2(false);
  EXPECT_EQ(m.forward(g1, x).alpha_p.values(), m.forward(g2, x).alpha_p.values());
}

TEST(Forward, BranchDependency) {
  auto m = Model<double>::build(small_config(), 4);
  const auto x = random_image(5, 1, 32, 32);
  Graph<double> g(false);
  const auto base = m.forward(g, x);

  auto d_only = m.clone();
  for (double& v : param(d_only, "d.conv3.weight").values()) v = -v;
  const auto after_d = d_only.forward(g, x);
  EXPECT_EQ(after_d.s_p.values(), base.s_p.values());
  EXPECT_NE(after_d.d_p.values(), base.d_p.values());

  auto s_only = m.clone();
  for (double& v : param(s_only, "s.enc3.weight").values()) v *= 1.5;
  const auto after_s = s_only.forward(g, x);
  EXPECT_NE(after_s.s_p.values(), base.s_p.values());
  EXPECT_NE(after_s.d_p.values(), base.d_p.values());
}

TEST(SeBlock, SaturatedGatesPassOrBlock) {
  std::mt19937_64 rng(9);
  auto block = make_se_block<double>(rng, 8, 4);
  auto x = mft::random_tensor(rng, Shape{2, 8, 4, 4});
  Graph<double> g(false);
  std::fill(block.expand.bias.values().begin(), block.expand.bias.values().end(), 50.0);
  auto open = se_block(g, x, block);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(open.values()[i], x.values()[i], 1e-5);
  std::fill(block.expand.bias.values().begin(), block.expand.bias.values().end(), -50.0);
  auto shut = se_block(g, x, block);
  for (double v : shut.values()) EXPECT_NEAR(v, 0.0, 1e-5);
}

TEST(SeBlock, IndivisibleChannelsThrow) {
  std::mt19937_64 rng(0);
  EXPECT_THROW(make_se_block<double>(rng, 6, 4), ConfigError);
}

TEST(SeBlock, ZeroingExpandBiasChangesWeightingNotShapes) {
  auto m = Model<double>::build(small_config(), 6);
  for (double& v : param(m, "s.se.expand.bias").values()) v = 1.0;
  const auto x = random_image(7, 1, 32, 32);
  Graph<double> g(false);
  const auto before = m.forward(g, x);
  for (double& v : param(m, "s.se.expand.bias").values()) v = 0.0;
  const auto after = m.forward(g, x);
  EXPECT_EQ(after.s_p.shape(), before.s_p.shape());
  EXPECT_EQ(after.alpha_p.shape(), before.alpha_p.shape());
  EXPECT_NE(after.s_p.values(), before.s_p.values());
}

TEST(CloneFrozen, CopiesOutputsAndIgnoresLaterUpdates) {
  auto m = Model<double>::build(small_config(), 8);
  auto frozen = m.clone_frozen();
  const auto x = random_image(8, 1, 32, 32);
  Graph<double> g0(false);
  const auto ref = frozen.forward(g0, x, Mode::eval);
  EXPECT_EQ(m.forward(g0, x, Mode::eval).alpha_p.values(), ref.alpha_p.values());

  Graph<double> g;
  auto out = m.forward(g, x);
  g.backward(l1_mean(g, out.alpha_p, Tensor<double>(out.alpha_p.shape(), 0.0)));
  auto params = m.parameters();
  Sgd<double>().step(params, 0.1);
  Graph<double> g1(false);
  EXPECT_NE(m.forward(g1, x, Mode::eval).alpha_p.values(), ref.alpha_p.values());
  EXPECT_EQ(frozen.forward(g1, x, Mode::eval).alpha_p.values(), ref.alpha_p.values());
}

TEST(CloneFrozen, NoGradientsFlowIntoFrozenCopy) {
  auto m = Model<double>::build(small_config(), 9);
  auto frozen = m.clone_frozen();
  for (const auto& p : frozen.parameters()) EXPECT_FALSE(p.tensor.requires_grad());
  Graph<double> g;
  const auto out = frozen.forward(g, random_image(9, 1, 32, 32));
  EXPECT_EQ(g.size(), 0U);
  EXPECT_THROW(g.backward(l1_mean(g, out.alpha_p, out.alpha_p.clone())), GraphError);
  for (const auto& p : frozen.parameters()) EXPECT_FALSE(p.tensor.has_grad());
}

TEST(Checkpoint, RoundTripIsExact) {
  ModelConfig c = small_config();
  c.use_norm = true;
  auto m = Model<double>::build(c, 10);
  Graph<double> g;
  (void)m.forward(g, random_image(10, 2, 32, 32));  // moves the running statistics
  std::stringstream buf;
  save_checkpoint(m, buf);
  auto back = load_checkpoint<double>(buf);
  EXPECT_EQ(back.config().use_norm, true);
  EXPECT_EQ(back.flat_parameters(), m.flat_parameters());
  auto mb = m.buffers();
  auto bb = back.buffers();
  ASSERT_EQ(mb.size(), bb.size());
  for (std::size_t i = 0; i < mb.size(); ++i) EXPECT_EQ(mb[i].tensor.values(), bb[i].tensor.values());
}

TEST(Checkpoint, BadMagicIsRejected) {
  std::stringstream buf("not a checkpoint at all");
  EXPECT_THROW(load_checkpoint<float>(buf), std::runtime_error);
}

TEST(Cast, FloatCopyTracksDoubleModel) {
  auto m = Model<double>::build(small_config(), 11);
  auto f = m.cast<float>();
  const auto x = random_image(11, 1, 32, 32);
  Graph<double> gd(false);
  Graph<float> gf(false);
  const auto a = m.forward(gd, x, Mode::eval).alpha_p.values();
  const auto b = f.forward(gf, x.cast<float>(), Mode::eval).alpha_p.values();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(Norm, FrozenNormLeavesRunningStatisticsAlone) {
  ModelConfig c = small_config();
  c.use_norm = true;
  auto m = Model<double>::build(c, 12);
  m.set_norm_frozen(true);
  std::vector<std::vector<double>> before;
  for (const auto& b : m.buffers()) before.push_back(b.tensor.values());
  Graph<double> g;
  (void)m.forward(g, random_image(12, 2, 32, 32), Mode::train);
  auto after = m.buffers();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].tensor.values(), before[i]);
}

}  // namespace
