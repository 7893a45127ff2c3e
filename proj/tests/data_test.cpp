#include <gtest/gtest.h>

#include "matteforge/data.hpp"
#include "support.hpp"

namespace {

using namespace matteforge;

double recomposition_error(const SyntheticSample& s) {
  const Image again = composite(s.alpha_g, s.fg, s.bg);
  double worst = 0;
  for (std::size_t i = 0; i < again.data.size(); ++i) worst = std::max(worst, std::fabs(again.data[i] - s.image.data[i]));
  return worst;
}

TEST(Foreground, FractionalBandOnEverySeed) {
  double min_fraction = 1.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Foreground f = gen_foreground(seed, 64);
    std::size_t zero = 0, one = 0, frac = 0;
    for (double a : f.alpha_g.values) {
      ASSERT_GE(a, 0.0);
      ASSERT_LE(a, 1.0);
      if (a == 0.0) ++zero;
      else if (a == 1.0) ++one;
      else ++frac;
    }
    EXPECT_GT(zero, 0U);
    EXPECT_GT(one, 0U) << "seed " << seed << " has no opaque interior";
    min_fraction = std::min(min_fraction, static_cast<double>(frac) / static_cast<double>(f.alpha_g.size()));
  }
  EXPECT_GE(min_fraction, 0.05);
}

TEST(Foreground, DeterministicPerSeed) {
  const Foreground a = gen_foreground(17, 32);
  const Foreground b = gen_foreground(17, 32);
  const Foreground c = gen_foreground(18, 32);
  EXPECT_EQ(a.alpha_g, b.alpha_g);
  EXPECT_EQ(a.fg, b.fg);
  EXPECT_NE(a.alpha_g, c.alpha_g);
}

TEST(Foreground, InteriorIsExactlyOpaque) {
  // The centre of the head/torso union sits well inside the body.
  const Foreground f = gen_foreground(3, 64);
  std::size_t opaque = 0;
  for (double a : f.alpha_g.values) opaque += a == 1.0 ? 1 : 0;
  EXPECT_GT(static_cast<double>(opaque) / static_cast<double>(f.alpha_g.size()), 0.1);
}

TEST(Augment, DefaultCountsGiveFifteenSamples) {
  const Foreground f = gen_foreground(1, 32);
  std::vector<Image> pool;
  for (int i = 0; i < 4; ++i) pool.push_back(gen_background(100 + i, 32, 32));
  EXPECT_EQ(kDefaultCrops, 5);
  EXPECT_EQ(kDefaultComposites, 10);
  const auto out = augment(f.fg, f.alpha_g, pool, 7);
  EXPECT_EQ(out.size(), 15U);
  for (const auto& s : out) EXPECT_LE(recomposition_error(s), 1e-6);
}

TEST(Augment, ZeroCountsGiveSingleIdentitySample) {
  const Foreground f = gen_foreground(2, 32);
  const std::vector<Image> pool{gen_background(5, 32, 32)};
  const auto out = augment(f.fg, f.alpha_g, pool, 0, 0, 1);
  ASSERT_EQ(out.size(), 1U);
  EXPECT_EQ(out[0].alpha_g, f.alpha_g);
  EXPECT_EQ(out[0].fg, f.fg);
  EXPECT_EQ(out[0].bg, pool[0]);
}

TEST(Augment, EmptyPoolWithCompositesThrows) {
  const Foreground f = gen_foreground(2, 32);
  EXPECT_THROW(augment(f.fg, f.alpha_g, {}, 0, 3, 1), ConfigError);
  EXPECT_THROW(augment(f.fg, f.alpha_g, {}, -1, 0, 1), ConfigError);
}

TEST(Dataset, EverySampleRecomposesExactly) {
  DatasetConfig cfg;
  cfg.count = 40;
  cfg.size = 32;
  cfg.background_pool = 8;
  const auto data = make_dataset(cfg);
  ASSERT_EQ(data.size(), 40U);
  for (const auto& s : data) {
    EXPECT_LE(recomposition_error(s), 1e-6);
    EXPECT_EQ(s.domain_tag, DomainTag::source);
  }
  EXPECT_EQ(make_dataset(cfg)[17].image, data[17].image);
}

TEST(DomainShift, ZeroStrengthIsIdentity) {
  DatasetConfig cfg;
  cfg.count = 2;
  cfg.size = 32;
  const auto s = make_dataset(cfg)[1];
  ShiftConfig none;
  none.strength = 0.0;
  const auto out = domain_shift(s, 3, none);
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.domain_tag, DomainTag::shifted);
}

TEST(DomainShift, LabelPreservingWithMeasurableOffset) {
  DatasetConfig cfg;
  cfg.count = 30;
  cfg.size = 32;
  cfg.background_pool = 8;
  const auto data = make_dataset(cfg);
  double src = 0, dst = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto out = domain_shift(data[i], i);
    EXPECT_EQ(out.alpha_g, data[i].alpha_g);
    EXPECT_LE(recomposition_error(out), 1e-6);
    for (double v : data[i].image.data) src += v;
    for (double v : out.image.data) dst += v;
  }
  const double n = static_cast<double>(data.size() * data[0].image.data.size());
  EXPECT_GT(std::fabs(dst / n - src / n), 0.02);
}

}  // namespace
