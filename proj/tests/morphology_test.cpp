#include <gtest/gtest.h>

#include "matteforge/data.hpp"
#include "matteforge/morphology.hpp"
#include "support.hpp"

namespace {

using namespace matteforge;

TEST(Morphology, MatchesBruteForceOnRandomImages) {
  std::mt19937_64 rng(100);
  std::uniform_int_distribution<int> dim(1, 64);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = dim(rng), w = dim(rng);
    const Mask m = trial % 2 == 0 ? mft::random_binary(rng, h, w, 0.3) : mft::random_shapes(rng, h, w);
    for (int k : {3, 5}) {
      for (int it : {1, 2}) {
        EXPECT_EQ(dilate(m, k, it), mft::brute_dilate(m, k, it)) << h << "x" << w;
        EXPECT_EQ(erode(m, k, it), mft::brute_erode(m, k, it)) << h << "x" << w;
      }
    }
  }
}

TEST(Morphology, FullMaskIsFixedPoint) {
  const Mask full(9, 7, 1.0);
  EXPECT_EQ(erode(full, 3, 3), full);
  EXPECT_EQ(dilate(full, 3, 3), full);
}

TEST(Morphology, KernelValidation) {
  EXPECT_THROW(dilate(Mask(4, 4), 2), ConfigError);
  EXPECT_THROW(erode(Mask(4, 4), 0), ConfigError);
}

TEST(Trimap, MatchesBruteForceOnRandomDepth) {
  std::mt19937_64 rng(200);
  std::uniform_int_distribution<int> dim(4, 64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = dim(rng), w = dim(rng);
    DepthMap d(h, w);
    const Mask near = mft::random_shapes(rng, h, w);
    for (std::size_t i = 0; i < d.size(); ++i) d.values[i] = near.values[i] > 0 ? 0.2 + 0.2 * u(rng) : 0.6 + 0.4 * u(rng);
    const double thr = 0.3 + 0.4 * u(rng);
    EXPECT_EQ(depth_to_trimap(d, thr, 3, 2), mft::brute_trimap(d, thr, 3, 2, 1.0));
  }
}

TEST(Trimap, UniformNearDepthIsForegroundEverywhere) {
  // Pixels outside the image are not in the window, so the border is not eroded.
  const Trimap t = depth_to_trimap(DepthMap(16, 16, 0.1), 0.5, 3, 2);
  EXPECT_EQ(t, mft::brute_trimap(DepthMap(16, 16, 0.1), 0.5, 3, 2, 1.0));
  for (double v : t.values) EXPECT_EQ(v, 1.0);
}

TEST(Trimap, ThresholdAboveMaxReversedDepthGivesBackground) {
  DepthMap d(12, 12, 0.4);
  d.at(3, 3) = 0.1;  // max reversed depth 0.9
  for (double v : depth_to_trimap(d, 0.95, 3, 2).values) EXPECT_EQ(v, 0.0);
}

TEST(Trimap, CloserObjectInFrontOfSubjectIsForeground) {
  // Subject at depth 0.4, background at 0.9, an unrelated object at 0.1.
  DepthMap d(32, 32, 0.9);
  for (int y = 8; y < 32; ++y)
    for (int x = 10; x < 22; ++x) d.at(y, x) = 0.4;
  for (int y = 2; y < 8; ++y)
    for (int x = 24; x < 30; ++x) d.at(y, x) = 0.1;
  const Trimap t = depth_to_trimap(d, 0.5, 3, 1);
  EXPECT_EQ(t.at(20, 16), 1.0);  // subject
  EXPECT_EQ(t.at(5, 27), 1.0);   // the wrongly included object
  EXPECT_EQ(t.at(20, 2), 0.0);
}

TEST(Trimap, RejectsBadArguments) {
  EXPECT_THROW(depth_to_trimap(DepthMap(4, 4), 0.5, 4, 1), ConfigError);
  EXPECT_THROW(depth_to_trimap(DepthMap(4, 4), 0.5, 3, 0), ConfigError);
}

}  // namespace
