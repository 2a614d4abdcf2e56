#include <gtest/gtest.h>

#include <random>

#include "aofd/error.hpp"
#include "aofd/segmentation.hpp"
#include "oracles.hpp"

using namespace aofd;

TEST(Gate, MatchesCellEnumerationOracle) {
  Rng rng(1);
  std::uniform_real_distribution<double> pos(-20.0, 140.0), size(4.0, 70.0);
  const MapGeometry geo{16, 16, 8};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<BoundingBox> boxes;
    for (int i = 0; i < trial % 4; ++i) {
      const double x = pos(rng), y = pos(rng);
      boxes.push_back({x, y, x + size(rng), y + size(rng)});
    }
    EXPECT_EQ(build_gate(boxes, 1.3, geo), oracle::gate(boxes, 1.3, 16, 16, 8));
  }
}

TEST(Gate, HandCase) {
  // 16 x 16 box at (16, 16) enlarged 1.5x covers [12, 36]; centers 12 to 36
  // are inside, both ends included.
  const std::vector<BoundingBox> boxes{{16, 16, 32, 32}};
  const BinaryGrid g = build_gate(boxes, 1.5, {6, 6, 8});
  int count = 0;
  for (auto v : g) count += v;
  EXPECT_EQ(count, 16);
  EXPECT_EQ(g[1 * 6 + 1], 1);
  EXPECT_EQ(g[3 * 6 + 3], 1);
  EXPECT_EQ(g[4 * 6 + 4], 1);
  EXPECT_EQ(g[5 * 6 + 5], 0);
  EXPECT_EQ(g[0], 0);
  EXPECT_THROW(build_gate(boxes, -1.0, {6, 6, 8}), InvalidArgument);
}

TEST(Gate, GrowsWithFactor) {
  const std::vector<BoundingBox> boxes{{20, 30, 50, 70}};
  const MapGeometry geo{12, 12, 8};
  const BinaryGrid small = build_gate(boxes, 1.0, geo), big = build_gate(boxes, 1.3, geo);
  for (std::size_t i = 0; i < small.size(); ++i) EXPECT_LE(small[i], big[i]);
}

TEST(SegmentationHead, OutputShapeAndZeroInit) {
  SegmentationHead head(8, 4);
  head.zero();
  const Tensor logits = seg_forward(head, Tensor(8, 5, 6, 1.0));
  EXPECT_EQ(logits.channels(), 2);
  EXPECT_EQ(logits.height(), 5);
  EXPECT_EQ(logits.width(), 6);
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(SegmentOcclusions, NothingOutsideTheGate) {
  SegmentationHead head(8, 4);
  Rng rng(2);
  head.init(rng);
  // Force every cell to "occluder" through the final bias.
  head.layers[2].bias.value = {-100.0, 100.0};
  const Tensor features(8, 10, 10, 0.5);
  const std::vector<BoundingBox> boxes{{8, 8, 24, 24}};
  const BinaryGrid labels = segment_occlusions(head, features, boxes, 1.3, 8);
  const BinaryGrid gate = build_gate(boxes, 1.3, {10, 10, 8});
  EXPECT_EQ(labels, gate);
  EXPECT_EQ(segment_occlusions(head, features, {}, 1.3, 8), BinaryGrid(100, 0));
}

TEST(SegmentationHead, GradientsMatchFiniteDifferences) {
  SegmentationHead head(4, 4);
  Rng rng(3);
  head.init(rng);
  Tensor x(4, 4, 5);
  std::normal_distribution<double> n;
  for (double& v : x.values()) v = n(rng);
  Tensor w(2, 4, 5);
  for (double& v : w.values()) v = n(rng);
  auto reduce = [&](const Tensor& in) {
    const Tensor out = seg_forward(head, in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * w.data()[i];
    return s;
  };
  SegmentationCache cache;
  seg_forward(head, x, &cache);
  head.for_each_param([](Param& p) { p.zero_grad(); });
  const Tensor gx = seg_backward(head, cache, w);
  std::vector<double> xv(x.values().begin(), x.values().end());
  auto f = [&](const std::vector<double>& v) {
    Tensor t = x;
    std::copy(v.begin(), v.end(), t.data());
    return reduce(t);
  };
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double numeric = oracle::central_difference(f, xv, i, 1e-6);
    if (std::abs(numeric) < 1e-7) continue;
    EXPECT_LE(oracle::relative_error(gx.data()[i], numeric), 1e-4);
  }
}

TEST(DownsampleMask, MajorityPerCell) {
  std::vector<std::uint8_t> mask(16 * 16, 0);
  // Fill 40 of 64 pixels of cell (0, 0) and 20 of cell (0, 1).
  for (int i = 0; i < 40; ++i) mask[(i / 8) * 16 + i % 8] = 255;
  for (int i = 0; i < 20; ++i) mask[(i / 8) * 16 + 8 + i % 8] = 255;
  const BinaryGrid g = downsample_mask(mask, 16, 16, {2, 2, 8});
  EXPECT_EQ(g, (BinaryGrid{1, 0, 0, 0}));
  EXPECT_THROW(downsample_mask(mask, 15, 16, {2, 2, 8}), InvalidArgument);
}
