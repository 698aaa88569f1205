#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "spineseg/maskgen.hpp"
#include "test_util.hpp"

using namespace spineseg;

namespace {

VertebraAnnotation ann(int slice, VertebraLabel label, Point centroid, Point a, Point b) {
  VertebraAnnotation x;
  x.slice_index = slice;
  x.label = label;
  x.centroid = centroid;
  x.corner_a = a;
  x.corner_b = b;
  return x;
}

VertebraAnnotation box_ann(int slice, VertebraLabel label, double r, double c, double half = 2.0) {
  return ann(slice, label, {r, c}, {r - half, c - half}, {r + half, c + half});
}

/// Independent flood fill over a boolean grid restricted to a rectangle.
std::set<std::pair<long, long>> flood_oracle(const Image& img, const BoundingBox& b, long sr, long sc, double thr) {
  std::set<std::pair<long, long>> out;
  std::vector<std::pair<long, long>> stack{{sr, sc}};
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    stack.pop_back();
    if (r < b.row_min || r > b.row_max || c < b.col_min || c > b.col_max) continue;
    if (img(r, c) <= thr || out.count({r, c})) continue;
    out.insert({r, c});
    stack.push_back({r + 1, c});
    stack.push_back({r - 1, c});
    stack.push_back({r, c + 1});
    stack.push_back({r, c - 1});
  }
  return out;
}

}  // namespace

TEST(Interpolate, MidpointBySymmetry) {
  const auto a = box_ann(1, VertebraLabel::L2, 10, 10);
  const auto b = box_ann(15, VertebraLabel::L2, 24, 24);
  const auto m = interpolate_centroids(a, b, 8);
  EXPECT_NEAR(m.centroid.row, 17.0, 1e-9);
  EXPECT_NEAR(m.centroid.col, 17.0, 1e-9);
  EXPECT_EQ(m.slice_index, 8);
  EXPECT_EQ(m.label, VertebraLabel::L2);
}

TEST(Interpolate, AdjacentTargetIsAverage) {
  const auto a = ann(3, VertebraLabel::L4, {10, 20}, {5, 10}, {15, 30});
  const auto b = ann(5, VertebraLabel::L4, {14, 26}, {7, 14}, {21, 38});
  const auto m = interpolate_centroids(a, b, 4);
  EXPECT_EQ(m.centroid, (Point{12, 23}));
  EXPECT_EQ(m.corner_a, (Point{6, 12}));
  EXPECT_EQ(m.corner_b, (Point{18, 34}));
}

TEST(Interpolate, ThreeTenthsEvaluation) {
  const auto a = ann(0, VertebraLabel::L1, {0, 0}, {-1, -1}, {1, 1});
  const auto b = ann(10, VertebraLabel::L1, {30, 12}, {29, 11}, {31, 13});
  const auto m = interpolate_centroids(a, b, 3);
  EXPECT_NEAR(m.centroid.row, 9.0, 1e-12);
  EXPECT_NEAR(m.centroid.col, 3.6, 1e-12);
}

TEST(Interpolate, CompositionIsConsistent) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 200);
  for (int trial = 0; trial < 200; ++trial) {
    const double r0 = u(rng), c0 = u(rng), r1 = u(rng), c1 = u(rng);
    const auto a = ann(0, VertebraLabel::L3, {r0, c0}, {r0 - 3, c0 - 4}, {r0 + 3, c0 + 4});
    const auto b = ann(20, VertebraLabel::L3, {r1, c1}, {r1 - 5, c1 - 2}, {r1 + 5, c1 + 2});
    for (int k = 2; k < 20; ++k) {
      const auto mid = interpolate_centroids(a, b, k);
      for (int j = 1; j < k; ++j) {
        const auto direct = interpolate_centroids(a, b, j);
        const auto composed = interpolate_centroids(a, mid, j);
        EXPECT_LE(distance(direct.centroid, composed.centroid), 1e-9);
        EXPECT_LE(distance(direct.corner_a, composed.corner_a), 1e-9);
        EXPECT_LE(distance(direct.corner_b, composed.corner_b), 1e-9);
      }
    }
  }
}

TEST(Interpolate, Errors) {
  const auto a = box_ann(0, VertebraLabel::L1, 10, 10);
  const auto b = box_ann(4, VertebraLabel::L2, 10, 10);
  EXPECT_THROW(interpolate_centroids(a, b, 2), DataError);
  auto b1 = b;
  b1.label = VertebraLabel::L1;
  EXPECT_THROW(interpolate_centroids(a, b1, 0), DataError);
  EXPECT_THROW(interpolate_centroids(a, b1, 4), DataError);
}

TEST(FillGaps, TwoAnnotatedSlicesGiveFive) {
  AnnotationSet s;
  s.add(box_ann(0, VertebraLabel::L1, 10, 10));
  s.add(box_ann(4, VertebraLabel::L1, 14, 10));
  const auto f = fill_annotation_gaps(s, 5);
  ASSERT_EQ(f.size(), 5u);
  EXPECT_EQ(f.for_label(VertebraLabel::L1)[2].centroid, (Point{12, 10}));
}

TEST(FillGaps, SingleSliceUnchanged) {
  AnnotationSet s;
  s.add(box_ann(2, VertebraLabel::L5, 10, 10));
  EXPECT_EQ(fill_annotation_gaps(s, 5), s);
}

TEST(FillGaps, TwoLabelsCounted) {
  AnnotationSet s;
  s.add(box_ann(0, VertebraLabel::L1, 10, 10));
  s.add(box_ann(4, VertebraLabel::L1, 14, 10));
  s.add(box_ann(2, VertebraLabel::L2, 30, 10));
  EXPECT_EQ(fill_annotation_gaps(s, 5).size(), 6u);
}

TEST(FillGaps, OriginalsUntouchedAndNothingOutsideRange) {
  AnnotationSet s;
  s.add(ann(2, VertebraLabel::T12, {10.1, 20.3}, {5.7, 11.1}, {14.9, 29.2}));
  s.add(ann(6, VertebraLabel::T12, {13.3, 22.9}, {7.3, 14.4}, {19.5, 31.7}));
  s.add(ann(9, VertebraLabel::T12, {11.0, 21.0}, {6.0, 12.0}, {16.0, 30.0}));
  const auto f = fill_annotation_gaps(s, 12);
  for (const auto& a : s.annotations()) EXPECT_EQ(f.on_slice(a.slice_index).at(0), a);
  EXPECT_TRUE(f.on_slice(0).empty());
  EXPECT_TRUE(f.on_slice(1).empty());
  EXPECT_TRUE(f.on_slice(10).empty());
  EXPECT_EQ(f.size(), 8u);
  EXPECT_THROW(fill_annotation_gaps(s, 9), DataError);
}

TEST(Geometry, HandEvaluated) {
  const auto g = derive_geometry(ann(0, VertebraLabel::L3, {100, 60}, {90, 48}, {110, 72}), {256, 256});
  EXPECT_DOUBLE_EQ(g.height_px, 20.0);
  EXPECT_DOUBLE_EQ(g.width_px, 24.0);
  EXPECT_NEAR(g.hw_ratio, 20.0 / 24.0, 1e-15);
  EXPECT_NEAR(g.diameter_px, std::sqrt(400.0 + 576.0), 1e-12);
  EXPECT_EQ(g.bbox, (BoundingBox{90, 48, 110, 72}));
}

TEST(Geometry, ThreeFourFive) {
  EXPECT_DOUBLE_EQ(derive_geometry(ann(0, VertebraLabel::L1, {1, 2}, {0, 0}, {3, 4}), {8, 8}).diameter_px, 5.0);
}

TEST(Geometry, BoxClampedToRaster) {
  const auto g = derive_geometry(ann(0, VertebraLabel::L1, {2, 2}, {-5.5, -3}, {12.2, 40}), {10, 20});
  EXPECT_EQ(g.bbox, (BoundingBox{0, 0, 9, 19}));
}

TEST(Geometry, ZeroWidthRejected) {
  EXPECT_THROW(derive_geometry(ann(0, VertebraLabel::L1, {5, 5}, {0, 5}, {10, 5}), {16, 16}), DataError);
}

TEST(Trace, SingleEllipseExact) {
  Image img(64, 64, 0.0);
  const double r0 = 30.3, c0 = 33.7, a = 9.5, w = 14.2;
  std::set<std::pair<long, long>> expect;
  for (long r = 0; r < 64; ++r)
    for (long c = 0; c < 64; ++c)
      if (std::pow((r - r0) / a, 2) + std::pow((c - c0) / w, 2) <= 1.0) {
        img(r, c) = 0.8;
        expect.insert({r, c});
      }
  const auto an = ann(0, VertebraLabel::L2, {r0, c0}, {r0 - a, c0 - w}, {r0 + a, c0 + w});
  const auto px = trace_vertebra_pixels(img, derive_geometry(an, {64, 64}), an.centroid);
  std::set<std::pair<long, long>> got;
  for (auto p : px) got.insert({p.row, p.col});
  EXPECT_EQ(got, expect);
  EXPECT_TRUE(std::is_sorted(px.begin(), px.end()));
}

TEST(Trace, AllBlackBoxIsEmpty) {
  Image img(16, 16, 0.0);
  img(0, 0) = 1.0;  // bright, but outside the box
  const auto an = box_ann(0, VertebraLabel::L1, 8, 8, 3);
  EXPECT_TRUE(trace_vertebra_pixels(img, derive_geometry(an, {16, 16}), an.centroid).empty());
}

TEST(Trace, TwoBlobsOnlySeededOne) {
  Image img(20, 20, 0.0);
  for (int r = 3; r <= 7; ++r)
    for (int c = 3; c <= 7; ++c) img(r, c) = 0.9;  // blob A
  for (int r = 12; r <= 16; ++r)
    for (int c = 12; c <= 16; ++c) img(r, c) = 0.7;  // blob B
  const auto an = ann(0, VertebraLabel::L1, {5, 5}, {0, 0}, {19, 19});
  const auto geom = derive_geometry(an, {20, 20});
  const auto px = trace_vertebra_pixels(img, geom, an.centroid);
  const auto oracle = flood_oracle(img, geom.bbox, 5, 5, 0.02);
  std::set<std::pair<long, long>> got;
  for (auto p : px) got.insert({p.row, p.col});
  EXPECT_EQ(got, oracle);
  EXPECT_EQ(got.size(), 25u);
}

TEST(Trace, SeedIsNearestBrightPixelWhenCentroidDark) {
  Image img(20, 20, 0.0);
  for (int c = 2; c <= 5; ++c) img(10, c) = 0.5;   // distance >= 5 from centroid
  for (int c = 14; c <= 17; ++c) img(10, c) = 0.5;  // distance 4
  const auto an = ann(0, VertebraLabel::L1, {10, 10}, {0, 0}, {19, 19});
  const auto px = trace_vertebra_pixels(img, derive_geometry(an, {20, 20}), an.centroid);
  ASSERT_EQ(px.size(), 4u);
  EXPECT_EQ(px.front().col, 14);
}

TEST(Trace, DiagonalNeighboursNotConnected) {
  Image img(5, 5, 0.0);
  img(1, 1) = 1.0;
  img(2, 2) = 1.0;
  const auto an = ann(0, VertebraLabel::L1, {1, 1}, {0, 0}, {4, 4});
  EXPECT_EQ(trace_vertebra_pixels(img, derive_geometry(an, {5, 5}), an.centroid).size(), 1u);
}

TEST(Trace, RandomImagesMatchFloodOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto img = testutil::random_image(24, 24, rng);
    for (auto& v : img.values()) v = v < 0.45 ? 0.0 : v;
    const auto an = ann(0, VertebraLabel::L1, {11.3, 12.6}, {3.2, 2.5}, {20.7, 21.1});
    const auto geom = derive_geometry(an, {24, 24});
    const auto px = trace_vertebra_pixels(img, geom, an.centroid);
    if (px.empty()) continue;
    // the seed is the nearest bright pixel; the oracle grows from any member
    const auto oracle = flood_oracle(img, geom.bbox, px.front().row, px.front().col, 0.02);
    std::set<std::pair<long, long>> got;
    for (auto p : px) got.insert({p.row, p.col});
    EXPECT_EQ(got, oracle);
  }
}

TEST(Paint, EmptyAnnotationsGiveZeroMask) {
  std::mt19937_64 rng(1);
  const auto m = paint_mask(testutil::random_image(10, 12, rng), {});
  EXPECT_EQ(m, LabelMask(10, 12, 0));
}

TEST(Paint, SingleVertebraMatchesTrace) {
  Image img(32, 32, 0.0);
  for (int r = 10; r <= 20; ++r)
    for (int c = 8; c <= 24; ++c) img(r, c) = 0.6;
  const auto an = ann(0, VertebraLabel::L2, {15, 16}, {9, 7}, {21, 25});
  const auto res = paint_mask_detailed(img, {an});
  const auto px = trace_vertebra_pixels(img, derive_geometry(an, {32, 32}), an.centroid);
  LabelMask expect(32, 32, 0);
  for (auto p : px) expect(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col)) = 2;
  EXPECT_EQ(res.mask, expect);
  ASSERT_EQ(res.geometry.size(), 1u);
  EXPECT_EQ(res.geometry[0].area_px2, static_cast<double>(px.size()));
}

TEST(Paint, ContestedPixelsGoToNearestCentroid) {
  // one bright slab covered by two overlapping boxes
  Image img(30, 20, 0.0);
  for (int r = 2; r <= 27; ++r)
    for (int c = 5; c <= 14; ++c) img(r, c) = 0.9;
  const auto up = ann(0, VertebraLabel::L1, {9, 9.5}, {2, 5}, {18, 14});
  const auto down = ann(0, VertebraLabel::L2, {20, 9.5}, {11, 5}, {27, 14});
  const auto m = paint_mask(img, {down, up});
  for (long r = 0; r < 30; ++r) {
    for (long c = 0; c < 20; ++c) {
      if (img(r, c) <= 0.02) {
        EXPECT_EQ(m(r, c), 0);
        continue;
      }
      const bool in_up = r <= 18, in_down = r >= 11;
      int expect = 0;
      if (in_up && in_down) {
        const double du = std::hypot(r - 9, c - 9.5), dd = std::hypot(r - 20, c - 9.5);
        expect = dd < du ? 2 : 1;
      } else if (in_up) {
        expect = 1;
      } else if (in_down) {
        expect = 2;
      }
      EXPECT_EQ(m(r, c), expect) << r << "," << c;
    }
  }
}

TEST(Paint, ExactTieGoesToLowerCode) {
  Image img(9, 5, 0.0);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 5; ++c) img(r, c) = 0.5;
  const auto a = ann(0, VertebraLabel::T12, {2, 2}, {0, 0}, {6, 4});
  const auto b = ann(0, VertebraLabel::L4, {6, 2}, {2, 0}, {8, 4});
  const auto m = paint_mask(img, {a, b});
  EXPECT_EQ(m(4, 2), class_code(VertebraLabel::L4));  // equidistant
  EXPECT_EQ(m(3, 2), class_code(VertebraLabel::T12));
  EXPECT_EQ(m(5, 2), class_code(VertebraLabel::L4));
}

TEST(Paint, PermutationInvariantAndDeterministic) {
  PhantomConfig pc;
  pc.n_vertebrae = 7;
  pc.noise_sigma = 0.05;
  pc.seed = 4;
  pc.n_slices = 2;
  const auto ph = generate_phantom(pc);
  auto anns = ph.annotations.on_slice(0);
  const auto ref = paint_mask(ph.stack.slices[0], anns);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 5; ++k) {
    std::shuffle(anns.begin(), anns.end(), rng);
    EXPECT_EQ(paint_mask(ph.stack.slices[0], anns), ref);
  }
}

TEST(Paint, PaintedPixelsInsideBoxAndAboveThreshold) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomConfig pc;
    pc.noise_sigma = 0.08;
    pc.seed = seed;
    pc.n_slices = 3;
    const auto ph = generate_phantom(pc);
    for (std::size_t s = 0; s < ph.stack.size(); ++s) {
      const auto anns = ph.annotations.on_slice(static_cast<int>(s));
      const auto res = paint_mask_detailed(ph.stack.slices[s], anns);
      for (std::size_t r = 0; r < res.mask.rows(); ++r) {
        for (std::size_t c = 0; c < res.mask.cols(); ++c) {
          const int v = res.mask(r, c);
          if (!v) continue;
          EXPECT_GT(ph.stack.slices[s](r, c), 0.02);
          const auto it = std::find_if(res.geometry.begin(), res.geometry.end(),
                                       [v](const auto& g) { return class_code(g.label) == v; });
          ASSERT_NE(it, res.geometry.end());
          EXPECT_TRUE(it->bbox.contains(static_cast<long>(r), static_cast<long>(c)));
        }
      }
    }
  }
}

TEST(Paint, NoiseFreePhantomReproducesTruth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomConfig pc;
    pc.seed = seed;
    pc.n_vertebrae = 1 + static_cast<int>(seed);
    const auto ph = generate_phantom(pc);
    for (std::size_t s = 0; s < ph.stack.size(); ++s) {
      EXPECT_EQ(paint_mask(ph.stack.slices[s], ph.annotations.on_slice(static_cast<int>(s))), ph.truth[s]);
    }
  }
}

TEST(Paint, ImplausibleRatioWarns) {
  Image img(40, 40, 0.5);
  const auto tall = ann(0, VertebraLabel::L1, {20, 20}, {2, 19}, {38, 21});
  const auto res = paint_mask_detailed(img, {tall});
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("L1"), std::string::npos);
  EXPECT_TRUE(paint_mask_detailed(img, {box_ann(0, VertebraLabel::L1, 20, 20)}).warnings.empty());
}

TEST(Paint, DuplicateLabelRejected) {
  Image img(10, 10, 0.5);
  EXPECT_THROW(paint_mask(img, {box_ann(0, VertebraLabel::L1, 4, 4), box_ann(0, VertebraLabel::L1, 5, 5)}),
               DataError);
}

TEST(BuildMasks, ResamplesAndFillsEveryGeneratedSlice) {
  PhantomConfig pc;
  pc.n_slices = 4;
  pc.height = pc.width = 96;
  pc.n_vertebrae = 3;
  pc.slice_gap_px = 8;
  pc.seed = 5;
  const auto ph = generate_phantom(pc);
  const auto set = build_masks(ph.stack, ph.annotations, 2);
  ASSERT_EQ(set.slices.size(), 13u);
  EXPECT_EQ(set.slices.slice_gap_px, 2);
  ASSERT_EQ(set.masks.size(), 13u);
  EXPECT_EQ(set.annotations.size(), 13u * 3u);
  for (std::size_t k = 0; k < ph.stack.size(); ++k) {
    EXPECT_EQ(set.slices.slices[4 * k], ph.stack.slices[k]);
    EXPECT_EQ(set.masks[4 * k], ph.truth[k]);
  }
  for (const auto& m : set.masks) {
    std::set<int> vals(m.values().begin(), m.values().end());
    EXPECT_EQ(vals, (std::set<int>{0, 3, 4, 5}));
  }
}

TEST(BuildMasks, SingleSliceStack) {
  PhantomConfig pc;
  pc.n_slices = 1;
  pc.height = pc.width = 64;
  pc.n_vertebrae = 2;
  const auto ph = generate_phantom(pc);
  const auto set = build_masks(ph.stack, ph.annotations, 1);
  ASSERT_EQ(set.masks.size(), 1u);
  EXPECT_EQ(set.masks[0], ph.truth[0]);
}

TEST(BuildMasks, TraceFilterLeavesStoredSlices) {
  PhantomConfig pc;
  pc.n_slices = 2;
  pc.height = pc.width = 64;
  pc.n_vertebrae = 2;
  pc.slice_gap_px = 4;
  const auto ph = generate_phantom(pc);
  int calls = 0;
  const auto set = build_masks(ph.stack, ph.annotations, 4, {}, [&calls](const Image& img) {
    ++calls;
    return Image(img.rows(), img.cols(), 0.0);
  });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(set.slices, ph.stack);
  for (const auto& m : set.masks) EXPECT_EQ(m, LabelMask(64, 64, 0));
}
