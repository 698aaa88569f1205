#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "spineseg/dataio.hpp"
#include "spineseg/png_io.hpp"
#include "test_util.hpp"

using namespace spineseg;
namespace fs = std::filesystem;

namespace {

void write_meta(const fs::path& dir, int gap) {
  std::ofstream(dir / "meta.json") << "{\"slice_gap_px\": " << gap << ", \"pixel_per_mm\": 4}";
}

VertebraAnnotation l3_record() {
  VertebraAnnotation a;
  a.slice_index = 0;
  a.label = VertebraLabel::L3;
  a.centroid = {100, 60};
  a.corner_a = {90, 48};
  a.corner_b = {110, 72};
  return a;
}

}  // namespace

TEST(Labels, CodesFollowListingOrder) {
  EXPECT_EQ(class_code(VertebraLabel::L1), 1);
  EXPECT_EQ(class_code(VertebraLabel::L5), 5);
  EXPECT_EQ(class_code(VertebraLabel::T11), 6);
  EXPECT_EQ(class_code(VertebraLabel::T12), 7);
  for (auto l : kAllLabels) {
    EXPECT_EQ(label_from_code(class_code(l)), l);
    EXPECT_EQ(parse_label(label_name(l)), l);
  }
  EXPECT_FALSE(parse_label("L6").has_value());
  EXPECT_THROW(label_from_code(0), Error);
}

TEST(SliceStackIO, ReadsSixteenBitStack) {
  const auto dir = testutil::scratch_dir();
  std::mt19937_64 rng(1);
  SliceStack s;
  s.slice_gap_px = 12;
  for (int i = 0; i < 5; ++i) s.slices.push_back(testutil::random_image(320, 320, rng));
  save_slice_stack(s, dir);
  const auto back = load_slice_stack(dir);
  ASSERT_EQ(back.size(), 5u);
  EXPECT_EQ(back.slice_gap_px, 12);
  EXPECT_EQ(back.slice_shape(), (Shape2D{320, 320}));
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < s.slices[k].size(); ++i) {
      ASSERT_NEAR(back.slices[k].data()[i], s.slices[k].data()[i], 0.5 / 65535.0 + 1e-15);
    }
  }
}

TEST(SliceStackIO, EightBitZeroSlice) {
  const auto dir = testutil::scratch_dir();
  png::write_gray8(dir / "0000.png", 64, 64, std::vector<std::uint8_t>(64 * 64, 0));
  write_meta(dir, 4);
  const auto s = load_slice_stack(dir);
  ASSERT_EQ(s.size(), 1u);
  for (double v : s.slices[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(SliceStackIO, EightBitScaledBy255) {
  const auto dir = testutil::scratch_dir();
  png::write_gray8(dir / "0000.png", 1, 2, {255, 51});
  write_meta(dir, 4);
  const auto s = load_slice_stack(dir);
  EXPECT_EQ(s.slices[0](0, 0), 1.0);
  EXPECT_EQ(s.slices[0](0, 1), 51.0 / 255.0);
}

TEST(SliceStackIO, NumericOrderNotLexical) {
  const auto dir = testutil::scratch_dir();
  png::write_gray8(dir / "2.png", 1, 1, {20});
  png::write_gray8(dir / "10.png", 1, 1, {100});
  png::write_gray8(dir / "1.png", 1, 1, {10});
  write_meta(dir, 4);
  const auto s = load_slice_stack(dir);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.slices[0](0, 0), 10 / 255.0);
  EXPECT_EQ(s.slices[1](0, 0), 20 / 255.0);
  EXPECT_EQ(s.slices[2](0, 0), 100 / 255.0);
}

TEST(SliceStackIO, MixedSizesRejected) {
  const auto dir = testutil::scratch_dir();
  png::write_gray8(dir / "0000.png", 8, 8, std::vector<std::uint8_t>(64, 0));
  png::write_gray8(dir / "0001.png", 8, 9, std::vector<std::uint8_t>(72, 0));
  write_meta(dir, 4);
  EXPECT_THROW(load_slice_stack(dir), DataError);
}

TEST(SliceStackIO, MissingMetadataOrSlices) {
  const auto dir = testutil::scratch_dir();
  png::write_gray8(dir / "0000.png", 8, 8, std::vector<std::uint8_t>(64, 0));
  EXPECT_THROW(load_slice_stack(dir), DataError);
  const auto empty = testutil::scratch_dir("_empty");
  write_meta(empty, 4);
  EXPECT_THROW(load_slice_stack(empty), DataError);
}

TEST(SliceStack, ValidateRejectsBadGap) {
  SliceStack s;
  s.slices.emplace_back(4, 4);
  s.slice_gap_px = 0;
  EXPECT_THROW(s.validate(), DataError);
}

TEST(Annotations, ReadBackSingleRecord) {
  const auto dir = testutil::scratch_dir();
  std::ofstream(dir / "a.json")
      << R"([{"slice": 0, "label": "L3", "centroid": [100, 60], "corner_a": [90, 48], "corner_b": [110, 72]}])";
  const auto set = load_annotations(dir / "a.json", 1);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.annotations()[0], l3_record());
}

TEST(Annotations, DuplicateRejected) {
  const auto doc = nlohmann::json::parse(R"([
    {"slice": 0, "label": "L1", "centroid": [5, 5], "corner_a": [0, 0], "corner_b": [10, 10]},
    {"slice": 0, "label": "L1", "centroid": [6, 6], "corner_a": [1, 1], "corner_b": [11, 11]}])");
  EXPECT_THROW(parse_annotations(doc), DataError);
}

TEST(Annotations, EmptyListIsValid) {
  EXPECT_TRUE(parse_annotations(nlohmann::json::array()).empty());
}

TEST(Annotations, OutOfRangeAndMalformed) {
  const auto rec = [](const char* s) { return nlohmann::json::parse(s); };
  EXPECT_THROW(parse_annotations(rec(R"([{"slice": 3, "label": "L1", "centroid": [5,5], "corner_a": [0,0],
                                          "corner_b": [10,10]}])"),
                                 3),
               DataError);
  EXPECT_THROW(parse_annotations(rec(R"([{"slice": 0, "label": "L9", "centroid": [5,5], "corner_a": [0,0],
                                          "corner_b": [10,10]}])")),
               DataError);
  EXPECT_THROW(parse_annotations(rec(R"([{"slice": 0, "label": "L1", "centroid": [5], "corner_a": [0,0],
                                          "corner_b": [10,10]}])")),
               DataError);
  EXPECT_THROW(parse_annotations(rec(R"([{"slice": 0, "label": "L1", "corner_a": [0,0], "corner_b": [10,10]}])")),
               DataError);
  EXPECT_THROW(parse_annotations(rec(R"({"slice": 0})")), DataError);
}

TEST(Annotations, CentroidMustLieWithinCorners) {
  auto a = l3_record();
  a.centroid = {130, 60};
  EXPECT_THROW(validate_annotation(a), DataError);
  a = l3_record();
  a.corner_b = a.corner_a;
  EXPECT_THROW(validate_annotation(a), DataError);
}

TEST(Annotations, JsonRoundTrip) {
  AnnotationSet set;
  set.add(l3_record());
  auto b = l3_record();
  b.slice_index = 2;
  b.label = VertebraLabel::T12;
  b.centroid = {10.25, 7.125};
  b.corner_a = {3.5, 1};
  b.corner_b = {17, 13.25};
  set.add(b);
  const auto dir = testutil::scratch_dir();
  save_annotations(set, dir / "a.json");
  EXPECT_EQ(load_annotations(dir / "a.json"), set);
}

TEST(Annotations, SetOrderingAndQueries) {
  AnnotationSet set;
  auto a = l3_record();
  a.slice_index = 4;
  set.add(a);
  a.slice_index = 1;
  set.add(a);
  a.label = VertebraLabel::L1;
  set.add(a);
  EXPECT_EQ(set.annotated_slice_indices(), (std::vector<int>{1, 4}));
  EXPECT_EQ(set.on_slice(1).size(), 2u);
  EXPECT_EQ(set.on_slice(1)[0].label, VertebraLabel::L1);
  EXPECT_EQ(set.for_label(VertebraLabel::L3).size(), 2u);
}

TEST(MaskIO, RandomRoundTripIsExact) {
  const auto dir = testutil::scratch_dir();
  std::mt19937_64 rng(5);
  for (int k = 0; k < 10; ++k) {
    const auto m = testutil::random_mask(64, 64, rng);
    write_mask(m, dir / "m.png");
    EXPECT_EQ(read_mask(dir / "m.png"), m);
  }
}

TEST(MaskIO, AllZeroRoundTrip) {
  const auto dir = testutil::scratch_dir();
  LabelMask m(16, 12, 0);
  write_mask(m, dir / "z.png");
  const auto raw = png::read_gray(dir / "z.png");
  for (auto v : raw.pixels) EXPECT_EQ(v, 0);
  EXPECT_EQ(read_mask(dir / "z.png"), m);
}

TEST(MaskIO, OutOfRangeValueRejected) {
  const auto dir = testutil::scratch_dir();
  LabelMask m(4, 4, 0);
  m(1, 1) = 9;
  EXPECT_THROW(write_mask(m, dir / "bad.png"), DataError);
  png::write_gray8(dir / "bad8.png", 1, 1, {9});
  EXPECT_THROW(read_mask(dir / "bad8.png"), DataError);
}

TEST(MaskIO, DirectoryRoundTrip) {
  const auto dir = testutil::scratch_dir();
  std::mt19937_64 rng(6);
  std::vector<LabelMask> ms{testutil::random_mask(8, 8, rng), testutil::random_mask(8, 8, rng)};
  save_mask_dir(ms, dir);
  EXPECT_EQ(load_mask_dir(dir), ms);
}

TEST(Phantom, SameSeedIsBitIdentical) {
  PhantomConfig c;
  c.seed = 7;
  c.noise_sigma = 0.05;
  const auto a = generate_phantom(c);
  const auto b = generate_phantom(c);
  EXPECT_EQ(a.stack, b.stack);
  EXPECT_EQ(a.annotations, b.annotations);
  EXPECT_EQ(a.truth, b.truth);
  c.seed = 8;
  EXPECT_NE(generate_phantom(c).stack, a.stack);
}

TEST(Phantom, SingleVertebraMaskMatchesEllipseMembership) {
  PhantomConfig c;
  c.n_vertebrae = 1;
  c.seed = 3;
  const auto ph = generate_phantom(c);
  for (std::size_t s = 0; s < ph.stack.size(); ++s) {
    const auto a = ph.annotations.on_slice(static_cast<int>(s)).at(0);
    const double semi_r = (a.corner_b.row - a.corner_a.row) / 2, semi_c = (a.corner_b.col - a.corner_a.col) / 2;
    for (std::size_t r = 0; r < ph.truth[s].rows(); ++r) {
      for (std::size_t col = 0; col < ph.truth[s].cols(); ++col) {
        const double dr = (r - a.centroid.row) / semi_r, dc = (col - a.centroid.col) / semi_c;
        const bool inside = dr * dr + dc * dc <= 1.0;
        ASSERT_EQ(ph.truth[s](r, col) != 0, inside);
        ASSERT_EQ(ph.truth[s](r, col) != 0, ph.stack.slices[s](r, col) > 0.0);
      }
    }
  }
}

TEST(Phantom, SevenVertebraeUseEveryClass) {
  PhantomConfig c;
  c.n_vertebrae = 7;
  c.seed = 2;
  const auto ph = generate_phantom(c);
  for (const auto& m : ph.truth) {
    std::set<int> vals(m.values().begin(), m.values().end());
    EXPECT_EQ(vals, (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7}));
  }
}

TEST(Phantom, LabelsAreMostCaudal) {
  EXPECT_EQ(phantom_labels(2), (std::vector<VertebraLabel>{VertebraLabel::L4, VertebraLabel::L5}));
  PhantomConfig c;
  c.n_vertebrae = 3;
  const auto ph = generate_phantom(c);
  const auto anns = ph.annotations.on_slice(0);
  // top to bottom: increasing row
  std::vector<std::pair<double, VertebraLabel>> by_row;
  for (const auto& a : anns) by_row.emplace_back(a.centroid.row, a.label);
  std::sort(by_row.begin(), by_row.end());
  EXPECT_EQ(by_row[0].second, VertebraLabel::L3);
  EXPECT_EQ(by_row[2].second, VertebraLabel::L5);
}

TEST(Phantom, CentroidIsMeanOfMaskPixels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomConfig c;
    c.seed = seed;
    c.n_vertebrae = 1 + static_cast<int>(seed % 7);
    const auto ph = generate_phantom(c);
    for (const auto& a : ph.annotations.annotations()) {
      const auto& m = ph.truth[static_cast<std::size_t>(a.slice_index)];
      double sr = 0, sc = 0, n = 0;
      for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t col = 0; col < m.cols(); ++col)
          if (m(r, col) == class_code(a.label)) sr += r, sc += col, ++n;
      ASSERT_GT(n, 0);
      EXPECT_LE(std::hypot(sr / n - a.centroid.row, sc / n - a.centroid.col), 1.0);
    }
  }
}

TEST(Phantom, NoiseStaysInUnitRange) {
  PhantomConfig c;
  c.noise_sigma = 0.3;
  c.n_slices = 2;
  for (const auto& s : generate_phantom(c).stack.slices) {
    const auto [lo, hi] = min_max(s);
    EXPECT_GE(lo, 0.0);
    EXPECT_LE(hi, 1.0);
  }
}

TEST(Phantom, ImpossibleGeometryRejected) {
  PhantomConfig c;
  c.height = 8;
  c.width = 8;
  c.n_vertebrae = 7;
  EXPECT_THROW(generate_phantom(c), ConfigError);
  PhantomConfig bad;
  bad.n_vertebrae = 8;
  EXPECT_THROW(generate_phantom(bad), ConfigError);
  bad.n_vertebrae = 1;
  bad.noise_sigma = -1;
  EXPECT_THROW(generate_phantom(bad), ConfigError);
}

TEST(Phantom, SaveWritesDatasetLayout) {
  const auto dir = testutil::scratch_dir();
  PhantomConfig c;
  c.n_slices = 3;
  c.height = c.width = 64;
  c.n_vertebrae = 2;
  const auto ph = generate_phantom(c);
  save_phantom(ph, dir);
  const auto stack = load_slice_stack(dir);
  EXPECT_EQ(stack.size(), 3u);
  EXPECT_EQ(stack.slice_gap_px, c.slice_gap_px);
  EXPECT_EQ(load_annotations(dir / "annotations.json", 3), ph.annotations);
  EXPECT_EQ(load_mask_dir(dir / "truth"), ph.truth);
}
