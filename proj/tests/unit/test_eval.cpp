#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "spineseg/eval.hpp"
#include "test_util.hpp"

using namespace spineseg;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.levels = 3;
  c.base_channels = 4;
  return c;
}

SliceStack random_stack(std::size_t n, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SliceStack s;
  for (std::size_t i = 0; i < n; ++i) s.slices.push_back(testutil::random_image(rows, cols, rng));
  return s;
}

std::vector<LabelMask> random_masks(std::size_t n, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabelMask> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testutil::random_mask(rows, cols, rng));
  return out;
}

TrainHistory one_epoch() {
  TrainHistory h;
  h.epochs.push_back({1, 0.9, 1.1, 0.8, 0.7, 0.4});
  h.step_mean_iou = {0.3, 0.4};
  return h;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(PredictVolume, KeepsSliceShapeAndCount) {
  const auto model = build_model<float>(small(), 1);
  PreprocessConfig pc;
  pc.target_size = 64;
  const auto stack = random_stack(3, 320, 288, 2);
  const auto pred = predict_volume(model, stack, pc);
  ASSERT_EQ(pred.size(), 3u);
  for (const auto& m : pred) {
    EXPECT_EQ(m.rows(), 320u);
    EXPECT_EQ(m.cols(), 288u);
    for (auto v : m.values()) EXPECT_LT(v, kNumClasses);
  }
}

TEST(PredictVolume, BackgroundBiasedHeadGivesEmptyMasks) {
  auto model = build_model<float>(small(), 1);
  model.head().bias().value[0] = 1e4f;
  PreprocessConfig pc;
  pc.target_size = 64;
  for (const auto& m : predict_volume(model, random_stack(2, 100, 70, 3), pc)) {
    for (auto v : m.values()) ASSERT_EQ(v, 0);
  }
}

TEST(PredictVolume, MatchesDirectForwardAtTargetSize) {
  const auto model = build_model<float>(small(), 4);
  PreprocessConfig pc;
  pc.target_size = 64;
  const auto stack = random_stack(1, 64, 64, 5);
  const auto x = preprocess_slice(stack.slices[0], pc);
  const auto direct = predict(model.forward(to_batch<float>(std::vector<Image>{x}))).front();
  EXPECT_EQ(predict_volume(model, stack, pc).front(), direct);
}

TEST(VolumeCrossEntropy, UniformLogitsGiveLogClassCount) {
  auto model = build_model<float>(small(), 1);
  auto& head = model.head();
  std::fill(head.weight().value.begin(), head.weight().value.end(), 0.0f);
  std::fill(head.bias().value.begin(), head.bias().value.end(), 0.0f);
  PreprocessConfig pc;
  pc.target_size = 32;
  const auto stack = random_stack(2, 40, 40, 6);
  EXPECT_NEAR(volume_cross_entropy(model, stack, random_masks(2, 40, 40, 7), pc), std::log(8.0), 1e-5);
  EXPECT_THROW(volume_cross_entropy(model, stack, random_masks(1, 40, 40, 7), pc), ShapeError);
}

TEST(MakeReport, AggregatesAndPerSlice) {
  const auto truth = random_masks(3, 20, 20, 8);
  auto pred = truth;
  pred[1] = random_masks(1, 20, 20, 9).front();
  const auto r = make_report(pred, truth);
  ASSERT_EQ(r.per_slice.size(), 3u);
  EXPECT_EQ(r.per_slice[0].mean_iou, 1.0);
  EXPECT_EQ(r.per_slice[2].pixel_accuracy, 1.0);
  EXPECT_LT(r.per_slice[1].mean_iou, 1.0);
  const auto total = confusion(pred, truth);
  EXPECT_EQ(r.mean_iou, mean_iou(total));
  EXPECT_EQ(r.mean_dice, mean_dice(total));
  for (int c = 1; c < kNumClasses; ++c) {
    const auto& row = r.classes[static_cast<std::size_t>(c - 1)];
    EXPECT_EQ(row.code, c);
    EXPECT_EQ(row.counts, total[c]);
    for (double v : {row.iou, row.dice, row.accuracy}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(make_report(pred, {truth[0]}), ShapeError);
}

TEST(MetricsCsv, RoundTrip) {
  const auto dir = testutil::scratch_dir();
  auto r = make_report(random_masks(4, 16, 16, 10), random_masks(4, 16, 16, 11));
  r.cross_entropy = 0.123456789;
  write_metrics(r, dir);
  std::ifstream is(dir / "metrics.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "class,tp,fp,fn,tn,iou,dice,accuracy");
  EXPECT_EQ(read_metrics(dir), r);
}

TEST(MetricsCsv, AbsentClassRoundTripsAsNan) {
  const auto dir = testutil::scratch_dir();
  LabelMask m(4, 4, 0);
  m(0, 0) = 2;
  const auto r = make_report({m}, {m});
  EXPECT_TRUE(std::isnan(r.classes[0].iou));
  write_metrics(r, dir);
  EXPECT_EQ(read_metrics(dir), r);
}

TEST(MetricsCsv, InconsistentRatesRejected) {
  const auto dir = testutil::scratch_dir();
  write_metrics(make_report(random_masks(1, 8, 8, 12), random_masks(1, 8, 8, 13)), dir);
  auto text = slurp(dir / "metrics.csv");
  const auto line = text.find("\nL1,");
  ASSERT_NE(line, std::string::npos);
  text.replace(line + 4, 1, "9");
  std::ofstream(dir / "metrics.csv") << text;
  EXPECT_THROW(read_metrics(dir), DataError);
  std::ofstream(dir / "metrics.csv") << "wrong,header\n";
  EXPECT_THROW(read_metrics(dir), DataError);
}

TEST(EmitReport, WritesArtifactsForOneEpoch) {
  const auto dir = testutil::scratch_dir() / "out";
  const auto metrics = make_report(random_masks(2, 16, 16, 14), random_masks(2, 16, 16, 15));
  const auto a = emit_report({{"", one_epoch()}}, metrics, dir);
  for (const auto& p : {a.report_md, a.metrics_csv, a.loss_png, a.accuracy_png, a.iou_png}) {
    EXPECT_TRUE(std::filesystem::exists(p)) << p;
    EXPECT_GT(std::filesystem::file_size(p), 0u) << p;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "per_slice.csv"));
  ASSERT_EQ(a.loss.series.size(), 2u);
  for (const auto& s : a.loss.series) EXPECT_EQ(s.y.size(), 1u);
  for (const auto& s : a.accuracy.series) EXPECT_EQ(s.y.size(), 1u);
  EXPECT_EQ(a.loss.series[0].y[0], 0.9);
  EXPECT_EQ(a.accuracy.series[1].y[0], 0.7);
  ASSERT_EQ(a.iou.values.size(), 8u);
  EXPECT_EQ(a.iou.labels.front(), "L1");
  EXPECT_EQ(a.iou.values.back(), metrics.mean_iou);
}

TEST(EmitReport, ComparisonTable) {
  const auto dir = testutil::scratch_dir();
  const auto truth = random_masks(1, 16, 16, 16);
  const auto metrics = make_report(truth, truth);
  const auto md = slurp(emit_report({{"", one_epoch()}}, metrics, dir, "Mine").report_md);
  EXPECT_NE(md.find("| Method | Accuracy | Dice Score |"), std::string::npos);
  EXPECT_NE(md.find("| Mine | 100.00% | 1.00 |"), std::string::npos);
  EXPECT_NE(md.find("| Modified Attention U-Net (published) | 99.70% | 0.98 |"), std::string::npos);
}

TEST(EmitReport, SeveralRunsGetNamedSeries) {
  const auto dir = testutil::scratch_dir();
  const auto metrics = make_report(random_masks(1, 8, 8, 17), random_masks(1, 8, 8, 18));
  const auto a = emit_report({{"attention", one_epoch()}, {"plain", one_epoch()}}, metrics, dir);
  ASSERT_EQ(a.loss.series.size(), 4u);
  EXPECT_EQ(a.loss.series[2].name, "plain train");
}

TEST(EmitReport, Errors) {
  const auto dir = testutil::scratch_dir();
  const auto metrics = make_report(random_masks(1, 8, 8, 19), random_masks(1, 8, 8, 20));
  EXPECT_THROW(emit_report({}, metrics, dir), DataError);
  EXPECT_THROW(emit_report({{"x", TrainHistory{}}}, metrics, dir), DataError);
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(emit_report({{"", one_epoch()}}, metrics, dir / "file" / "sub"), Error);
}
