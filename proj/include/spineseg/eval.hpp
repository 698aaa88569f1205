#pragma once

// Volumetric inference, metric reports and report emission.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spineseg/dataio.hpp"
#include "spineseg/error.hpp"
#include "spineseg/labels.hpp"
#include "spineseg/loss.hpp"
#include "spineseg/metrics.hpp"
#include "spineseg/net.hpp"
#include "spineseg/plot.hpp"
#include "spineseg/preprocess.hpp"
#include "spineseg/train.hpp"

namespace spineseg {

/// Preprocesses each slice, runs the model one slice at a time and maps the argmax
/// labels back to the slice's own size with nearest-neighbour sampling.
template <typename T>
std::vector<LabelMask> predict_volume(const Model<T>& model, const SliceStack& stack, const PreprocessConfig& cfg) {
  stack.validate();
  cfg.validate();
  std::vector<LabelMask> out;
  out.reserve(stack.slices.size());
  for (const auto& slice : stack.slices) {
    const Image x = preprocess_slice(slice, cfg);
    const auto logits = model.forward(to_batch<T>(std::vector<const Image*>{&x}));
    out.push_back(resize_nearest(predict(logits).front(), slice.rows(), slice.cols()));
  }
  return out;
}

/// Mean per-pixel cross-entropy of the model on preprocessed slices against their masks.
template <typename T>
double volume_cross_entropy(const Model<T>& model, const SliceStack& stack, const std::vector<LabelMask>& truth,
                            const PreprocessConfig& cfg) {
  if (truth.size() != stack.slices.size()) throw ShapeError("cross-entropy: slice/mask count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require_same_shape(stack.slices[i], truth[i], "cross-entropy");
    const Image x = preprocess_slice(stack.slices[i], cfg);
    const auto logits = model.forward(to_batch<T>(std::vector<const Image*>{&x}));
    sum += semantic_loss(logits, {preprocess_mask(truth[i], cfg)}, model.config().head).value;
  }
  return truth.empty() ? 0.0 : sum / static_cast<double>(truth.size());
}

struct ClassRow {
  int code = 0;
  ClassCounts counts;
  double iou = 0.0;  // NaN when the class is absent from both masks
  double dice = 0.0;
  double accuracy = 0.0;
  friend bool operator==(const ClassRow& a, const ClassRow& b) {
    const auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.code == b.code && a.counts == b.counts && same(a.iou, b.iou) && same(a.dice, b.dice) &&
           same(a.accuracy, b.accuracy);
  }
};

struct SliceRow {
  std::size_t index = 0;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double pixel_accuracy = 0.0;
  friend bool operator==(const SliceRow&, const SliceRow&) = default;
};

struct MetricsReport {
  std::array<ClassRow, kNumVertebraClasses> classes{};  // class codes 1..7
  double mean_iou = 1.0;
  double mean_dice = 1.0;
  double mean_accuracy = 1.0;
  double pixel_accuracy = 1.0;
  DetectionCounts detection;
  std::vector<SliceRow> per_slice;
  std::optional<double> cross_entropy;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline ClassRow class_row(const ConfusionCounts& counts, int code) {
  return {code, counts[code], iou(counts, code), dice(counts, code), class_accuracy(counts, code)};
}

inline void fill_aggregates(MetricsReport& r, const ConfusionCounts& total) {
  for (int c = 1; c < kNumClasses; ++c) r.classes[static_cast<std::size_t>(c - 1)] = class_row(total, c);
  r.mean_iou = mean_iou(total);
  r.mean_dice = mean_dice(total);
  r.mean_accuracy = mean_class_accuracy(total);
  r.pixel_accuracy = pixel_accuracy(total);
}

inline MetricsReport make_report(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("evaluate: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(truth.size()) +
                     " ground-truth masks");
  }
  MetricsReport r;
  ConfusionCounts total;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto cc = confusion(pred[i], truth[i]);
    total += cc;
    r.per_slice.push_back({i, mean_iou(cc), mean_dice(cc), pixel_accuracy(cc)});
  }
  fill_aggregates(r, total);
  r.detection = detect_objects(pred, truth);
  return r;
}

// --- CSV -------------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "class,tp,fp,fn,tn,iou,dice,accuracy";
inline constexpr const char* kSliceHeader = "slice,mean_iou,mean_dice,pixel_accuracy";
inline constexpr const char* kSummaryHeader = "metric,value";

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad number '" + s + "'");
  }
}

inline std::uint64_t parse_count(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad count '" + s + "'");
  }
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const char* header,
                                                      std::size_t fields) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != header) throw DataError(path.string() + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto row = split_csv(line);
    if (row.size() != fields) throw DataError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

}  // namespace detail

/// Writes metrics.csv (per-class rows), per_slice.csv and summary.csv into `dir`.
inline void write_metrics(const MetricsReport& r, const std::filesystem::path& dir) {
  using detail::fmt17;
  std::filesystem::create_directories(dir);
  {
    auto os = detail::open_out(dir / "metrics.csv");
    os << kMetricsHeader << '\n';
    for (const auto& c : r.classes) {
      os << label_name(label_from_code(c.code)) << ',' << c.counts.tp << ',' << c.counts.fp << ',' << c.counts.fn
         << ',' << c.counts.tn << ',' << fmt17(c.iou) << ',' << fmt17(c.dice) << ',' << fmt17(c.accuracy) << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "per_slice.csv");
    os << kSliceHeader << '\n';
    for (const auto& s : r.per_slice) {
      os << s.index << ',' << fmt17(s.mean_iou) << ',' << fmt17(s.mean_dice) << ',' << fmt17(s.pixel_accuracy) << '\n';
    }
  }
  auto os = detail::open_out(dir / "summary.csv");
  os << kSummaryHeader << '\n'
     << "mean_iou," << fmt17(r.mean_iou) << '\n'
     << "mean_dice," << fmt17(r.mean_dice) << '\n'
     << "mean_accuracy," << fmt17(r.mean_accuracy) << '\n'
     << "pixel_accuracy," << fmt17(r.pixel_accuracy) << '\n'
     << "detected," << r.detection.tp << '\n'
     << "missed," << r.detection.fn << '\n'
     << "spurious," << r.detection.fp << '\n';
  if (r.cross_entropy) os << "cross_entropy," << fmt17(*r.cross_entropy) << '\n';
}

/// Inverse of write_metrics. per_slice.csv and summary.csv are optional. Pixel accuracy needs
/// background counts, so it is only restored from summary.csv.
inline MetricsReport read_metrics(const std::filesystem::path& dir) {
  const auto where = (dir / "metrics.csv").string();
  const auto rows = detail::read_csv(dir / "metrics.csv", kMetricsHeader, 8);
  if (rows.size() != static_cast<std::size_t>(kNumVertebraClasses)) {
    throw DataError(where + ": expected one row per vertebra class");
  }
  MetricsReport r;
  ConfusionCounts total;
  for (const auto& row : rows) {
    const auto label = parse_label(row[0]);
    if (!label) throw DataError(where + ": unknown class '" + row[0] + "'");
    const int code = class_code(*label);
    auto& cc = total[code];
    cc.tp = detail::parse_count(row[1], where);
    cc.fp = detail::parse_count(row[2], where);
    cc.fn = detail::parse_count(row[3], where);
    cc.tn = detail::parse_count(row[4], where);
    const ClassRow expect = class_row(total, code);
    const ClassRow stored{code, cc, detail::parse_double(row[5], where), detail::parse_double(row[6], where),
                          detail::parse_double(row[7], where)};
    if (!(stored == expect)) throw DataError(where + ": rates for " + row[0] + " disagree with its counts");
  }
  fill_aggregates(r, total);

  if (std::filesystem::exists(dir / "per_slice.csv")) {
    const auto w = (dir / "per_slice.csv").string();
    for (const auto& row : detail::read_csv(dir / "per_slice.csv", kSliceHeader, 4)) {
      r.per_slice.push_back({static_cast<std::size_t>(detail::parse_count(row[0], w)), detail::parse_double(row[1], w),
                             detail::parse_double(row[2], w), detail::parse_double(row[3], w)});
    }
  }
  if (std::filesystem::exists(dir / "summary.csv")) {
    const auto w = (dir / "summary.csv").string();
    for (const auto& row : detail::read_csv(dir / "summary.csv", kSummaryHeader, 2)) {
      if (row[0] == "detected") r.detection.tp = detail::parse_count(row[1], w);
      else if (row[0] == "missed") r.detection.fn = detail::parse_count(row[1], w);
      else if (row[0] == "spurious") r.detection.fp = detail::parse_count(row[1], w);
      else if (row[0] == "cross_entropy") r.cross_entropy = detail::parse_double(row[1], w);
      else if (row[0] == "pixel_accuracy") r.pixel_accuracy = detail::parse_double(row[1], w);
    }
  }
  return r;
}

// --- report ------------------------------------------------------------------

struct NamedHistory {
  std::string name;
  TrainHistory history;
};

struct ReportArtifacts {
  std::filesystem::path report_md, metrics_csv, loss_png, accuracy_png, iou_png;
  plot::LinePlot loss;
  plot::LinePlot accuracy;
  plot::BarPlot iou;
};

struct PublishedResult {
  std::string method;
  double accuracy_percent;
  double dice;
};

/// Reference line for the comparison table.
inline const PublishedResult kPublishedResult{"Modified Attention U-Net (published)", 99.70, 0.98};

namespace detail {

inline std::string series_name(const std::string& run, const char* what, std::size_t n_runs) {
  return n_runs == 1 || run.empty() ? std::string(what) : run + " " + what;
}

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// Writes report.md, the metrics CSV files, loss.png, accuracy.png and iou.png.
/// `method` names this run in the comparison table.
inline ReportArtifacts emit_report(const std::vector<NamedHistory>& histories, const MetricsReport& metrics,
                                   const std::filesystem::path& out_dir, const std::string& method = "This run") {
  if (histories.empty()) throw DataError("emit_report: no training history");
  for (const auto& h : histories) {
    if (h.history.epochs.empty()) throw DataError("emit_report: empty training history '" + h.name + "'");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw Error("cannot create output directory " + out_dir.string());

  ReportArtifacts a;
  a.report_md = out_dir / "report.md";
  a.metrics_csv = out_dir / "metrics.csv";
  a.loss_png = out_dir / "loss.png";
  a.accuracy_png = out_dir / "accuracy.png";
  a.iou_png = out_dir / "iou.png";

  a.loss = {"Loss", "Epoch", "Loss", {}};
  a.accuracy = {"Accuracy", "Epoch", "Accuracy", {}};
  for (const auto& [name, h] : histories) {
    plot::Series tl{detail::series_name(name, "train", histories.size()), {}};
    plot::Series vl{detail::series_name(name, "val", histories.size()), {}};
    plot::Series ta = tl, va = vl;
    for (const auto& e : h.epochs) {
      tl.y.push_back(e.train_loss);
      vl.y.push_back(e.val_loss);
      ta.y.push_back(e.train_accuracy);
      va.y.push_back(e.val_accuracy);
    }
    a.loss.series.push_back(std::move(tl));
    a.loss.series.push_back(std::move(vl));
    a.accuracy.series.push_back(std::move(ta));
    a.accuracy.series.push_back(std::move(va));
  }
  a.iou.title = "IoU per vertebra";
  a.iou.y_label = "IoU";
  for (const auto& c : metrics.classes) {
    a.iou.labels.emplace_back(label_name(label_from_code(c.code)));
    a.iou.values.push_back(c.iou);
  }
  a.iou.labels.emplace_back("Mean");
  a.iou.values.push_back(metrics.mean_iou);

  plot::save(a.loss, a.loss_png);
  plot::save(a.accuracy, a.accuracy_png);
  plot::save(a.iou, a.iou_png);
  write_metrics(metrics, out_dir);

  using detail::fixed;
  std::ostringstream md;
  md << "# Segmentation report\n\n"
     << "## Comparison\n\n"
     << "| Method | Accuracy | Dice Score |\n|---|---|---|\n"
     << "| " << method << " | " << detail::pct(metrics.mean_accuracy) << " | " << fixed(metrics.mean_dice, 2) << " |\n"
     << "| " << kPublishedResult.method << " | " << fixed(kPublishedResult.accuracy_percent, 2) << "% | "
     << fixed(kPublishedResult.dice, 2) << " |\n\n"
     << "Accuracy is the mean one-vs-rest pixel accuracy over the seven vertebra classes.\n\n"
     << "## Per-class metrics\n\n"
     << "| Class | TP | FP | FN | TN | IoU | Dice | Accuracy |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : metrics.classes) {
    md << "| " << label_name(label_from_code(c.code)) << " | " << c.counts.tp << " | " << c.counts.fp << " | "
       << c.counts.fn << " | " << c.counts.tn << " | " << fixed(c.iou, 4) << " | " << fixed(c.dice, 4) << " | "
       << fixed(c.accuracy, 4) << " |\n";
  }
  md << "\n## Summary\n\n"
     << "- Mean IoU: " << fixed(metrics.mean_iou, 4) << "\n"
     << "- Mean Dice: " << fixed(metrics.mean_dice, 4) << "\n"
     << "- Mean class accuracy: " << fixed(metrics.mean_accuracy, 4) << "\n"
     << "- Pixel accuracy: " << fixed(metrics.pixel_accuracy, 4) << "\n"
     << "- Vertebrae detected (IoU >= 0.5): " << metrics.detection.tp << " of "
     << metrics.detection.tp + metrics.detection.fn << ", spurious: " << metrics.detection.fp << "\n";
  if (metrics.cross_entropy) md << "- Cross-entropy: " << fixed(*metrics.cross_entropy, 4) << "\n";
  md << "\n## Training\n\n";
  for (const auto& [name, h] : histories) {
    const auto& last = h.epochs.back();
    md << "- " << (name.empty() ? std::string("run") : name) << ": " << h.epochs.size()
       << " epochs, final train loss " << fixed(last.train_loss, 4) << ", val loss " << fixed(last.val_loss, 4)
       << ", val mean IoU " << fixed(last.mean_iou, 4) << "\n";
  }
  md << "\n![loss](loss.png)\n![accuracy](accuracy.png)\n![iou](iou.png)\n";
  if (!metrics.per_slice.empty()) {
    md << "\n## Per-slice\n\n| Slice | Mean IoU | Mean Dice | Pixel accuracy |\n|---|---|---|---|\n";
    for (const auto& s : metrics.per_slice) {
      md << "| " << s.index << " | " << fixed(s.mean_iou, 4) << " | " << fixed(s.mean_dice, 4) << " | "
         << fixed(s.pixel_accuracy, 4) << " |\n";
    }
  }
  auto os = detail::open_out(a.report_md);
  os << md.str();
  if (!os) throw Error("failed writing " + a.report_md.string());
  return a;
}

}  // namespace spineseg
