// spineseg: phantom | make-masks | train | predict | evaluate
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spineseg/spineseg.hpp"

namespace fs = std::filesystem;
using namespace spineseg;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

RunConfig load_config(const Common& c) { return c.config.empty() ? RunConfig{} : load_run_config(c.config); }

fs::path pick(const std::string& flag, const fs::path& from_config, const char* what) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  throw ConfigError(std::string("no ") + what + " given (flag or [paths] entry)");
}

std::vector<Sample> load_training_set(const fs::path& data_dir, const fs::path& masks_dir, const PreprocessConfig& pre) {
  const auto stack = load_slice_stack(data_dir);
  const auto masks = load_mask_dir(masks_dir);
  if (masks.size() != stack.size()) {
    throw DataError(std::to_string(stack.size()) + " slices in " + data_dir.string() + " but " +
                    std::to_string(masks.size()) + " masks in " + masks_dir.string());
  }
  std::vector<Sample> out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    require_same_shape(stack.slices[i], masks[i], "slice/mask " + std::to_string(i));
    out.push_back({preprocess_slice(stack.slices[i], pre), preprocess_mask(masks[i], pre)});
  }
  return out;
}

int run_phantom(const Common& c, PhantomConfig pc) {
  if (c.seed) pc.seed = *c.seed;
  const auto ph = generate_phantom(pc);
  save_phantom(ph, c.out);
  std::printf("wrote %zu slices to %s\n", ph.stack.size(), c.out.c_str());
  return 0;
}

int run_make_masks(const Common& c, const std::string& data, const std::string& ann, std::optional<int> gap) {
  const RunConfig rc = load_config(c);
  const fs::path data_dir = pick(data, rc.paths.data_dir, "data directory");
  const fs::path out = pick(c.out, rc.paths.masks_dir, "output directory");
  fs::path ann_path = !ann.empty() ? fs::path(ann) : rc.paths.annotations;
  if (ann_path.empty()) ann_path = data_dir / "annotations.json";

  const auto stack = load_slice_stack(data_dir);
  const auto annotations = load_annotations(ann_path, stack.size());
  int target = gap.value_or(rc.target_gap_px);
  if (target == 0) target = stack.pixel_per_mm;
  if (target < 1 || stack.slice_gap_px % target != 0) {
    throw ConfigError("target gap " + std::to_string(target) + " px must divide the slice gap of " +
                      std::to_string(stack.slice_gap_px) + " px");
  }
  std::function<Image(const Image&)> filter;
  if (rc.preprocess.denoiser != Denoiser::none) {
    filter = [&rc](const Image& img) { return denoise(img, rc.preprocess); };
  }
  const auto set = build_masks(stack, annotations, target, rc.maskgen, filter);
  save_slice_stack(set.slices, out);
  save_mask_dir(set.masks, out / "masks");
  save_annotations(set.annotations, out / "annotations.json");
  for (const auto& w : set.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("wrote %zu slices and masks at %d px spacing to %s\n", set.slices.size(), target, out.c_str());
  return 0;
}

int run_train(const Common& c, const std::string& data, const std::string& masks, std::optional<int> epochs,
              std::optional<double> alpha) {
  RunConfig rc = load_config(c);
  if (c.seed) rc.train.seed = *c.seed;
  if (epochs) rc.train.epochs = *epochs;
  if (alpha) rc.train.alpha = *alpha;
  rc.validate();
  const fs::path data_dir = pick(data, rc.paths.data_dir, "data directory");
  fs::path masks_dir = !masks.empty() ? fs::path(masks) : rc.paths.masks_dir;
  if (masks_dir.empty()) masks_dir = data_dir / "masks";
  const fs::path out = pick(c.out, rc.paths.output_dir, "output directory");
  fs::create_directories(out);

  const auto samples = load_training_set(data_dir, masks_dir, rc.preprocess);
  auto model = build_model<float>(rc.net, rc.train.seed);
  std::printf("training %zu-parameter model on %zu slices\n", model.parameter_count(), samples.size());
  auto result = train(std::move(model), samples, rc.train, [&rc](const EpochRecord& e) {
    std::printf("epoch %d/%d  train_loss %.5f  val_loss %.5f  train_acc %.4f  val_acc %.4f  mean_iou %.4f\n", e.epoch,
                rc.train.epochs, e.train_loss, e.val_loss, e.train_accuracy, e.val_accuracy, e.mean_iou);
    std::fflush(stdout);
  });
  const fs::path ckpt = rc.paths.checkpoint.empty() ? out / "model.ckpt" : rc.paths.checkpoint;
  save_checkpoint(result.model, ckpt);
  write_history_csv(result.history, out / "history.csv");
  std::printf("best epoch %d; wrote %s and %s\n", result.best_epoch, ckpt.c_str(), (out / "history.csv").c_str());
  return 0;
}

int run_predict(const Common& c, const std::string& data, const std::string& checkpoint) {
  const RunConfig rc = load_config(c);
  const fs::path data_dir = pick(data, rc.paths.data_dir, "data directory");
  const fs::path ckpt = pick(checkpoint, rc.paths.checkpoint, "checkpoint");
  const fs::path out = pick(c.out, rc.paths.output_dir, "output directory");
  const auto model = load_checkpoint<float>(ckpt);
  const auto stack = load_slice_stack(data_dir);
  const auto masks = predict_volume(model, stack, rc.preprocess);
  save_mask_dir(masks, out);
  std::printf("wrote %zu masks to %s\n", masks.size(), out.c_str());
  return 0;
}

int run_evaluate(const Common& c, const std::string& pred, const std::string& truth, const std::string& history,
                 const std::string& checkpoint, const std::string& data) {
  const RunConfig rc = load_config(c);
  const fs::path out = pick(c.out, rc.paths.output_dir, "output directory");
  const auto p = load_mask_dir(pred);
  const auto t = load_mask_dir(truth);
  auto report = make_report(p, t);
  if (!checkpoint.empty() && !data.empty()) {
    const auto model = load_checkpoint<float>(checkpoint);
    report.cross_entropy = volume_cross_entropy(model, load_slice_stack(data), t, rc.preprocess);
  }
  const auto hist = read_history_csv(history);
  emit_report({{"", hist}}, report, out);
  std::printf("mean IoU %.4f  mean Dice %.4f  mean accuracy %.4f; report in %s\n", report.mean_iou, report.mean_dice,
              report.mean_accuracy, out.c_str());
  return 0;
}

void add_common(CLI::App* cmd, Common& c, bool with_config, bool out_required) {
  if (with_config) cmd->add_option("--config", c.config, "Run configuration (INI)")->check(CLI::ExistingFile);
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lumbar vertebra segmentation pipeline"};
  app.require_subcommand(1);
  Common common;

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic slice stack with annotations and ground truth");
  PhantomConfig pc;
  add_common(phantom, common, false, true);
  phantom->add_option("--seed", common.seed, "Random seed");
  phantom->add_option("--slices", pc.n_slices, "Number of slices")->capture_default_str();
  phantom->add_option("--vertebrae", pc.n_vertebrae, "Number of vertebrae (1-7)")->capture_default_str();
  phantom->add_option("--height", pc.height, "Slice height in pixels")->capture_default_str();
  phantom->add_option("--width", pc.width, "Slice width in pixels")->capture_default_str();
  phantom->add_option("--noise", pc.noise_sigma, "Gaussian noise standard deviation")->capture_default_str();
  phantom->add_option("--gap-px", pc.slice_gap_px, "Pixels between consecutive slices")->capture_default_str();

  auto* make_masks = app.add_subcommand("make-masks", "Resample a stack, fill annotation gaps and paint masks");
  std::string mm_data, mm_ann;
  std::optional<int> mm_gap;
  add_common(make_masks, common, true, false);
  make_masks->add_option("--data", mm_data, "Slice directory");
  make_masks->add_option("--annotations", mm_ann, "Annotation file (default <data>/annotations.json)");
  make_masks->add_option("--gap-px", mm_gap, "Output slice spacing in pixels (default: 1 mm)");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint and history");
  std::string tr_data, tr_masks;
  std::optional<int> tr_epochs;
  std::optional<double> tr_alpha;
  add_common(train_cmd, common, true, false);
  train_cmd->add_option("--seed", common.seed, "Random seed (initialization, split and order)");
  train_cmd->add_option("--data", tr_data, "Slice directory");
  train_cmd->add_option("--masks", tr_masks, "Mask directory (default <data>/masks)");
  train_cmd->add_option("--epochs", tr_epochs, "Number of epochs");
  train_cmd->add_option("--alpha", tr_alpha, "Semantic loss weight in [0,1]");

  auto* predict_cmd = app.add_subcommand("predict", "Segment every slice of a stack");
  std::string pr_data, pr_ckpt;
  add_common(predict_cmd, common, true, false);
  predict_cmd->add_option("--data", pr_data, "Slice directory");
  predict_cmd->add_option("--checkpoint", pr_ckpt, "Model checkpoint");

  auto* eval_cmd = app.add_subcommand("evaluate", "Compare predicted and ground-truth masks and write a report");
  std::string ev_pred, ev_truth, ev_hist, ev_ckpt, ev_data;
  add_common(eval_cmd, common, true, false);
  eval_cmd->add_option("--pred", ev_pred, "Predicted mask directory")->required();
  eval_cmd->add_option("--truth", ev_truth, "Ground-truth mask directory")->required();
  eval_cmd->add_option("--history", ev_hist, "Training history CSV")->required();
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint, for cross-entropy (needs --data)");
  eval_cmd->add_option("--data", ev_data, "Slice directory, for cross-entropy (needs --checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*phantom) return run_phantom(common, pc);
    if (*make_masks) return run_make_masks(common, mm_data, mm_ann, mm_gap);
    if (*train_cmd) return run_train(common, tr_data, tr_masks, tr_epochs, tr_alpha);
    if (*predict_cmd) return run_predict(common, pr_data, pr_ckpt);
    if (*eval_cmd) return run_evaluate(common, ev_pred, ev_truth, ev_hist, ev_ckpt, ev_data);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "numeric divergence: %s\n", e.what());
    return 4;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
