#pragma once

// Run configuration, read from an INI file:
//
//   [preprocess]  denoiser, denoise_strength, target_size, crop = r0,c0,r1,c1
//   [maskgen]     black_threshold, target_gap_px, min_plausible_hw_ratio, max_plausible_hw_ratio
//   [net]         levels, base_channels, gate_mode, head, upsample
//   [train]       epochs, batch_size, learning_rate, alpha, seed, validation_fraction
//   [paths]       data_dir, annotations, masks_dir, output_dir, checkpoint
//
// Every key is optional; unknown sections or keys are rejected.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "spineseg/error.hpp"
#include "spineseg/maskgen.hpp"
#include "spineseg/net.hpp"
#include "spineseg/preprocess.hpp"
#include "spineseg/train.hpp"

namespace spineseg {

struct PathsConfig {
  std::filesystem::path data_dir;
  std::filesystem::path annotations;  // defaults to <data_dir>/annotations.json
  std::filesystem::path masks_dir;
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

struct RunConfig {
  PreprocessConfig preprocess;
  MaskgenConfig maskgen;
  int target_gap_px = 0;  // 0: one millimetre, i.e. the stack's pixel_per_mm
  ModelConfig net;
  TrainConfig train;
  PathsConfig paths;

  void validate() const {
    preprocess.validate();
    net.validate();
    train.validate();
    if (target_gap_px < 0) throw ConfigError("maskgen.target_gap_px must be >= 0");
    if (!(maskgen.black_threshold >= 0.0 && maskgen.black_threshold < 1.0)) {
      throw ConfigError("maskgen.black_threshold must lie in [0,1)");
    }
    if (static_cast<std::size_t>(preprocess.target_size) % (std::size_t{1} << net.levels) != 0) {
      throw ConfigError("preprocess.target_size must be divisible by 2^net.levels");
    }
  }
};

namespace detail {

template <typename V>
V ini_value(const boost::property_tree::ptree& section, const std::string& key, const std::string& where) {
  try {
    return section.get<V>(key);
  } catch (const boost::property_tree::ptree_error&) {
    throw ConfigError("invalid value for " + where + "." + key + ": '" + section.get<std::string>(key, "") + "'");
  }
}

inline CropRect parse_crop(const std::string& text) {
  std::stringstream ss(text);
  std::string part;
  std::vector<long> v;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stol(part, &used));
      while (used < part.size() && std::isspace(static_cast<unsigned char>(part[used]))) ++used;
      if (used != part.size()) throw ConfigError("");
    } catch (const std::exception&) {
      throw ConfigError("preprocess.crop must be four integers r0,c0,r1,c1");
    }
  }
  if (v.size() != 4 || v[0] < 0 || v[1] < 0 || v[2] < v[0] || v[3] < v[1]) {
    throw ConfigError("preprocess.crop must be four integers r0,c0,r1,c1 with r0<=r1, c0<=c1");
  }
  return {static_cast<std::size_t>(v[0]), static_cast<std::size_t>(v[1]), static_cast<std::size_t>(v[2]),
          static_cast<std::size_t>(v[3])};
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  static const std::map<std::string, std::set<std::string>> known{
      {"preprocess", {"denoiser", "denoise_strength", "target_size", "crop"}},
      {"maskgen", {"black_threshold", "target_gap_px", "min_plausible_hw_ratio", "max_plausible_hw_ratio"}},
      {"net", {"levels", "base_channels", "gate_mode", "head", "upsample"}},
      {"train", {"epochs", "batch_size", "learning_rate", "alpha", "seed", "validation_fraction"}},
      {"paths", {"data_dir", "annotations", "masks_dir", "output_dir", "checkpoint"}},
  };
  for (const auto& [name, section] : tree) {
    const auto it = known.find(name);
    if (it == known.end()) throw ConfigError("config: unknown section [" + name + "]");
    if (!section.data().empty()) throw ConfigError("config: key '" + name + "' outside a section");
    for (const auto& [key, _] : section) {
      if (!it->second.count(key)) throw ConfigError("config: unknown key " + name + "." + key);
    }
  }

  RunConfig rc;
  const auto get_section = [&tree](const char* name) { return tree.get_child(name, pt::ptree{}); };
  using detail::ini_value;

  const auto pre = get_section("preprocess");
  if (pre.count("denoiser")) rc.preprocess.denoiser = parse_denoiser(pre.get<std::string>("denoiser"));
  if (pre.count("denoise_strength")) rc.preprocess.denoise_strength = ini_value<double>(pre, "denoise_strength", "preprocess");
  if (pre.count("target_size")) rc.preprocess.target_size = ini_value<int>(pre, "target_size", "preprocess");
  if (pre.count("crop")) rc.preprocess.crop = detail::parse_crop(pre.get<std::string>("crop"));

  const auto mg = get_section("maskgen");
  if (mg.count("black_threshold")) rc.maskgen.black_threshold = ini_value<double>(mg, "black_threshold", "maskgen");
  if (mg.count("target_gap_px")) rc.target_gap_px = ini_value<int>(mg, "target_gap_px", "maskgen");
  if (mg.count("min_plausible_hw_ratio")) {
    rc.maskgen.min_plausible_hw_ratio = ini_value<double>(mg, "min_plausible_hw_ratio", "maskgen");
  }
  if (mg.count("max_plausible_hw_ratio")) {
    rc.maskgen.max_plausible_hw_ratio = ini_value<double>(mg, "max_plausible_hw_ratio", "maskgen");
  }

  const auto net = get_section("net");
  if (net.count("levels")) rc.net.levels = ini_value<int>(net, "levels", "net");
  if (net.count("base_channels")) rc.net.base_channels = ini_value<int>(net, "base_channels", "net");
  if (net.count("gate_mode")) rc.net.gate_mode = parse_gate_mode(net.get<std::string>("gate_mode"));
  if (net.count("head")) rc.net.head = parse_head(net.get<std::string>("head"));
  if (net.count("upsample")) rc.net.upsample = parse_upsample(net.get<std::string>("upsample"));

  const auto tr = get_section("train");
  if (tr.count("epochs")) rc.train.epochs = ini_value<int>(tr, "epochs", "train");
  if (tr.count("batch_size")) rc.train.batch_size = ini_value<int>(tr, "batch_size", "train");
  if (tr.count("learning_rate")) rc.train.learning_rate = ini_value<double>(tr, "learning_rate", "train");
  if (tr.count("alpha")) rc.train.alpha = ini_value<double>(tr, "alpha", "train");
  if (tr.count("seed")) rc.train.seed = ini_value<std::uint64_t>(tr, "seed", "train");
  if (tr.count("validation_fraction")) {
    rc.train.validation_fraction = ini_value<double>(tr, "validation_fraction", "train");
  }

  const auto paths = get_section("paths");
  rc.paths.data_dir = paths.get<std::string>("data_dir", "");
  rc.paths.annotations = paths.get<std::string>("annotations", "");
  rc.paths.masks_dir = paths.get<std::string>("masks_dir", "");
  rc.paths.output_dir = paths.get<std::string>("output_dir", "");
  rc.paths.checkpoint = paths.get<std::string>("checkpoint", "");

  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in);
}

}  // namespace spineseg
