#pragma once

// Binary model checkpoints. All integers little-endian.
//
//   magic      8 bytes  "SPSGCKPT"
//   version    u32      1
//   header     u32 length + UTF-8 JSON {"config": {...}, "seed": u64, "dtype": "float32"|"float64"}
//   count      u32      number of arrays
//   per array: u32 name length, name bytes, u64 element count, elements in the header dtype
//
// Arrays appear in Model::visit order and include batch-norm running statistics.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "spineseg/error.hpp"
#include "spineseg/net.hpp"

namespace spineseg {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'S', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"gate_mode", std::string(to_string(c.gate_mode))},
          {"head", std::string(to_string(c.head))},
          {"upsample", std::string(to_string(c.upsample))}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.levels = j.at("levels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.gate_mode = parse_gate_mode(j.at("gate_mode").get<std::string>());
    c.head = parse_head(j.at("head").get<std::string>());
    c.upsample = parse_upsample(j.at("upsample").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& is, const char* what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError(std::string("checkpoint truncated at ") + what);
  return v;
}

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError(std::string("checkpoint truncated at ") + what);
  }
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(os, kCheckpointVersion);
  nlohmann::ordered_json header{{"config", model_config_to_json(model.config())},
                                {"seed", model.seed()},
                                {"dtype", detail::dtype_name<T>()}};
  const std::string h = header.dump();
  detail::put(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));

  std::uint32_t count = 0;
  model.visit([&count](const nn::Param<T>&) { ++count; });
  detail::put(os, count);
  model.visit([&os](const nn::Param<T>& p) {
    detail::put(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put(os, static_cast<std::uint64_t>(p.size()));
    os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.size() * sizeof(T)));
  });
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

/// Rebuilds the model from the stored config and seed, then overwrites every array.
/// Arrays stored in the other floating-point precision are converted.
template <typename T = float>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  const std::string magic = detail::get_bytes(is, sizeof kCheckpointMagic, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));

  const auto hlen = detail::get<std::uint32_t>(is, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::get_bytes(is, hlen, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  const ModelConfig cfg = model_config_from_json(header.value("config", nlohmann::json::object()));
  const auto seed = header.value("seed", std::uint64_t{0});
  const std::string dtype = header.value("dtype", "");
  if (dtype != "float32" && dtype != "float64") throw DataError("checkpoint dtype '" + dtype + "' unsupported");
  const std::size_t elem = dtype == "float32" ? 4 : 8;

  Model<T> model(cfg, seed);
  const auto count = detail::get<std::uint32_t>(is, "array count");
  std::uint32_t seen = 0;
  model.visit([&](nn::Param<T>& p) {
    if (seen++ >= count) throw DataError("checkpoint has too few arrays");
    const auto nlen = detail::get<std::uint32_t>(is, "array name");
    const std::string name = detail::get_bytes(is, nlen, "array name");
    if (name != p.name) throw DataError("checkpoint array '" + name + "' where '" + p.name + "' was expected");
    const auto n = detail::get<std::uint64_t>(is, "array size");
    if (n != p.size()) throw DataError("checkpoint array '" + name + "' has wrong size");
    const std::string raw = detail::get_bytes(is, n * elem, "array data");
    for (std::size_t i = 0; i < n; ++i) {
      if (elem == 4) {
        float v;
        std::memcpy(&v, raw.data() + i * 4, 4);
        p.value[i] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, raw.data() + i * 8, 8);
        p.value[i] = static_cast<T>(v);
      }
    }
  });
  if (seen != count) throw DataError("checkpoint has extra arrays");
  return model;
}

}  // namespace spineseg
