#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "spineseg/error.hpp"

namespace spineseg {

/// Vertebra identities. The enumerator value is the class code painted into masks.
enum class VertebraLabel : std::uint8_t {
  L1 = 1,
  L2 = 2,
  L3 = 3,
  L4 = 4,
  L5 = 5,
  T11 = 6,
  T12 = 7,
};

inline constexpr int kNumVertebraClasses = 7;
/// Vertebrae plus background.
inline constexpr int kNumClasses = kNumVertebraClasses + 1;

inline constexpr std::array<VertebraLabel, 7> kAllLabels = {
    VertebraLabel::L1, VertebraLabel::L2, VertebraLabel::L3, VertebraLabel::L4,
    VertebraLabel::L5, VertebraLabel::T11, VertebraLabel::T12};

/// Cranial-to-caudal order, as the vertebrae appear top to bottom in a sagittal slice.
inline constexpr std::array<VertebraLabel, 7> kAnatomicalOrder = {
    VertebraLabel::T11, VertebraLabel::T12, VertebraLabel::L1, VertebraLabel::L2,
    VertebraLabel::L3,  VertebraLabel::L4,  VertebraLabel::L5};

constexpr std::uint8_t class_code(VertebraLabel label) noexcept {
  return static_cast<std::uint8_t>(label);
}

inline VertebraLabel label_from_code(int code) {
  if (code < 1 || code > kNumVertebraClasses) {
    throw DataError("class code out of range 1..7: " + std::to_string(code));
  }
  return static_cast<VertebraLabel>(code);
}

inline std::string_view label_name(VertebraLabel label) noexcept {
  switch (label) {
    case VertebraLabel::L1: return "L1";
    case VertebraLabel::L2: return "L2";
    case VertebraLabel::L3: return "L3";
    case VertebraLabel::L4: return "L4";
    case VertebraLabel::L5: return "L5";
    case VertebraLabel::T11: return "T11";
    case VertebraLabel::T12: return "T12";
  }
  return "?";
}

inline std::optional<VertebraLabel> parse_label(std::string_view name) noexcept {
  for (auto label : kAllLabels) {
    if (label_name(label) == name) return label;
  }
  return std::nullopt;
}

}  // namespace spineseg
