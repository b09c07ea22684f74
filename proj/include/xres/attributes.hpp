#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace xres {

inline constexpr int kNumAttributes = 12;

// Canonical column order used by every CSV, report, and head.
inline constexpr std::array<std::string_view, kNumAttributes> kAttributeNames = {
    "DoubleChin", "Chubby",   "EyeGlasses", "Male",   "PaleSkin", "Moustache",
    "MouthSlightlyOpen", "Young", "Smiling", "Goatee", "Bald",     "BlondHair",
};

enum Attribute : int {
  kDoubleChin = 0,
  kChubby,
  kEyeGlasses,
  kMale,
  kPaleSkin,
  kMoustache,
  kMouthSlightlyOpen,
  kYoung,
  kSmiling,
  kGoatee,
  kBald,
  kBlondHair,
};

struct AttributeVector {
  std::array<std::uint8_t, kNumAttributes> bits{};

  bool operator[](int t) const { return bits[t] != 0; }
  void set(int t, bool value) { bits[t] = value ? 1 : 0; }
  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

}  // namespace xres
