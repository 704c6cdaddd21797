#pragma once

#include <array>
#include <string>
#include <string_view>

#include "eggscan/errors.hpp"

namespace eggscan {

// The five output classes, in the fixed order used everywhere
// (probability vectors, confusion matrices, serialized files).
enum class EggClass : int { AL = 0, HD = 1, FB = 2, Tn = 3, BG = 4 };

inline constexpr int kNumClasses = 5;
inline constexpr int kEggClassCount = 4;  // AL..Tn, excludes BG

inline constexpr std::array<EggClass, 4> kEggClasses = {
    EggClass::AL, EggClass::HD, EggClass::FB, EggClass::Tn};

inline constexpr std::array<std::string_view, 5> kClassNames = {
    "AL", "HD", "FB", "Tn", "BG"};

inline std::string_view class_name(EggClass c) {
  return kClassNames[static_cast<int>(c)];
}

inline bool is_egg_class(EggClass c) { return c != EggClass::BG; }

inline EggClass parse_class(std::string_view s) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == s) return static_cast<EggClass>(i);
  }
  throw invalid_input("unknown class label: " + std::string(s));
}

// Per-patch training label. EXCLUDED marks patches that partially overlap an
// annotation (or contain annotations of two classes); they are dropped from
// both training and patch-level evaluation.
enum class PatchLabel : int {
  AL = 0,
  HD = 1,
  FB = 2,
  Tn = 3,
  BG = 4,
  Excluded = 5
};

inline PatchLabel to_patch_label(EggClass c) {
  return static_cast<PatchLabel>(static_cast<int>(c));
}

inline EggClass to_egg_class(PatchLabel l) {
  if (l == PatchLabel::Excluded)
    throw invalid_input("EXCLUDED patch label has no class");
  return static_cast<EggClass>(static_cast<int>(l));
}

}  // namespace eggscan
