#pragma once

#include "tma/common.hpp"

#include <array>
#include <string_view>

namespace tma {

/// Parametric morphology families shared by the synthetic generator and the
/// bundled schematic symbols.
enum class ShapeFamily {
  kDisk,
  kRing,
  kLooseSpiral,
  kEdgeOnBar,
  kBarredSpiral,
  kCigar,
  kMergingPair,
  kTightSpiral,
  kEdgeOnBulge,
  kIrregularClumps,
  kInBetweenSmooth,
};

inline constexpr int kShapeFamilyCount = 11;

std::string_view family_slug(ShapeFamily family);
ShapeFamily family_from_slug(std::string_view slug);

/// Per-sample pose and photometry for the "photo" rendering.
struct ShapePose {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double dx = 0.0;  // in half-widths, [-1, 1] spans the frame
  double dy = 0.0;
  double brightness = 1.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
  std::uint64_t detail_seed = 0;  // jitters clump positions
};

/// Soft-profile rendering: Gaussian blobs and blurred strokes, RGB, no noise.
Image render_photo(ShapeFamily family, const ShapePose& pose, int size);

/// Canonical clean rendering: filled blobs and anti-aliased strokes, RGB.
Image render_symbol(ShapeFamily family, int size);

}  // namespace tma
