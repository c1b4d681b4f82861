#include "tma/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tma {
namespace {

using Point = std::array<double, 2>;

struct Blob {
  double cx, cy, sx, sy;
  double weight = 1.0;
};

struct Stroke {
  std::vector<Point> points;
  double weight = 1.0;
};

struct Geometry {
  std::vector<Blob> blobs;
  std::vector<Stroke> strokes;
};

constexpr double kPi = std::numbers::pi;

Stroke circle(double radius, double weight) {
  Stroke s{.weight = weight};
  constexpr int kSegments = 64;
  for (int i = 0; i <= kSegments; ++i) {
    const double t = 2.0 * kPi * i / kSegments;
    s.points.push_back({radius * std::cos(t), radius * std::sin(t)});
  }
  return s;
}

// Logarithmic spiral from r0 to r1 sweeping `sweep` radians.
Stroke spiral_arm(double r0, double r1, double sweep, double phase, double weight) {
  Stroke s{.weight = weight};
  constexpr int kSegments = 48;
  const double growth = std::log(r1 / r0) / sweep;
  for (int i = 0; i <= kSegments; ++i) {
    const double t = sweep * i / kSegments;
    const double r = r0 * std::exp(growth * t);
    s.points.push_back({r * std::cos(t + phase), r * std::sin(t + phase)});
  }
  return s;
}

Geometry geometry(ShapeFamily family, std::uint64_t detail_seed) {
  Geometry g;
  switch (family) {
    case ShapeFamily::kDisk:
      g.blobs.push_back({0, 0, 0.32, 0.32});
      break;
    case ShapeFamily::kRing:
      g.strokes.push_back(circle(0.55, 1.0));
      break;
    case ShapeFamily::kLooseSpiral:
      g.blobs.push_back({0, 0, 0.1, 0.1});
      g.strokes.push_back(spiral_arm(0.12, 0.8, 1.2 * kPi, 0.0, 0.8));
      g.strokes.push_back(spiral_arm(0.12, 0.8, 1.2 * kPi, kPi, 0.8));
      break;
    case ShapeFamily::kTightSpiral:
      g.blobs.push_back({0, 0, 0.12, 0.12});
      g.strokes.push_back(spiral_arm(0.14, 0.78, 2.2 * kPi, 0.0, 0.8));
      g.strokes.push_back(spiral_arm(0.14, 0.78, 2.2 * kPi, kPi, 0.8));
      break;
    case ShapeFamily::kEdgeOnBar:
      g.blobs.push_back({0, 0, 0.75, 0.06});
      break;
    case ShapeFamily::kBarredSpiral:
      g.blobs.push_back({0, 0, 0.32, 0.07});
      g.blobs.push_back({0, 0, 0.1, 0.1});
      g.strokes.push_back(spiral_arm(0.32, 0.75, kPi, 0.0, 0.8));
      g.strokes.push_back(spiral_arm(0.32, 0.75, kPi, kPi, 0.8));
      break;
    case ShapeFamily::kCigar:
      g.blobs.push_back({0, 0, 0.55, 0.2});
      break;
    case ShapeFamily::kMergingPair:
      g.blobs.push_back({-0.35, -0.05, 0.2, 0.2});
      g.blobs.push_back({0.38, 0.12, 0.15, 0.15, 0.8});
      break;
    case ShapeFamily::kEdgeOnBulge:
      g.blobs.push_back({0, 0, 0.75, 0.05});
      g.blobs.push_back({0, 0, 0.2, 0.16});
      break;
    case ShapeFamily::kIrregularClumps: {
      g.blobs = {{-0.3, -0.2, 0.14, 0.14, 1.0},
                 {0.28, -0.28, 0.12, 0.12, 0.8},
                 {0.12, 0.3, 0.16, 0.16, 0.9},
                 {-0.25, 0.35, 0.1, 0.1, 0.7}};
      if (detail_seed != 0) {
        Rng rng(detail_seed);
        for (auto& b : g.blobs) {
          b.cx += rng.uniform(-0.08, 0.08);
          b.cy += rng.uniform(-0.08, 0.08);
        }
      }
      break;
    }
    case ShapeFamily::kInBetweenSmooth:
      g.blobs.push_back({0, 0, 0.36, 0.26});
      break;
  }
  return g;
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double vx = b[0] - a[0];
  const double vy = b[1] - a[1];
  const double wx = p[0] - a[0];
  const double wy = p[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  const double t = len2 > 0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
  const double dx = wx - t * vx;
  const double dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

double stroke_distance(const Point& p, const Stroke& s) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    best = std::min(best, segment_distance(p, s.points[i - 1], s.points[i]));
  }
  return best;
}

Point unit_coords(int x, int y, int size) {
  const double half = size / 2.0;
  return {(x + 0.5 - half) / half, (y + 0.5 - half) / half};
}

constexpr std::array<std::string_view, kShapeFamilyCount> kSlugs = {
    "disk",         "ring",          "loose_spiral", "edge_on_bar",
    "barred_spiral", "cigar",        "merging_pair", "tight_spiral",
    "edge_on_bulge", "irregular_clumps", "in_between_smooth"};

}  // namespace

std::string_view family_slug(ShapeFamily family) {
  return kSlugs[static_cast<std::size_t>(family)];
}

ShapeFamily family_from_slug(std::string_view slug) {
  for (std::size_t i = 0; i < kSlugs.size(); ++i) {
    if (kSlugs[i] == slug) return static_cast<ShapeFamily>(i);
  }
  throw UsageError("unknown shape family '" + std::string(slug) + "'");
}

Image render_photo(ShapeFamily family, const ShapePose& pose, int size) {
  constexpr double kStrokeSigma = 0.06;
  const Geometry g = geometry(family, pose.detail_seed);
  const double c = std::cos(-pose.rotation);
  const double s = std::sin(-pose.rotation);
  Image out(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point u = unit_coords(x, y, size);
      const double tx = (u[0] - pose.dx) / pose.scale;
      const double ty = (u[1] - pose.dy) / pose.scale;
      const Point p{c * tx - s * ty, s * tx + c * ty};
      double value = 0.0;
      for (const auto& b : g.blobs) {
        const double ex = (p[0] - b.cx) / b.sx;
        const double ey = (p[1] - b.cy) / b.sy;
        value += b.weight * std::exp(-0.5 * (ex * ex + ey * ey));
      }
      for (const auto& st : g.strokes) {
        const double d = stroke_distance(p, st) / kStrokeSigma;
        value += st.weight * std::exp(-0.5 * d * d);
      }
      value = std::min(value, 1.0) * pose.brightness;
      for (int ch = 0; ch < 3; ++ch) {
        out.at(y, x, ch) = static_cast<float>(value * pose.tint[static_cast<std::size_t>(ch)]);
      }
    }
  }
  return out;
}

Image render_symbol(ShapeFamily family, int size) {
  constexpr double kBlobRadius = 1.3;  // filled extent in blob sigmas
  const Geometry g = geometry(family, 0);
  const double pixel = 2.0 / size;
  const double half_width = std::max(0.035, 0.6 * pixel);
  Image out(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Point p = unit_coords(x, y, size);
      double coverage = 0.0;
      for (const auto& b : g.blobs) {
        const double a = kBlobRadius * b.sx;
        const double bb = kBlobRadius * b.sy;
        const double ex = (p[0] - b.cx) / a;
        const double ey = (p[1] - b.cy) / bb;
        const double signed_dist = (std::sqrt(ex * ex + ey * ey) - 1.0) * std::min(a, bb);
        coverage = std::max(coverage, std::clamp(0.5 - signed_dist / pixel, 0.0, 1.0));
      }
      for (const auto& st : g.strokes) {
        const double d = stroke_distance(p, st);
        coverage = std::max(coverage, std::clamp((half_width - d) / pixel + 0.5, 0.0, 1.0));
      }
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = static_cast<float>(coverage);
    }
  }
  return out;
}

}  // namespace tma
