#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "onix/geometry.hpp"

namespace onix {

/// Voxel grid of complex-refractive-index decrements: delta (phase-shifting
/// part) and beta (absorptive part), both non-negative for physical media.
/// Storage is z-major: index(ix,iy,iz) = ix + nx*(iy + ny*iz).
struct RefractiveVolume {
  GridSpec grid;
  double energy_keV = 18.0;  // delta/beta are energy-specific
  std::vector<double> delta;
  std::vector<double> beta;

  RefractiveVolume() = default;
  explicit RefractiveVolume(const GridSpec& g, double energy = 18.0)
      : grid(g),
        energy_keV(energy),
        delta(static_cast<std::size_t>(g.voxel_count()), 0.0),
        beta(static_cast<std::size_t>(g.voxel_count()), 0.0) {}

  std::int64_t index(int ix, int iy, int iz) const {
    return ix + static_cast<std::int64_t>(grid.dims[0]) *
                    (iy + static_cast<std::int64_t>(grid.dims[1]) * iz);
  }

  bool finite() const {
    for (double v : delta)
      if (!std::isfinite(v)) return false;
    for (double v : beta)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Trilinear interpolation of a z-major scalar field at a continuous voxel
/// coordinate (integers at voxel centers); values outside the grid are 0.
inline double trilinear(const std::vector<double>& field, const GridSpec& g, const Vec3& q) {
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  const double fx = std::floor(q.x), fy = std::floor(q.y), fz = std::floor(q.z);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  const double tx = q.x - fx, ty = q.y - fy, tz = q.z - fz;
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int xi = x0 + (c & 1), yi = y0 + ((c >> 1) & 1), zi = z0 + ((c >> 2) & 1);
    if (xi < 0 || xi >= nx || yi < 0 || yi >= ny || zi < 0 || zi >= nz) continue;
    const double w = ((c & 1) ? tx : 1.0 - tx) * (((c >> 1) & 1) ? ty : 1.0 - ty) *
                     (((c >> 2) & 1) ? tz : 1.0 - tz);
    acc += w * field[static_cast<std::size_t>(xi + static_cast<std::int64_t>(nx) * (yi + static_cast<std::int64_t>(ny) * zi))];
  }
  return acc;
}

}  // namespace onix
