#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "onix/vec.hpp"

namespace onix {

// Axis convention used throughout: z is the rotation (vertical) axis. At
// view angle 0 the beam travels along +y, the detector u axis is +x and the
// v axis is +z. Detector pixel (0,0) is the first (top-left) pixel; pixel
// (i,j) has continuous detector coordinates (u,v) = (j+0.5, i+0.5) in pixel
// units, so the physical detector center sits at (u,v) = (W/2, H/2).

/// Regular voxel grid. `origin` is the world position of the CENTER of
/// voxel (0,0,0); voxel (ix,iy,iz) is centered at origin + (ix,iy,iz)*voxel_size.
struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  double voxel_size = 1.0;  // meters
  Vec3 origin{0.0, 0.0, 0.0};

  /// Grid of the given dims centered on the world origin.
  static GridSpec centered(std::array<int, 3> dims, double voxel_size) {
    GridSpec g;
    g.dims = dims;
    g.voxel_size = voxel_size;
    g.origin = Vec3{-0.5 * (dims[0] - 1), -0.5 * (dims[1] - 1), -0.5 * (dims[2] - 1)} * voxel_size;
    return g;
  }

  bool valid() const {
    return dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1 && voxel_size > 0.0;
  }

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  Vec3 voxel_center(int ix, int iy, int iz) const {
    return origin + Vec3{static_cast<double>(ix), static_cast<double>(iy),
                         static_cast<double>(iz)} * voxel_size;
  }

  /// World point of the grid center.
  Vec3 center() const {
    return origin + Vec3{0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)} * voxel_size;
  }

  /// World -> continuous voxel coordinates (integers at voxel centers).
  Vec3 world_to_voxel(const Vec3& p) const { return (p - origin) / voxel_size; }
};

/// Axis-aligned box, min <= max componentwise.
struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};

  bool contains(const Vec3& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y &&
           p.z >= min.z && p.z <= max.z;
  }

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return (min + max) * 0.5; }
  double half_diagonal() const { return 0.5 * norm(extent()); }
};

/// Tight world-space bounding box of the voxel extents (half a voxel beyond
/// the outermost voxel centers).
inline Aabb bounding_box(const GridSpec& g) {
  const double h = 0.5 * g.voxel_size;
  const Vec3 lo = g.origin - Vec3{h, h, h};
  const Vec3 hi = g.voxel_center(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1) + Vec3{h, h, h};
  return {lo, hi};
}

/// One parallel-beam view: all rays share direction beam_dir(), the detector
/// plane is orthogonal to it.
struct ViewGeometry {
  double angle = 0.0;  // radians, rotation about z, in [0, 2*pi)
  int rows = 0;        // H
  int cols = 0;        // W
  double pixel_size = 1.0;  // meters
  int view_index = 0;

  bool valid() const {
    return rows >= 1 && cols >= 1 && pixel_size > 0.0 && angle >= 0.0 &&
           angle < 2.0 * 3.14159265358979323846 + 1e-12;
  }

  Vec3 beam_dir() const { return {-std::sin(angle), std::cos(angle), 0.0}; }
  Vec3 u_axis() const { return {std::cos(angle), std::sin(angle), 0.0}; }
  Vec3 v_axis() const { return {0.0, 0.0, 1.0}; }
};

/// Line r(t) = origin + t * direction with unit direction.
struct Ray {
  Vec3 origin{0, 0, 0};
  Vec3 direction{0, 1, 0};

  Vec3 at(double t) const { return origin + direction * t; }
  bool valid() const { return std::abs(norm(direction) - 1.0) <= 1e-12; }
};

/// World point -> (u, v, depth): u/v in detector pixel units, depth the
/// signed distance along the beam in meters. A rigid rotation about z
/// followed by the pixel-unit scaling of the transverse components.
inline std::array<double, 3> world_to_view(const Vec3& x, const ViewGeometry& view) {
  const double u = dot(x, view.u_axis()) / view.pixel_size + 0.5 * view.cols;
  const double v = dot(x, view.v_axis()) / view.pixel_size + 0.5 * view.rows;
  const double depth = dot(x, view.beam_dir());
  return {u, v, depth};
}

/// Exact inverse of world_to_view (the view frame is orthonormal).
inline Vec3 view_to_world(double u, double v, double depth, const ViewGeometry& view) {
  const double uw = (u - 0.5 * view.cols) * view.pixel_size;
  const double vw = (v - 0.5 * view.rows) * view.pixel_size;
  return view.u_axis() * uw + view.v_axis() * vw + view.beam_dir() * depth;
}

/// Slab-method ray/box intersection; returns (t_near, t_far) or nothing.
inline std::optional<std::pair<double, double>> ray_aabb_intersect(const Ray& ray,
                                                                   const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    const double o = ray.origin[k];
    const double d = ray.direction[k];
    const double lo = box.min[k];
    const double hi = box.max[k];
    if (std::abs(d) < 1e-300) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    double a = (lo - o) / d;
    double b = (hi - o) / d;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

/// Ray through the center of detector pixel (i,j) of a view. The origin is
/// the pixel center pushed back along -beam so that the whole `box` lies at
/// t > 0 (one box diagonal of margin).
inline Ray ray_for_pixel(const ViewGeometry& view, int i, int j, const Aabb& box) {
  if (i < 0 || i >= view.rows || j < 0 || j >= view.cols)
    throw std::out_of_range("ray_for_pixel: pixel index outside detector");
  const Vec3 dir = view.beam_dir();
  const Vec3 pix = view_to_world(j + 0.5, i + 0.5, 0.0, view);
  // Most negative depth any box point can have, minus margin.
  double dmin = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner{c & 1 ? box.max.x : box.min.x, c & 2 ? box.max.y : box.min.y,
                      c & 4 ? box.max.z : box.min.z};
    dmin = std::min(dmin, dot(corner, dir));
  }
  const double margin = norm(box.extent()) + view.pixel_size;
  const double origin_depth = std::min(0.0, dmin) - margin;
  return Ray{pix + dir * origin_depth, dir};
}

/// N angles equally spaced on [start, stop], both endpoints included
/// (N=1 gives just `start`).
inline std::vector<double> equally_spaced_angles(int n, double start_rad, double stop_rad) {
  if (n < 1) throw std::invalid_argument("equally_spaced_angles: n must be >= 1");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = n == 1 ? start_rad : start_rad + (stop_rad - start_rad) * i / (n - 1);
  return out;
}

}  // namespace onix
