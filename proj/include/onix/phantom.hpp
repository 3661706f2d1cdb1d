#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "onix/geometry.hpp"
#include "onix/parallel.hpp"
#include "onix/rng.hpp"
#include "onix/volume.hpp"

namespace onix {

/// Single-material optical constants at a fixed photon energy.
struct Material {
  double delta = 1.6741e-7;  // aluminum at 18 keV
  double beta = 6.4088e-9;
  double energy_keV = 18.0;

  bool valid() const { return delta >= 0.0 && beta >= 0.0 && energy_keV > 0.0; }
};

/// Axis-aligned void ellipsoid, in voxel coordinates of the phantom grid.
struct EllipsoidSpec {
  Vec3 center;     // voxel coords
  Vec3 semi_axes;  // voxels, all > 0
};

/// Cylinder-with-void-ellipsoids phantom description. The cylinder axis is
/// z through the grid center; all sizes are in voxels so one spec scales
/// with the grid.
struct PhantomSpec {
  GridSpec grid = GridSpec::centered({256, 256, 256}, 3.2e-6);
  double cylinder_radius = 50.0;   // voxels
  double cylinder_height = 256.0;  // voxels
  int min_ellipsoids = 5;
  int max_ellipsoids = 10;
  double min_semi_axis = 20.0;  // voxels
  double max_semi_axis = 80.0;  // voxels
  Material material;
  std::uint64_t seed = 0;

  /// 64^3 configuration with every cylinder/ellipsoid length scaled by 1/4.
  static PhantomSpec desk_scale(std::uint64_t seed = 0) {
    PhantomSpec s;
    s.grid = GridSpec::centered({64, 64, 64}, 3.2e-6);
    s.cylinder_radius = 12.5;
    s.cylinder_height = 64.0;
    s.min_semi_axis = 5.0;
    s.max_semi_axis = 20.0;
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (!grid.valid()) throw std::invalid_argument("PhantomSpec: invalid grid");
    if (cylinder_radius <= 0.0 || cylinder_height <= 0.0)
      throw std::invalid_argument("PhantomSpec: cylinder dimensions must be positive");
    if (2.0 * cylinder_radius > grid.dims[0] || 2.0 * cylinder_radius > grid.dims[1] ||
        cylinder_height > grid.dims[2])
      throw std::invalid_argument("PhantomSpec: cylinder does not fit inside the grid");
    if (min_ellipsoids < 0 || max_ellipsoids < min_ellipsoids)
      throw std::invalid_argument("PhantomSpec: bad ellipsoid count range");
    if (min_semi_axis <= 0.0 || max_semi_axis < min_semi_axis)
      throw std::invalid_argument("PhantomSpec: bad semi-axis range");
    if (!material.valid()) throw std::invalid_argument("PhantomSpec: bad material");
  }
};

namespace detail {

/// Ellipsoid geometry in world units, derived from a spec + grid.
struct EllipsoidWorld {
  Vec3 center;
  Vec3 inv_axes;  // 1/semi_axis, world units
};

inline EllipsoidWorld to_world(const EllipsoidSpec& e, const GridSpec& g) {
  const double s = g.voxel_size;
  return {g.origin + e.center * s,
          {1.0 / (e.semi_axes.x * s), 1.0 / (e.semi_axes.y * s), 1.0 / (e.semi_axes.z * s)}};
}

inline bool inside_ellipsoid(const EllipsoidWorld& e, const Vec3& p) {
  const Vec3 q{(p.x - e.center.x) * e.inv_axes.x, (p.y - e.center.y) * e.inv_axes.y,
               (p.z - e.center.z) * e.inv_axes.z};
  return dot(q, q) <= 1.0;
}

}  // namespace detail

/// Draw the random ellipsoid list for a spec: count uniform in
/// [min_ellipsoids, max_ellipsoids], centers uniform inside the cylinder
/// (ellipsoids may overlap and may protrude past the wall), semi-axes
/// uniform in [min_semi_axis, max_semi_axis].
inline std::vector<EllipsoidSpec> draw_ellipsoids(const PhantomSpec& spec) {
  Rng rng(spec.seed);
  const int n = spec.min_ellipsoids == spec.max_ellipsoids
                    ? spec.min_ellipsoids
                    : spec.min_ellipsoids +
                          static_cast<int>(rng.uniform_index(
                              spec.max_ellipsoids - spec.min_ellipsoids + 1));
  const Vec3 gc = spec.grid.center();
  const Vec3 c_vox = spec.grid.world_to_voxel(gc);
  std::vector<EllipsoidSpec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    // rejection-sample a point in the disk
    double ex, ey;
    do {
      ex = rng.uniform(-spec.cylinder_radius, spec.cylinder_radius);
      ey = rng.uniform(-spec.cylinder_radius, spec.cylinder_radius);
    } while (ex * ex + ey * ey > spec.cylinder_radius * spec.cylinder_radius);
    const double ez = rng.uniform(-0.5 * spec.cylinder_height, 0.5 * spec.cylinder_height);
    EllipsoidSpec e;
    e.center = Vec3{c_vox.x + ex, c_vox.y + ey, c_vox.z + ez};
    e.semi_axes = Vec3{rng.uniform(spec.min_semi_axis, spec.max_semi_axis),
                       rng.uniform(spec.min_semi_axis, spec.max_semi_axis),
                       rng.uniform(spec.min_semi_axis, spec.max_semi_axis)};
    out.push_back(e);
  }
  return out;
}

/// Voxelize: material (delta, beta) inside the cylinder and outside every
/// ellipsoid, (0,0) elsewhere. Classification is by voxel center, so the
/// value histogram has exactly two levels per channel.
inline RefractiveVolume voxelize_phantom(const PhantomSpec& spec,
                                         const std::vector<EllipsoidSpec>& ellipsoids) {
  spec.validate();
  const GridSpec& g = spec.grid;
  RefractiveVolume vol(g, spec.material.energy_keV);
  const Vec3 gc = g.center();
  const double R = spec.cylinder_radius * g.voxel_size;
  const double hz = 0.5 * spec.cylinder_height * g.voxel_size;
  std::vector<detail::EllipsoidWorld> ew;
  ew.reserve(ellipsoids.size());
  for (const auto& e : ellipsoids) ew.push_back(detail::to_world(e, g));

  parallel_for(g.dims[2], [&](std::int64_t iz, int) {
    for (int iy = 0; iy < g.dims[1]; ++iy)
      for (int ix = 0; ix < g.dims[0]; ++ix) {
        const Vec3 p = g.voxel_center(ix, iy, static_cast<int>(iz));
        const double dx = p.x - gc.x, dy = p.y - gc.y, dz = p.z - gc.z;
        if (dx * dx + dy * dy > R * R || std::abs(dz) > hz) continue;
        bool in_void = false;
        for (const auto& e : ew)
          if (detail::inside_ellipsoid(e, p)) {
            in_void = true;
            break;
          }
        if (in_void) continue;
        const auto idx = static_cast<std::size_t>(vol.index(ix, iy, static_cast<int>(iz)));
        vol.delta[idx] = spec.material.delta;
        vol.beta[idx] = spec.material.beta;
      }
  });
  return vol;
}

/// Generate one phantom: deterministic in spec.seed.
inline std::pair<RefractiveVolume, std::vector<EllipsoidSpec>> generate_phantom(
    const PhantomSpec& spec) {
  spec.validate();
  auto ellipsoids = draw_ellipsoids(spec);
  return {voxelize_phantom(spec, ellipsoids), std::move(ellipsoids)};
}

/// Exact line integrals (int delta dz, int beta dz) of the continuous
/// cylinder-minus-ellipsoid-union geometry along a ray: the cylinder chord
/// interval minus the merged union of ellipsoid intersection intervals.
/// Results in meters * (index decrement). Independent of any voxelization.
inline std::pair<double, double> analytic_line_integrals(
    const std::vector<EllipsoidSpec>& ellipsoids, const PhantomSpec& spec, const Ray& ray) {
  const GridSpec& g = spec.grid;
  const Vec3 gc = g.center();
  const double R = spec.cylinder_radius * g.voxel_size;
  const double hz = 0.5 * spec.cylinder_height * g.voxel_size;
  const Vec3 o = ray.origin - gc;
  const Vec3 d = ray.direction;

  // cylinder (axis z) chord interval
  double t0, t1;
  const double a = d.x * d.x + d.y * d.y;
  if (a < 1e-28) {
    if (o.x * o.x + o.y * o.y > R * R) return {0.0, 0.0};
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
  } else {
    const double b = 2.0 * (o.x * d.x + o.y * d.y);
    const double c = o.x * o.x + o.y * o.y - R * R;
    const double disc = b * b - 4.0 * a * c;
    if (disc <= 0.0) return {0.0, 0.0};
    const double sq = std::sqrt(disc);
    t0 = (-b - sq) / (2.0 * a);
    t1 = (-b + sq) / (2.0 * a);
  }
  // clip to the cylinder's z slab
  if (std::abs(d.z) > 1e-14) {
    double z0 = (-hz - o.z) / d.z;
    double z1 = (hz - o.z) / d.z;
    if (z0 > z1) std::swap(z0, z1);
    t0 = std::max(t0, z0);
    t1 = std::min(t1, z1);
  } else if (std::abs(o.z) > hz) {
    return {0.0, 0.0};
  }
  if (t1 <= t0) return {0.0, 0.0};

  // ellipsoid intersection intervals, clipped to the cylinder interval
  std::vector<std::pair<double, double>> ivals;
  for (const auto& espec : ellipsoids) {
    const auto e = detail::to_world(espec, g);
    const Vec3 oc{(ray.origin.x - e.center.x) * e.inv_axes.x,
                  (ray.origin.y - e.center.y) * e.inv_axes.y,
                  (ray.origin.z - e.center.z) * e.inv_axes.z};
    const Vec3 dc{d.x * e.inv_axes.x, d.y * e.inv_axes.y, d.z * e.inv_axes.z};
    const double A = dot(dc, dc);
    const double B = 2.0 * dot(oc, dc);
    const double C = dot(oc, oc) - 1.0;
    const double disc = B * B - 4.0 * A * C;
    if (disc <= 0.0) continue;
    const double sq = std::sqrt(disc);
    double u0 = (-B - sq) / (2.0 * A);
    double u1 = (-B + sq) / (2.0 * A);
    u0 = std::max(u0, t0);
    u1 = std::min(u1, t1);
    if (u1 > u0) ivals.emplace_back(u0, u1);
  }
  std::sort(ivals.begin(), ivals.end());
  double void_len = 0.0;
  double cur0 = 0.0, cur1 = 0.0;
  bool open = false;
  for (const auto& [u0, u1] : ivals) {
    if (!open) {
      cur0 = u0;
      cur1 = u1;
      open = true;
    } else if (u0 <= cur1) {
      cur1 = std::max(cur1, u1);
    } else {
      void_len += cur1 - cur0;
      cur0 = u0;
      cur1 = u1;
    }
  }
  if (open) void_len += cur1 - cur0;

  const double material_len = (t1 - t0) - void_len;
  return {spec.material.delta * material_len, spec.material.beta * material_len};
}

/// Lazy dataset of phantoms: object k is generated on demand from the
/// derived seed split(master_seed, k); nothing is materialized up front.
class PhantomDataset {
 public:
  PhantomDataset(int n_objects, PhantomSpec spec_template, std::uint64_t master_seed)
      : n_(n_objects), spec_(std::move(spec_template)), master_seed_(master_seed) {
    if (n_objects < 1) throw std::invalid_argument("PhantomDataset: n_objects must be >= 1");
    spec_.validate();
  }

  int size() const { return n_; }

  PhantomSpec spec_for(int k) const {
    PhantomSpec s = spec_;
    s.seed = Rng::split(master_seed_, static_cast<std::uint64_t>(k));
    return s;
  }

  std::pair<RefractiveVolume, std::vector<EllipsoidSpec>> object(int k) const {
    if (k < 0 || k >= n_) throw std::out_of_range("PhantomDataset: object index");
    return generate_phantom(spec_for(k));
  }

 private:
  int n_;
  PhantomSpec spec_;
  std::uint64_t master_seed_;
};

}  // namespace onix
