#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "onix/constants.hpp"
#include "onix/parallel.hpp"
#include "onix/projection.hpp"
#include "onix/rng.hpp"
#include "onix/volume.hpp"

namespace onix {

/// Simultaneous Algebraic Reconstruction Technique configuration.
struct SartConfig {
  enum class AngleOrder { Sequential, Shuffled };

  int iterations = 50;
  double relaxation = 0.5;  // in (0, 2)
  AngleOrder angle_order = AngleOrder::Sequential;
  std::uint64_t shuffle_seed = 0;
  GridSpec grid;
  double step_scale = 0.5;      // ray-marching step in voxel units
  bool clamp_nonnegative = false;
  bool record_residuals = false;  // per-epoch mean reprojection residual

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("SartConfig: iterations must be >= 1");
    if (!(relaxation > 0.0 && relaxation < 2.0))
      throw std::invalid_argument("SartConfig: relaxation must lie in (0, 2)");
    if (!grid.valid()) throw std::invalid_argument("SartConfig: invalid grid");
    if (step_scale <= 0.0) throw std::invalid_argument("SartConfig: step_scale must be > 0");
  }
};

namespace detail {

/// Matched forward/back projector: marches uniform midpoint samples along a
/// pixel ray and either gathers trilinear field values or scatters weighted
/// residual into accumulation buffers. Both passes visit the same samples.
struct SartMarcher {
  const GridSpec& grid;
  Aabb box;
  double dt_target;

  explicit SartMarcher(const GridSpec& g, double step_scale)
      : grid(g), box(bounding_box(g)), dt_target(step_scale * g.voxel_size) {}

  template <typename PerSample>
  double march(const Ray& ray, PerSample&& per_sample) const {
    const auto hit = ray_aabb_intersect(ray, box);
    if (!hit) return 0.0;
    const auto [t0, t1] = *hit;
    const int n = std::max(2, static_cast<int>(std::ceil((t1 - t0) / dt_target)));
    const double dt = (t1 - t0) / n;
    for (int s = 0; s < n; ++s) per_sample(ray.at(t0 + (s + 0.5) * dt), dt);
    return t1 - t0;
  }

  double forward(const std::vector<double>& field, const Ray& ray) const {
    double acc = 0.0;
    march(ray, [&](const Vec3& p, double dt) {
      acc += dt * trilinear(field, grid, grid.world_to_voxel(p));
    });
    return acc;
  }

  void scatter(std::vector<double>& num, std::vector<double>& den, const Ray& ray,
               double weighted_residual) const {
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    march(ray, [&](const Vec3& p, double dt) {
      const Vec3 q = grid.world_to_voxel(p);
      const double fx = std::floor(q.x), fy = std::floor(q.y), fz = std::floor(q.z);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
      const double tx = q.x - fx, ty = q.y - fy, tz = q.z - fz;
      for (int c = 0; c < 8; ++c) {
        const int xi = x0 + (c & 1), yi = y0 + ((c >> 1) & 1), zi = z0 + ((c >> 2) & 1);
        if (xi < 0 || xi >= nx || yi < 0 || yi >= ny || zi < 0 || zi >= nz) continue;
        const double w = ((c & 1) ? tx : 1.0 - tx) * (((c >> 1) & 1) ? ty : 1.0 - ty) *
                         (((c >> 2) & 1) ? tz : 1.0 - tz);
        const auto idx = static_cast<std::size_t>(
            xi + static_cast<std::int64_t>(nx) * (yi + static_cast<std::int64_t>(ny) * zi));
        num[idx] += weighted_residual * dt * w;
        den[idx] += dt * w;
      }
    });
  }
};

}  // namespace detail

/// Relative reprojection residual ||A x - b||_2 / ||b||_2 of a line-density
/// field against one contrast channel of a stack.
inline double reprojection_residual(const std::vector<double>& field,
                                    const ProjectionStack& stack, Channel channel,
                                    const SartConfig& cfg) {
  const detail::SartMarcher marcher(cfg.grid, cfg.step_scale);
  double num = 0.0, den = 0.0;
  for (const auto& img : stack.images) {
    const auto& measured = img.channel(channel);
    std::vector<double> row_num(img.view.rows, 0.0), row_den(img.view.rows, 0.0);
    parallel_for(img.view.rows, [&](std::int64_t i, int) {
      for (int j = 0; j < img.view.cols; ++j) {
        const Ray ray = ray_for_pixel(img.view, static_cast<int>(i), j, marcher.box);
        const double pred = marcher.forward(field, ray);
        const double b = measured[img.pixel_index(static_cast<int>(i), j)];
        row_num[i] += (pred - b) * (pred - b);
        row_den[i] += b * b;
      }
    });
    num = std::accumulate(row_num.begin(), row_num.end(), num);
    den = std::accumulate(row_den.begin(), row_den.end(), den);
  }
  if (den == 0.0) return std::sqrt(num) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

/// Classical SART on one contrast channel. Views are visited in configured
/// order; for each view the residual (measured - reprojected), normalized by
/// ray length, is backprojected with the same trilinear footprints used in
/// the forward march, then applied scaled by the relaxation factor. Returns
/// the line-density field (k*beta or k*delta per meter) plus the optional
/// per-epoch residual history.
inline std::pair<std::vector<double>, std::vector<double>> sart_reconstruct_with_history(
    const ProjectionStack& stack, Channel channel, const SartConfig& cfg) {
  cfg.validate();
  stack.validate();
  if (channel == Channel::Phase && !stack.has_phase())
    throw std::invalid_argument("sart_reconstruct: phase channel absent from stack");

  const detail::SartMarcher marcher(cfg.grid, cfg.step_scale);
  const auto n_vox = static_cast<std::size_t>(cfg.grid.voxel_count());
  std::vector<double> field(n_vox, 0.0);
  std::vector<double> history;

  const int n_views = stack.n_views();
  std::vector<int> order(n_views);
  std::iota(order.begin(), order.end(), 0);

  const int nw = workers();
  std::vector<std::vector<double>> nums(nw), dens(nw);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.angle_order == SartConfig::AngleOrder::Shuffled) {
      Rng rng(Rng::split(cfg.shuffle_seed, static_cast<std::uint64_t>(it)));
      for (int i = n_views - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng.uniform_index(i + 1))]);
    }
    for (int v : order) {
      const auto& img = stack.images[v];
      const auto& measured = img.channel(channel);
      for (int w = 0; w < nw; ++w) {
        nums[w].assign(n_vox, 0.0);
        dens[w].assign(n_vox, 0.0);
      }
      parallel_for(img.view.rows, [&](std::int64_t i, int w) {
        for (int j = 0; j < img.view.cols; ++j) {
          const Ray ray = ray_for_pixel(img.view, static_cast<int>(i), j, marcher.box);
          const auto hit = ray_aabb_intersect(ray, marcher.box);
          if (!hit) continue;
          const double length = hit->second - hit->first;
          if (length <= 0.0) continue;
          const double pred = marcher.forward(field, ray);
          const double resid = measured[img.pixel_index(static_cast<int>(i), j)] - pred;
          marcher.scatter(nums[w], dens[w], ray, resid / length);
        }
      }, nw);
      // deterministic reduction in worker order, then the SART update
      for (int w = 1; w < nw; ++w)
        for (std::size_t p = 0; p < n_vox; ++p) {
          nums[0][p] += nums[w][p];
          dens[0][p] += dens[w][p];
        }
      for (std::size_t p = 0; p < n_vox; ++p) {
        if (dens[0][p] <= 0.0) continue;
        field[p] += cfg.relaxation * nums[0][p] / dens[0][p];
        if (cfg.clamp_nonnegative && field[p] < 0.0) field[p] = 0.0;
      }
    }
    if (cfg.record_residuals) history.push_back(reprojection_residual(field, stack, channel, cfg));
  }
  return {std::move(field), std::move(history)};
}

inline std::vector<double> sart_reconstruct(const ProjectionStack& stack, Channel channel,
                                            const SartConfig& cfg) {
  return sart_reconstruct_with_history(stack, channel, cfg).first;
}

/// Run SART per available channel and convert line densities to (delta,
/// beta) by dividing by the wavenumber; absent channels stay zero.
inline RefractiveVolume sart_reconstruct_stack(const ProjectionStack& stack,
                                               const SartConfig& cfg) {
  stack.validate();
  RefractiveVolume vol(cfg.grid, stack.energy_keV);
  const double k = wavenumber(stack.energy_keV);
  const auto att = sart_reconstruct(stack, Channel::Attenuation, cfg);
  for (std::size_t p = 0; p < att.size(); ++p) vol.beta[p] = att[p] / k;
  if (stack.has_phase()) {
    const auto ph = sart_reconstruct(stack, Channel::Phase, cfg);
    for (std::size_t p = 0; p < ph.size(); ++p) vol.delta[p] = ph[p] / k;
  }
  return vol;
}

}  // namespace onix
