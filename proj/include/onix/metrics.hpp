#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "onix/field.hpp"
#include "onix/trainer.hpp"
#include "onix/volume.hpp"

namespace onix {

/// Cylindrical region of interest about the z axis through the grid center:
/// voxels with inner <= r <= outer (radii in voxels) are kept.
struct RingMask {
  double inner_radius = 0.0;  // voxels
  double outer_radius = 0.0;  // voxels

  void validate(const GridSpec& grid) const {
    if (inner_radius < 0.0 || outer_radius <= inner_radius)
      throw std::invalid_argument("RingMask: need 0 <= inner < outer");
    const double half_diag =
        0.5 * std::hypot(static_cast<double>(grid.dims[0]), static_cast<double>(grid.dims[1]));
    if (outer_radius > half_diag + 1.0)
      throw std::invalid_argument("RingMask: outer radius exceeds the grid cross-section");
  }

  bool contains(const GridSpec& grid, int ix, int iy) const {
    const double cx = 0.5 * (grid.dims[0] - 1);
    const double cy = 0.5 * (grid.dims[1] - 1);
    const double r = std::hypot(ix - cx, iy - cy);
    return r >= inner_radius && r <= outer_radius;
  }

  /// Mask covering the whole grid including its corners.
  static RingMask full(const GridSpec& grid) {
    return {0.0, 0.5 * std::hypot(static_cast<double>(grid.dims[0]),
                                  static_cast<double>(grid.dims[1])) + 0.5};
  }
};

/// Zero all voxels outside the mask; idempotent.
inline RefractiveVolume apply_mask(const RefractiveVolume& vol, const RingMask& mask) {
  mask.validate(vol.grid);
  RefractiveVolume out = vol;
  for (int iy = 0; iy < vol.grid.dims[1]; ++iy)
    for (int ix = 0; ix < vol.grid.dims[0]; ++ix) {
      if (mask.contains(vol.grid, ix, iy)) continue;
      for (int iz = 0; iz < vol.grid.dims[2]; ++iz) {
        const auto idx = static_cast<std::size_t>(out.index(ix, iy, iz));
        out.delta[idx] = 0.0;
        out.beta[idx] = 0.0;
      }
    }
  return out;
}

/// Quality numbers for one candidate volume against a reference. A channel
/// is scored when the masked reference carries any signal in it; the summary
/// values are the plain average over the scored channels.
struct MetricReport {
  double l2 = 0.0;
  double dssim = 0.0;
  std::array<double, 2> l2_channel{0.0, 0.0};     // delta, beta
  std::array<double, 2> dssim_channel{0.0, 0.0};  // delta, beta
  std::array<bool, 2> channel_present{false, false};
};

namespace detail {

inline std::vector<const std::vector<double>*> channels_of(const RefractiveVolume& v) {
  return {&v.delta, &v.beta};
}

inline bool masked_nonzero(const RefractiveVolume& v, const std::vector<double>& field,
                           const RingMask& mask) {
  for (int iy = 0; iy < v.grid.dims[1]; ++iy)
    for (int ix = 0; ix < v.grid.dims[0]; ++ix) {
      if (!mask.contains(v.grid, ix, iy)) continue;
      for (int iz = 0; iz < v.grid.dims[2]; ++iz)
        if (field[static_cast<std::size_t>(v.index(ix, iy, iz))] != 0.0) return true;
    }
  return false;
}

/// ||cand - ref||_2 / ||ref||_2 over masked voxels of one channel.
inline double l2_channel(const RefractiveVolume& cand, const RefractiveVolume& ref,
                         const std::vector<double>& cf, const std::vector<double>& rf,
                         const RingMask& mask) {
  double num = 0.0, den = 0.0;
  for (int iy = 0; iy < ref.grid.dims[1]; ++iy)
    for (int ix = 0; ix < ref.grid.dims[0]; ++ix) {
      if (!mask.contains(ref.grid, ix, iy)) continue;
      for (int iz = 0; iz < ref.grid.dims[2]; ++iz) {
        const auto idx = static_cast<std::size_t>(ref.index(ix, iy, iz));
        const double d = cf[idx] - rf[idx];
        num += d * d;
        den += rf[idx] * rf[idx];
      }
    }
  if (den == 0.0) throw std::invalid_argument("l2_metric: all-zero reference channel");
  return std::sqrt(num / den);
}

/// Gaussian window, 7x7, sigma 1.5, renormalized over in-bounds taps.
struct SsimWindow {
  std::array<double, 7> w{};
  SsimWindow() {
    double sum = 0.0;
    for (int i = 0; i < 7; ++i) {
      const double x = i - 3;
      w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
      sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
  }
};

/// Mean SSIM over the masked pixels of all axial slices of one channel.
inline double ssim_channel(const RefractiveVolume& cand, const RefractiveVolume& ref,
                           const std::vector<double>& cf, const std::vector<double>& rf,
                           const RingMask& mask) {
  const auto& g = ref.grid;
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];

  // dynamic range of the masked reference
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      if (!mask.contains(g, ix, iy)) continue;
      for (int iz = 0; iz < nz; ++iz) {
        const double v = rf[static_cast<std::size_t>(ref.index(ix, iy, iz))];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  const double range = hi - lo;
  if (!(range > 0.0))
    throw std::invalid_argument("dssim_metric: degenerate reference dynamic range");
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  static const SsimWindow win;
  double total = 0.0;
  std::int64_t slices = 0;

  std::vector<double> mu1(static_cast<std::size_t>(nx) * ny), mu2(mu1.size()), m11(mu1.size()),
      m22(mu1.size()), m12(mu1.size());
  std::vector<double> t1(mu1.size()), t2(mu1.size()), t11(mu1.size()), t22(mu1.size()),
      t12(mu1.size());

  for (int iz = 0; iz < nz; ++iz) {
    auto at = [&](const std::vector<double>& f, int ix, int iy) {
      return f[static_cast<std::size_t>(ref.index(ix, iy, iz))];
    };
    // horizontal pass (renormalized at borders)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0, wsum = 0;
        for (int o = -3; o <= 3; ++o) {
          const int x = ix + o;
          if (x < 0 || x >= nx) continue;
          const double w = win.w[static_cast<std::size_t>(o + 3)];
          const double a = at(cf, x, iy), b = at(rf, x, iy);
          s1 += w * a;
          s2 += w * b;
          s11 += w * a * a;
          s22 += w * b * b;
          s12 += w * a * b;
          wsum += w;
        }
        const auto p = static_cast<std::size_t>(iy) * nx + ix;
        t1[p] = s1 / wsum;
        t2[p] = s2 / wsum;
        t11[p] = s11 / wsum;
        t22[p] = s22 / wsum;
        t12[p] = s12 / wsum;
      }
    // vertical pass
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0, wsum = 0;
        for (int o = -3; o <= 3; ++o) {
          const int y = iy + o;
          if (y < 0 || y >= ny) continue;
          const double w = win.w[static_cast<std::size_t>(o + 3)];
          const auto p = static_cast<std::size_t>(y) * nx + ix;
          s1 += w * t1[p];
          s2 += w * t2[p];
          s11 += w * t11[p];
          s22 += w * t22[p];
          s12 += w * t12[p];
          wsum += w;
        }
        const auto p = static_cast<std::size_t>(iy) * nx + ix;
        mu1[p] = s1 / wsum;
        mu2[p] = s2 / wsum;
        m11[p] = s11 / wsum;
        m22[p] = s22 / wsum;
        m12[p] = s12 / wsum;
      }
    double slice_sum = 0.0;
    std::int64_t n_masked = 0;
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        if (!mask.contains(g, ix, iy)) continue;
        const auto p = static_cast<std::size_t>(iy) * nx + ix;
        const double var1 = m11[p] - mu1[p] * mu1[p];
        const double var2 = m22[p] - mu2[p] * mu2[p];
        const double cov = m12[p] - mu1[p] * mu2[p];
        const double ssim = ((2.0 * mu1[p] * mu2[p] + c1) * (2.0 * cov + c2)) /
                            ((mu1[p] * mu1[p] + mu2[p] * mu2[p] + c1) * (var1 + var2 + c2));
        slice_sum += ssim;
        ++n_masked;
      }
    if (n_masked > 0) {
      total += slice_sum / static_cast<double>(n_masked);
      ++slices;
    }
  }
  if (slices == 0) throw std::invalid_argument("dssim_metric: mask selects no voxels");
  return total / static_cast<double>(slices);
}

}  // namespace detail

/// Relative L2 per channel over the mask, averaged over channels with
/// reference signal.
inline MetricReport l2_metric(const RefractiveVolume& cand, const RefractiveVolume& ref,
                              const RingMask& mask) {
  if (cand.grid.dims != ref.grid.dims)
    throw std::invalid_argument("l2_metric: candidate and reference grids differ");
  mask.validate(ref.grid);
  MetricReport rep;
  const auto cch = detail::channels_of(cand);
  const auto rch = detail::channels_of(ref);
  int n = 0;
  for (int c = 0; c < 2; ++c) {
    if (!detail::masked_nonzero(ref, *rch[static_cast<std::size_t>(c)], mask)) continue;
    rep.channel_present[static_cast<std::size_t>(c)] = true;
    rep.l2_channel[static_cast<std::size_t>(c)] = detail::l2_channel(
        cand, ref, *cch[static_cast<std::size_t>(c)], *rch[static_cast<std::size_t>(c)], mask);
    rep.l2 += rep.l2_channel[static_cast<std::size_t>(c)];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("l2_metric: all-zero reference");
  rep.l2 /= n;
  return rep;
}

/// DSSIM = (1 - SSIM)/2 per channel over the mask, slice-averaged, then
/// channel-averaged as for L2. Always in [0, 1].
inline MetricReport dssim_metric(const RefractiveVolume& cand, const RefractiveVolume& ref,
                                 const RingMask& mask) {
  if (cand.grid.dims != ref.grid.dims)
    throw std::invalid_argument("dssim_metric: candidate and reference grids differ");
  mask.validate(ref.grid);
  MetricReport rep;
  const auto cch = detail::channels_of(cand);
  const auto rch = detail::channels_of(ref);
  int n = 0;
  for (int c = 0; c < 2; ++c) {
    if (!detail::masked_nonzero(ref, *rch[static_cast<std::size_t>(c)], mask)) continue;
    rep.channel_present[static_cast<std::size_t>(c)] = true;
    const double ssim = detail::ssim_channel(
        cand, ref, *cch[static_cast<std::size_t>(c)], *rch[static_cast<std::size_t>(c)], mask);
    rep.dssim_channel[static_cast<std::size_t>(c)] = 0.5 * (1.0 - ssim);
    rep.dssim += rep.dssim_channel[static_cast<std::size_t>(c)];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("dssim_metric: all-zero reference");
  rep.dssim /= n;
  return rep;
}

/// Both metrics in one report.
inline MetricReport evaluate_volumes(const RefractiveVolume& cand, const RefractiveVolume& ref,
                                     const RingMask& mask) {
  MetricReport rep = l2_metric(cand, ref, mask);
  const MetricReport d = dssim_metric(cand, ref, mask);
  rep.dssim = d.dssim;
  rep.dssim_channel = d.dssim_channel;
  return rep;
}

/// One orthogonal-axis projection image (physical line integral: voxel sums
/// scaled by the voxel size).
struct OrthoImage {
  int rows = 0;
  int cols = 0;
  std::vector<double> delta;
  std::vector<double> beta;

  double& d(int r, int c) { return delta[static_cast<std::size_t>(r) * cols + c]; }
  double& b(int r, int c) { return beta[static_cast<std::size_t>(r) * cols + c]; }
  double d(int r, int c) const { return delta[static_cast<std::size_t>(r) * cols + c]; }
  double b(int r, int c) const { return beta[static_cast<std::size_t>(r) * cols + c]; }
};

struct OrthoProjections {
  OrthoImage top;    // sum over z: rows = y, cols = x
  OrthoImage front;  // sum over y: rows = z, cols = x
  OrthoImage left;   // sum over x: rows = z, cols = y
};

inline OrthoProjections ortho_projections(const RefractiveVolume& vol) {
  const auto& g = vol.grid;
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  const double s = g.voxel_size;
  OrthoProjections out;
  auto init = [](OrthoImage& img, int rows, int cols) {
    img.rows = rows;
    img.cols = cols;
    img.delta.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    img.beta.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  };
  init(out.top, ny, nx);
  init(out.front, nz, nx);
  init(out.left, nz, ny);
  for (int iz = 0; iz < nz; ++iz)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        const auto idx = static_cast<std::size_t>(vol.index(ix, iy, iz));
        const double d = vol.delta[idx] * s;
        const double b = vol.beta[idx] * s;
        out.top.d(iy, ix) += d;
        out.top.b(iy, ix) += b;
        out.front.d(iz, ix) += d;
        out.front.b(iz, ix) += b;
        out.left.d(iz, iy) += d;
        out.left.b(iz, iy) += b;
      }
  return out;
}

/// One reconstruction quality entry of the constraint-combination study.
struct CombinationEntry {
  std::vector<int> subset;
  MetricReport report;
};

struct CombinationStudy {
  std::vector<CombinationEntry> entries;  // sorted by DSSIM, best first
  double l2_mean = 0, l2_std = 0, l2_min = 0, l2_max = 0;
  double dssim_mean = 0, dssim_std = 0, dssim_min = 0, dssim_max = 0;
};

/// Reconstruct and score every k-subset of the stack's views.
template <typename T>
CombinationStudy combination_study(FieldModel<T>& model, const ProjectionStack& stack, int k,
                                   const RefractiveVolume& reference, const RingMask& mask,
                                   int chunk = 4096) {
  stack.validate();
  const int K = stack.n_views();
  if (k < 1 || k >= K)
    throw std::invalid_argument("combination_study: need 1 <= k < view count");
  CombinationStudy study;

  std::vector<int> subset(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) subset[static_cast<std::size_t>(i)] = i;
  while (true) {
    const auto vol = infer(model, stack, subset, reference.grid, chunk);
    study.entries.push_back({subset, evaluate_volumes(apply_mask(vol, mask),
                                                      apply_mask(reference, mask), mask)});
    // next lexicographic combination
    int i = k - 1;
    while (i >= 0 && subset[static_cast<std::size_t>(i)] == K - k + i) --i;
    if (i < 0) break;
    ++subset[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      subset[static_cast<std::size_t>(j)] = subset[static_cast<std::size_t>(j - 1)] + 1;
  }

  auto stats = [&](auto getter, double& mean, double& sd, double& mn, double& mx) {
    double sum = 0.0;
    mn = std::numeric_limits<double>::infinity();
    mx = -mn;
    for (const auto& e : study.entries) {
      const double v = getter(e);
      sum += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    mean = sum / static_cast<double>(study.entries.size());
    double var = 0.0;
    for (const auto& e : study.entries) {
      const double d = getter(e) - mean;
      var += d * d;
    }
    sd = std::sqrt(var / static_cast<double>(study.entries.size()));
  };
  stats([](const CombinationEntry& e) { return e.report.l2; }, study.l2_mean, study.l2_std,
        study.l2_min, study.l2_max);
  stats([](const CombinationEntry& e) { return e.report.dssim; }, study.dssim_mean,
        study.dssim_std, study.dssim_min, study.dssim_max);
  std::sort(study.entries.begin(), study.entries.end(),
            [](const CombinationEntry& a, const CombinationEntry& b) {
              return a.report.dssim < b.report.dssim;
            });
  return study;
}

}  // namespace onix
