#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "onix/constants.hpp"
#include "onix/field.hpp"
#include "onix/nn/adam.hpp"
#include "onix/nn/graph.hpp"
#include "onix/projection.hpp"
#include "onix/rng.hpp"

namespace onix {

/// Self-supervised training configuration. The stated defaults follow the
/// simulated-dataset protocol; experimental() switches to the
/// attenuation-only protocol.
struct TrainConfig {
  int rays_per_iter = 1024;
  int depth_samples = 256;
  int batch_objects = 2;
  int constraint_count = 4;  // M, must stay below the stack's view count
  double lr = 0.005;
  bool lr_drop_enabled = false;
  double lr_drop_factor = 0.1;
  int lr_drop_epoch = 1000;
  int epochs = 500;
  std::uint64_t seed = 0;
  double pdf_floor = 1e-3;      // fraction of the mean gradient magnitude
  int points_per_chunk = 8192;  // graph size bound (rays*depths per chunk)
  int checkpoint_every = 50;    // epochs

  static TrainConfig simulated() { return {}; }

  static TrainConfig experimental() {
    TrainConfig c;
    c.rays_per_iter = 3096;
    c.depth_samples = 64;
    c.constraint_count = 6;
    c.epochs = 1500;
    c.lr_drop_enabled = true;
    return c;
  }

  void validate() const {
    if (rays_per_iter < 1 || depth_samples < 2 || batch_objects < 1 || constraint_count < 1 ||
        epochs < 1 || points_per_chunk < depth_samples)
      throw std::invalid_argument("TrainConfig: invalid counts");
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (pdf_floor < 0.0) throw std::invalid_argument("TrainConfig: pdf_floor must be >= 0");
  }
};

/// Mini-batch bookkeeping: number of optimizer steps needed to visit every
/// object once (e.g. 1000 objects at batch 2 -> 500 iterations per epoch).
inline int iterations_per_epoch(int n_objects, int batch_objects) {
  if (n_objects < 1 || batch_objects < 1)
    throw std::invalid_argument("iterations_per_epoch: counts must be >= 1");
  return (n_objects + batch_objects - 1) / batch_objects;
}

/// Learning rate in effect during a (0-based) epoch under the drop schedule.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return (cfg.lr_drop_enabled && epoch >= cfg.lr_drop_epoch) ? cfg.lr * cfg.lr_drop_factor
                                                             : cfg.lr;
}

/// Uniformly random M-subset of {0..K-1} without replacement, ascending.
inline std::vector<int> select_constraints(int n_views, int m, Rng& rng) {
  if (m > n_views) throw std::invalid_argument("select_constraints: M exceeds view count");
  std::vector<int> idx(static_cast<std::size_t>(n_views));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_views - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<int> out(idx.begin(), idx.begin() + m);
  std::sort(out.begin(), out.end());
  return out;
}

/// One sampled training ray: a detector pixel of one view plus its measured
/// contrast values.
struct RaySample {
  int view = 0;
  int i = 0;
  int j = 0;
  double att = 0.0;
  double ph = 0.0;
};

/// Importance sampler over detector pixels. Each view carries a normalized
/// probability table proportional to |grad I| + floor, where the gradient is
/// central differences with replicated borders, magnitudes summed over the
/// available channels, and floor = pdf_floor * mean|grad I| of that image.
/// A draw picks a view uniformly, then a pixel from the view's table.
class RaySampler {
 public:
  RaySampler(const ProjectionStack& stack, double pdf_floor) {
    stack.validate();
    for (const auto& img : stack.images) {
      const int h = img.view.rows, w = img.view.cols;
      std::vector<double> mag(static_cast<std::size_t>(h) * w, 0.0);
      auto add_channel = [&](const std::vector<double>& c) {
        auto at = [&](int i, int j) {
          i = std::clamp(i, 0, h - 1);
          j = std::clamp(j, 0, w - 1);
          return c[static_cast<std::size_t>(i) * w + j];
        };
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) {
            const double gx = 0.5 * (at(i, j + 1) - at(i, j - 1));
            const double gy = 0.5 * (at(i + 1, j) - at(i - 1, j));
            mag[static_cast<std::size_t>(i) * w + j] += std::sqrt(gx * gx + gy * gy);
          }
      };
      add_channel(img.attenuation);
      if (img.has_phase()) add_channel(img.phase);

      const double mean = std::accumulate(mag.begin(), mag.end(), 0.0) / mag.size();
      const double floor = pdf_floor * mean;
      double total = 0.0;
      for (auto& v : mag) {
        v += floor;
        total += v;
      }
      std::vector<double> cdf(mag.size());
      if (total <= 0.0) {  // constant image: uniform
        for (std::size_t p = 0; p < mag.size(); ++p)
          cdf[p] = static_cast<double>(p + 1) / static_cast<double>(mag.size());
      } else {
        double run = 0.0;
        for (std::size_t p = 0; p < mag.size(); ++p) {
          run += mag[p] / total;
          cdf[p] = run;
        }
        cdf.back() = 1.0;
      }
      pdfs_.push_back(total <= 0.0 ? std::vector<double>(mag.size(), 1.0 / mag.size())
                                   : [&] {
                                       std::vector<double> p(mag.size());
                                       for (std::size_t q = 0; q < mag.size(); ++q)
                                         p[q] = mag[q] / total;
                                       return p;
                                     }());
      cdfs_.push_back(std::move(cdf));
      dims_.emplace_back(h, w);
    }
  }

  int n_views() const { return static_cast<int>(cdfs_.size()); }

  /// Pixel probability within its view (sums to 1 per view).
  double probability(int view, int i, int j) const {
    const auto [h, w] = dims_[static_cast<std::size_t>(view)];
    (void)h;
    return pdfs_[static_cast<std::size_t>(view)][static_cast<std::size_t>(i) * w + j];
  }

  RaySample draw(Rng& rng) const {
    const int view = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_views())));
    return draw_from_view(view, rng);
  }

  RaySample draw_from_view(int view, Rng& rng) const {
    const auto& cdf = cdfs_[static_cast<std::size_t>(view)];
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto p = static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    const auto [h, w] = dims_[static_cast<std::size_t>(view)];
    (void)h;
    RaySample s;
    s.view = view;
    s.i = static_cast<int>(p / static_cast<std::size_t>(w));
    s.j = static_cast<int>(p % static_cast<std::size_t>(w));
    return s;
  }

 private:
  std::vector<std::vector<double>> cdfs_;
  std::vector<std::vector<double>> pdfs_;
  std::vector<std::pair<int, int>> dims_;
};

/// Draw n pixels i.i.d. from the sampler and attach measured contrast.
inline std::vector<RaySample> sample_rays(const ProjectionStack& stack, const RaySampler& sampler,
                                          int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_rays: n must be >= 1");
  std::vector<RaySample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    RaySample s = sampler.draw(rng);
    const auto& img = stack.images[static_cast<std::size_t>(s.view)];
    s.att = img.att(s.i, s.j);
    s.ph = img.has_phase() ? img.ph(s.i, s.j) : 0.0;
    out.push_back(s);
  }
  return out;
}

/// Stratified depth samples: one uniform draw per equal sub-interval.
inline DepthSamples sample_depths(double t_near, double t_far, int n, Rng& rng) {
  if (!(t_far > t_near)) throw std::invalid_argument("sample_depths: degenerate interval");
  if (n < 2) throw std::invalid_argument("sample_depths: need at least 2 samples");
  DepthSamples d;
  d.t_near = t_near;
  d.t_far = t_far;
  d.ts.resize(static_cast<std::size_t>(n));
  const double stratum = (t_far - t_near) / n;
  for (int s = 0; s < n; ++s)
    d.ts[static_cast<std::size_t>(s)] = t_near + (s + rng.uniform()) * stratum;
  return d;
}

/// Mean over rays of the squared contrast residual summed over channels.
inline double loss_mean_squared(const std::vector<std::array<double, 2>>& predicted,
                                const std::vector<std::array<double, 2>>& measured,
                                int channels) {
  if (predicted.size() != measured.size())
    throw std::invalid_argument("loss: predicted/measured length mismatch");
  if (predicted.empty()) throw std::invalid_argument("loss: empty ray set");
  double acc = 0.0;
  for (std::size_t r = 0; r < predicted.size(); ++r) {
    const double da = predicted[r][0] - measured[r][0];
    acc += da * da;
    if (channels == 2) {
      const double dp = predicted[r][1] - measured[r][1];
      acc += dp * dp;
    }
  }
  return acc / static_cast<double>(predicted.size());
}

struct IterationRecord {
  int iteration = 0;  // global, 0-based
  int epoch = 0;      // 0-based
  double loss = 0.0;
  double lr = 0.0;
  int non_constraint_rays = 0;  // rays sampled outside the constraint subset
};

struct TrainResult {
  std::vector<IterationRecord> history;
  int iterations_per_epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
};

/// Checkpoint hook: (epoch, is_best, model). Called every checkpoint_every
/// epochs and whenever the epoch-mean loss improves.
template <typename T>
using CheckpointHook = std::function<void(int, bool, const FieldModel<T>&)>;

namespace detail {

/// Per-object training step: renders the sampled rays through the recorded
/// graph in chunks and accumulates gradients. Returns the object's loss
/// (mean over its rays, already scaled by loss_scale in the gradients).
template <typename T>
double train_object(FieldModel<T>& model, const ProjectionStack& stack,
                    const std::vector<int>& constraint_idx, const std::vector<RaySample>& rays,
                    const std::vector<DepthSamples>& depths, const TrainConfig& cfg,
                    double loss_scale) {
  const Aabb bounds = model.config.world_bounds;
  const double k = wavenumber(model.config.energy_keV);
  const int channels = model.config.output_channels;

  // measured targets, channel order (attenuation[, phase])
  const auto n_rays = static_cast<std::int64_t>(rays.size());

  // chunk rays so that rays*depths per graph stays bounded
  const int rays_per_chunk = std::max(1, cfg.points_per_chunk / cfg.depth_samples);
  double loss_value = 0.0;

  for (std::int64_t r0 = 0; r0 < n_rays; r0 += rays_per_chunk) {
    const auto r1 = std::min<std::int64_t>(r0 + rays_per_chunk, n_rays);
    nn::Graph<T> g(true);
    FieldProgram<T> prog(g, model, true);

    // encode the constraint subset inside this graph
    std::vector<ViewGeometry> views;
    std::vector<int> latents;
    for (int m : constraint_idx) {
      const auto& img = stack.images[static_cast<std::size_t>(m)];
      latents.push_back(prog.encoder(g.constant(prog.image_tensor(img))));
      views.push_back(img.view);
    }

    std::vector<Vec3> points;
    std::vector<std::int64_t> seg;
    std::vector<T> weights;
    nn::Tensor<T> target = nn::Tensor<T>::zeros({r1 - r0, channels});
    std::int64_t live_rays = 0;
    double dead_ray_loss = 0.0;

    for (std::int64_t r = r0; r < r1; ++r) {
      const auto& s = rays[static_cast<std::size_t>(r)];
      const auto& d = depths[static_cast<std::size_t>(r)];
      const auto& img = stack.images[static_cast<std::size_t>(s.view)];
      const double meas0 = s.att;
      const double meas1 = s.ph;
      if (d.ts.empty()) {
        // ray missed the bounds: prediction is identically zero
        dead_ray_loss += meas0 * meas0 + (channels == 2 ? meas1 * meas1 : 0.0);
        continue;
      }
      const Ray ray = ray_for_pixel(img.view, s.i, s.j, bounds);
      const auto w = d.weights();
      for (std::size_t q = 0; q < d.ts.size(); ++q) {
        points.push_back(ray.at(d.ts[q]));
        seg.push_back(live_rays);
        weights.push_back(static_cast<T>(k * w[q]));
      }
      target.at2(live_rays, 0) = static_cast<T>(meas0);
      if (channels == 2) target.at2(live_rays, 1) = static_cast<T>(meas1);
      ++live_rays;
    }

    if (live_rays > 0) {
      target.shape[0] = live_rays;
      target.data.resize(static_cast<std::size_t>(live_rays * channels));
      const int field = prog.field_outputs(points, views, latents);
      // rendered contrast per ray: channel order (attenuation[, phase]) =
      // weighted sums of (beta[, delta])
      int rendered = g.segment_weighted_sum(field, seg, weights, live_rays);
      if (channels == 2) {
        // field emits (delta, beta); swap to (attenuation, phase) order
        nn::Tensor<T> swap = nn::Tensor<T>::zeros({2, 2});
        swap.at2(0, 1) = T(1);  // delta -> phase column
        swap.at2(1, 0) = T(1);  // beta  -> attenuation column
        rendered = g.matmul(rendered, g.constant(std::move(swap)));
      }
      const int sq = g.squared_error_mean(rendered, std::move(target));
      // scale: chunk mean -> share of the full-object mean, batch-averaged
      const double share = static_cast<double>(live_rays) / static_cast<double>(n_rays);
      const int loss_node = g.scale(sq, static_cast<T>(loss_scale * share));
      loss_value += static_cast<double>(g.value(sq).data[0]) * share;
      g.backward(loss_node);
    }
    loss_value += dead_ray_loss / static_cast<double>(n_rays);
  }
  return loss_value;
}

}  // namespace detail

/// Self-supervised training on projection stacks (no volumetric data): per
/// iteration, draw a mini-batch of objects; per object, pick a fresh random
/// constraint subset, encode it, sample rays across ALL views by gradient
/// importance, render them through the field and step Adam on the mean
/// squared contrast residual. Deterministic given cfg.seed (single worker).
template <typename T>
TrainResult train(const std::vector<ProjectionStack>& dataset, const TrainConfig& cfg,
                  FieldModel<T>& model, const CheckpointHook<T>& checkpoint = {}) {
  cfg.validate();
  model.config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  std::vector<RaySampler> samplers;
  samplers.reserve(dataset.size());
  for (const auto& stack : dataset) {
    stack.validate();
    if (stack.n_views() < cfg.constraint_count + 1)
      throw std::invalid_argument("train: every stack needs at least M+1 views");
    if ((model.config.output_channels == 2) != stack.has_phase())
      throw std::invalid_argument("train: stack channels do not match the model");
    samplers.emplace_back(stack, cfg.pdf_floor);
  }

  const int n_objects = static_cast<int>(dataset.size());
  const int iters_per_epoch = iterations_per_epoch(n_objects, cfg.batch_objects);
  const Aabb bounds = model.config.world_bounds;

  Rng rng(cfg.seed);
  auto adam = nn::AdamState<T>::init(model.params, static_cast<T>(cfg.lr));

  TrainResult result;
  result.iterations_per_epoch = iters_per_epoch;
  result.history.reserve(static_cast<std::size_t>(iters_per_epoch) * cfg.epochs);

  std::vector<int> order(static_cast<std::size_t>(n_objects));
  std::iota(order.begin(), order.end(), 0);
  int iteration = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_now = lr_at_epoch(cfg, epoch);
    adam.lr = static_cast<T>(lr_now);

    // epoch-wise object shuffle
    for (int i = n_objects - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)))]);

    double epoch_loss = 0.0;
    for (int it = 0; it < iters_per_epoch; ++it, ++iteration) {
      const int b0 = it * cfg.batch_objects;
      std::vector<int> batch;
      for (int b = 0; b < cfg.batch_objects && b0 + b < n_objects; ++b)
        batch.push_back(order[static_cast<std::size_t>(b0 + b)]);
      const double batch_size = static_cast<double>(batch.size());

      double iter_loss = 0.0;
      int non_constraint = 0;
      for (int obj : batch) {
        const auto& stack = dataset[static_cast<std::size_t>(obj)];
        const int K = stack.n_views();
        const auto constraints = select_constraints(K, cfg.constraint_count, rng);
        auto rays = sample_rays(stack, samplers[static_cast<std::size_t>(obj)],
                                cfg.rays_per_iter, rng);

        // the loss must keep seeing views outside the constraint subset
        auto is_constraint = [&](int v) {
          return std::binary_search(constraints.begin(), constraints.end(), v);
        };
        if (K > cfg.constraint_count) {
          bool any_outside = false;
          for (const auto& s : rays) any_outside = any_outside || !is_constraint(s.view);
          if (!any_outside) {
            RaySample s;
            do {
              s = samplers[static_cast<std::size_t>(obj)].draw(rng);
            } while (is_constraint(s.view));
            const auto& img = stack.images[static_cast<std::size_t>(s.view)];
            s.att = img.att(s.i, s.j);
            s.ph = img.has_phase() ? img.ph(s.i, s.j) : 0.0;
            rays.back() = s;
          }
        }
        for (const auto& s : rays) non_constraint += is_constraint(s.view) ? 0 : 1;

        // depth samples per ray (consumed from the master stream in order)
        std::vector<DepthSamples> depths(rays.size());
        for (std::size_t r = 0; r < rays.size(); ++r) {
          const auto& img = stack.images[static_cast<std::size_t>(rays[r].view)];
          const Ray ray = ray_for_pixel(img.view, rays[r].i, rays[r].j, bounds);
          const auto hit = ray_aabb_intersect(ray, bounds);
          if (!hit || hit->second <= hit->first) continue;  // leaves ts empty
          depths[r] = sample_depths(hit->first, hit->second, cfg.depth_samples, rng);
        }

        iter_loss += detail::train_object(model, stack, constraints, rays, depths, cfg,
                                          1.0 / batch_size);
      }
      iter_loss /= batch_size;
      if (!std::isfinite(iter_loss))
        throw std::runtime_error("train: non-finite loss at iteration " +
                                 std::to_string(iteration) + " (epoch " + std::to_string(epoch) +
                                 "); aborting");
      nn::adam_step(model.params, adam);

      result.history.push_back({iteration, epoch, iter_loss, lr_now, non_constraint});
      epoch_loss += iter_loss;
    }
    epoch_loss /= iters_per_epoch;

    const bool best = epoch_loss < result.best_loss;
    if (best) result.best_loss = epoch_loss;
    if (checkpoint && (best || (epoch + 1) % cfg.checkpoint_every == 0))
      checkpoint(epoch, best, model);
  }
  return result;
}

/// Conditioned reconstruction: encode the chosen constraint views and render
/// the field over a grid. No parameter updates.
template <typename T>
RefractiveVolume infer(FieldModel<T>& model, const ProjectionStack& stack,
                       const std::vector<int>& constraint_idx, const GridSpec& grid,
                       int chunk = 4096) {
  stack.validate();
  if (constraint_idx.empty()) throw std::invalid_argument("infer: empty constraint set");
  std::vector<ContrastImage> images;
  for (int m : constraint_idx) {
    if (m < 0 || m >= stack.n_views())
      throw std::invalid_argument("infer: constraint index " + std::to_string(m) +
                                  " out of range");
    images.push_back(stack.images[static_cast<std::size_t>(m)]);
  }
  auto constraints = make_constraints(images, model);
  return render_volume(model, constraints, grid, chunk);
}

}  // namespace onix
