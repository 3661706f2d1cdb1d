#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "onix/constants.hpp"
#include "onix/geometry.hpp"
#include "onix/nn/graph.hpp"
#include "onix/nn/init.hpp"
#include "onix/nn/tensor.hpp"
#include "onix/projection.hpp"
#include "onix/rng.hpp"
#include "onix/volume.hpp"

namespace onix {

/// Architecture of the conditioned implicit field: a small multi-scale
/// convolutional encoder producing pixel-aligned latent grids, and a
/// residual MLP with weight-shared per-view blocks before the view average
/// and fresh blocks after it.
struct FieldConfig {
  int encoding_levels = 10;  // L
  int mlp_width = 128;
  int shared_blocks = 3;
  int head_blocks = 2;
  int latent_dim = 64;  // D
  int encoder_stages = 3;
  int output_channels = 2;  // 2: (delta, beta); 1: beta only
  std::array<double, 2> output_scale{1e-7, 1e-8};  // applied after softplus
  Aabb world_bounds{{-1e-4, -1e-4, -1e-4}, {1e-4, 1e-4, 1e-4}};  // gamma normalization region
  double energy_keV = 18.0;

  void validate() const {
    if (encoding_levels < 1 || mlp_width < 1 || shared_blocks < 1 || head_blocks < 1 ||
        latent_dim < 1 || encoder_stages < 1)
      throw std::invalid_argument("FieldConfig: all counts must be >= 1");
    if (output_channels != 1 && output_channels != 2)
      throw std::invalid_argument("FieldConfig: output_channels must be 1 or 2");
    if (latent_dim % (1 << (encoder_stages - 1)) != 0)
      throw std::invalid_argument("FieldConfig: latent_dim must divide by 2^(stages-1)");
    if (!(world_bounds.max.x > world_bounds.min.x))
      throw std::invalid_argument("FieldConfig: degenerate world bounds");
  }

  /// Latent channel budget per stage: halved per level of depth, the
  /// deepest stage carrying half the total (e.g. 16+16+32 = 64).
  std::vector<int> stage_widths() const {
    std::vector<int> w(static_cast<std::size_t>(encoder_stages));
    for (int i = 0; i < encoder_stages; ++i) {
      const int div = 1 << (std::min(encoder_stages - i, encoder_stages - 1));
      w[static_cast<std::size_t>(i)] = latent_dim / div;
    }
    return w;
  }

  int encoding_size() const { return 6 * encoding_levels; }
  int mlp_input_size() const { return encoding_size() + latent_dim; }
};

/// Pixel-aligned latent image of one view: features[:, i, j] conditions
/// points that project onto detector pixel (i, j).
template <typename T>
struct LatentGrid {
  ViewGeometry view;
  nn::Tensor<T> features;  // [D, H, W]
};

/// The encoded views used to condition one reconstruction.
template <typename T>
struct ConstraintSet {
  std::vector<ContrastImage> images;
  std::vector<LatentGrid<T>> latents;

  std::size_t size() const { return latents.size(); }
  bool empty() const { return latents.empty(); }
};

/// Encoder + MLP parameters for one field. The model state is the config
/// plus named parameters only; no voxel data is ever stored.
template <typename T>
struct FieldModel {
  FieldConfig config;
  nn::ParamStore<T> params;

  static FieldModel init(const FieldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    FieldModel m;
    m.config = cfg;
    Rng rng(seed);
    const auto widths = cfg.stage_widths();
    int cin = cfg.output_channels;
    for (int s = 0; s < cfg.encoder_stages; ++s) {
      const int cout = widths[static_cast<std::size_t>(s)];
      m.params.add("enc" + std::to_string(s) + ".w",
                   nn::glorot_uniform<T>({cout, cin, 3, 3}, 9 * cin, 9 * cout, rng));
      m.params.add("enc" + std::to_string(s) + ".b", nn::Tensor<T>::zeros({cout}));
      cin = cout;
    }
    const int in = cfg.mlp_input_size(), w = cfg.mlp_width;
    auto add_dense = [&](const std::string& name, int rows, int cols) {
      m.params.add(name + ".w", nn::glorot_uniform<T>({rows, cols}, rows, cols, rng));
      m.params.add(name + ".b", nn::Tensor<T>::zeros({cols}));
    };
    add_dense("mlp.in", in, w);
    for (int b = 0; b < cfg.shared_blocks; ++b) {
      add_dense("mlp.shared" + std::to_string(b) + ".1", w, w);
      add_dense("mlp.shared" + std::to_string(b) + ".2", w, w);
    }
    for (int b = 0; b < cfg.head_blocks; ++b) {
      add_dense("mlp.head" + std::to_string(b) + ".1", w, w);
      add_dense("mlp.head" + std::to_string(b) + ".2", w, w);
    }
    add_dense("mlp.out", w, cfg.output_channels);
    return m;
  }
};

/// Fourier positional encoding of a normalized coordinate triple:
/// per component, (sin(2^l pi c), cos(2^l pi c)) for l = 0..L-1, the three
/// components concatenated. Output length 6L.
inline std::vector<double> positional_encoding(const Vec3& x, int levels) {
  std::vector<double> out(static_cast<std::size_t>(6 * levels));
  std::size_t k = 0;
  for (int comp = 0; comp < 3; ++comp) {
    const double c = x[comp];
    double freq = 3.14159265358979323846;
    for (int l = 0; l < levels; ++l) {
      out[k++] = std::sin(freq * c);
      out[k++] = std::cos(freq * c);
      freq *= 2.0;
    }
  }
  return out;
}

/// Bilinear latent lookup at continuous detector coordinates (u, v) in the
/// half-pixel-offset convention of world_to_view: pixel (i,j) is centered
/// at (u,v) = (j+0.5, i+0.5). Queries outside the detector give zeros.
template <typename T>
std::vector<T> sample_latent(const LatentGrid<T>& grid, double u, double v) {
  const auto d = grid.features.dim(0);
  std::vector<T> out(static_cast<std::size_t>(d), T(0));
  const double x = u - 0.5;  // integer coordinates at pixel centers
  const double y = v - 0.5;
  const double xf = std::floor(x), yf = std::floor(y);
  const auto x0 = static_cast<std::int64_t>(xf), y0 = static_cast<std::int64_t>(yf);
  const double tx = x - xf, ty = y - yf;
  const auto h = grid.features.dim(1), w = grid.features.dim(2);
  const std::array<std::pair<std::int64_t, double>, 2> xs{{{x0, 1.0 - tx}, {x0 + 1, tx}}};
  const std::array<std::pair<std::int64_t, double>, 2> ys{{{y0, 1.0 - ty}, {y0 + 1, ty}}};
  for (const auto& [yi, wy] : ys) {
    if (yi < 0 || yi >= h) continue;
    for (const auto& [xi, wx] : xs) {
      if (xi < 0 || xi >= w) continue;
      for (std::int64_t c = 0; c < d; ++c)
        out[static_cast<std::size_t>(c)] += static_cast<T>(wy * wx) * grid.features.at3(c, yi, xi);
    }
  }
  return out;
}

namespace detail {

/// Normalized local coordinates of a world point in one view: (u, v) mapped
/// by detector extent to [-1, 1], depth centered on the bounds' midpoint and
/// scaled by its half diagonal.
inline Vec3 normalized_local_coords(const std::array<double, 3>& uvd, const ViewGeometry& view,
                                    const Aabb& bounds) {
  const double un = 2.0 * uvd[0] / view.cols - 1.0;
  const double vn = 2.0 * uvd[1] / view.rows - 1.0;
  const double dc = dot(bounds.center(), view.beam_dir());
  const double dn = (uvd[2] - dc) / bounds.half_diagonal();
  return {un, vn, dn};
}

}  // namespace detail

/// Builds the field's forward pass inside a Graph. Used with a recording
/// graph and bound parameters during training, and with a non-recording
/// graph during inference; both paths run exactly this code.
template <typename T>
class FieldProgram {
 public:
  /// trainable=true binds parameters to the model's store (gradients flow);
  /// otherwise parameter values enter the graph as constants.
  FieldProgram(nn::Graph<T>& g, FieldModel<T>& model, bool trainable)
      : g_(g), cfg_(model.config) {
    for (const auto& [name, p] : model.params.params)
      nodes_[name] = trainable ? g.param(model.params, name) : g.constant(p);
  }

  const FieldConfig& config() const { return cfg_; }

  /// [C,H,W] image -> [D,H,W] pixel-aligned latent grid.
  int encoder(int image_node) {
    int x = image_node;
    std::vector<int> taps;
    int factor = 1;
    for (int s = 0; s < cfg_.encoder_stages; ++s) {
      x = g_.conv2d(x, node("enc" + std::to_string(s) + ".w"),
                    node("enc" + std::to_string(s) + ".b"), 1, 1);
      x = g_.relu(x);
      x = g_.avg_pool2(x);
      factor *= 2;
      taps.push_back(factor == 1 ? x : g_.upsample_bilinear(x, factor));
    }
    return g_.concat_channels(taps);
  }

  /// Tensor view of a contrast image (channel count must match the config).
  nn::Tensor<T> image_tensor(const ContrastImage& img) const {
    const int c = cfg_.output_channels;
    if (c == 2 && !img.has_phase())
      throw std::invalid_argument("FieldProgram: model expects 2 channels, image has 1");
    nn::Tensor<T> t = nn::Tensor<T>::zeros({c, img.view.rows, img.view.cols});
    for (std::size_t p = 0; p < img.attenuation.size(); ++p)
      t.data[p] = static_cast<T>(img.attenuation[p]);
    if (c == 2)
      for (std::size_t p = 0; p < img.phase.size(); ++p)
        t.data[img.attenuation.size() + p] = static_cast<T>(img.phase[p]);
    return t;
  }

  /// Field outputs for a batch of world points conditioned on the given
  /// (view, latent-node) pairs: [N, output_channels], channel 0 = delta
  /// when two channels are configured, last channel = beta.
  int field_outputs(const std::vector<Vec3>& points,
                    const std::vector<ViewGeometry>& views,
                    const std::vector<int>& latent_nodes) {
    if (views.empty() || views.size() != latent_nodes.size())
      throw std::invalid_argument("field_outputs: empty or inconsistent constraint set");
    const auto n = static_cast<std::int64_t>(points.size());
    const int L = cfg_.encoding_levels;
    std::vector<int> shared_out;
    shared_out.reserve(views.size());
    for (std::size_t m = 0; m < views.size(); ++m) {
      nn::Tensor<T> gamma = nn::Tensor<T>::zeros({n, 6 * L});
      std::vector<std::array<T, 2>> uv(points.size());
      for (std::size_t p = 0; p < points.size(); ++p) {
        const auto uvd = world_to_view(points[p], views[m]);
        const Vec3 nc = detail::normalized_local_coords(uvd, views[m], cfg_.world_bounds);
        const auto enc = positional_encoding(nc, L);
        for (std::size_t k = 0; k < enc.size(); ++k)
          gamma.at2(static_cast<std::int64_t>(p), static_cast<std::int64_t>(k)) =
              static_cast<T>(enc[k]);
        uv[p] = {static_cast<T>(uvd[0] - 0.5), static_cast<T>(uvd[1] - 0.5)};
      }
      const int latent = g_.sample_bilinear(latent_nodes[m], std::move(uv));
      int h = g_.dense(g_.concat_cols({g_.constant(std::move(gamma)), latent}), node("mlp.in.w"),
                       node("mlp.in.b"));
      for (int b = 0; b < cfg_.shared_blocks; ++b)
        h = residual_block(h, "mlp.shared" + std::to_string(b));
      shared_out.push_back(h);
    }
    int h = g_.mean_list(shared_out);
    for (int b = 0; b < cfg_.head_blocks; ++b) h = residual_block(h, "mlp.head" + std::to_string(b));
    const int raw = g_.dense(g_.relu(h), node("mlp.out.w"), node("mlp.out.b"));
    nn::Tensor<T> scale = nn::Tensor<T>::zeros({cfg_.output_channels});
    for (int c = 0; c < cfg_.output_channels; ++c) {
      const int slot = cfg_.output_channels == 1 ? 1 : c;  // single channel = beta scale
      scale.data[static_cast<std::size_t>(c)] =
          static_cast<T>(cfg_.output_scale[static_cast<std::size_t>(slot)]);
    }
    return g_.colwise_scale(g_.softplus(raw), g_.constant(std::move(scale)));
  }

 private:
  int residual_block(int h, const std::string& prefix) {
    int t = g_.relu(h);
    t = g_.dense(t, node(prefix + ".1.w"), node(prefix + ".1.b"));
    t = g_.relu(t);
    t = g_.dense(t, node(prefix + ".2.w"), node(prefix + ".2.b"));
    return g_.add(h, t);
  }

  int node(const std::string& name) const {
    auto it = nodes_.find(name);
    if (it == nodes_.end()) throw std::logic_error("FieldProgram: unknown parameter " + name);
    return it->second;
  }

  nn::Graph<T>& g_;
  FieldConfig cfg_;
  std::map<std::string, int> nodes_;
};

/// Encode views into pixel-aligned latent grids (inference path).
template <typename T>
std::vector<LatentGrid<T>> encode_views(const std::vector<ContrastImage>& images,
                                        FieldModel<T>& model) {
  std::vector<LatentGrid<T>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    nn::Graph<T> g(false);
    FieldProgram<T> prog(g, model, false);
    const int latent = prog.encoder(g.constant(prog.image_tensor(img)));
    out.push_back({img.view, g.value(latent)});
  }
  return out;
}

template <typename T>
ConstraintSet<T> make_constraints(const std::vector<ContrastImage>& images, FieldModel<T>& model) {
  ConstraintSet<T> set;
  set.images = images;
  set.latents = encode_views(images, model);
  return set;
}

/// Batched field evaluation at world points (inference path).
template <typename T>
std::vector<std::array<double, 2>> field_eval_batch(const std::vector<Vec3>& points,
                                                    const ConstraintSet<T>& constraints,
                                                    FieldModel<T>& model) {
  if (constraints.empty()) throw std::invalid_argument("field_eval: empty constraint set");
  nn::Graph<T> g(false);
  FieldProgram<T> prog(g, model, false);
  std::vector<ViewGeometry> views;
  std::vector<int> latents;
  for (const auto& lg : constraints.latents) {
    views.push_back(lg.view);
    latents.push_back(g.constant(lg.features));
  }
  const int out = prog.field_outputs(points, views, latents);
  const auto& val = g.value(out);
  std::vector<std::array<double, 2>> result(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (model.config.output_channels == 2) {
      result[p] = {static_cast<double>(val.at2(static_cast<std::int64_t>(p), 0)),
                   static_cast<double>(val.at2(static_cast<std::int64_t>(p), 1))};
    } else {
      result[p] = {0.0, static_cast<double>(val.at2(static_cast<std::int64_t>(p), 0))};
    }
  }
  return result;
}

/// (delta, beta) at one world point.
template <typename T>
std::array<double, 2> field_eval(const Vec3& x, const ConstraintSet<T>& constraints,
                                 FieldModel<T>& model) {
  return field_eval_batch<T>({x}, constraints, model)[0];
}

/// Sorted depth samples inside [t_near, t_far] along one ray.
struct DepthSamples {
  std::vector<double> ts;
  double t_near = 0.0;
  double t_far = 0.0;

  void validate() const {
    if (ts.size() < 2) throw std::invalid_argument("DepthSamples: need at least 2 samples");
    if (!(t_far > t_near)) throw std::invalid_argument("DepthSamples: degenerate interval");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i] < t_near || ts[i] > t_far)
        throw std::invalid_argument("DepthSamples: sample outside [t_near, t_far]");
      if (i > 0 && ts[i] <= ts[i - 1])
        throw std::invalid_argument("DepthSamples: samples must be strictly increasing");
    }
  }

  /// Quadrature weights: dt_j = t_{j+1} - t_j, the last sample weighted by
  /// t_far - t_N; the first sample also covers the entry gap so the weights
  /// always sum to exactly t_far - t_near.
  std::vector<double> weights() const {
    std::vector<double> w(ts.size());
    for (std::size_t j = 0; j + 1 < ts.size(); ++j) w[j] = ts[j + 1] - ts[j];
    w.back() = t_far - ts.back();
    w.front() += ts.front() - t_near;
    return w;
  }
};

/// Rendered complex-contrast of one ray: (attenuation, phase) =
/// (k*sum w_j beta_j, k*sum w_j delta_j). Inference path; the trainer builds
/// the same quadrature inside its recorded graph.
template <typename T>
std::array<double, 2> render_ray(const Ray& ray, const DepthSamples& depths,
                                 const ConstraintSet<T>& constraints, FieldModel<T>& model) {
  depths.validate();
  std::vector<Vec3> points;
  points.reserve(depths.ts.size());
  for (double t : depths.ts) points.push_back(ray.at(t));
  const auto vals = field_eval_batch(points, constraints, model);
  const auto w = depths.weights();
  const double k = wavenumber(model.config.energy_keV);
  double att = 0.0, ph = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    att += w[j] * vals[j][1];
    ph += w[j] * vals[j][0];
  }
  return {k * att, k * ph};
}

/// Evaluate the field at every voxel center of a grid, in chunks.
template <typename T>
RefractiveVolume render_volume(FieldModel<T>& model, const ConstraintSet<T>& constraints,
                               const GridSpec& grid, int chunk = 4096) {
  if (chunk < 1) chunk = 4096;
  RefractiveVolume vol(grid, model.config.energy_keV);
  std::vector<Vec3> points;
  std::vector<std::int64_t> idx;
  points.reserve(static_cast<std::size_t>(chunk));
  idx.reserve(static_cast<std::size_t>(chunk));
  auto flush = [&] {
    if (points.empty()) return;
    const auto vals = field_eval_batch(points, constraints, model);
    for (std::size_t p = 0; p < points.size(); ++p) {
      vol.delta[static_cast<std::size_t>(idx[p])] = vals[p][0];
      vol.beta[static_cast<std::size_t>(idx[p])] = vals[p][1];
    }
    points.clear();
    idx.clear();
  };
  for (int iz = 0; iz < grid.dims[2]; ++iz)
    for (int iy = 0; iy < grid.dims[1]; ++iy)
      for (int ix = 0; ix < grid.dims[0]; ++ix) {
        points.push_back(grid.voxel_center(ix, iy, iz));
        idx.push_back(vol.index(ix, iy, iz));
        if (static_cast<int>(points.size()) == chunk) flush();
      }
  flush();
  return vol;
}

}  // namespace onix
