#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "onix/geometry.hpp"

namespace onix {

enum class Channel { Attenuation, Phase };

/// One projection image: attenuation contrast k*int(beta dz) and optionally
/// phase contrast k*int(delta dz), both stored as positive line integrals.
/// Under Eq.-of-motion sign bookkeeping the complex log contrast is
/// c = -attenuation - i*phase; only the positive channels are stored.
struct ContrastImage {
  ViewGeometry view;
  std::vector<double> attenuation;  // rows*cols, row-major
  std::vector<double> phase;        // empty when the channel is absent

  bool has_phase() const { return !phase.empty(); }

  std::size_t pixel_index(int i, int j) const {
    return static_cast<std::size_t>(i) * view.cols + j;
  }

  double& att(int i, int j) { return attenuation[pixel_index(i, j)]; }
  double att(int i, int j) const { return attenuation[pixel_index(i, j)]; }
  double& ph(int i, int j) { return phase[pixel_index(i, j)]; }
  double ph(int i, int j) const { return phase[pixel_index(i, j)]; }

  const std::vector<double>& channel(Channel c) const {
    if (c == Channel::Attenuation) return attenuation;
    if (!has_phase()) throw std::invalid_argument("ContrastImage: phase channel absent");
    return phase;
  }
};

/// A set of contrast images with shared detector geometry and energy,
/// view angles strictly increasing.
struct ProjectionStack {
  std::vector<ContrastImage> images;
  double energy_keV = 18.0;

  int n_views() const { return static_cast<int>(images.size()); }
  bool has_phase() const { return !images.empty() && images.front().has_phase(); }

  bool has_channel(Channel c) const {
    return c == Channel::Attenuation ? !images.empty() : has_phase();
  }

  void validate() const {
    if (images.empty()) throw std::invalid_argument("ProjectionStack: empty stack");
    const auto& v0 = images.front().view;
    const bool phase0 = images.front().has_phase();
    for (std::size_t m = 0; m < images.size(); ++m) {
      const auto& im = images[m];
      if (im.view.rows != v0.rows || im.view.cols != v0.cols ||
          im.view.pixel_size != v0.pixel_size)
        throw std::invalid_argument("ProjectionStack: detector geometry differs between views");
      if (im.has_phase() != phase0)
        throw std::invalid_argument("ProjectionStack: inconsistent channel mask");
      if (im.attenuation.size() != static_cast<std::size_t>(im.view.rows) * im.view.cols)
        throw std::invalid_argument("ProjectionStack: image buffer size mismatch");
      if (m > 0 && images[m].view.angle <= images[m - 1].view.angle)
        throw std::invalid_argument("ProjectionStack: view angles must be strictly increasing");
    }
  }
};

/// Raw detector intensity -> attenuation contrast, -ln(I/I0).
inline double attenuation_from_intensity(double intensity, double flat_field) {
  if (intensity <= 0.0 || flat_field <= 0.0)
    throw std::invalid_argument("attenuation_from_intensity: intensities must be positive");
  return -std::log(intensity / flat_field);
}

}  // namespace onix
