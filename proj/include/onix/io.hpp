#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "onix/field.hpp"
#include "onix/projection.hpp"
#include "onix/volume.hpp"

namespace onix::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

using json = nlohmann::json;

// All three container formats share one layout: an ASCII magic tag, a
// uint32 little-endian byte length, that many bytes of UTF-8 JSON header,
// then a raw little-endian payload whose exact length the header implies.

namespace detail {

inline void write_exact(std::ofstream& f, const void* data, std::size_t n) {
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("io: short write");
}

inline void write_header(std::ofstream& f, const std::string& magic, const json& header) {
  write_exact(f, magic.data(), magic.size());
  const std::string h = header.dump();
  const auto len = static_cast<std::uint32_t>(h.size());
  write_exact(f, &len, 4);
  write_exact(f, h.data(), h.size());
}

inline void write_f32(std::ofstream& f, const std::vector<double>& values) {
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  write_exact(f, buf.data(), buf.size() * 4);
}

struct Reader {
  std::vector<char> bytes;
  std::size_t pos = 0;
  std::string path;

  explicit Reader(const std::string& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("io: cannot open " + p);
    f.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("io: cannot read " + p);
  }

  void need(std::size_t n, const std::string& what) const {
    if (pos + n > bytes.size())
      throw std::runtime_error("io: " + path + " truncated in " + what + ": need " +
                               std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                               ", file has " + std::to_string(bytes.size()));
  }

  void expect_magic(const std::string& magic) {
    need(magic.size(), "magic");
    if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
      throw std::runtime_error("io: " + path + " has wrong magic (expected " + magic + ")");
    pos = magic.size();
  }

  json header() {
    need(4, "header length");
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + pos, 4);
    pos += 4;
    need(len, "header");
    json h;
    try {
      h = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    } catch (const json::parse_error& e) {
      throw std::runtime_error("io: " + path + " header is not valid JSON: " + e.what());
    }
    pos += len;
    return h;
  }

  void read_f32(std::vector<double>& out, std::size_t count, const std::string& what) {
    need(count * 4, what);
    out.resize(count);
    const char* src = bytes.data() + pos;
    for (std::size_t i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, src + i * 4, 4);
      out[i] = static_cast<double>(v);
    }
    pos += count * 4;
  }

  void expect_consumed() const {
    if (pos != bytes.size())
      throw std::runtime_error("io: " + path + " has " + std::to_string(bytes.size() - pos) +
                               " trailing bytes (payload length mismatch)");
  }
};

template <typename T>
const char* dtype_name() {
  if constexpr (std::is_same_v<T, double>) return "f64";
  else return "f32";
}

inline const json& require(const json& h, const std::string& key, const std::string& path) {
  auto it = h.find(key);
  if (it == h.end())
    throw std::runtime_error("io: " + path + " header is missing required key '" + key + "'");
  return *it;
}

}  // namespace detail

// ---- ONIXVOL1 ----

inline void write_volume(const std::string& path, const RefractiveVolume& vol) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("io: cannot create " + path);
  json h;
  h["dims"] = {vol.grid.dims[0], vol.grid.dims[1], vol.grid.dims[2]};
  h["voxel_size_m"] = vol.grid.voxel_size;
  h["channels"] = {"delta", "beta"};
  h["energy_keV"] = vol.energy_keV;
  h["origin"] = {vol.grid.origin.x, vol.grid.origin.y, vol.grid.origin.z};
  detail::write_header(f, "ONIXVOL1", h);
  detail::write_f32(f, vol.delta);
  detail::write_f32(f, vol.beta);
}

inline RefractiveVolume read_volume(const std::string& path) {
  detail::Reader r(path);
  r.expect_magic("ONIXVOL1");
  const json h = r.header();
  const auto dims = detail::require(h, "dims", path);
  if (!dims.is_array() || dims.size() != 3)
    throw std::runtime_error("io: " + path + " header 'dims' must be a 3-array");
  GridSpec g;
  g.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
  g.voxel_size = detail::require(h, "voxel_size_m", path).get<double>();
  const auto origin = detail::require(h, "origin", path);
  g.origin = {origin[0].get<double>(), origin[1].get<double>(), origin[2].get<double>()};
  if (!g.valid()) throw std::runtime_error("io: " + path + " header grid is invalid");
  RefractiveVolume vol(g, detail::require(h, "energy_keV", path).get<double>());
  const auto n = static_cast<std::size_t>(g.voxel_count());
  for (const auto& ch : detail::require(h, "channels", path)) {
    const std::string name = ch.get<std::string>();
    if (name == "delta") r.read_f32(vol.delta, n, "delta channel");
    else if (name == "beta") r.read_f32(vol.beta, n, "beta channel");
    else throw std::runtime_error("io: " + path + " has unknown volume channel '" + name + "'");
  }
  r.expect_consumed();
  return vol;
}

// ---- ONIXPRJ1 ----

inline void write_projections(const std::string& path, const ProjectionStack& stack) {
  stack.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("io: cannot create " + path);
  const auto& v0 = stack.images.front().view;
  json h;
  h["n_views"] = stack.n_views();
  h["H"] = v0.rows;
  h["W"] = v0.cols;
  h["pixel_size_m"] = v0.pixel_size;
  h["energy_keV"] = stack.energy_keV;
  h["channels"] = stack.has_phase() ? json::array({"attenuation", "phase"})
                                    : json::array({"attenuation"});
  json angles = json::array();
  for (const auto& img : stack.images) angles.push_back(img.view.angle);
  h["angles_rad"] = angles;
  detail::write_header(f, "ONIXPRJ1", h);
  for (const auto& img : stack.images) {
    detail::write_f32(f, img.attenuation);
    if (stack.has_phase()) detail::write_f32(f, img.phase);
  }
}

inline ProjectionStack read_projections(const std::string& path) {
  detail::Reader r(path);
  r.expect_magic("ONIXPRJ1");
  const json h = r.header();
  const int n_views = detail::require(h, "n_views", path).get<int>();
  const int rows = detail::require(h, "H", path).get<int>();
  const int cols = detail::require(h, "W", path).get<int>();
  const double pix = detail::require(h, "pixel_size_m", path).get<double>();
  const auto& angles = detail::require(h, "angles_rad", path);
  if (static_cast<int>(angles.size()) != n_views)
    throw std::runtime_error("io: " + path + " angles_rad length does not match n_views");
  bool phase = false;
  for (const auto& ch : detail::require(h, "channels", path)) {
    const std::string name = ch.get<std::string>();
    if (name == "phase") phase = true;
    else if (name != "attenuation")
      throw std::runtime_error("io: " + path + " has unknown projection channel '" + name + "'");
  }
  ProjectionStack stack;
  stack.energy_keV = detail::require(h, "energy_keV", path).get<double>();
  const auto n_pix = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  for (int m = 0; m < n_views; ++m) {
    ContrastImage img;
    img.view.rows = rows;
    img.view.cols = cols;
    img.view.pixel_size = pix;
    img.view.angle = angles[static_cast<std::size_t>(m)].get<double>();
    img.view.view_index = m;
    r.read_f32(img.attenuation, n_pix, "attenuation view " + std::to_string(m));
    if (phase) r.read_f32(img.phase, n_pix, "phase view " + std::to_string(m));
    stack.images.push_back(std::move(img));
  }
  r.expect_consumed();
  stack.validate();
  return stack;
}

// ---- ONIXCKPT1 ----

inline json field_config_to_json(const FieldConfig& cfg) {
  json j;
  j["encoding_levels"] = cfg.encoding_levels;
  j["mlp_width"] = cfg.mlp_width;
  j["shared_blocks"] = cfg.shared_blocks;
  j["head_blocks"] = cfg.head_blocks;
  j["latent_dim"] = cfg.latent_dim;
  j["encoder_stages"] = cfg.encoder_stages;
  j["output_channels"] = cfg.output_channels;
  j["output_scale"] = {cfg.output_scale[0], cfg.output_scale[1]};
  j["world_bounds"] = {{"min", {cfg.world_bounds.min.x, cfg.world_bounds.min.y, cfg.world_bounds.min.z}},
                       {"max", {cfg.world_bounds.max.x, cfg.world_bounds.max.y, cfg.world_bounds.max.z}}};
  j["energy_keV"] = cfg.energy_keV;
  return j;
}

inline FieldConfig field_config_from_json(const json& j) {
  FieldConfig cfg;
  cfg.encoding_levels = j.at("encoding_levels").get<int>();
  cfg.mlp_width = j.at("mlp_width").get<int>();
  cfg.shared_blocks = j.at("shared_blocks").get<int>();
  cfg.head_blocks = j.at("head_blocks").get<int>();
  cfg.latent_dim = j.at("latent_dim").get<int>();
  cfg.encoder_stages = j.at("encoder_stages").get<int>();
  cfg.output_channels = j.at("output_channels").get<int>();
  cfg.output_scale = {j.at("output_scale")[0].get<double>(), j.at("output_scale")[1].get<double>()};
  const auto& wb = j.at("world_bounds");
  cfg.world_bounds.min = {wb.at("min")[0].get<double>(), wb.at("min")[1].get<double>(),
                          wb.at("min")[2].get<double>()};
  cfg.world_bounds.max = {wb.at("max")[0].get<double>(), wb.at("max")[1].get<double>(),
                          wb.at("max")[2].get<double>()};
  cfg.energy_keV = j.at("energy_keV").get<double>();
  cfg.validate();
  return cfg;
}

template <typename T>
void write_checkpoint(const std::string& path, const FieldModel<T>& model) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("io: cannot create " + path);
  json h;
  h["config"] = field_config_to_json(model.config);
  json table = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, p] : model.params.params) {
    json entry;
    entry["shape"] = p.shape;
    entry["offset"] = offset;
    entry["dtype"] = detail::dtype_name<T>();
    table[name] = entry;
    offset += static_cast<std::uint64_t>(p.numel()) * sizeof(T);
  }
  h["params"] = table;
  detail::write_header(f, "ONIXCKPT1", h);
  for (const auto& [name, p] : model.params.params)
    detail::write_exact(f, p.data.data(), p.data.size() * sizeof(T));
}

/// dtype recorded in a checkpoint ("f64" or "f32").
inline std::string checkpoint_dtype(const std::string& path) {
  detail::Reader r(path);
  r.expect_magic("ONIXCKPT1");
  const json h = r.header();
  const auto& table = detail::require(h, "params", path);
  for (const auto& [name, entry] : table.items()) {
    (void)name;
    return entry.at("dtype").get<std::string>();
  }
  throw std::runtime_error("io: " + path + " has an empty parameter table");
}

template <typename T>
FieldModel<T> read_checkpoint(const std::string& path) {
  detail::Reader r(path);
  r.expect_magic("ONIXCKPT1");
  const json h = r.header();
  FieldModel<T> model;
  model.config = field_config_from_json(detail::require(h, "config", path));
  const auto& table = detail::require(h, "params", path);
  const std::size_t payload_start = r.pos;
  for (const auto& [name, entry] : table.items()) {
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != detail::dtype_name<T>())
      throw std::runtime_error("io: " + path + " parameter " + name + " has dtype " + dtype +
                               ", expected " + detail::dtype_name<T>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    auto t = nn::Tensor<T>::zeros(shape);
    const std::size_t nbytes = t.data.size() * sizeof(T);
    r.pos = payload_start + static_cast<std::size_t>(offset);
    r.need(nbytes, "parameter " + name);
    std::memcpy(t.data.data(), r.bytes.data() + r.pos, nbytes);
    r.pos += nbytes;
    model.params.add(name, std::move(t));
  }
  // ordered map writes parameters in name order, so the last read ends the file
  r.expect_consumed();
  return model;
}

}  // namespace onix::io
