#pragma once

// On-disk formats. A volume ("RVOL") or image ("RIMG") is a JSON sidecar
// `<stem>.json` plus raw little-endian float32 samples in `<stem>.raw`,
// x-fastest (column-fastest for images). Round trips are bit-exact for data
// already representable in float32.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sphereg/encoder.hpp"
#include "sphereg/error.hpp"
#include "sphereg/image.hpp"
#include "sphereg/phantom.hpp"
#include "sphereg/volume.hpp"

namespace sphereg::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline void write_f32le(const fs::path& path, const float* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(n);
  std::memcpy(words.data(), data, n * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : words) w = __builtin_bswap32(w);
  }
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(n * 4));
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

inline std::vector<float> read_f32le(const fs::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint32_t> words(n);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * 4));
  if (in.gcount() != static_cast<std::streamsize>(n * 4)) fail(ErrorCode::Io, "truncated raw file " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& w : words) w = __builtin_bswap32(w);
  }
  std::vector<float> out(n);
  std::memcpy(out.data(), words.data(), n * sizeof(float));
  return out;
}

inline json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::InvalidConfig, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

inline fs::path sidecar(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
inline fs::path raw_file(const fs::path& stem) { return fs::path(stem.string() + ".raw"); }

inline void save_volume(const fs::path& stem, const Volume& vol) {
  json meta = {{"format", "RVOL"},
               {"dims", {vol.dims[0], vol.dims[1], vol.dims[2]}},
               {"spacing_mm", detail::vec3_json(vol.spacing)},
               {"origin_mm", detail::vec3_json(vol.origin)},
               {"dtype", "f32le"},
               {"order", "x-fastest"},
               {"raw", raw_file(stem).filename().string()}};
  write_json(sidecar(stem), meta);
  detail::write_f32le(raw_file(stem), vol.data.data(), vol.data.size());
}

inline Volume load_volume(const fs::path& stem) {
  const json meta = read_json(sidecar(stem));
  if (meta.value("format", "") != "RVOL" || meta.value("dtype", "") != "f32le") {
    fail(ErrorCode::InvalidConfig, sidecar(stem).string() + ": not an f32le RVOL sidecar");
  }
  Volume vol;
  for (int a = 0; a < 3; ++a) vol.dims[a] = meta.at("dims").at(a).get<int>();
  vol.spacing = detail::json_vec3(meta.at("spacing_mm"));
  vol.origin = detail::json_vec3(meta.at("origin_mm"));
  const auto n = static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  vol.data = detail::read_f32le(stem.parent_path() / meta.value("raw", raw_file(stem).filename().string()), n);
  vol.validate();
  return vol;
}

/// Images are stored as float32; values are rounded on save.
inline void save_image(const fs::path& stem, const Image2D& img) {
  json meta = {{"format", "RIMG"},
               {"h", img.h},
               {"w", img.w},
               {"dtype", "f32le"},
               {"order", "row-major"},
               {"raw", raw_file(stem).filename().string()}};
  write_json(sidecar(stem), meta);
  std::vector<float> f(img.data.begin(), img.data.end());
  detail::write_f32le(raw_file(stem), f.data(), f.size());
}

inline Image2D load_image(const fs::path& stem) {
  const json meta = read_json(sidecar(stem));
  if (meta.value("format", "") != "RIMG" || meta.value("dtype", "") != "f32le") {
    fail(ErrorCode::InvalidConfig, sidecar(stem).string() + ": not an f32le RIMG sidecar");
  }
  Image2D img(meta.at("h").get<int>(), meta.at("w").get<int>());
  const auto f = detail::read_f32le(stem.parent_path() / meta.value("raw", raw_file(stem).filename().string()),
                                    img.data.size());
  std::copy(f.begin(), f.end(), img.data.begin());
  return img;
}

/// 8-bit binary PGM, min-max scaled. A constant image maps to black.
inline void write_pgm(const fs::path& path, const Image2D& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  double lo = img.data.empty() ? 0.0 : img.data[0], hi = lo;
  for (double x : img.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double x : img.data) out.put(static_cast<char>(static_cast<unsigned char>(std::lround((x - lo) * scale))));
}

inline json landmarks_json(const std::vector<Vec3>& pts) {
  json arr = json::array();
  for (const Vec3& p : pts) arr.push_back(detail::vec3_json(p));
  return arr;
}

inline std::vector<Vec3> json_landmarks(const json& arr) {
  std::vector<Vec3> pts;
  for (const auto& p : arr) pts.push_back(detail::json_vec3(p));
  return pts;
}

/// Phantom = RVOL at `<stem>` plus `<stem>.landmarks.json`.
inline void save_phantom(const fs::path& stem, const Phantom& ph) {
  save_volume(stem, ph.volume);
  write_json(fs::path(stem.string() + ".landmarks.json"),
             {{"name", ph.name}, {"seed", ph.seed}, {"landmarks_mm", landmarks_json(ph.landmarks)}});
}

inline Phantom load_phantom(const fs::path& stem) {
  Phantom ph;
  ph.volume = load_volume(stem);
  const json meta = read_json(fs::path(stem.string() + ".landmarks.json"));
  ph.name = meta.value("name", "");
  ph.seed = meta.value("seed", std::uint64_t{0});
  ph.landmarks = json_landmarks(meta.at("landmarks_mm"));
  return ph;
}

/// Encoder = JSON sidecar with the layer shapes plus one f32le blob holding
/// w1, b1, w2, b2, wg, bg in that order. Values are rounded to float32.
inline void save_encoder(const fs::path& stem, const EncoderParams& p) {
  p.validate();
  json meta = {{"format", "RENC"},
               {"in_h", p.in_h},
               {"in_w", p.in_w},
               {"stride", p.stride},
               {"c1", p.c1},
               {"cl", p.cl},
               {"cg", p.cg},
               {"activation", to_string(p.act)},
               {"embed", p.embed == EmbedMode::OrthogonalTangent ? "orthogonal_tangent" : "verbatim_normalized"},
               {"input_scale", p.input_scale},
               {"tensors", {"w1", "b1", "w2", "b2", "wg", "bg"}},
               {"parameter_count", p.parameter_count()},
               {"dtype", "f32le"},
               {"raw", raw_file(stem).filename().string()}};
  write_json(sidecar(stem), meta);
  const std::vector<double> flat = p.flatten();
  std::vector<float> f(flat.begin(), flat.end());
  detail::write_f32le(raw_file(stem), f.data(), f.size());
}

inline EncoderParams load_encoder(const fs::path& stem) {
  const json meta = read_json(sidecar(stem));
  if (meta.value("format", "") != "RENC" || meta.value("dtype", "") != "f32le") {
    fail(ErrorCode::InvalidConfig, sidecar(stem).string() + ": not an f32le RENC sidecar");
  }
  EncoderParams p;
  p.in_h = meta.at("in_h").get<int>();
  p.in_w = meta.at("in_w").get<int>();
  p.stride = meta.at("stride").get<int>();
  p.c1 = meta.at("c1").get<int>();
  p.cl = meta.at("cl").get<int>();
  p.cg = meta.at("cg").get<int>();
  p.act = activation_from_string(meta.at("activation").get<std::string>());
  const std::string embed = meta.at("embed").get<std::string>();
  if (embed == "orthogonal_tangent") {
    p.embed = EmbedMode::OrthogonalTangent;
  } else if (embed == "verbatim_normalized") {
    p.embed = EmbedMode::VerbatimNormalized;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown embed mode '" + embed + "'");
  }
  p.input_scale = meta.at("input_scale").get<double>();
  if (p.stride < 1 || p.in_h % p.stride != 0 || p.in_w % p.stride != 0) {
    fail(ErrorCode::ShapeMismatch, "encoder input size must be a multiple of the stride");
  }
  p.allocate();
  const auto f = detail::read_f32le(stem.parent_path() / meta.value("raw", raw_file(stem).filename().string()),
                                    p.parameter_count());
  p.unflatten(std::vector<double>(f.begin(), f.end()));
  p.validate();
  return p;
}

}  // namespace sphereg::io
