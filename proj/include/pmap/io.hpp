#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pmap/geometry.hpp"

namespace pmap::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open for writing: " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open for reading: " + path.string());
  return in;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidInput("unexpected end of file");
  return v;
}

}  // namespace detail

// Raw grid: u32 width, u32 height, then width*height values row-major.
inline void write_depth(const std::filesystem::path& path, const DepthMap& d) {
  auto out = detail::open_out(path);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.width()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.height()));
  for (double v : d.values.data()) detail::put<float>(out, static_cast<float>(v));
}

inline std::filesystem::path mask_path(const std::filesystem::path& depth_path) {
  auto p = depth_path;
  p += ".mask";
  return p;
}

inline void write_mask(const std::filesystem::path& path, const Mask& m) {
  auto out = detail::open_out(path);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.width()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.height()));
  out.write(reinterpret_cast<const char*>(m.data().data()), static_cast<std::streamsize>(m.size()));
}

// Writes `path` (float32 depth) and `path.mask` (u8 validity).
inline void write_depth_with_mask(const std::filesystem::path& path, const DepthMap& d) {
  write_depth(path, d);
  write_mask(mask_path(path), d.mask);
}

inline Grid<double> read_raw_float(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  const auto w = detail::get<std::uint32_t>(in);
  const auto h = detail::get<std::uint32_t>(in);
  Grid<double> g(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : g.data()) v = detail::get<float>(in);
  return g;
}

inline Mask read_mask(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  const auto w = detail::get<std::uint32_t>(in);
  const auto h = detail::get<std::uint32_t>(in);
  Mask m(static_cast<int>(w), static_cast<int>(h));
  in.read(reinterpret_cast<char*>(m.data().data()), static_cast<std::streamsize>(m.size()));
  if (!in) throw InvalidInput("truncated mask file: " + path.string());
  return m;
}

// Reads the depth file and its sidecar mask. Without a mask file, every
// positive finite depth counts as valid.
inline DepthMap read_depth(const std::filesystem::path& path) {
  DepthMap d;
  d.values = read_raw_float(path);
  const auto mp = mask_path(path);
  if (std::filesystem::exists(mp)) {
    d.mask = read_mask(mp);
    require(d.mask.same_shape(d.values), "depth mask dimensions differ from depth");
  } else {
    d.mask = Mask(d.values.width(), d.values.height(), 0);
    for (std::size_t k = 0; k < d.mask.size(); ++k)
      d.mask[k] = std::isfinite(d.values[k]) && d.values[k] > 0.0;
  }
  for (std::size_t k = 0; k < d.mask.size(); ++k)
    if (!d.mask[k]) d.values[k] = 0.0;
  d.validate();
  return d;
}

// Binary little-endian PLY. Every grid pixel is one vertex (row-major);
// invalid pixels are stored with confidence 0, since valid confidences are >= 1.
inline void write_ply(const std::filesystem::path& path, const PointMap& pm, const ConfidenceMap* conf = nullptr) {
  require(conf == nullptr || conf->same_shape(pm.points), "ply: confidence shape mismatch");
  auto out = detail::open_out(path);
  std::ostringstream hdr;
  hdr << "ply\nformat binary_little_endian 1.0\n"
      << "comment width " << pm.width() << "\n"
      << "comment height " << pm.height() << "\n"
      << "comment subject " << pm.subject << "\n"
      << "comment frame " << pm.frame << "\n"
      << "element vertex " << pm.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\nproperty float confidence\n"
      << "end_header\n";
  out << hdr.str();
  for (std::size_t k = 0; k < pm.points.size(); ++k) {
    const Vec3& p = pm.points[k];
    detail::put<float>(out, static_cast<float>(p.x()));
    detail::put<float>(out, static_cast<float>(p.y()));
    detail::put<float>(out, static_cast<float>(p.z()));
    const double c = pm.valid[k] ? (conf ? (*conf)[k] : 1.0) : 0.0;
    detail::put<float>(out, static_cast<float>(c));
  }
}

struct PlyGrid {
  PointMap points;
  ConfidenceMap confidence;
};

inline PlyGrid read_ply(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  int w = -1, h = -1, subject = 1, frame = 1;
  std::size_t count = 0;
  bool binary = false;
  int nprops = 0;
  std::getline(in, line);
  require(line == "ply", "ply: bad magic in " + path.string());
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary = fmt == "binary_little_endian";
    } else if (tok == "comment") {
      std::string key;
      ls >> key;
      if (key == "width") ls >> w;
      else if (key == "height") ls >> h;
      else if (key == "subject") ls >> subject;
      else if (key == "frame") ls >> frame;
    } else if (tok == "element") {
      std::string name;
      ls >> name >> count;
    } else if (tok == "property") {
      std::string type;
      ls >> type;
      require(type == "float", "ply: only float properties are supported");
      ++nprops;
    } else if (tok == "end_header") {
      break;
    }
  }
  require(binary, "ply: only binary_little_endian is supported");
  require(nprops == 4, "ply: expected x, y, z, confidence");
  require(w > 0 && h > 0 && static_cast<std::size_t>(w) * static_cast<std::size_t>(h) == count,
          "ply: missing or inconsistent grid dimensions");
  PlyGrid g{PointMap(w, h, subject, frame), ConfidenceMap(w, h, 0.0)};
  for (std::size_t k = 0; k < count; ++k) {
    const float x = detail::get<float>(in), y = detail::get<float>(in), z = detail::get<float>(in);
    const float c = detail::get<float>(in);
    if (c > 0.0f) {
      g.points.points[k] = Vec3(x, y, z);
      g.points.valid[k] = 1;
      g.confidence[k] = c;
    }
  }
  return g;
}

inline nlohmann::ordered_json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("intrinsics json: ") + e.what());
  }
  k.validate();
  return k;
}

inline nlohmann::ordered_json to_json(const RigidPose& p) {
  std::vector<double> r(9), t(3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) r[3 * a + b] = p.rotation(a, b);
    t[a] = p.translation(a);
  }
  return {{"R", r}, {"t", t}};
}

inline RigidPose pose_from_json(const nlohmann::json& j) {
  RigidPose p;
  std::vector<double> r, t;
  try {
    r = j.at("R").get<std::vector<double>>();
    t = j.at("t").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("pose json: ") + e.what());
  }
  require(r.size() == 9 && t.size() == 3, "pose json: R needs 9 values and t needs 3");
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) p.rotation(a, b) = r[3 * a + b];
    p.translation(a) = t[a];
  }
  // Files store float-precision values; snap back onto SO(3).
  require(p.is_orthonormal(1e-4), "pose json: R is not a rotation");
  p.rotation = project_to_rotation(p.rotation);
  return p;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open for reading: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("malformed json in " + path.string() + ": " + e.what());
  }
}

// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  auto out = detail::open_out(path);
  out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
  for (const Vec3& c : img.data()) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(c(ch), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  require(magic == "P6" && w > 0 && h > 0 && maxv == 255, "ppm: only 8-bit P6 is supported");
  in.get();
  RgbImage img(w, h);
  for (Vec3& c : img.data()) {
    for (int ch = 0; ch < 3; ++ch) {
      const int v = in.get();
      require(v != EOF, "ppm: truncated file");
      c(ch) = v / 255.0;
    }
  }
  return img;
}

}  // namespace pmap::io
