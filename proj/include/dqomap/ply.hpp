#pragma once

// Binary little-endian PLY for Gaussian point clouds.
//
// Export layout, one vertex per Gaussian:
//   double x y z, double r g b (0..1), double opacity, int object_id
// State layout appends the remaining primitive fields so a map can be
// restored bit for bit:
//   double scale_0..2, double rot_w rot_x rot_y rot_z, uchar kind (0 opaque, 1 transparent)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dqomap/errors.hpp"
#include "dqomap/gaussian.hpp"

namespace dqo {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

enum class PlyLayout { points, state };

namespace detail {

inline const std::vector<std::string>& ply_fields(PlyLayout layout) {
  static const std::vector<std::string> points = {"x", "y", "z", "r", "g", "b", "opacity", "object_id"};
  static const std::vector<std::string> state = {"x", "y", "z", "r", "g", "b", "opacity", "object_id",
                                                 "scale_0", "scale_1", "scale_2", "rot_w", "rot_x", "rot_y",
                                                 "rot_z", "kind"};
  return layout == PlyLayout::points ? points : state;
}

inline std::string ply_type(const std::string& field) {
  if (field == "object_id") return "int";
  if (field == "kind") return "uchar";
  return "double";
}

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline void write_ply(const std::string& path, const std::vector<GaussianPrimitive>& gs,
                      PlyLayout layout = PlyLayout::points) {
  std::string out = "ply\nformat binary_little_endian 1.0\ncomment dqomap gaussians\nelement vertex " +
                    std::to_string(gs.size()) + "\n";
  for (const auto& f : detail::ply_fields(layout)) out += "property " + detail::ply_type(f) + " " + f + "\n";
  out += "end_header\n";
  for (const auto& g : gs) {
    for (int i = 0; i < 3; ++i) detail::put<double>(out, g.mean[i]);
    for (int i = 0; i < 3; ++i) detail::put<double>(out, g.color[i]);
    detail::put<double>(out, g.opacity);
    detail::put<std::int32_t>(out, g.object_id);
    if (layout == PlyLayout::state) {
      for (int i = 0; i < 3; ++i) detail::put<double>(out, g.scale[i]);
      for (int i = 0; i < 4; ++i) detail::put<double>(out, g.rotation[i]);
      detail::put<std::uint8_t>(out, g.kind == GaussianKind::opaque ? 0 : 1);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

// Reads either layout. Points-layout files leave scale, rotation and kind at
// their defaults, with kind inferred from opacity.
inline std::vector<GaussianPrimitive> read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path, "cannot open file");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  const auto end = buf.find("end_header\n");
  if (buf.rfind("ply\n", 0) != 0 || end == std::string::npos) throw ParseError(path, "missing PLY header");
  std::istringstream header(buf.substr(0, end));
  std::string line;
  std::size_t count = 0;
  bool have_count = false, binary = false;
  std::vector<std::string> fields;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex" || !ls) throw ParseError(path, "expected a single vertex element");
      have_count = true;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      fields.push_back(name);
      if (type != detail::ply_type(name)) throw ParseError(path, "unexpected type for property " + name);
    }
  }
  if (!binary) throw ParseError(path, "only binary_little_endian PLY is supported");
  if (!have_count) throw ParseError(path, "missing vertex count");
  PlyLayout layout;
  if (fields == detail::ply_fields(PlyLayout::points))
    layout = PlyLayout::points;
  else if (fields == detail::ply_fields(PlyLayout::state))
    layout = PlyLayout::state;
  else
    throw ParseError(path, "unrecognized vertex properties");
  const std::size_t stride = layout == PlyLayout::points ? 7 * 8 + 4 : 14 * 8 + 4 + 1;
  std::size_t off = end + std::strlen("end_header\n");
  if (buf.size() - off != count * stride) throw ParseError(path, "vertex data size does not match header");
  std::vector<GaussianPrimitive> out(count);
  for (auto& g : out) {
    for (int i = 0; i < 3; ++i) g.mean[i] = detail::take<double>(buf, off);
    for (int i = 0; i < 3; ++i) g.color[i] = detail::take<double>(buf, off);
    g.opacity = detail::take<double>(buf, off);
    g.object_id = detail::take<std::int32_t>(buf, off);
    if (layout == PlyLayout::state) {
      for (int i = 0; i < 3; ++i) g.scale[i] = detail::take<double>(buf, off);
      for (int i = 0; i < 4; ++i) g.rotation[i] = detail::take<double>(buf, off);
      g.kind = detail::take<std::uint8_t>(buf, off) == 0 ? GaussianKind::opaque : GaussianKind::transparent;
    } else {
      g.kind = g.opacity >= kOpacitySplit ? GaussianKind::opaque : GaussianKind::transparent;
    }
  }
  return out;
}

}  // namespace dqo
