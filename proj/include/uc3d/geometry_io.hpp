// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

// Frame files: 16-bit binary PGM depth (millimeters, 0 = bad pixel, MSB first
// as PGM requires), 8-bit binary PPM color, and key=value text sidecars for
// intrinsics and camera pose.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "uc3d/core/error.hpp"
#include "uc3d/core/linalg.hpp"
#include "uc3d/geometry.hpp"

namespace uc3d::io {

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

struct NetpbmHeader {
  int width = 0, height = 0, maxval = 0;
};

inline NetpbmHeader read_header(std::istream& in, const std::string& magic, const std::string& path) {
  if (next_token(in) != magic) throw IoError(path + ": expected " + magic + " header");
  NetpbmHeader h;
  try {
    h.width = std::stoi(next_token(in));
    h.height = std::stoi(next_token(in));
    h.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError(path + ": malformed header");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw IoError(path + ": unsupported header values");
  }
  return h;
}

}  // namespace detail

/// Key=value text. Blank lines and '#' comments are ignored.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw IoError("key=value: malformed line '" + line + "'");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_key_values(in);
}

inline void write_depth_pgm(const std::filesystem::path& path, const DepthMap& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << d.width << " " << d.height << "\n65535\n";
  for (std::size_t p = 0; p < d.size(); ++p) {
    double mm = d.valid[p] ? std::round(d.values[p] * 1000.0) : 0.0;
    mm = std::clamp(mm, 0.0, 65535.0);
    const auto v = static_cast<std::uint16_t>(mm);
    out.put(static_cast<char>(v >> 8));
    out.put(static_cast<char>(v & 0xff));
  }
}

inline DepthMap read_depth_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = detail::read_header(in, "P5", path.string());
  if (h.maxval < 256) throw IoError(path.string() + ": depth PGM must be 16-bit");
  DepthMap d(h.width, h.height);
  for (std::size_t p = 0; p < d.size(); ++p) {
    const int hi = in.get(), lo = in.get();
    if (!in) throw IoError(path.string() + ": truncated pixel data");
    const int mm = (hi << 8) | lo;
    if (mm > 0) d.set(p, mm / 1000.0);
  }
  return d;
}

inline void write_color_ppm(const std::filesystem::path& path, const ColorImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double c : img.rgb) out.put(static_cast<char>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)));
}

inline ColorImage read_color_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = detail::read_header(in, "P6", path.string());
  if (h.maxval != 255) throw IoError(path.string() + ": only 8-bit PPM is supported");
  ColorImage img(h.width, h.height);
  for (double& c : img.rgb) {
    const int v = in.get();
    if (!in) throw IoError(path.string() + ": truncated pixel data");
    c = v / 255.0;
  }
  return img;
}

inline void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& k) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "fx=" << k.fx << "\nfy=" << k.fy << "\ncx=" << k.cx << "\ncy=" << k.cy << "\nwidth=" << k.width
      << "\nheight=" << k.height << "\n";
}

inline CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  const auto kv = read_key_values(path);
  auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError(path.string() + ": missing key '" + key + "'");
    return std::stod(it->second);
  };
  CameraIntrinsics k{get("fx"), get("fy"), get("cx"), get("cy"), static_cast<int>(get("width")),
                     static_cast<int>(get("height"))};
  k.validate();
  return k;
}

/// Pose sidecar: r00..r22 (row-major rotation) and tx, ty, tz; camera to world.
inline void write_pose(const std::filesystem::path& path, const RigidTransform& pose) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << "r" << r << c << "=" << pose.rotation(r, c) << "\n";
  }
  out << "tx=" << pose.translation.x << "\nty=" << pose.translation.y << "\ntz=" << pose.translation.z << "\n";
}

inline RigidTransform read_pose(const std::filesystem::path& path) {
  const auto kv = read_key_values(path);
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw IoError(path.string() + ": missing key '" + key + "'");
    return std::stod(it->second);
  };
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation.m[r * 3 + c] = get("r" + std::to_string(r) + std::to_string(c));
  }
  t.translation = {get("tx"), get("ty"), get("tz")};
  return t;
}

}  // namespace uc3d::io
