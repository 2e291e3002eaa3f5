#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sterf/erf.hpp"
#include "sterf/errors.hpp"
#include "sterf/params.hpp"

namespace sterf {
namespace io {

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// CSV cells carry 17 significant digits so doubles survive the text
// round-trip exactly.
inline std::string csv_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Row-major H x W matrix, RFC-4180 (CRLF line ends), no header.
inline std::string grid_to_csv(const std::vector<double>& grid, std::size_t h,
                               std::size_t w) {
  std::string out;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (c) out += ',';
      out += csv_cell(grid[r * w + c]);
    }
    out += "\r\n";
  }
  return out;
}

// (tau, value) rows.
inline std::string temporal_to_csv(const std::vector<double>& values) {
  std::string out;
  for (std::size_t tau = 0; tau < values.size(); ++tau) {
    out += std::to_string(tau);
    out += ',';
    out += csv_cell(values[tau]);
    out += "\r\n";
  }
  return out;
}

// Binary PGM, maxval 65535, big-endian 16-bit samples, rows top to bottom.
// Input values must already be normalized to [0, 1].
inline void write_pgm(const std::vector<double>& grid_norm, std::size_t h,
                      std::size_t w, const std::string& path) {
  for (double v : grid_norm)
    if (!(v >= 0.0 && v <= 1.0))
      throw ConfigError("write_pgm: values must be in [0, 1]");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) +
                    "\n65535\n";
  out.reserve(out.size() + grid_norm.size() * 2);
  for (double v : grid_norm) {
    const unsigned pix = static_cast<unsigned>(v * 65535.0 + 0.5);
    out += static_cast<char>((pix >> 8) & 0xFF);
    out += static_cast<char>(pix & 0xFF);
  }
  write_file(path, out);
}

// Minimal PGM reader for round-trip tests.
inline std::vector<double> read_pgm(const std::string& path, std::size_t& h,
                                    std::size_t& w) {
  const std::string raw = read_file(path);
  std::istringstream is(raw);
  std::string magic;
  std::size_t maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 65535)
    throw IoError("read_pgm: not a 16-bit P5 file: " + path);
  is.get();  // single whitespace after header
  std::vector<double> grid(h * w, 0.0);
  const std::size_t start = static_cast<std::size_t>(is.tellg());
  if (raw.size() < start + 2 * grid.size())
    throw IoError("read_pgm: truncated file: " + path);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const unsigned hi = static_cast<unsigned char>(raw[start + 2 * i]);
    const unsigned lo = static_cast<unsigned char>(raw[start + 2 * i + 1]);
    grid[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return grid;
}

// FNV-1a 64-bit; the content hash recorded in run manifests.
inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& data) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(data)));
  return buf;
}

// ---- weight files ----
//
// Layout: 8-byte little-endian header length N, then N bytes of UTF-8 JSON
// {"tensors":[{"name":...,"shape":[...]} ...]}, then the concatenated
// little-endian raw doubles of every tensor in listed order.

inline void append_le64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::string serialize_weights(const ParamStore& params) {
  std::string header = "{\"tensors\":[";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamTensor& p = params.at(static_cast<int>(i));
    if (i) header += ',';
    header += "{\"name\":\"" + p.name + "\",\"shape\":[";
    for (std::size_t d = 0; d < p.shape.size(); ++d) {
      if (d) header += ',';
      header += std::to_string(p.shape[d]);
    }
    header += "]}";
  }
  header += "]}";

  std::string out;
  append_le64(out, header.size());
  out += header;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamTensor& p = params.at(static_cast<int>(i));
    for (double v : p.data) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      append_le64(out, bits);
    }
  }
  return out;
}

inline void save_weights(const ParamStore& params, const std::string& path) {
  write_file(path, serialize_weights(params));
}

// Loads values into an existing store; names and shapes must match the
// network that is being populated.
inline void load_weights(ParamStore& params, const std::string& path) {
  const std::string raw = read_file(path);
  if (raw.size() < 8) throw IoError("weight file truncated: " + path);
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i)
    hlen = (hlen << 8) | static_cast<unsigned char>(raw[static_cast<std::size_t>(i)]);
  if (raw.size() < 8 + hlen) throw IoError("weight file truncated: " + path);
  const std::string header = raw.substr(8, hlen);

  // Tiny purpose-built scan of the fixed header schema.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> tensors;
  std::size_t pos = 0;
  while ((pos = header.find("\"name\":\"", pos)) != std::string::npos) {
    pos += 8;
    const std::size_t end = header.find('"', pos);
    const std::string name = header.substr(pos, end - pos);
    std::size_t sp = header.find("\"shape\":[", end);
    sp += 9;
    const std::size_t se = header.find(']', sp);
    std::vector<std::size_t> shape;
    std::istringstream ss(header.substr(sp, se - sp));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) shape.push_back(std::stoull(tok));
    tensors.emplace_back(name, shape);
    pos = se;
  }

  std::size_t off = 8 + hlen;
  for (const auto& [name, shape] : tensors) {
    const int id = params.find(name);
    if (id < 0)
      throw ConfigError("weight file names unknown parameter '" + name + "'");
    ParamTensor& p = params.at(id);
    if (p.shape != shape)
      throw ShapeError("weight file shape mismatch for '" + name + "'");
    if (raw.size() < off + 8 * p.numel())
      throw IoError("weight file truncated in tensor '" + name + "'");
    for (std::size_t i = 0; i < p.numel(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b)
        bits = (bits << 8) |
               static_cast<unsigned char>(raw[off + 8 * i + static_cast<std::size_t>(b)]);
      std::memcpy(&p.data[i], &bits, sizeof(double));
    }
    off += 8 * p.numel();
  }
}

}  // namespace io
}  // namespace sterf
