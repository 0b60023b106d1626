#pragma once

// PGM (P2/P5) and CSV raster I/O. Loaded pixels are scaled to [0, 1] by the
// declared maximum value; rasters are row-major.

#include "common.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cginvert {

struct Image {
  int width = 0;
  int height = 0;
  Vec pixels;  // row-major, values in [0, 1]
};

namespace detail {

inline std::string next_pgm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

inline int parse_positive(const std::string& tok, const std::string& what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("invalid PGM " + what + ": '" + tok + "'");
  }
}

}  // namespace detail

inline Image read_pgm(std::istream& is) {
  const std::string magic = detail::next_pgm_token(is);
  if (magic != "P2" && magic != "P5") throw DataError("not a PGM file (magic '" + magic + "')");
  Image img;
  img.width = detail::parse_positive(detail::next_pgm_token(is), "width");
  img.height = detail::parse_positive(detail::next_pgm_token(is), "height");
  const int maxval = detail::parse_positive(detail::next_pgm_token(is), "maxval");
  if (maxval > 65535) throw DataError("PGM maxval exceeds 65535");
  const Index n = static_cast<Index>(img.width) * img.height;
  img.pixels.resize(n);
  if (magic == "P2") {
    for (Index i = 0; i < n; ++i) {
      std::string tok = detail::next_pgm_token(is);
      if (tok.empty()) throw DataError("truncated P2 data");
      img.pixels[i] = std::stod(tok) / maxval;
    }
  } else {
    const bool wide = maxval > 255;
    for (Index i = 0; i < n; ++i) {
      unsigned char b[2];
      if (!is.read(reinterpret_cast<char*>(b), wide ? 2 : 1)) throw DataError("truncated P5 data");
      const int v = wide ? (b[0] << 8) | b[1] : b[0];
      img.pixels[i] = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_pgm(is);
}

/// Writes an 8-bit binary PGM; values are clamped to [0, 1] before quantization.
inline void write_pgm(const std::filesystem::path& path, const Vec& pixels, int width, int height,
                      bool binary = true) {
  require_size(pixels.size(), static_cast<Index>(width) * height, "write_pgm");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << (binary ? "P5" : "P2") << '\n' << width << ' ' << height << "\n255\n";
  for (Index i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels[i], 0.0, 1.0);
    const int q = static_cast<int>(std::lround(v * 255.0));
    if (binary)
      os.put(static_cast<char>(q));
    else
      os << q << ((i + 1) % width == 0 ? '\n' : ' ');
  }
}

/// CSV images: one image per line, row-major raster. Values are divided by
/// max_value (pass 1 for data already in [0, 1]).
inline std::vector<Vec> read_csv_images(std::istream& is, double max_value) {
  if (!(max_value > 0.0)) throw DataError("CSV image max value must be positive");
  std::vector<Vec> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell) / max_value);
      } catch (const std::exception&) {
        throw DataError("invalid CSV pixel '" + cell + "'");
      }
    }
    out.push_back(Eigen::Map<Vec>(vals.data(), static_cast<Index>(vals.size())));
  }
  return out;
}

inline std::vector<Vec> read_csv_images(const std::filesystem::path& path, double max_value) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  return read_csv_images(is, max_value);
}

}  // namespace cginvert
