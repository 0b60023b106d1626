#pragma once

// Dataset synthesis and persistence. On disk: manifest.json plus per-sample
// y_<i>.f64 / c_<i>.f64 little-endian float64 vectors.

#include "common.hpp"
#include "image_io.hpp"
#include "sensing.hpp"
#include "train.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cginvert {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Fingerprint of a sensing model's construction parameters.
inline std::string model_fingerprint(const SensingModel& model) {
  return hex64(fnv1a(model.description() + " m=" + std::to_string(model.rows()) + " n=" + std::to_string(model.cols())));
}

struct Dataset {
  std::vector<Sample> pairs;  // c is the coefficient vector (Phi^T s when a dictionary is used)
  std::string model_fingerprint;
  std::string fingerprint;  // covers every generation parameter
  std::string model_description;
  double snr_db = kInf;
  std::uint64_t seed = 0;
  std::string source = "synthetic";
  Index m = 0;
  Index n = 0;
  int side = 0;
};

/// Random smooth blobs plus rectangles on a side x side raster, scaled by the maximum to [0, 1].
inline Vec synthetic_image(int side, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec img = Vec::Zero(static_cast<Index>(side) * side);
  const int blobs = 1 + static_cast<int>(unit(rng) * 3);
  for (int b = 0; b < blobs; ++b) {
    const double cx = unit(rng) * side, cy = unit(rng) * side;
    const double s = (0.1 + 0.25 * unit(rng)) * side;
    const double amp = 0.3 + 0.7 * unit(rng);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
        img[r * side + c] += amp * std::exp(-(dx * dx + dy * dy) / (2 * s * s));
      }
  }
  const int rects = static_cast<int>(unit(rng) * 3);
  for (int q = 0; q < rects; ++q) {
    int r0 = static_cast<int>(unit(rng) * side), c0 = static_cast<int>(unit(rng) * side);
    int h = 1 + static_cast<int>(unit(rng) * side / 2), w = 1 + static_cast<int>(unit(rng) * side / 2);
    const double amp = 0.2 + 0.6 * unit(rng);
    for (int r = r0; r < std::min(side, r0 + h); ++r)
      for (int c = c0; c < std::min(side, c0 + w); ++c) img[r * side + c] += amp;
  }
  const double mx = img.maxCoeff();
  if (mx > 0.0) img /= mx;
  return img;
}

/// Source of ground-truth images: either synthetic or a list of loaded images.
struct ImageSource {
  std::vector<Vec> images;  // empty selects the synthetic generator
  std::string label = "synthetic";
};

/// Builds n_samples measurement/target pairs. Image k uses noise seed seed + k + 1.
inline Dataset gen_dataset(const ImageSource& src, const SensingModel& model, double snr_db, std::size_t n_samples,
                           std::uint64_t seed) {
  Dataset ds;
  ds.model_description = model.description();
  ds.model_fingerprint = model_fingerprint(model);
  ds.snr_db = snr_db;
  ds.seed = seed;
  ds.source = src.images.empty() ? "synthetic" : src.label;
  ds.m = model.rows();
  ds.n = model.cols();
  ds.side = model.side();
  if (!src.images.empty() && src.images.size() < n_samples)
    throw DataError("insufficient images: need " + std::to_string(n_samples) + ", have " +
                    std::to_string(src.images.size()));
  Rng rng(seed);
  for (std::size_t k = 0; k < n_samples; ++k) {
    Vec s;
    if (src.images.empty()) {
      if (ds.side == 0) throw ConfigError("synthetic images need a square signal size");
      s = synthetic_image(ds.side, rng);
    } else {
      s = src.images[k];
      require_size(s.size(), model.cols(), "image size");
    }
    Vec c = model.analyze(s);
    Measurement meas = measure(model, c, snr_db, seed + k + 1);
    ds.pairs.push_back({std::move(meas.y), std::move(c)});
  }
  std::ostringstream fp;
  fp.precision(17);
  fp << ds.model_fingerprint << " snr=" << snr_db << " seed=" << seed << " n_samples=" << n_samples
     << " source=" << ds.source;
  for (const auto& img : src.images) fp << ' ' << hex64(fnv1a(std::string(reinterpret_cast<const char*>(img.data()), img.size() * sizeof(double))));
  ds.fingerprint = hex64(fnv1a(fp.str()));
  return ds;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  nlohmann::json m = {{"format", "cginvert-dataset"},
                      {"version", 1},
                      {"model", ds.model_description},
                      {"model_fingerprint", ds.model_fingerprint},
                      {"fingerprint", ds.fingerprint},
                      {"snr_db", std::isinf(ds.snr_db) ? nlohmann::json("inf") : nlohmann::json(ds.snr_db)},
                      {"seed", ds.seed},
                      {"source", ds.source},
                      {"n_samples", ds.pairs.size()},
                      {"m", ds.m},
                      {"n", ds.n},
                      {"side", ds.side},
                      {"dtype", "float64"},
                      {"byte_order", "little"}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw DataError("cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    write_f64_le(dir / ("y_" + std::to_string(i) + ".f64"), ds.pairs[i].y);
    write_f64_le(dir / ("c_" + std::to_string(i) + ".f64"), ds.pairs[i].c);
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("no dataset manifest in " + dir.string());
  nlohmann::json m;
  try {
    is >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  if (m.value("format", "") != "cginvert-dataset") throw DataError("not a cginvert dataset: " + dir.string());
  Dataset ds;
  try {
    ds.model_description = m.at("model");
    ds.model_fingerprint = m.at("model_fingerprint");
    ds.fingerprint = m.at("fingerprint");
    ds.snr_db = m.at("snr_db").is_string() ? kInf : m.at("snr_db").get<double>();
    ds.seed = m.at("seed");
    ds.source = m.at("source");
    ds.m = m.at("m");
    ds.n = m.at("n");
    ds.side = m.at("side");
    const std::size_t count = m.at("n_samples");
    for (std::size_t i = 0; i < count; ++i)
      ds.pairs.push_back({read_f64_le(dir / ("y_" + std::to_string(i) + ".f64"), ds.m),
                          read_f64_le(dir / ("c_" + std::to_string(i) + ".f64"), ds.n)});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  return ds;
}

}  // namespace cginvert
