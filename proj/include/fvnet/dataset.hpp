#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/tensor.hpp"
#include "fvnet/tensor_io.hpp"

namespace fvnet {

struct VideoSample {
  Tensor4 video;  // (L, H, W, channels)
  std::size_t label = 0;
};

struct ManifestEntry {
  std::string path;
  std::size_t label = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t classes = 0;
  std::string split = "train";
};

/// Moving-patch videos. The class is the direction the patch travels in; its
/// start position is uniform and it wraps around the frame edges, so every
/// frame holds the same amount of patch whatever the class is.
struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t classes = 4;
  std::size_t per_class = 10;
  std::size_t frames = 30;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 6;
  std::size_t speed = 2;  // pixels per frame along each moving axis
  double background = 0.5;
  double patch_level = 1.0;
  double noise_std = 0.3;
};

/// (dy, dx) per class: up, down, left, right, then the four diagonals.
inline constexpr std::array<std::array<int, 2>, 8> kMotionDirections{{
    {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};

inline void validate(const SyntheticConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > 8) {
    throw ConfigError("classes must be in [2, 8], got " + std::to_string(cfg.classes));
  }
  if (cfg.height < 32 || cfg.width < 32) throw ConfigError("frames must be at least 32x32");
  if (cfg.frames < 15) throw ConfigError("videos need at least 15 frames");
  if (cfg.patch == 0 || cfg.patch > std::min(cfg.height, cfg.width)) {
    throw ConfigError("patch size must be in [1, min(H, W)]");
  }
}

inline Tensor4 synthesize_video(const SyntheticConfig& cfg, std::size_t label, Rng& rng) {
  const auto H = cfg.height, W = cfg.width;
  const auto dir = kMotionDirections.at(label);
  const std::size_t y0 = rng.index(H);
  const std::size_t x0 = rng.index(W);
  Tensor4 video({cfg.frames, H, W, 1});
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    const auto step = static_cast<long long>(f * cfg.speed);
    const auto wrap = [](long long v, std::size_t n) {
      const auto m = static_cast<long long>(n);
      return static_cast<std::size_t>(((v % m) + m) % m);
    };
    const std::size_t py = wrap(static_cast<long long>(y0) + dir[0] * step, H);
    const std::size_t px = wrap(static_cast<long long>(x0) + dir[1] * step, W);
    for (std::size_t y = 0; y < H; ++y) {
      const bool in_rows = (y + H - py) % H < cfg.patch;
      for (std::size_t x = 0; x < W; ++x) {
        const bool in_patch = in_rows && (x + W - px) % W < cfg.patch;
        const double v = (in_patch ? cfg.patch_level : cfg.background) + cfg.noise_std * rng.normal();
        // Stored datasets are f32; keep the in-memory copy identical to what is written.
        video(f, y, x, 0) = static_cast<double>(static_cast<float>(v));
      }
    }
  }
  return video;
}

/// Labels cycle through the classes, so any prefix of the result is balanced.
inline std::vector<VideoSample> synthesize(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  std::vector<VideoSample> out;
  out.reserve(cfg.classes * cfg.per_class);
  for (std::size_t i = 0; i < cfg.per_class; ++i) {
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      out.push_back({synthesize_video(cfg, c, rng), c});
    }
  }
  return out;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "# classes=" << m.classes << " split=" << m.split << "\n";
  for (const auto& e : m.entries) out << e.path << "," << e.label << "\n";
}

/// Generates the dataset, writes one f32 TensorFile per video plus
/// `<split>.csv` into `dir`, and returns the manifest.
inline DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const std::string& dir,
                                          const std::string& split) {
  auto samples = synthesize(cfg);
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.classes = cfg.classes;
  m.split = split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << split << "_" << std::setw(5) << std::setfill('0') << i << ".fvnt";
    write_tensor((std::filesystem::path(dir) / name.str()).string(), samples[i].video, DType::f32);
    m.entries.push_back({name.str(), samples[i].label});
  }
  save_manifest((std::filesystem::path(dir) / (split + ".csv")).string(), m);
  return m;
}

/// Parses a manifest. Lines are "path,label"; blank lines are skipped and a
/// leading "# classes=<m> split=<tag>" comment supplies the metadata. When the
/// file carries no class count, `classes` (if nonzero) or max label + 1 is used.
inline DatasetManifest parse_manifest(std::istream& in, std::size_t classes = 0) {
  DatasetManifest m;
  m.classes = classes;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string kv;
      while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "classes" && classes == 0) {
          try {
            m.classes = std::stoul(value);
          } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(lineno) + ": bad class count");
          }
        } else if (key == "split") {
          m.split = value;
        }
      }
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == line.size()) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected \"path,label\"");
    }
    const auto label_text = line.substr(comma + 1);
    if (!std::all_of(label_text.begin(), label_text.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      throw ParseError("manifest line " + std::to_string(lineno) + ": label is not a nonnegative integer");
    }
    const std::size_t label = std::stoul(label_text);
    max_label = std::max(max_label, label);
    m.entries.push_back({line.substr(0, comma), label});
  }
  if (m.classes == 0 && !m.entries.empty()) m.classes = max_label + 1;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].label >= m.classes) {
      throw ConfigError("manifest entry " + std::to_string(i) + " has label " +
                        std::to_string(m.entries[i].label) + " >= class count " + std::to_string(m.classes));
    }
  }
  return m;
}

/// Loads a manifest file; relative paths are resolved against its directory.
inline DatasetManifest load_manifest(const std::string& path, std::size_t classes = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  auto m = parse_manifest(in, classes);
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& e : m.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) e.path = (base / p).string();
    if (!std::filesystem::exists(e.path)) throw IoError("manifest entry not found: " + e.path);
  }
  return m;
}

inline std::vector<VideoSample> load_videos(const DatasetManifest& m) {
  std::vector<VideoSample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back({read_tensor(e.path), e.label});
  return out;
}

}  // namespace fvnet
