/*
 * Copyright 2026 The Calciomics Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "calciomics/common.hpp"

namespace calciomics {

constexpr int kHuFloor = -1024;
constexpr int kHuCeil = 3071;

/// Artery label codes used in ArteryLabelMap.
enum ArteryCode : std::uint8_t {
  kArteryNone = 0,
  kArteryLM = 1,
  kArteryLAD = 2,
  kArteryLCX = 3,
  kArteryRCA = 4,
};

constexpr int kNumArteries = 4;

inline const char* artery_name(int code) {
  switch (code) {
    case kArteryLM: return "LM";
    case kArteryLAD: return "LAD";
    case kArteryLCX: return "LCX";
    case kArteryRCA: return "RCA";
    default: fail("unknown artery code");
  }
}

struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t count() const { return nx * ny * nz; }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  double dx = 0, dy = 0, dz = 0;
  double voxel_volume() const { return dx * dy * dz; }
};

/// Non-contrast CT grid in Hounsfield Units. Index order: x fastest,
/// then y, then z.
struct Volume {
  Dims dims;
  Spacing spacing;
  std::vector<std::int16_t> hu;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims.nx * (y + dims.ny * z);
  }
  std::int16_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return hu[index(x, y, z)];
  }

  void validate() const {
    require(dims.nx > 0 && dims.ny > 0 && dims.nz > 0,
            "Volume: dims must be positive");
    require(spacing.dx > 0 && spacing.dy > 0 && spacing.dz > 0,
            "Volume: spacing must be positive");
    require(hu.size() == dims.count(), "Volume: payload size != nx*ny*nz");
    for (std::size_t i = 0; i < hu.size(); ++i) {
      require(hu[i] >= kHuFloor && hu[i] <= kHuCeil,
              "Volume: HU out of [-1024,3071] at voxel " + std::to_string(i));
    }
  }
};

/// Per-voxel coronary artery labels companion to a Volume.
struct ArteryLabelMap {
  Dims dims;
  std::vector<std::uint8_t> labels;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims.nx * (y + dims.ny * z);
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return labels[index(x, y, z)];
  }

  void validate() const {
    require(dims.nx > 0 && dims.ny > 0 && dims.nz > 0,
            "ArteryLabelMap: dims must be positive");
    require(labels.size() == dims.count(),
            "ArteryLabelMap: payload size != nx*ny*nz");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      require(labels[i] <= 4,
              "ArteryLabelMap: label out of {0..4} at voxel " + std::to_string(i));
    }
  }
};

/// Grid of clip-normalized intensities in [0,1]; geometry mirrors the source.
struct NormalizedVolume {
  Dims dims;
  Spacing spacing;
  std::vector<double> value;
};

struct PreprocessConfig {
  int clip_lo = -1024;
  int clip_hi = 1024;
  bool normalize = true;
};

struct ExtractionConfig {
  int threshold_hu = 130;
  int connectivity = 26;  // one of 6, 18, 26
  std::size_t min_lesion_voxels = 1;
};

struct Voxel {
  std::size_t x = 0, y = 0, z = 0;
};

/// One connected calcified lesion, confined to a single artery label.
struct LesionComponent {
  int id = 0;
  int artery = 0;
  std::vector<Voxel> voxels;
  std::vector<std::pair<std::size_t, double>> per_slice_area;  // z -> mm², ascending z
  int peak_hu = 0;
  int min_hu = 0;
  double mean_hu = 0.0;
  double centroid_mm[3] = {0, 0, 0};
};

// ---------------------------------------------------------------------------
// File I/O: one JSON header line, then a raw little-endian payload.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json read_header_line(std::ifstream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) fail("missing header line in " + path);
  nlohmann::json hdr = nlohmann::json::parse(line, nullptr, false);
  if (hdr.is_discarded() || !hdr.is_object()) {
    fail("malformed header in " + path);
  }
  return hdr;
}

inline std::size_t header_size_field(const nlohmann::json& hdr, const char* key,
                                     const std::string& path) {
  if (!hdr.contains(key) || !hdr[key].is_number_integer() ||
      hdr[key].get<long long>() <= 0) {
    fail(std::string("header field '") + key + "' missing or invalid in " + path);
  }
  return static_cast<std::size_t>(hdr[key].get<long long>());
}

inline double header_spacing_field(const nlohmann::json& hdr, const char* key,
                                   const std::string& path) {
  if (!hdr.contains(key) || !hdr[key].is_number() || hdr[key].get<double>() <= 0) {
    fail(std::string("header field '") + key + "' missing or invalid in " + path);
  }
  return hdr[key].get<double>();
}

}  // namespace detail

inline void save_volume(const Volume& v, const std::string& path) {
  v.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  nlohmann::json hdr;
  hdr["magic"] = "CTCSV1";
  hdr["nx"] = v.dims.nx;
  hdr["ny"] = v.dims.ny;
  hdr["nz"] = v.dims.nz;
  hdr["dx"] = v.spacing.dx;
  hdr["dy"] = v.spacing.dy;
  hdr["dz"] = v.spacing.dz;
  hdr["dtype"] = "i16le";
  out << hdr.dump() << '\n';
  std::vector<unsigned char> payload(v.hu.size() * 2);
  for (std::size_t i = 0; i < v.hu.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(v.hu[i]);
    payload[2 * i] = static_cast<unsigned char>(u & 0xff);
    payload[2 * i + 1] = static_cast<unsigned char>(u >> 8);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  require(out.good(), "write failure on " + path);
}

inline Volume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open for reading: " + path);
  const nlohmann::json hdr = detail::read_header_line(in, path);
  require(hdr.value("magic", "") == std::string("CTCSV1"),
          "bad magic (want CTCSV1) in " + path);
  require(hdr.value("dtype", "") == std::string("i16le"),
          "bad dtype (want i16le) in " + path);
  Volume v;
  v.dims.nx = detail::header_size_field(hdr, "nx", path);
  v.dims.ny = detail::header_size_field(hdr, "ny", path);
  v.dims.nz = detail::header_size_field(hdr, "nz", path);
  v.spacing.dx = detail::header_spacing_field(hdr, "dx", path);
  v.spacing.dy = detail::header_spacing_field(hdr, "dy", path);
  v.spacing.dz = detail::header_spacing_field(hdr, "dz", path);

  const std::size_t n = v.dims.count();
  const std::streamoff payload_start = in.tellg();
  std::vector<unsigned char> payload(n * 2);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  require(static_cast<std::size_t>(in.gcount()) == payload.size(),
          "truncated payload in " + path);
  v.hu.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::uint16_t>(
        payload[2 * i] | (static_cast<std::uint16_t>(payload[2 * i + 1]) << 8));
    const auto h = static_cast<std::int16_t>(u);
    if (h < kHuFloor || h > kHuCeil) {
      fail("HU out of [-1024,3071] at byte offset " +
           std::to_string(payload_start + static_cast<std::streamoff>(2 * i)) +
           " in " + path);
    }
    v.hu[i] = h;
  }
  v.validate();
  return v;
}

inline void save_mask(const ArteryLabelMap& m, const Spacing& spacing,
                      const std::string& path) {
  m.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  nlohmann::json hdr;
  hdr["magic"] = "CTCSM1";
  hdr["nx"] = m.dims.nx;
  hdr["ny"] = m.dims.ny;
  hdr["nz"] = m.dims.nz;
  hdr["dx"] = spacing.dx;
  hdr["dy"] = spacing.dy;
  hdr["dz"] = spacing.dz;
  hdr["dtype"] = "u8";
  out << hdr.dump() << '\n';
  out.write(reinterpret_cast<const char*>(m.labels.data()),
            static_cast<std::streamsize>(m.labels.size()));
  require(out.good(), "write failure on " + path);
}

inline ArteryLabelMap load_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open for reading: " + path);
  const nlohmann::json hdr = detail::read_header_line(in, path);
  require(hdr.value("magic", "") == std::string("CTCSM1"),
          "bad magic (want CTCSM1) in " + path);
  require(hdr.value("dtype", "") == std::string("u8"),
          "bad dtype (want u8) in " + path);
  ArteryLabelMap m;
  m.dims.nx = detail::header_size_field(hdr, "nx", path);
  m.dims.ny = detail::header_size_field(hdr, "ny", path);
  m.dims.nz = detail::header_size_field(hdr, "nz", path);

  const std::size_t n = m.dims.count();
  const std::streamoff payload_start = in.tellg();
  m.labels.resize(n);
  in.read(reinterpret_cast<char*>(m.labels.data()),
          static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n,
          "truncated payload in " + path);
  for (std::size_t i = 0; i < n; ++i) {
    if (m.labels[i] > 4) {
      fail("label out of {0..4} at byte offset " +
           std::to_string(payload_start + static_cast<std::streamoff>(i)) +
           " in " + path);
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

inline NormalizedVolume clip_normalize(const Volume& v, const PreprocessConfig& cfg) {
  require(cfg.clip_lo < cfg.clip_hi, "PreprocessConfig: clipLo must be < clipHi");
  NormalizedVolume out;
  out.dims = v.dims;
  out.spacing = v.spacing;
  out.value.resize(v.hu.size());
  const double lo = cfg.clip_lo;
  const double span = static_cast<double>(cfg.clip_hi) - cfg.clip_lo;
  for (std::size_t i = 0; i < v.hu.size(); ++i) {
    const double clamped =
        std::min(static_cast<double>(cfg.clip_hi),
                 std::max(lo, static_cast<double>(v.hu[i])));
    out.value[i] = cfg.normalize ? (clamped - lo) / span : clamped;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Connected-component lesion extraction
// ---------------------------------------------------------------------------

namespace detail {

/// Neighbor offsets for 6/18/26 connectivity.
inline std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
  require(connectivity == 6 || connectivity == 18 || connectivity == 26,
          "ExtractionConfig: connectivity must be 6, 18, or 26");
  std::vector<std::array<int, 3>> offs;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        offs.push_back({dx, dy, dz});
      }
    }
  }
  return offs;
}

}  // namespace detail

inline std::vector<LesionComponent> extract_lesions(const Volume& v,
                                                    const ArteryLabelMap& m,
                                                    const ExtractionConfig& cfg) {
  require(v.dims == m.dims, "extract_lesions: volume and mask dims differ");
  require(cfg.threshold_hu > kHuFloor,
          "ExtractionConfig: threshold must exceed the HU floor");
  require(cfg.min_lesion_voxels >= 1,
          "ExtractionConfig: minLesionVoxels must be >= 1");
  const auto offs = detail::neighbor_offsets(cfg.connectivity);

  const std::size_t n = v.dims.count();
  std::vector<char> eligible(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    eligible[i] = (m.labels[i] != 0 && v.hu[i] >= cfg.threshold_hu) ? 1 : 0;
  }

  struct Raw {
    int artery;
    std::size_t min_z, min_y, min_x;
    std::size_t seed;  // scan-order index of the first voxel reached
    std::vector<std::size_t> voxels;
  };
  std::vector<Raw> raws;
  std::vector<char> visited(n, 0);
  std::vector<std::size_t> queue;

  const auto nx = static_cast<long>(v.dims.nx);
  const auto ny = static_cast<long>(v.dims.ny);
  const auto nz = static_cast<long>(v.dims.nz);
  for (std::size_t start = 0; start < n; ++start) {
    if (!eligible[start] || visited[start]) continue;
    const std::uint8_t artery = m.labels[start];
    Raw raw;
    raw.artery = artery;
    raw.seed = start;
    raw.min_x = raw.min_y = raw.min_z = static_cast<std::size_t>(-1);
    queue.clear();
    queue.push_back(start);
    visited[start] = 1;
    while (!queue.empty()) {
      const std::size_t cur = queue.back();
      queue.pop_back();
      raw.voxels.push_back(cur);
      const long cx = static_cast<long>(cur % v.dims.nx);
      const long cy = static_cast<long>((cur / v.dims.nx) % v.dims.ny);
      const long cz = static_cast<long>(cur / (v.dims.nx * v.dims.ny));
      raw.min_x = std::min(raw.min_x, static_cast<std::size_t>(cx));
      raw.min_y = std::min(raw.min_y, static_cast<std::size_t>(cy));
      raw.min_z = std::min(raw.min_z, static_cast<std::size_t>(cz));
      for (const auto& o : offs) {
        const long px = cx + o[0], py = cy + o[1], pz = cz + o[2];
        if (px < 0 || px >= nx || py < 0 || py >= ny || pz < 0 || pz >= nz) {
          continue;
        }
        const std::size_t ni = v.index(static_cast<std::size_t>(px),
                                       static_cast<std::size_t>(py),
                                       static_cast<std::size_t>(pz));
        if (!eligible[ni] || visited[ni] || m.labels[ni] != artery) continue;
        visited[ni] = 1;
        queue.push_back(ni);
      }
    }
    if (raw.voxels.size() >= cfg.min_lesion_voxels) raws.push_back(std::move(raw));
  }

  std::sort(raws.begin(), raws.end(), [](const Raw& a, const Raw& b) {
    if (a.artery != b.artery) return a.artery < b.artery;
    if (a.min_z != b.min_z) return a.min_z < b.min_z;
    if (a.min_y != b.min_y) return a.min_y < b.min_y;
    if (a.min_x != b.min_x) return a.min_x < b.min_x;
    return a.seed < b.seed;
  });

  const double slice_area_unit = v.spacing.dx * v.spacing.dy;
  std::vector<LesionComponent> lesions;
  lesions.reserve(raws.size());
  for (std::size_t li = 0; li < raws.size(); ++li) {
    Raw& raw = raws[li];
    std::sort(raw.voxels.begin(), raw.voxels.end());
    LesionComponent lc;
    lc.id = static_cast<int>(li);
    lc.artery = raw.artery;
    lc.peak_hu = kHuFloor;
    lc.min_hu = kHuCeil;
    double sum_hu = 0.0, cx = 0.0, cy = 0.0, cz = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> slice_counts;  // z -> count
    for (const std::size_t idx : raw.voxels) {
      Voxel vox;
      vox.x = idx % v.dims.nx;
      vox.y = (idx / v.dims.nx) % v.dims.ny;
      vox.z = idx / (v.dims.nx * v.dims.ny);
      lc.voxels.push_back(vox);
      const int h = v.hu[idx];
      lc.peak_hu = std::max(lc.peak_hu, h);
      lc.min_hu = std::min(lc.min_hu, h);
      sum_hu += h;
      cx += (static_cast<double>(vox.x) + 0.5) * v.spacing.dx;
      cy += (static_cast<double>(vox.y) + 0.5) * v.spacing.dy;
      cz += (static_cast<double>(vox.z) + 0.5) * v.spacing.dz;
      if (!slice_counts.empty() && slice_counts.back().first == vox.z) {
        ++slice_counts.back().second;
      } else {
        slice_counts.emplace_back(vox.z, 1);
      }
    }
    const double count = static_cast<double>(raw.voxels.size());
    lc.mean_hu = sum_hu / count;
    lc.centroid_mm[0] = cx / count;
    lc.centroid_mm[1] = cy / count;
    lc.centroid_mm[2] = cz / count;
    // Flat indices sort z-slowest, so slice_counts is grouped in ascending z.
    for (const auto& [z, c] : slice_counts) {
      lc.per_slice_area.emplace_back(z, static_cast<double>(c) * slice_area_unit);
    }
    lesions.push_back(std::move(lc));
  }
  return lesions;
}

}  // namespace calciomics
