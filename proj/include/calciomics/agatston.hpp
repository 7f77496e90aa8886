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

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "calciomics/common.hpp"
#include "calciomics/volume.hpp"

namespace calciomics {

/// Agatston density weighting factor from the peak attenuation of a
/// lesion (or lesion-slice): [130,200) -> 1, [200,300) -> 2,
/// [300,400) -> 3, [400,inf) -> 4.
inline int density_weight(int peak_hu) {
  require(peak_hu >= 130, "density_weight: peak HU below 130");
  if (peak_hu < 200) return 1;
  if (peak_hu < 300) return 2;
  if (peak_hu < 400) return 3;
  return 4;
}

struct ScoringConfig {
  double min_slice_area_mm2 = 1.0;
  double mass_calibration = 0.001;  // mass units per (HU * mm^3)
  double agatston_scale = 1.0;      // slice-thickness rescaling; 1 = none

  void validate() const {
    require(min_slice_area_mm2 > 0, "ScoringConfig: minSliceArea must be > 0");
    require(mass_calibration > 0, "ScoringConfig: massCalibration must be > 0");
    require(agatston_scale > 0, "ScoringConfig: agatstonScale must be > 0");
  }
};

/// Calcium scores at one scope (lesion, artery, or whole heart).
struct ScoreBundle {
  double agatston2d = 0.0;
  double agatston3d = 0.0;
  double volume_mm3 = 0.0;
  double mass = 0.0;
  double area2d_mm2 = 0.0;
  std::size_t lesion_count = 0;

  ScoreBundle& operator+=(const ScoreBundle& o) {
    agatston2d += o.agatston2d;
    agatston3d += o.agatston3d;
    volume_mm3 += o.volume_mm3;
    mass += o.mass;
    area2d_mm2 += o.area2d_mm2;
    lesion_count += o.lesion_count;
    return *this;
  }
};

/// Scores for one patient at all three scopes. per_artery is indexed by
/// artery code (entry 0 unused).
struct PatientScores {
  std::vector<ScoreBundle> per_lesion;
  std::array<ScoreBundle, kNumArteries + 1> per_artery{};
  ScoreBundle heart;
};

/// Single-slice Agatston contribution: zero below the minimum-area rule,
/// otherwise area times the density weight of the slice's peak HU.
inline double agatston_slice_term(double area_mm2, int peak_hu,
                                  const ScoringConfig& cfg) {
  require(area_mm2 >= 0, "agatston_slice_term: negative area");
  if (area_mm2 < cfg.min_slice_area_mm2) return 0.0;
  return area_mm2 * density_weight(peak_hu) * cfg.agatston_scale;
}

inline ScoreBundle score_lesion(const LesionComponent& lesion, const Volume& v,
                                const ScoringConfig& cfg) {
  cfg.validate();
  ScoreBundle b;
  b.lesion_count = 1;

  // Per-slice peak HU over the lesion's voxels; slices follow
  // per_slice_area's ascending-z grouping.
  std::vector<int> slice_peak(lesion.per_slice_area.size(), kHuFloor);
  for (const Voxel& vox : lesion.voxels) {
    require(vox.x < v.dims.nx && vox.y < v.dims.ny && vox.z < v.dims.nz,
            "score_lesion: voxel outside volume");
    for (std::size_t si = 0; si < lesion.per_slice_area.size(); ++si) {
      if (lesion.per_slice_area[si].first == vox.z) {
        slice_peak[si] = std::max(slice_peak[si],
                                  static_cast<int>(v.at(vox.x, vox.y, vox.z)));
        break;
      }
    }
  }
  for (std::size_t si = 0; si < lesion.per_slice_area.size(); ++si) {
    const double area = lesion.per_slice_area[si].second;
    b.agatston2d += agatston_slice_term(area, slice_peak[si], cfg);
    b.area2d_mm2 += area;
  }
  b.volume_mm3 =
      static_cast<double>(lesion.voxels.size()) * v.spacing.voxel_volume();
  b.agatston3d =
      density_weight(lesion.peak_hu) * b.volume_mm3 * cfg.agatston_scale;
  b.mass = cfg.mass_calibration * lesion.mean_hu * b.volume_mm3;
  return b;
}

inline PatientScores aggregate_scores(const std::vector<LesionComponent>& lesions,
                                      const Volume& v, const ScoringConfig& cfg) {
  PatientScores s;
  s.per_lesion.reserve(lesions.size());
  for (const LesionComponent& lesion : lesions) {
    ScoreBundle b = score_lesion(lesion, v, cfg);
    s.per_artery[static_cast<std::size_t>(lesion.artery)] += b;
    s.per_lesion.push_back(b);
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    s.heart += s.per_artery[static_cast<std::size_t>(a)];
  }
  return s;
}

/// Number of distinct arteries holding at least one lesion (0..4).
inline int num_art_calc(const std::vector<LesionComponent>& lesions) {
  std::array<bool, kNumArteries + 1> seen{};
  for (const LesionComponent& lesion : lesions) {
    seen[static_cast<std::size_t>(lesion.artery)] = true;
  }
  int n = 0;
  for (int a = 1; a <= kNumArteries; ++a) n += seen[static_cast<std::size_t>(a)];
  return n;
}

/// Whole-heart summation of lesion areas across all slices (mm^2).
inline double area_2d_total(const std::vector<LesionComponent>& lesions) {
  double total = 0.0;
  for (const LesionComponent& lesion : lesions) {
    for (const auto& [z, area] : lesion.per_slice_area) total += area;
  }
  return total;
}

/// Per-patient JSON score report.
inline nlohmann::json score_report_json(const std::string& patient_id,
                                        const PatientScores& s) {
  auto bundle_json = [](const ScoreBundle& b) {
    nlohmann::json j;
    j["agatston2D"] = b.agatston2d;
    j["agatston3D"] = b.agatston3d;
    j["volume"] = b.volume_mm3;
    j["mass"] = b.mass;
    j["area2D"] = b.area2d_mm2;
    j["lesionCount"] = b.lesion_count;
    return j;
  };
  nlohmann::json j;
  j["patientId"] = patient_id;
  nlohmann::json per_artery;
  for (int a = 1; a <= kNumArteries; ++a) {
    per_artery[artery_name(a)] =
        bundle_json(s.per_artery[static_cast<std::size_t>(a)]);
  }
  j["perArtery"] = per_artery;
  j["heart"] = bundle_json(s.heart);
  return j;
}

}  // namespace calciomics
