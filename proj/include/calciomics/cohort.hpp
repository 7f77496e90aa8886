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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "calciomics/common.hpp"
#include "calciomics/csv.hpp"
#include "calciomics/features.hpp"
#include "calciomics/rng.hpp"
#include "calciomics/volume.hpp"

namespace calciomics {

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

enum class LesionShape { kBox, kEllipsoid };
enum class HuProfile { kConstant, kRadialRamp };

struct PhantomLesionSpec {
  int artery = kArteryLAD;
  LesionShape shape = LesionShape::kBox;
  double center_mm[3] = {0, 0, 0};
  double extent_mm[3] = {1, 1, 2.5};  // full widths
  HuProfile profile = HuProfile::kConstant;
  int peak_hu = 300;
  int edge_hu = 130;  // ramp value at the lesion boundary
};

struct PhantomSpec {
  Dims dims{32, 32, 12};
  Spacing spacing{0.5, 0.5, 2.5};
  int background_hu = 0;
  double noise_sigma_hu = 0;
  std::vector<PhantomLesionSpec> lesions;
};

/// Analytic per-lesion scores computed during rasterization, before noise.
/// The arithmetic here is intentionally written out independently of the
/// scoring module so the two can be compared as oracle and subject.
struct GroundTruthLesion {
  int artery = 0;
  std::size_t voxel_count = 0;
  double volume_mm3 = 0;
  double area2d_mm2 = 0;
  double agatston2d = 0;
  double agatston3d = 0;
  double mass = 0;
  int peak_hu = 0;
  double mean_hu = 0;
  std::vector<std::size_t> voxels;  // flat indices, ascending
};

struct PhantomResult {
  Volume volume;
  ArteryLabelMap mask;
  std::vector<GroundTruthLesion> lesions;
};

namespace detail {

inline int phantom_density_weight(int peak_hu) {
  // Same band table as the scorer, restated here so the phantom ground truth
  // does not lean on the code it is meant to check.
  if (peak_hu >= 400) return 4;
  if (peak_hu >= 300) return 3;
  if (peak_hu >= 200) return 2;
  if (peak_hu >= 130) return 1;
  fail("phantom: lesion HU below the scoring threshold");
}

/// Normalized radial coordinate of a point inside the lesion: 0 at the
/// center, 1 at the boundary.
inline double lesion_radius(const PhantomLesionSpec& spec, const double p[3]) {
  double r = 0;
  if (spec.shape == LesionShape::kBox) {
    for (int d = 0; d < 3; ++d) {
      r = std::max(r, std::fabs(p[d] - spec.center_mm[d]) /
                          (spec.extent_mm[d] / 2.0));
    }
  } else {
    double s = 0;
    for (int d = 0; d < 3; ++d) {
      const double t = (p[d] - spec.center_mm[d]) / (spec.extent_mm[d] / 2.0);
      s += t * t;
    }
    r = std::sqrt(s);
  }
  return r;
}

inline bool contains(const PhantomLesionSpec& spec, const double p[3]) {
  if (spec.shape == LesionShape::kBox) {
    for (int d = 0; d < 3; ++d) {
      const double half = spec.extent_mm[d] / 2.0;
      // Half-open box keeps voxel membership unambiguous between abutters.
      if (p[d] < spec.center_mm[d] - half || p[d] >= spec.center_mm[d] + half) {
        return false;
      }
    }
    return true;
  }
  return lesion_radius(spec, p) <= 1.0;
}

inline int lesion_hu_at(const PhantomLesionSpec& spec, const double p[3]) {
  if (spec.profile == HuProfile::kConstant) return spec.peak_hu;
  const double r = std::min(1.0, lesion_radius(spec, p));
  const double hu = spec.peak_hu + (spec.edge_hu - spec.peak_hu) * r;
  return static_cast<int>(std::lround(hu));
}

}  // namespace detail

inline PhantomResult generate_phantom(const PhantomSpec& spec,
                                      std::uint64_t seed) {
  require(spec.dims.nx > 0 && spec.dims.ny > 0 && spec.dims.nz > 0,
          "phantom: dims must be positive");
  require(spec.spacing.dx > 0 && spec.spacing.dy > 0 && spec.spacing.dz > 0,
          "phantom: spacing must be positive");
  require(spec.noise_sigma_hu >= 0, "phantom: noise sigma must be >= 0");
  require(spec.background_hu >= kHuFloor && spec.background_hu < 130,
          "phantom: background HU must be below the lesion threshold");

  PhantomResult out;
  out.volume.dims = spec.dims;
  out.volume.spacing = spec.spacing;
  out.volume.hu.assign(spec.dims.count(),
                       static_cast<std::int16_t>(spec.background_hu));
  out.mask.dims = spec.dims;
  out.mask.labels.assign(spec.dims.count(), 0);

  const double grid_mm[3] = {
      static_cast<double>(spec.dims.nx) * spec.spacing.dx,
      static_cast<double>(spec.dims.ny) * spec.spacing.dy,
      static_cast<double>(spec.dims.nz) * spec.spacing.dz};
  std::vector<int> claimed(spec.dims.count(), -1);

  for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
    const PhantomLesionSpec& ls = spec.lesions[li];
    require(ls.artery >= 1 && ls.artery <= kNumArteries,
            "phantom: lesion artery code out of range");
    require(ls.peak_hu >= 130, "phantom: lesion peak HU must be >= 130");
    require(ls.peak_hu <= kHuCeil, "phantom: lesion peak HU above the HU ceiling");
    require(ls.edge_hu >= 130 && ls.edge_hu <= ls.peak_hu,
            "phantom: edge HU must be in [130, peak]");
    for (int d = 0; d < 3; ++d) {
      require(ls.extent_mm[d] > 0, "phantom: lesion extent must be positive");
      require(ls.center_mm[d] - ls.extent_mm[d] / 2.0 >= 0 &&
                  ls.center_mm[d] + ls.extent_mm[d] / 2.0 <= grid_mm[d],
              "phantom: lesion extends outside the grid");
    }

    GroundTruthLesion gt;
    gt.artery = ls.artery;
    gt.peak_hu = 0;
    // Scan the lesion's voxel bounding box; a voxel belongs iff its center
    // is inside the shape.
    const double spacing_d[3] = {spec.spacing.dx, spec.spacing.dy,
                                 spec.spacing.dz};
    const std::size_t dims_d[3] = {spec.dims.nx, spec.dims.ny, spec.dims.nz};
    std::size_t lo[3], hi[3];
    for (int d = 0; d < 3; ++d) {
      const double min_mm = ls.center_mm[d] - ls.extent_mm[d] / 2.0;
      const double max_mm = ls.center_mm[d] + ls.extent_mm[d] / 2.0;
      const auto lo_i = static_cast<long>(std::floor(min_mm / spacing_d[d])) - 1;
      const auto hi_i = static_cast<long>(std::ceil(max_mm / spacing_d[d])) + 1;
      lo[d] = static_cast<std::size_t>(std::max(0L, lo_i));
      hi[d] = static_cast<std::size_t>(
          std::min(static_cast<long>(dims_d[d]) - 1, hi_i));
    }

    // Per-slice accumulation for the analytic Agatston computation.
    std::map<std::size_t, std::pair<std::size_t, int>> slice_count_peak;
    double hu_sum = 0;
    for (std::size_t z = lo[2]; z <= hi[2]; ++z) {
      for (std::size_t y = lo[1]; y <= hi[1]; ++y) {
        for (std::size_t x = lo[0]; x <= hi[0]; ++x) {
          const double p[3] = {(static_cast<double>(x) + 0.5) * spacing_d[0],
                               (static_cast<double>(y) + 0.5) * spacing_d[1],
                               (static_cast<double>(z) + 0.5) * spacing_d[2]};
          if (!detail::contains(ls, p)) continue;
          const std::size_t idx = out.volume.index(x, y, z);
          require(claimed[idx] < 0, "phantom: overlapping lesions rejected");
          claimed[idx] = static_cast<int>(li);
          const int hu = detail::lesion_hu_at(ls, p);
          out.volume.hu[idx] = static_cast<std::int16_t>(hu);
          gt.voxels.push_back(idx);
          gt.peak_hu = std::max(gt.peak_hu, hu);
          hu_sum += hu;
          auto& [cnt, peak] = slice_count_peak[z];
          ++cnt;
          peak = std::max(peak, hu);
        }
      }
    }
    if (gt.voxels.empty()) continue;  // degenerate shape smaller than a voxel
    std::sort(gt.voxels.begin(), gt.voxels.end());
    gt.voxel_count = gt.voxels.size();
    const double voxel_volume =
        spec.spacing.dx * spec.spacing.dy * spec.spacing.dz;
    const double slice_area_unit = spec.spacing.dx * spec.spacing.dy;
    gt.volume_mm3 = static_cast<double>(gt.voxel_count) * voxel_volume;
    gt.mean_hu = hu_sum / static_cast<double>(gt.voxel_count);
    gt.mass = 0.001 * gt.mean_hu * gt.volume_mm3;
    gt.agatston3d =
        detail::phantom_density_weight(gt.peak_hu) * gt.volume_mm3;
    for (const auto& [z, cp] : slice_count_peak) {
      const double area = static_cast<double>(cp.first) * slice_area_unit;
      gt.area2d_mm2 += area;
      if (area >= 1.0) {
        gt.agatston2d += area * detail::phantom_density_weight(cp.second);
      }
    }
    out.lesions.push_back(std::move(gt));
  }

  // Artery labels: each lesion's bounding box inflated by one voxel. A clash
  // between different arteries would make per-artery assignment ambiguous.
  for (const GroundTruthLesion& gt : out.lesions) {
    for (const std::size_t idx : gt.voxels) {
      const long x = static_cast<long>(idx % spec.dims.nx);
      const long y = static_cast<long>((idx / spec.dims.nx) % spec.dims.ny);
      const long z = static_cast<long>(idx / (spec.dims.nx * spec.dims.ny));
      for (long dz = -1; dz <= 1; ++dz) {
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long px = x + dx, py = y + dy, pz = z + dz;
            if (px < 0 || py < 0 || pz < 0 ||
                px >= static_cast<long>(spec.dims.nx) ||
                py >= static_cast<long>(spec.dims.ny) ||
                pz >= static_cast<long>(spec.dims.nz)) {
              continue;
            }
            const std::size_t nidx = out.mask.index(
                static_cast<std::size_t>(px), static_cast<std::size_t>(py),
                static_cast<std::size_t>(pz));
            const auto code = static_cast<std::uint8_t>(gt.artery);
            require(out.mask.labels[nidx] == 0 ||
                        out.mask.labels[nidx] == code,
                    "phantom: lesions from different arteries overlap");
            out.mask.labels[nidx] = code;
          }
        }
      }
    }
  }

  if (spec.noise_sigma_hu > 0) {
    Rng rng = Rng(seed).derive("phantom-noise");
    for (std::size_t i = 0; i < out.volume.hu.size(); ++i) {
      const long noisy = out.volume.hu[i] +
                         std::lround(rng.normal(0.0, spec.noise_sigma_hu));
      out.volume.hu[i] = static_cast<std::int16_t>(
          std::clamp(noisy, static_cast<long>(kHuFloor),
                     static_cast<long>(kHuCeil)));
    }
  }
  out.volume.validate();
  out.mask.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

struct CohortSpec {
  std::size_t n_patients = 1000;
  double prevalence = 0.09;

  // Clinical covariate distributions.
  double age_mean = 63.0, age_sd = 8.8;
  double female_rate = 0.516;
  double diabetes_rate = 0.250;
  double smoking_rate = 0.397;

  // Outcome model: logit = b0 + b_agatston*log1p(Agatston2D)
  //                      + b_num_art*numArtCalc + b_diabetes*diabetes
  //                      + b_female*female, with b0 calibrated to prevalence.
  double b_agatston = 1.6;
  double b_num_art = 0.9;
  double b_diabetes = 0.5;
  double b_female = -0.35;

  // Imaging substrate.
  Dims dims{32, 32, 12};
  Spacing spacing{0.5, 0.5, 2.5};
  double noise_sigma_hu = 0;
  double mean_extra_lesions = 2.0;  // lesion count = 1 + geometric-ish tail
  std::size_t max_lesions = 8;

  std::uint64_t seed = 1;

  void validate() const {
    require(n_patients >= 10, "CohortSpec: n must be >= 10");
    require(prevalence > 0 && prevalence < 1,
            "CohortSpec: prevalence must be in (0,1)");
    for (double rate : {female_rate, diabetes_rate, smoking_rate}) {
      require(rate >= 0 && rate <= 1, "CohortSpec: rates must be in [0,1]");
    }
    require(age_sd >= 0, "CohortSpec: age sd must be >= 0");
    require(max_lesions >= 1, "CohortSpec: maxLesions must be >= 1");
  }
};

struct CohortPatient {
  ClinicalRecord clinical;
  PhantomSpec phantom;
  PhantomResult imaging;
  double gt_agatston2d = 0;  // analytic, used by the outcome model
  int gt_num_art_calc = 0;
};

struct CohortResult {
  CohortSpec spec;
  std::vector<CohortPatient> patients;
  double intercept = 0;  // calibrated b0
};

namespace detail {

/// Draws one patient's lesion layout. Candidate lesions whose inflated
/// bounding boxes collide with an already-placed lesion are re-drawn; this
/// keeps lesions disconnected even under 26-connectivity.
inline PhantomSpec draw_patient_phantom(const CohortSpec& spec, Rng& rng) {
  PhantomSpec ph;
  ph.dims = spec.dims;
  ph.spacing = spec.spacing;
  ph.noise_sigma_hu = spec.noise_sigma_hu;

  std::size_t n_lesions = 1;
  while (n_lesions < spec.max_lesions &&
         rng.uniform() < spec.mean_extra_lesions /
                             (spec.mean_extra_lesions + 1.0)) {
    ++n_lesions;
  }

  // Artery dispersion is drawn independently of lesion count so the number
  // of involved arteries carries signal beyond the total calcium burden.
  const auto n_arteries =
      static_cast<std::size_t>(rng.uniform_int(1, kNumArteries));
  const std::vector<std::size_t> artery_pool =
      rng.sample_without_replacement(kNumArteries, n_arteries);

  struct Box {
    double lo[3], hi[3];
  };
  std::vector<Box> placed;
  const double grid_mm[3] = {
      static_cast<double>(spec.dims.nx) * spec.spacing.dx,
      static_cast<double>(spec.dims.ny) * spec.spacing.dy,
      static_cast<double>(spec.dims.nz) * spec.spacing.dz};
  const double spacing_d[3] = {spec.spacing.dx, spec.spacing.dy,
                               spec.spacing.dz};

  for (std::size_t li = 0; li < n_lesions; ++li) {
    bool placed_ok = false;
    for (int attempt = 0; attempt < 100 && !placed_ok; ++attempt) {
      PhantomLesionSpec ls;
      ls.artery = static_cast<int>(artery_pool[rng.below(artery_pool.size())] + 1);
      ls.shape = rng.bernoulli(0.5) ? LesionShape::kBox : LesionShape::kEllipsoid;
      ls.profile =
          rng.bernoulli(0.5) ? HuProfile::kConstant : HuProfile::kRadialRamp;
      ls.peak_hu = static_cast<int>(rng.uniform_int(150, 1000));
      ls.edge_hu = 130;
      // Log-uniform transverse extents give the cohort an Agatston spread
      // over several orders of magnitude, as seen clinically.
      ls.extent_mm[0] = 0.6 * std::exp(rng.uniform(0.0, 2.45));
      ls.extent_mm[1] = 0.6 * std::exp(rng.uniform(0.0, 2.45));
      ls.extent_mm[2] = rng.uniform(2.6, 9.5);
      bool fits = true;
      for (int d = 0; d < 3; ++d) {
        const double half = ls.extent_mm[d] / 2.0;
        const double margin = half + 2.0 * spacing_d[d];
        if (grid_mm[d] <= 2.0 * margin) {
          fits = false;
          break;
        }
        ls.center_mm[d] = rng.uniform(margin, grid_mm[d] - margin);
      }
      if (!fits) break;

      Box box;
      bool collides = false;
      for (int d = 0; d < 3; ++d) {
        box.lo[d] = ls.center_mm[d] - ls.extent_mm[d] / 2.0 - 2.0 * spacing_d[d];
        box.hi[d] = ls.center_mm[d] + ls.extent_mm[d] / 2.0 + 2.0 * spacing_d[d];
      }
      for (const Box& other : placed) {
        bool overlap = true;
        for (int d = 0; d < 3; ++d) {
          if (box.hi[d] <= other.lo[d] || box.lo[d] >= other.hi[d]) {
            overlap = false;
            break;
          }
        }
        if (overlap) {
          collides = true;
          break;
        }
      }
      if (collides) continue;
      placed.push_back(box);
      ph.lesions.push_back(ls);
      placed_ok = true;
    }
  }
  return ph;
}

}  // namespace detail

/// Generates the full synthetic cohort in memory. Pure function of the spec
/// (the spec carries the seed).
inline CohortResult generate_cohort(const CohortSpec& spec) {
  spec.validate();
  CohortResult out;
  out.spec = spec;
  out.patients.resize(spec.n_patients);

  const Rng master(spec.seed);
  const Rng patient_stream = master.derive("patient");
  const Rng label_stream = master.derive("labels");

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Rng rng = patient_stream.derive(static_cast<std::uint64_t>(i));
    CohortPatient& p = out.patients[i];

    char id[16];
    std::snprintf(id, sizeof(id), "P%05zu", i + 1);
    p.clinical.patient_id = id;
    p.clinical.age = std::clamp(rng.normal(spec.age_mean, spec.age_sd), 18.0, 95.0);
    p.clinical.female = rng.bernoulli(spec.female_rate) ? 1 : 0;
    p.clinical.diabetes = rng.bernoulli(spec.diabetes_rate) ? 1 : 0;
    p.clinical.smoking = rng.bernoulli(spec.smoking_rate) ? 1 : 0;

    p.phantom = detail::draw_patient_phantom(spec, rng);
    const std::uint64_t phantom_seed = rng.next_u64();
    p.imaging = generate_phantom(p.phantom, phantom_seed);

    std::array<bool, kNumArteries + 1> artery_seen{};
    for (const GroundTruthLesion& gt : p.imaging.lesions) {
      p.gt_agatston2d += gt.agatston2d;
      artery_seen[static_cast<std::size_t>(gt.artery)] = true;
    }
    for (int a = 1; a <= kNumArteries; ++a) {
      p.gt_num_art_calc += artery_seen[static_cast<std::size_t>(a)];
    }
  }

  // Calibrate the intercept so the mean outcome probability hits the target
  // prevalence, then draw labels from a dedicated stream.
  std::vector<double> signal(spec.n_patients);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    const CohortPatient& p = out.patients[i];
    signal[i] = spec.b_agatston * std::log1p(p.gt_agatston2d) +
                spec.b_num_art * static_cast<double>(p.gt_num_art_calc) +
                spec.b_diabetes * static_cast<double>(p.clinical.diabetes) +
                spec.b_female * static_cast<double>(p.clinical.female);
  }
  auto mean_prob = [&signal](double b0) {
    double s = 0;
    for (double v : signal) s += sigmoid(b0 + v);
    return s / static_cast<double>(signal.size());
  };
  double lo = -40, hi = 40;
  require(mean_prob(lo) <= spec.prevalence && mean_prob(hi) >= spec.prevalence,
          "generate_cohort: prevalence infeasible for the outcome model");
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = (lo + hi) / 2.0;
    if (mean_prob(mid) < spec.prevalence) lo = mid;
    else hi = mid;
  }
  out.intercept = (lo + hi) / 2.0;

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    Rng rng = label_stream.derive(static_cast<std::uint64_t>(i));
    const double prob = sigmoid(out.intercept + signal[i]);
    out.patients[i].clinical.label = rng.bernoulli(prob) ? 1 : 0;
  }
  return out;
}

/// Writes volumes, masks, the clinical CSV, and a manifest into `dir`.
inline void write_cohort(const CohortResult& cohort, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, "cannot create directory: " + dir);

  CsvWriter clinical(dir + "/clinical.csv");
  clinical.write_row(
      {"patientId", "age", "female", "diabetes", "smoking", "label"});
  nlohmann::json files = nlohmann::json::array();
  for (const CohortPatient& p : cohort.patients) {
    const std::string vol_path = dir + "/" + p.clinical.patient_id + ".vol";
    const std::string mask_path = dir + "/" + p.clinical.patient_id + ".mask";
    save_volume(p.imaging.volume, vol_path);
    save_mask(p.imaging.mask, p.imaging.volume.spacing, mask_path);
    clinical.write_row({p.clinical.patient_id, format_double(p.clinical.age),
                        std::to_string(p.clinical.female),
                        std::to_string(p.clinical.diabetes),
                        std::to_string(p.clinical.smoking),
                        std::to_string(p.clinical.label)});
    files.push_back(p.clinical.patient_id);
  }

  nlohmann::json manifest;
  manifest["kind"] = "calciomics-cohort";
  manifest["nPatients"] = cohort.patients.size();
  manifest["seed"] = cohort.spec.seed;
  manifest["prevalenceTarget"] = cohort.spec.prevalence;
  manifest["interceptCalibrated"] = cohort.intercept;
  manifest["patients"] = files;
  std::ofstream mf(dir + "/manifest.json", std::ios::binary);
  require(mf.good(), "cannot open for writing: " + dir + "/manifest.json");
  mf << manifest.dump(2) << '\n';
  require(mf.good(), "write failure on manifest.json");
}

}  // namespace calciomics
