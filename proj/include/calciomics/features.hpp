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
#include <limits>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "calciomics/agatston.hpp"
#include "calciomics/common.hpp"
#include "calciomics/mathutil.hpp"
#include "calciomics/volume.hpp"

namespace calciomics {

// ---------------------------------------------------------------------------
// First-order statistics
// ---------------------------------------------------------------------------

/// First-order statistics over a set of HU samples. For empty or constant
/// input the undefined moments are reported as 0 (sentinel policy: callers
/// pair these with a presence flag).
struct FirstOrderStats {
  std::size_t count = 0;
  double min = 0, max = 0, mean = 0, sd = 0;
  double skewness = 0;  // Fisher g1
  double kurtosis = 0;  // excess g2
  double energy = 0;    // sum of squared clip-normalized intensities
};

/// Intensity normalization used for the energy feature: HU clipped to
/// [-1024, 1024] and mapped onto [0, 1].
inline double normalized_intensity(double hu) {
  const double c = std::clamp(hu, -1024.0, 1024.0);
  return (c + 1024.0) / 2048.0;
}

inline FirstOrderStats first_order_stats(const std::vector<double>& x) {
  FirstOrderStats s;
  s.count = x.size();
  if (x.empty()) return s;
  s.min = *std::min_element(x.begin(), x.end());
  s.max = *std::max_element(x.begin(), x.end());
  double sum = 0;
  for (double v : x) {
    sum += v;
    const double u = normalized_intensity(v);
    s.energy += u * u;
  }
  const double n = static_cast<double>(x.size());
  s.mean = sum / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : x) {
    const double d = v - s.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  s.sd = std::sqrt(m2);
  if (m2 > 0) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return s;
}

inline std::vector<double> lesion_hu_values(const LesionComponent& lesion,
                                            const Volume& v) {
  std::vector<double> values;
  values.reserve(lesion.voxels.size());
  for (const Voxel& vox : lesion.voxels) {
    values.push_back(static_cast<double>(v.at(vox.x, vox.y, vox.z)));
  }
  return values;
}

inline FirstOrderStats lesion_first_order(const LesionComponent& lesion,
                                          const Volume& v) {
  return first_order_stats(lesion_hu_values(lesion, v));
}

// ---------------------------------------------------------------------------
// Second-order (GLCM) texture
// ---------------------------------------------------------------------------

struct GlcmConfig {
  int bins = 8;
  double range_lo = 130.0;
  double range_hi = 1024.0;
};

struct GlcmFeatures {
  double contrast = 0;
  double correlation = 1;
  double energy = 1;  // angular second moment
  double homogeneity = 1;
};

namespace detail {

inline int glcm_bin(double hu, const GlcmConfig& cfg) {
  const double t = (hu - cfg.range_lo) / (cfg.range_hi - cfg.range_lo);
  const int b = static_cast<int>(std::floor(t * cfg.bins));
  return std::clamp(b, 0, cfg.bins - 1);
}

inline GlcmFeatures glcm_features_from_matrix(const std::vector<double>& p,
                                              int bins) {
  GlcmFeatures f;
  f.contrast = 0;
  f.energy = 0;
  f.homogeneity = 0;
  std::vector<double> marginal(static_cast<std::size_t>(bins), 0.0);
  for (int i = 0; i < bins; ++i) {
    for (int j = 0; j < bins; ++j) {
      const double pij = p[static_cast<std::size_t>(i * bins + j)];
      marginal[static_cast<std::size_t>(i)] += pij;
      f.contrast += pij * (i - j) * (i - j);
      f.energy += pij * pij;
      f.homogeneity += pij / (1.0 + (i - j) * (i - j));
    }
  }
  double mu = 0;
  for (int i = 0; i < bins; ++i) mu += i * marginal[static_cast<std::size_t>(i)];
  double var = 0;
  for (int i = 0; i < bins; ++i) {
    var += (i - mu) * (i - mu) * marginal[static_cast<std::size_t>(i)];
  }
  if (var <= 0) {
    f.correlation = 1.0;  // constant texture correlates perfectly with itself
  } else {
    double cov = 0;
    for (int i = 0; i < bins; ++i) {
      for (int j = 0; j < bins; ++j) {
        cov += p[static_cast<std::size_t>(i * bins + j)] * (i - mu) * (j - mu);
      }
    }
    f.correlation = cov / var;
  }
  return f;
}

}  // namespace detail

/// Gray-level co-occurrence features over intra-lesion voxel pairs at unit
/// offsets along x, y, and z, symmetrized and normalized. A lesion with no
/// qualifying pair falls back to the single-entry matrix convention.
inline GlcmFeatures lesion_second_order(const LesionComponent& lesion,
                                        const Volume& v,
                                        const GlcmConfig& cfg = {}) {
  require(!lesion.voxels.empty(), "lesion_second_order: empty lesion");
  require(cfg.bins >= 2 && cfg.range_lo < cfg.range_hi,
          "GlcmConfig: invalid binning");
  std::unordered_set<std::size_t> member;
  member.reserve(lesion.voxels.size() * 2);
  for (const Voxel& vox : lesion.voxels) member.insert(v.index(vox.x, vox.y, vox.z));

  const std::array<std::array<std::size_t, 3>, 3> offsets = {
      {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  std::vector<double> counts(static_cast<std::size_t>(cfg.bins * cfg.bins), 0.0);
  double total = 0;
  for (const Voxel& vox : lesion.voxels) {
    const int bin_a = detail::glcm_bin(v.at(vox.x, vox.y, vox.z), cfg);
    for (const auto& o : offsets) {
      const std::size_t px = vox.x + o[0], py = vox.y + o[1], pz = vox.z + o[2];
      if (px >= v.dims.nx || py >= v.dims.ny || pz >= v.dims.nz) continue;
      const std::size_t ni = v.index(px, py, pz);
      if (!member.count(ni)) continue;
      const int bin_b = detail::glcm_bin(v.hu[ni], cfg);
      counts[static_cast<std::size_t>(bin_a * cfg.bins + bin_b)] += 1.0;
      counts[static_cast<std::size_t>(bin_b * cfg.bins + bin_a)] += 1.0;
      total += 2.0;
    }
  }
  if (total == 0) {
    // Single-entry convention: all mass at the lone voxel bin.
    const int b = detail::glcm_bin(v.at(lesion.voxels[0].x, lesion.voxels[0].y,
                                        lesion.voxels[0].z),
                                   cfg);
    counts[static_cast<std::size_t>(b * cfg.bins + b)] = 1.0;
    total = 1.0;
  }
  for (double& c : counts) c /= total;
  return detail::glcm_features_from_matrix(counts, cfg.bins);
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

struct ShapeFeatures {
  std::size_t voxel_count = 0;
  double max_slice_area_mm2 = 0;
  double elongation = 1;  // sqrt(lambda2/lambda1)
  double flatness = 1;    // sqrt(lambda3/lambda1)
  double bbox_fill = 1;
};

inline ShapeFeatures lesion_shape(const LesionComponent& lesion,
                                  const Spacing& spacing) {
  require(!lesion.voxels.empty(), "lesion_shape: empty lesion");
  ShapeFeatures f;
  f.voxel_count = lesion.voxels.size();
  for (const auto& [z, area] : lesion.per_slice_area) {
    f.max_slice_area_mm2 = std::max(f.max_slice_area_mm2, area);
  }

  std::size_t min_x = lesion.voxels[0].x, max_x = lesion.voxels[0].x;
  std::size_t min_y = lesion.voxels[0].y, max_y = lesion.voxels[0].y;
  std::size_t min_z = lesion.voxels[0].z, max_z = lesion.voxels[0].z;
  double mx = 0, my = 0, mz = 0;
  for (const Voxel& vox : lesion.voxels) {
    min_x = std::min(min_x, vox.x);
    max_x = std::max(max_x, vox.x);
    min_y = std::min(min_y, vox.y);
    max_y = std::max(max_y, vox.y);
    min_z = std::min(min_z, vox.z);
    max_z = std::max(max_z, vox.z);
    mx += (static_cast<double>(vox.x) + 0.5) * spacing.dx;
    my += (static_cast<double>(vox.y) + 0.5) * spacing.dy;
    mz += (static_cast<double>(vox.z) + 0.5) * spacing.dz;
  }
  const double n = static_cast<double>(lesion.voxels.size());
  mx /= n;
  my /= n;
  mz /= n;
  const double bbox_voxels = static_cast<double>((max_x - min_x + 1) *
                                                 (max_y - min_y + 1) *
                                                 (max_z - min_z + 1));
  f.bbox_fill = n / bbox_voxels;

  if (lesion.voxels.size() == 1) return f;  // elongation = flatness = 1

  double c00 = 0, c01 = 0, c02 = 0, c11 = 0, c12 = 0, c22 = 0;
  for (const Voxel& vox : lesion.voxels) {
    const double dx = (static_cast<double>(vox.x) + 0.5) * spacing.dx - mx;
    const double dy = (static_cast<double>(vox.y) + 0.5) * spacing.dy - my;
    const double dz = (static_cast<double>(vox.z) + 0.5) * spacing.dz - mz;
    c00 += dx * dx;
    c01 += dx * dy;
    c02 += dx * dz;
    c11 += dy * dy;
    c12 += dy * dz;
    c22 += dz * dz;
  }
  const auto eig = sym3_eigenvalues(c00 / n, c01 / n, c02 / n, c11 / n,
                                    c12 / n, c22 / n);
  const double l1 = std::max(eig[0], 0.0);
  const double l2 = std::max(eig[1], 0.0);
  const double l3 = std::max(eig[2], 0.0);
  if (l1 <= 0) {
    f.elongation = 1;
    f.flatness = 1;
  } else {
    f.elongation = std::sqrt(l2 / l1);
    f.flatness = std::sqrt(l3 / l1);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Spatial relations
// ---------------------------------------------------------------------------

struct SpatialFeatures {
  double nn_dist_mean_mm = 0;
  double nn_dist_max_mm = 0;
  double centroid_spread_mm = 0;  // RMS distance to the mean centroid
  double rel_pos_mean = 0;
  double rel_pos_max = 0;
};

/// Nearest-neighbor centroid distances, centroid dispersion, and relative
/// position of each lesion within the all-lesion bounding frame. Fewer than
/// two lesions yield zeros.
inline SpatialFeatures spatial_relations(const std::vector<LesionComponent>& lesions,
                                         const Spacing& spacing) {
  SpatialFeatures f;
  const std::size_t n = lesions.size();
  if (n == 0) return f;

  double mean_c[3] = {0, 0, 0};
  for (const LesionComponent& l : lesions) {
    for (int d = 0; d < 3; ++d) mean_c[d] += l.centroid_mm[d];
  }
  for (int d = 0; d < 3; ++d) mean_c[d] /= static_cast<double>(n);

  // Bounding frame over all lesion voxel centers, in mm.
  double lo[3] = {std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
  double hi[3] = {-lo[0], -lo[1], -lo[2]};
  for (const LesionComponent& l : lesions) {
    for (const Voxel& vox : l.voxels) {
      const double p[3] = {(static_cast<double>(vox.x) + 0.5) * spacing.dx,
                           (static_cast<double>(vox.y) + 0.5) * spacing.dy,
                           (static_cast<double>(vox.z) + 0.5) * spacing.dz};
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], p[d]);
        hi[d] = std::max(hi[d], p[d]);
      }
    }
  }
  double diag_sq = 0;
  for (int d = 0; d < 3; ++d) diag_sq += (hi[d] - lo[d]) * (hi[d] - lo[d]);
  const double diag = std::sqrt(diag_sq);

  double spread_sq = 0;
  double rel_sum = 0;
  for (const LesionComponent& l : lesions) {
    double dist_sq = 0;
    for (int d = 0; d < 3; ++d) {
      const double dd = l.centroid_mm[d] - mean_c[d];
      dist_sq += dd * dd;
    }
    spread_sq += dist_sq;
    const double rel = diag > 0 ? std::sqrt(dist_sq) / diag : 0.0;
    rel_sum += rel;
    f.rel_pos_max = std::max(f.rel_pos_max, rel);
  }
  f.centroid_spread_mm = std::sqrt(spread_sq / static_cast<double>(n));
  f.rel_pos_mean = rel_sum / static_cast<double>(n);

  if (n < 2) return f;  // NN features stay 0 by convention
  double nn_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double d_sq = 0;
      for (int d = 0; d < 3; ++d) {
        const double dd = lesions[i].centroid_mm[d] - lesions[j].centroid_mm[d];
        d_sq += dd * dd;
      }
      best = std::min(best, d_sq);
    }
    const double dist = std::sqrt(best);
    nn_sum += dist;
    f.nn_dist_max_mm = std::max(f.nn_dist_max_mm, dist);
  }
  f.nn_dist_mean_mm = nn_sum / static_cast<double>(n);
  return f;
}

// ---------------------------------------------------------------------------
// Artery / heart aggregates
// ---------------------------------------------------------------------------

struct ArteryHeartAggregates {
  std::array<FirstOrderStats, kNumArteries + 1> artery_hu{};  // index by code
  std::array<std::size_t, kNumArteries + 1> lesion_count{};
  FirstOrderStats heart_hu;
  std::array<double, 8> heart_hist{};  // normalized frequencies
};

inline ArteryHeartAggregates artery_heart_aggregates(
    const std::vector<LesionComponent>& lesions, const Volume& v) {
  ArteryHeartAggregates agg;
  std::array<std::vector<double>, kNumArteries + 1> pooled;
  std::vector<double> heart;
  for (const LesionComponent& lesion : lesions) {
    const std::vector<double> hu = lesion_hu_values(lesion, v);
    auto& dst = pooled[static_cast<std::size_t>(lesion.artery)];
    dst.insert(dst.end(), hu.begin(), hu.end());
    heart.insert(heart.end(), hu.begin(), hu.end());
    ++agg.lesion_count[static_cast<std::size_t>(lesion.artery)];
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    agg.artery_hu[static_cast<std::size_t>(a)] =
        first_order_stats(pooled[static_cast<std::size_t>(a)]);
  }
  agg.heart_hu = first_order_stats(heart);
  if (!heart.empty()) {
    const GlcmConfig range;  // reuse the [130, 1024] feature range
    for (double hu : heart) {
      const double t = (hu - range.range_lo) / (range.range_hi - range.range_lo);
      const int b = std::clamp(static_cast<int>(std::floor(t * 8)), 0, 7);
      agg.heart_hist[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& c : agg.heart_hist) c /= static_cast<double>(heart.size());
  }
  return agg;
}

// ---------------------------------------------------------------------------
// Mass histogram
// ---------------------------------------------------------------------------

/// Five-bin lesion-mass histogram specification. Edges are fitted on
/// training folds only; the fold id and training-row fingerprint travel with
/// the spec so the pipeline can police leakage.
struct HistogramSpec {
  static constexpr int kBins = 5;
  std::array<double, kBins + 1> edges{};  // first 0, last +inf
  int fitted_fold = -1;                   // -1: fitted outside any CV fold
  std::vector<std::size_t> training_rows;

  void validate() const {
    require(edges[0] == 0.0, "HistogramSpec: first edge must be 0");
    require(std::isinf(edges[kBins]) && edges[kBins] > 0,
            "HistogramSpec: last edge must be +inf");
    for (int i = 1; i <= kBins; ++i) {
      require(edges[static_cast<std::size_t>(i)] >
                  edges[static_cast<std::size_t>(i - 1)],
              "HistogramSpec: edges must ascend strictly");
    }
  }
};

/// Type-7 (linear-interpolation) sample quantile of sorted data.
inline double quantile_type7(const std::vector<double>& sorted, double q) {
  require(!sorted.empty(), "quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - std::floor(h);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Fits histogram edges as lesion-mass quintiles of the training masses.
/// Interior edges that collide are nudged upward to preserve strict ascent.
inline HistogramSpec fit_histogram_spec(std::vector<double> masses,
                                        int fitted_fold,
                                        std::vector<std::size_t> training_rows) {
  require(!masses.empty(),
          "fit_histogram_spec: no lesion masses in the training folds");
  for (double m : masses) {
    require(std::isfinite(m) && m >= 0, "fit_histogram_spec: invalid mass");
  }
  std::sort(masses.begin(), masses.end());
  HistogramSpec spec;
  spec.fitted_fold = fitted_fold;
  spec.training_rows = std::move(training_rows);
  spec.edges[0] = 0.0;
  spec.edges[HistogramSpec::kBins] = std::numeric_limits<double>::infinity();
  for (int i = 1; i < HistogramSpec::kBins; ++i) {
    spec.edges[static_cast<std::size_t>(i)] =
        quantile_type7(masses, static_cast<double>(i) / HistogramSpec::kBins);
  }
  for (int i = 1; i < HistogramSpec::kBins; ++i) {
    auto& e = spec.edges[static_cast<std::size_t>(i)];
    const double prev = spec.edges[static_cast<std::size_t>(i - 1)];
    if (e <= prev) {
      e = std::nextafter(prev, std::numeric_limits<double>::infinity());
    }
  }
  spec.validate();
  return spec;
}

/// Counts of lesion masses per spec bin; bin i covers [edge_i, edge_{i+1}).
inline std::array<std::size_t, HistogramSpec::kBins> mass_hist(
    const std::vector<double>& masses, const HistogramSpec& spec) {
  spec.validate();
  std::array<std::size_t, HistogramSpec::kBins> counts{};
  for (double m : masses) {
    require(std::isfinite(m) && m >= 0, "mass_hist: invalid mass");
    int bin = HistogramSpec::kBins - 1;
    for (int i = 0; i < HistogramSpec::kBins; ++i) {
      if (m < spec.edges[static_cast<std::size_t>(i + 1)]) {
        bin = i;
        break;
      }
    }
    ++counts[static_cast<std::size_t>(bin)];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Feature registry
// ---------------------------------------------------------------------------

enum class FeatureScale { kClinical, kHeart, kArtery, kLesionAggregate };

inline const char* feature_scale_name(FeatureScale s) {
  switch (s) {
    case FeatureScale::kClinical: return "clinical";
    case FeatureScale::kHeart: return "heart";
    case FeatureScale::kArtery: return "artery";
    case FeatureScale::kLesionAggregate: return "lesion-aggregate";
  }
  fail("unknown feature scale");
}

struct FeatureDef {
  std::string name;
  FeatureScale scale;
  std::string definition;
};

struct FeatureRegistry {
  std::string version;
  std::vector<FeatureDef> features;

  std::size_t size() const { return features.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].name == name) return i;
    }
    fail("unknown feature: " + name);
  }

  /// Stable fingerprint over version, names, and scales.
  std::string hash() const {
    std::uint64_t h = fnv1a64(version);
    for (const FeatureDef& f : features) {
      h = fnv1a64(f.name, h);
      h = fnv1a64(feature_scale_name(f.scale), h);
    }
    return to_hex(h);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["hash"] = hash();
    nlohmann::json arr = nlohmann::json::array();
    for (const FeatureDef& f : features) {
      nlohmann::json e;
      e["name"] = f.name;
      e["scale"] = feature_scale_name(f.scale);
      e["definition"] = f.definition;
      arr.push_back(e);
    }
    j["features"] = arr;
    return j;
  }
};

inline const std::vector<std::string>& clinical_feature_names() {
  static const std::vector<std::string> names = {"age", "female", "diabetes",
                                                 "smoking"};
  return names;
}

inline FeatureRegistry build_registry() {
  FeatureRegistry reg;
  reg.version = "calciomics-registry-v1";
  auto add = [&reg](const std::string& name, FeatureScale scale,
                    const std::string& definition) {
    reg.features.push_back({name, scale, definition});
  };

  add("age", FeatureScale::kClinical, "age in years");
  add("female", FeatureScale::kClinical, "1 if female else 0");
  add("diabetes", FeatureScale::kClinical, "1 if diabetic else 0");
  add("smoking", FeatureScale::kClinical, "1 if smoker else 0");

  add("AgatstonScore2D", FeatureScale::kHeart,
      "sum over lesion-slices of area x density weight of slice peak HU");
  add("AgatstonScore3D", FeatureScale::kHeart,
      "sum over lesions of volume x density weight of lesion peak HU");
  add("MassScore", FeatureScale::kHeart,
      "sum over lesions of calibration x mean HU x volume");
  add("VolumeScore", FeatureScale::kHeart, "total lesion volume in mm^3");
  add("Area2D", FeatureScale::kHeart,
      "total lesion area summed across all slices in mm^2");
  add("numArtCalc", FeatureScale::kHeart,
      "number of distinct arteries holding at least one lesion");

  for (int a = 1; a <= kNumArteries; ++a) {
    add(std::string("AgatstonScorePerArtery2D.") + artery_name(a),
        FeatureScale::kArtery, "per-artery Agatston 2D score");
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    add(std::string("AgatstonScorePerArtery3D.") + artery_name(a),
        FeatureScale::kArtery, "per-artery Agatston 3D score");
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    add(std::string("lesionCount.") + artery_name(a), FeatureScale::kArtery,
        "number of lesions in the artery");
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    add(std::string("presence.") + artery_name(a), FeatureScale::kArtery,
        "1 if the artery holds at least one lesion else 0");
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    const std::string base = std::string("HUperArtery2D.") + artery_name(a);
    add(base + ".mean", FeatureScale::kArtery, "mean HU over artery lesion voxels");
    add(base + ".sd", FeatureScale::kArtery,
        "population SD of HU over artery lesion voxels");
    add(base + ".skewness", FeatureScale::kArtery,
        "Fisher g1 skewness of artery lesion HU");
    add(base + ".kurtosis", FeatureScale::kArtery,
        "excess kurtosis g2 of artery lesion HU");
  }

  add("HUheart.mean", FeatureScale::kHeart, "mean HU over all lesion voxels");
  add("HUheart.sd", FeatureScale::kHeart,
      "population SD of HU over all lesion voxels");
  add("HUheart.skewness", FeatureScale::kHeart,
      "Fisher g1 skewness over all lesion voxels");
  add("HUheart.kurtosis", FeatureScale::kHeart,
      "excess kurtosis g2 over all lesion voxels");
  add("HUheart.min", FeatureScale::kHeart, "minimum lesion HU");
  add("HUheart.max", FeatureScale::kHeart, "maximum lesion HU");
  add("HUheart.energy", FeatureScale::kHeart,
      "sum of squared clip-normalized lesion intensities");
  for (int b = 1; b <= 8; ++b) {
    add("HUheartHist" + std::to_string(b), FeatureScale::kHeart,
        "normalized frequency of lesion HU in bin " + std::to_string(b) +
            " of 8 over [130,1024]");
  }

  add("lesionVolume.mean", FeatureScale::kLesionAggregate,
      "mean lesion volume in mm^3");
  add("lesionVolume.max", FeatureScale::kLesionAggregate,
      "maximum lesion volume in mm^3");
  add("lesionMass.mean", FeatureScale::kLesionAggregate, "mean lesion mass score");
  add("lesionMass.max", FeatureScale::kLesionAggregate,
      "maximum lesion mass score");
  add("lesionPeakHU.mean", FeatureScale::kLesionAggregate, "mean lesion peak HU");
  add("lesionPeakHU.max", FeatureScale::kLesionAggregate,
      "maximum lesion peak HU");
  add("lesionMeanHU.mean", FeatureScale::kLesionAggregate,
      "mean of per-lesion mean HU");
  add("glcmContrast.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion GLCM contrast");
  add("glcmCorrelation.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion GLCM correlation");
  add("glcmEnergy.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion GLCM angular second moment");
  add("glcmHomogeneity.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion GLCM homogeneity");
  add("elongation.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion sqrt(lambda2/lambda1)");
  add("flatness.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion sqrt(lambda3/lambda1)");
  add("bboxFill.mean", FeatureScale::kLesionAggregate,
      "mean per-lesion voxel count over bounding-box voxel count");
  add("maxSliceArea.max", FeatureScale::kLesionAggregate,
      "maximum single-slice lesion area in mm^2");
  add("nnDist.mean", FeatureScale::kLesionAggregate,
      "mean nearest-neighbor centroid distance in mm");
  add("nnDist.max", FeatureScale::kLesionAggregate,
      "maximum nearest-neighbor centroid distance in mm");
  add("centroidSpread", FeatureScale::kLesionAggregate,
      "RMS distance of lesion centroids from their mean, in mm");
  add("relPos.mean", FeatureScale::kLesionAggregate,
      "mean centroid offset from the mean centroid over the all-lesion "
      "bounding-frame diagonal");
  add("relPos.max", FeatureScale::kLesionAggregate,
      "maximum relative centroid offset");
  for (int b = 1; b <= HistogramSpec::kBins; ++b) {
    add("massHist" + std::to_string(b), FeatureScale::kLesionAggregate,
        "count of lesions in mass-quintile bin " + std::to_string(b));
  }

  std::set<std::string> names;
  for (const FeatureDef& f : reg.features) {
    require(names.insert(f.name).second, "duplicate feature name: " + f.name);
  }
  return reg;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

struct ClinicalRecord {
  std::string patient_id;
  double age = 0;
  int female = 0;
  int diabetes = 0;
  int smoking = 0;
  int label = 0;

  void validate() const {
    require(!patient_id.empty(), "ClinicalRecord: empty patientId");
    require(std::isfinite(age), "ClinicalRecord: non-finite age");
    require(female == 0 || female == 1, "ClinicalRecord: female must be 0/1");
    require(diabetes == 0 || diabetes == 1, "ClinicalRecord: diabetes must be 0/1");
    require(smoking == 0 || smoking == 1, "ClinicalRecord: smoking must be 0/1");
    require(label == 0 || label == 1, "ClinicalRecord: label must be 0/1");
  }
};

struct FeatureVector {
  std::string patient_id;
  std::vector<double> values;
  int label = 0;
};

inline FeatureVector assemble_features(const ClinicalRecord& clinical,
                                       const std::vector<LesionComponent>& lesions,
                                       const Volume& v, const ScoringConfig& scfg,
                                       const HistogramSpec& hist_spec,
                                       const FeatureRegistry& registry) {
  clinical.validate();
  const PatientScores scores = aggregate_scores(lesions, v, scfg);
  const ArteryHeartAggregates agg = artery_heart_aggregates(lesions, v);
  const SpatialFeatures spatial = spatial_relations(lesions, v.spacing);

  std::vector<std::pair<std::string, double>> out;
  out.reserve(registry.size());
  auto put = [&out](const std::string& name, double value) {
    out.emplace_back(name, value);
  };

  put("age", clinical.age);
  put("female", clinical.female);
  put("diabetes", clinical.diabetes);
  put("smoking", clinical.smoking);

  put("AgatstonScore2D", scores.heart.agatston2d);
  put("AgatstonScore3D", scores.heart.agatston3d);
  put("MassScore", scores.heart.mass);
  put("VolumeScore", scores.heart.volume_mm3);
  put("Area2D", scores.heart.area2d_mm2);
  put("numArtCalc", num_art_calc(lesions));

  for (int a = 1; a <= kNumArteries; ++a) {
    put(std::string("AgatstonScorePerArtery2D.") + artery_name(a),
        scores.per_artery[static_cast<std::size_t>(a)].agatston2d);
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    put(std::string("AgatstonScorePerArtery3D.") + artery_name(a),
        scores.per_artery[static_cast<std::size_t>(a)].agatston3d);
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    put(std::string("lesionCount.") + artery_name(a),
        static_cast<double>(agg.lesion_count[static_cast<std::size_t>(a)]));
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    put(std::string("presence.") + artery_name(a),
        agg.lesion_count[static_cast<std::size_t>(a)] > 0 ? 1.0 : 0.0);
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    const FirstOrderStats& s = agg.artery_hu[static_cast<std::size_t>(a)];
    const std::string base = std::string("HUperArtery2D.") + artery_name(a);
    put(base + ".mean", s.mean);
    put(base + ".sd", s.sd);
    put(base + ".skewness", s.skewness);
    put(base + ".kurtosis", s.kurtosis);
  }

  put("HUheart.mean", agg.heart_hu.mean);
  put("HUheart.sd", agg.heart_hu.sd);
  put("HUheart.skewness", agg.heart_hu.skewness);
  put("HUheart.kurtosis", agg.heart_hu.kurtosis);
  put("HUheart.min", agg.heart_hu.min);
  put("HUheart.max", agg.heart_hu.max);
  put("HUheart.energy", agg.heart_hu.energy);
  for (int b = 0; b < 8; ++b) {
    put("HUheartHist" + std::to_string(b + 1),
        agg.heart_hist[static_cast<std::size_t>(b)]);
  }

  const std::size_t n_lesions = lesions.size();
  double vol_mean = 0, vol_max = 0, mass_mean = 0, mass_max = 0;
  double peak_mean = 0, peak_max = 0, meanhu_mean = 0;
  double glcm_contrast = 0, glcm_correlation = 0, glcm_energy = 0,
         glcm_homogeneity = 0;
  double elongation = 0, flatness = 0, bbox_fill = 0, max_slice_area = 0;
  std::vector<double> masses;
  masses.reserve(n_lesions);
  for (std::size_t i = 0; i < n_lesions; ++i) {
    const ScoreBundle& b = scores.per_lesion[i];
    masses.push_back(b.mass);
    vol_mean += b.volume_mm3;
    vol_max = std::max(vol_max, b.volume_mm3);
    mass_mean += b.mass;
    mass_max = std::max(mass_max, b.mass);
    peak_mean += lesions[i].peak_hu;
    peak_max = std::max(peak_max, static_cast<double>(lesions[i].peak_hu));
    meanhu_mean += lesions[i].mean_hu;
    const GlcmFeatures g = lesion_second_order(lesions[i], v);
    glcm_contrast += g.contrast;
    glcm_correlation += g.correlation;
    glcm_energy += g.energy;
    glcm_homogeneity += g.homogeneity;
    const ShapeFeatures sh = lesion_shape(lesions[i], v.spacing);
    elongation += sh.elongation;
    flatness += sh.flatness;
    bbox_fill += sh.bbox_fill;
    max_slice_area = std::max(max_slice_area, sh.max_slice_area_mm2);
  }
  if (n_lesions > 0) {
    const double inv = 1.0 / static_cast<double>(n_lesions);
    vol_mean *= inv;
    mass_mean *= inv;
    peak_mean *= inv;
    meanhu_mean *= inv;
    glcm_contrast *= inv;
    glcm_correlation *= inv;
    glcm_energy *= inv;
    glcm_homogeneity *= inv;
    elongation *= inv;
    flatness *= inv;
    bbox_fill *= inv;
  }
  put("lesionVolume.mean", vol_mean);
  put("lesionVolume.max", vol_max);
  put("lesionMass.mean", mass_mean);
  put("lesionMass.max", mass_max);
  put("lesionPeakHU.mean", peak_mean);
  put("lesionPeakHU.max", peak_max);
  put("lesionMeanHU.mean", meanhu_mean);
  put("glcmContrast.mean", glcm_contrast);
  put("glcmCorrelation.mean", glcm_correlation);
  put("glcmEnergy.mean", glcm_energy);
  put("glcmHomogeneity.mean", glcm_homogeneity);
  put("elongation.mean", elongation);
  put("flatness.mean", flatness);
  put("bboxFill.mean", bbox_fill);
  put("maxSliceArea.max", max_slice_area);
  put("nnDist.mean", spatial.nn_dist_mean_mm);
  put("nnDist.max", spatial.nn_dist_max_mm);
  put("centroidSpread", spatial.centroid_spread_mm);
  put("relPos.mean", spatial.rel_pos_mean);
  put("relPos.max", spatial.rel_pos_max);

  const auto hist = mass_hist(masses, hist_spec);
  for (int b = 0; b < HistogramSpec::kBins; ++b) {
    put("massHist" + std::to_string(b + 1),
        static_cast<double>(hist[static_cast<std::size_t>(b)]));
  }

  require(out.size() == registry.size(),
          "assemble_features: registry size mismatch");
  FeatureVector fv;
  fv.patient_id = clinical.patient_id;
  fv.label = clinical.label;
  fv.values.reserve(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(out[i].first == registry.features[i].name,
            "assemble_features: order mismatch at " + out[i].first);
    require(std::isfinite(out[i].second),
            "assemble_features: non-finite value for " + out[i].first);
    fv.values.push_back(out[i].second);
  }
  return fv;
}

}  // namespace calciomics
