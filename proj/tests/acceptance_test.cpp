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

// Release gate for the whole library. Each test below is one acceptance
// criterion with an explicit runtime budget; it prints a single PASS/FAIL
// line so the gate's outcome can be read off the log at a glance.

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "calciomics/cohort.hpp"
#include "calciomics/pipeline.hpp"

#ifndef CALCIOMICS_CLI_PATH
#define CALCIOMICS_CLI_PATH ""
#endif

namespace calciomics {
namespace {

/// Prints the one-line verdict for a criterion and enforces its runtime
/// budget. Construct first thing in the test body; the destructor runs after
/// every assertion in the scope has been evaluated.
class CriterionReporter {
 public:
  CriterionReporter(int index, const char* label, double budget_seconds)
      : index_(index),
        label_(label),
        budget_(budget_seconds),
        start_(std::chrono::steady_clock::now()) {}

  CriterionReporter(const CriterionReporter&) = delete;
  CriterionReporter& operator=(const CriterionReporter&) = delete;

  ~CriterionReporter() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    EXPECT_LE(seconds, budget_)
        << "criterion " << index_ << " exceeded its runtime budget";
    const bool ok = !::testing::Test::HasFailure();
    std::printf("[criterion %d] %-28s %s (%.2f s)\n", index_, label_,
                ok ? "PASS" : "FAIL", seconds);
    std::fflush(stdout);
  }

 private:
  int index_;
  const char* label_;
  double budget_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Criterion 1: the three cohort characteristic tables reproduce their
// reference p-values to within 15% relative, by at least one of the three
// applicable tests.
// ---------------------------------------------------------------------------

TEST(Acceptance, CohortAssociationTables) {
  CriterionReporter report(1, "cohort association tables", 1.0);

  struct Fixture {
    const char* name;
    Table2x2 table;
    double reference_p;
  };
  const std::vector<Fixture> fixtures = {
      {"female", {27, 62, 482, 416}, 0.00003},
      {"diabetes", {36, 53, 211, 687}, 0.0008},
      {"smoking", {38, 51, 354, 544}, 0.5711},
  };

  for (const Fixture& f : fixtures) {
    const double candidates[3] = {chi2_2x2(f.table, false).p,
                                  chi2_2x2(f.table, true).p,
                                  fisher_exact(f.table)};
    double best_rel = std::numeric_limits<double>::infinity();
    for (double p : candidates) {
      best_rel = std::min(best_rel, std::fabs(p - f.reference_p) / f.reference_p);
    }
    EXPECT_LE(best_rel, 0.15) << f.name;
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: noise-free phantom lesions with hand-computed scores match
// the scoring pipeline exactly.
// ---------------------------------------------------------------------------

/// Density weight restated by hand so the expectation does not depend on the
/// module under test.
int hand_density_weight(int hu) {
  if (hu >= 400) return 4;
  if (hu >= 300) return 3;
  if (hu >= 200) return 2;
  return 1;
}

struct HandLesion {
  int artery = 0;
  std::size_t x = 0, y = 0, z = 0;  // first voxel of the box
  std::size_t wx = 1, wy = 1, wz = 1;  // box size in voxels
  int hu = 0;

  // All expectations follow from the 0.5 x 0.5 x 2.5 mm voxel by plain
  // arithmetic: slice area wx*wy/4 mm^2 (counted only at or above 1 mm^2),
  // volume 0.625 mm^3 per voxel.
  std::size_t voxel_count() const { return wx * wy * wz; }
  double slice_area() const { return static_cast<double>(wx * wy) * 0.25; }
  double area2d() const { return slice_area() * static_cast<double>(wz); }
  double volume() const { return static_cast<double>(voxel_count()) * 0.625; }
  double agatston2d() const {
    if (slice_area() < 1.0) return 0.0;
    return slice_area() * hand_density_weight(hu) * static_cast<double>(wz);
  }
  double agatston3d() const { return hand_density_weight(hu) * volume(); }
  double mass() const { return 0.001 * static_cast<double>(hu) * volume(); }
};

PhantomLesionSpec to_phantom_lesion(const HandLesion& h) {
  PhantomLesionSpec ls;
  ls.artery = h.artery;
  ls.shape = LesionShape::kBox;
  ls.profile = HuProfile::kConstant;
  ls.peak_hu = h.hu;
  ls.edge_hu = 130;
  const double sp[3] = {0.5, 0.5, 2.5};
  const std::size_t at[3] = {h.x, h.y, h.z};
  const std::size_t w[3] = {h.wx, h.wy, h.wz};
  for (int d = 0; d < 3; ++d) {
    ls.extent_mm[d] = static_cast<double>(w[d]) * sp[d];
    ls.center_mm[d] =
        (static_cast<double>(at[d]) + static_cast<double>(w[d]) / 2.0) * sp[d];
  }
  return ls;
}

TEST(Acceptance, AgatstonConformance) {
  CriterionReporter report(2, "Agatston conformance", 5.0);

  // 28 box lesions: six shape variants per density band (HU 150/250/350/450,
  // one band per artery row) plus four band-edge probes at HU 130/200/300/400.
  // Variant (a) sits exactly on the 1 mm^2 per-slice boundary; (b) and (e)
  // fall below it and must score zero in 2D while keeping volume and mass.
  const std::size_t shapes[6][3] = {
      {2, 2, 1},  // (a) 1.00 mm^2 per slice: inclusive boundary
      {1, 1, 1},  // (b) 0.25 mm^2: below the area rule
      {3, 2, 1},  // (c) 1.50 mm^2
      {2, 2, 2},  // (d) two slices of 1.00 mm^2
      {3, 1, 1},  // (e) 0.75 mm^2: below the area rule
      {4, 4, 1},  // (f) 4.00 mm^2
  };
  const int band_hu[4] = {150, 250, 350, 450};
  const int edge_hu[4] = {130, 200, 300, 400};
  const std::size_t col_x[7] = {4, 10, 16, 22, 28, 34, 40};
  const std::size_t row_y[4] = {4, 14, 24, 34};

  std::vector<HandLesion> hand;
  for (int band = 0; band < 4; ++band) {
    for (int variant = 0; variant < 6; ++variant) {
      HandLesion h;
      h.artery = band + 1;
      h.x = col_x[variant];
      h.y = row_y[band];
      h.z = 5;
      h.wx = shapes[variant][0];
      h.wy = shapes[variant][1];
      h.wz = shapes[variant][2];
      h.hu = band_hu[band];
      hand.push_back(h);
    }
    HandLesion probe;
    probe.artery = band + 1;
    probe.x = col_x[6];
    probe.y = row_y[band];
    probe.z = 5;
    probe.wx = probe.wy = 2;
    probe.wz = 1;
    probe.hu = edge_hu[band];
    hand.push_back(probe);
  }
  ASSERT_GE(hand.size(), 20u);

  PhantomSpec spec;
  spec.dims = Dims{48, 48, 12};
  spec.spacing = Spacing{0.5, 0.5, 2.5};
  spec.noise_sigma_hu = 0.0;
  for (const HandLesion& h : hand) spec.lesions.push_back(to_phantom_lesion(h));
  const PhantomResult phantom = generate_phantom(spec, 1);

  // The generator's own analytic ground truth must agree with the hand
  // arithmetic exactly (lesions come back in specification order).
  ASSERT_EQ(phantom.lesions.size(), hand.size());
  for (std::size_t i = 0; i < hand.size(); ++i) {
    const HandLesion& h = hand[i];
    const GroundTruthLesion& gt = phantom.lesions[i];
    EXPECT_EQ(gt.artery, h.artery);
    EXPECT_EQ(gt.voxel_count, h.voxel_count());
    EXPECT_EQ(gt.peak_hu, h.hu);
    EXPECT_EQ(gt.mean_hu, static_cast<double>(h.hu));
    EXPECT_EQ(gt.volume_mm3, h.volume());
    EXPECT_EQ(gt.area2d_mm2, h.area2d());
    EXPECT_EQ(gt.agatston2d, h.agatston2d());
    EXPECT_EQ(gt.agatston3d, h.agatston3d());
    EXPECT_EQ(gt.mass, h.mass());
  }

  // The scoring pipeline on the rasterized volume must match the same hand
  // numbers with zero tolerance.
  const ExtractionConfig ecfg;
  const ScoringConfig scfg;
  const std::vector<LesionComponent> lesions =
      extract_lesions(phantom.volume, phantom.mask, ecfg);
  ASSERT_EQ(lesions.size(), hand.size());
  const PatientScores scores =
      aggregate_scores(lesions, phantom.volume, scfg);

  // Match extracted lesions to boxes through each box's first voxel.
  std::map<std::size_t, std::size_t> lesion_of_voxel;
  for (std::size_t li = 0; li < lesions.size(); ++li) {
    for (const Voxel& vx : lesions[li].voxels) {
      lesion_of_voxel[phantom.volume.index(vx.x, vx.y, vx.z)] = li;
    }
  }
  std::array<ScoreBundle, kNumArteries + 1> expected_by_artery{};
  ScoreBundle expected_heart;
  for (const HandLesion& h : hand) {
    const auto it = lesion_of_voxel.find(phantom.volume.index(h.x, h.y, h.z));
    ASSERT_NE(it, lesion_of_voxel.end());
    const LesionComponent& lesion = lesions[it->second];
    const ScoreBundle& b = scores.per_lesion[it->second];
    EXPECT_EQ(lesion.artery, h.artery);
    EXPECT_EQ(lesion.voxels.size(), h.voxel_count());
    EXPECT_EQ(lesion.peak_hu, h.hu);
    EXPECT_EQ(b.agatston2d, h.agatston2d());
    EXPECT_EQ(b.agatston3d, h.agatston3d());
    EXPECT_EQ(b.volume_mm3, h.volume());
    EXPECT_EQ(b.mass, h.mass());
    EXPECT_EQ(b.area2d_mm2, h.area2d());

    ScoreBundle e;
    e.agatston2d = h.agatston2d();
    e.agatston3d = h.agatston3d();
    e.volume_mm3 = h.volume();
    e.mass = h.mass();
    e.area2d_mm2 = h.area2d();
    e.lesion_count = 1;
    expected_by_artery[static_cast<std::size_t>(h.artery)] += e;
    expected_heart += e;
  }
  for (int a = 1; a <= kNumArteries; ++a) {
    const ScoreBundle& got = scores.per_artery[static_cast<std::size_t>(a)];
    const ScoreBundle& want = expected_by_artery[static_cast<std::size_t>(a)];
    EXPECT_EQ(got.agatston2d, want.agatston2d);
    EXPECT_EQ(got.agatston3d, want.agatston3d);
    EXPECT_EQ(got.volume_mm3, want.volume_mm3);
    EXPECT_EQ(got.mass, want.mass);
    EXPECT_EQ(got.area2d_mm2, want.area2d_mm2);
    EXPECT_EQ(got.lesion_count, want.lesion_count);
  }
  EXPECT_EQ(scores.heart.agatston2d, expected_heart.agatston2d);
  EXPECT_EQ(scores.heart.lesion_count, hand.size());
  EXPECT_EQ(num_art_calc(lesions), 4);
}

// ---------------------------------------------------------------------------
// Criterion 3: lesion extraction equals a brute-force flood fill on small
// random grids, for both supported production connectivities.
// ---------------------------------------------------------------------------

/// (artery, ascending flat voxel indices), sorted by first voxel.
using CanonicalLesions = std::vector<std::pair<int, std::vector<std::size_t>>>;

CanonicalLesions brute_force_components(const Volume& v,
                                        const ArteryLabelMap& m,
                                        int connectivity) {
  const std::size_t n = v.dims.count();
  const auto nx = static_cast<long>(v.dims.nx);
  const auto ny = static_cast<long>(v.dims.ny);
  const auto nz = static_cast<long>(v.dims.nz);
  std::vector<char> visited(n, 0);
  CanonicalLesions out;
  for (std::size_t start = 0; start < n; ++start) {
    if (visited[start] || m.labels[start] == 0 || v.hu[start] < 130) continue;
    const std::uint8_t artery = m.labels[start];
    std::vector<std::size_t> stack = {start};
    std::vector<std::size_t> voxels;
    visited[start] = 1;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      voxels.push_back(cur);
      const long cx = static_cast<long>(cur) % nx;
      const long cy = (static_cast<long>(cur) / nx) % ny;
      const long cz = static_cast<long>(cur) / (nx * ny);
      for (long dz = -1; dz <= 1; ++dz) {
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long manhattan =
                std::labs(dx) + std::labs(dy) + std::labs(dz);
            if (manhattan == 0) continue;
            if (connectivity == 6 && manhattan != 1) continue;
            const long px = cx + dx, py = cy + dy, pz = cz + dz;
            if (px < 0 || px >= nx || py < 0 || py >= ny || pz < 0 || pz >= nz) {
              continue;
            }
            const auto ni = static_cast<std::size_t>((pz * ny + py) * nx + px);
            if (visited[ni] || m.labels[ni] != artery || v.hu[ni] < 130) {
              continue;
            }
            visited[ni] = 1;
            stack.push_back(ni);
          }
        }
      }
    }
    std::sort(voxels.begin(), voxels.end());
    out.emplace_back(static_cast<int>(artery), std::move(voxels));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) {
              return a.second.front() < b.second.front();
            });
  return out;
}

CanonicalLesions canonicalize(const std::vector<LesionComponent>& lesions,
                              const Volume& v) {
  CanonicalLesions out;
  for (const LesionComponent& lesion : lesions) {
    std::vector<std::size_t> voxels;
    for (const Voxel& vx : lesion.voxels) {
      voxels.push_back(v.index(vx.x, vx.y, vx.z));
    }
    std::sort(voxels.begin(), voxels.end());
    out.emplace_back(lesion.artery, std::move(voxels));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) {
              return a.second.front() < b.second.front();
            });
  return out;
}

TEST(Acceptance, ConnectedComponentsOracle) {
  CriterionReporter report(3, "connected-components oracle", 10.0);

  for (std::uint64_t trial = 0; trial < 1000; ++trial) {
    Rng rng = Rng(777).derive("grid").derive(trial);
    Volume v;
    v.dims = Dims{static_cast<std::size_t>(rng.uniform_int(1, 6)),
                  static_cast<std::size_t>(rng.uniform_int(1, 6)),
                  static_cast<std::size_t>(rng.uniform_int(1, 6))};
    v.spacing = Spacing{0.5, 0.5, 2.5};
    const std::size_t n = v.dims.count();
    v.hu.resize(n);
    ArteryLabelMap m;
    m.dims = v.dims;
    m.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Roughly half the voxels cross the 130 HU threshold; labels include
      // background so lesions must also respect the artery map.
      v.hu[i] = static_cast<std::int16_t>(rng.uniform_int(-60, 460));
      m.labels[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 4));
    }
    for (int connectivity : {6, 26}) {
      ExtractionConfig cfg;
      cfg.connectivity = connectivity;
      const CanonicalLesions got = canonicalize(extract_lesions(v, m, cfg), v);
      const CanonicalLesions want = brute_force_components(v, m, connectivity);
      ASSERT_EQ(got, want) << "trial " << trial << " connectivity "
                           << connectivity;
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 4: the polynomial-time attribution equals the exponential
// subset-enumeration oracle on random small ensembles.
// ---------------------------------------------------------------------------

TEST(Acceptance, TreeShapExactness) {
  CriterionReporter report(4, "TreeSHAP exactness", 60.0);

  for (std::uint64_t e = 0; e < 200; ++e) {
    Rng rng = Rng(4242).derive("shap").derive(e);
    const auto m = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto n = static_cast<std::size_t>(rng.uniform_int(30, 60));

    Matrix x;
    x.n_rows = n;
    x.n_cols = m;
    x.v.resize(n * m);
    for (double& val : x.v) val = rng.normal();
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;

    const std::size_t n_valid = 10;
    Matrix xv;
    xv.n_rows = n_valid;
    xv.n_cols = m;
    xv.v.resize(n_valid * m);
    for (double& val : xv.v) val = rng.normal();
    std::vector<int> yv(n_valid);
    for (std::size_t i = 0; i < n_valid; ++i) yv[i] = rng.uniform() < 0.5 ? 1 : 0;
    yv[0] = 1;
    yv[1] = 0;

    TrainConfig cfg;
    cfg.learning_rate = 0.3;
    cfg.max_depth = static_cast<int>(rng.uniform_int(1, 3));
    cfg.min_child_weight = 0.5;
    cfg.subsample_rows = 1.0;
    cfg.colsample_by_tree = (e % 2 == 0) ? 1.0 : 0.75;
    cfg.l1_alpha = (e % 3 == 0) ? 0.3 : 0.0;
    cfg.l2_lambda = 1.0;
    cfg.min_split_gain = 0.0;
    cfg.max_rounds = static_cast<int>(rng.uniform_int(1, 20));
    cfg.early_stop_patience = 10000;
    cfg.seed = rng.next_u64();
    const TrainOutput out = train_gbt(x, y, xv, yv, cfg);

    std::vector<std::vector<double>> probes;
    for (std::size_t i = 0; i < 3; ++i) {
      probes.emplace_back(x.row(i), x.row(i) + m);
    }
    for (int extra = 0; extra < 2; ++extra) {
      std::vector<double> p(m);
      for (double& val : p) val = rng.uniform(-3.0, 3.0);
      probes.push_back(std::move(p));
    }
    for (const std::vector<double>& probe : probes) {
      const Attribution fast = shap_values(out.model, probe);
      const Attribution slow = brute_force_shap(out.model, probe);
      ASSERT_EQ(fast.phi.size(), m);
      EXPECT_NEAR(fast.phi0, slow.phi0, 1e-9);
      double phi_sum = fast.phi0;
      for (std::size_t j = 0; j < m; ++j) {
        EXPECT_NEAR(fast.phi[j], slow.phi[j], 1e-9)
            << "ensemble " << e << " feature " << j;
        phi_sum += fast.phi[j];
      }
      // Local accuracy: the attributions reconstruct the raw margin.
      EXPECT_NEAR(phi_sum, out.model.predict_margin(probe), 1e-9);
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 5: boosting behaves as specified — deterministic monotone
// training loss without stochasticity, and a perfectly separable 1-D
// problem is solved under the production defaults with every leaf holding
// at least the minimum Hessian mass.
// ---------------------------------------------------------------------------

TEST(Acceptance, BoostingContract) {
  CriterionReporter report(5, "boosting contract", 60.0);

  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    Rng rng(seed);
    const std::size_t n = 80 + 20 * static_cast<std::size_t>(seed - 101);
    const std::size_t m = 3 + static_cast<std::size_t>(seed % 3);
    Matrix x;
    x.n_rows = n;
    x.n_cols = m;
    x.v.resize(n * m);
    for (double& val : x.v) val = rng.normal();
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double logit = 1.2 * x.at(i, 0) - 0.8 * x.at(i, 1 % m);
      y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    Matrix xv;
    xv.n_rows = 20;
    xv.n_cols = m;
    xv.v.resize(20 * m);
    for (double& val : xv.v) val = rng.normal();
    std::vector<int> yv(20);
    for (std::size_t i = 0; i < 20; ++i) yv[i] = rng.uniform() < 0.5 ? 1 : 0;
    yv[0] = 1;
    yv[1] = 0;

    TrainConfig cfg;
    cfg.subsample_rows = 1.0;
    cfg.colsample_by_tree = 1.0;
    cfg.min_split_gain = 0.0;
    cfg.l1_alpha = 0.0;
    cfg.max_rounds = 200;
    cfg.early_stop_patience = 100000;
    cfg.seed = seed;
    const TrainOutput out = train_gbt(x, y, xv, yv, cfg);
    ASSERT_EQ(out.log.size(), 200u) << "seed " << seed;
    for (std::size_t r = 1; r < out.log.size(); ++r) {
      EXPECT_LE(out.log[r].train_logloss,
                out.log[r - 1].train_logloss + 1e-12)
          << "seed " << seed << " round " << r;
    }
  }

  // Separable 1-D problem under the full production defaults.
  {
    Rng rng(55);
    const std::size_t n = 240;
    std::vector<double> xs(n);
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mag = rng.uniform(0.3, 2.5);
      xs[i] = (i % 2 == 0) ? mag : -mag;
      ys[i] = xs[i] > 0 ? 1 : 0;
    }
    const std::size_t n_train = 192;
    Matrix xt, xv;
    xt.n_rows = n_train;
    xt.n_cols = 1;
    xv.n_rows = n - n_train;
    xv.n_cols = 1;
    std::vector<int> yt, yv;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) {
        xt.v.push_back(xs[i]);
        yt.push_back(ys[i]);
      } else {
        xv.v.push_back(xs[i]);
        yv.push_back(ys[i]);
      }
    }
    const TrainConfig defaults;
    const TrainOutput out = train_gbt(xt, yt, xv, yv, defaults);
    ASSERT_FALSE(out.log.empty());
    double best_auc = 0;
    for (const RoundLog& rl : out.log) best_auc = std::max(best_auc, rl.valid_auc);
    EXPECT_EQ(best_auc, 1.0);

    // No leaf may fall under the minimum Hessian mass it was trained with.
    std::size_t leaves = 0;
    for (const GbtTree& tree : out.model.trees) {
      for (const GbtNode& node : tree.nodes) {
        if (!node.leaf) continue;
        ++leaves;
        EXPECT_GE(node.cover, defaults.min_child_weight - 1e-9);
      }
    }
    EXPECT_GT(leaves, 0u);
  }
}

// ---------------------------------------------------------------------------
// Criterion 6: statistics against independent oracles.
// ---------------------------------------------------------------------------

double pair_count_auc(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        total += 1.0;
      } else if (scores[i] == scores[j]) {
        total += 0.5;
      }
    }
  }
  return total / static_cast<double>(pairs);
}

/// Paired sign-flip permutation test for the difference between two
/// correlated AUCs: under the null the two score columns are exchangeable
/// within each subject.
double permutation_auc_p(const std::vector<double>& a,
                         const std::vector<double>& b,
                         const std::vector<int>& y, Rng& rng, int replicates) {
  const double observed = std::fabs(auroc(a, y) - auroc(b, y));
  std::vector<double> pa(a.size()), pb(b.size());
  int hits = 0;
  for (int r = 0; r < replicates; ++r) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (rng.uniform() < 0.5) {
        pa[i] = b[i];
        pb[i] = a[i];
      } else {
        pa[i] = a[i];
        pb[i] = b[i];
      }
    }
    if (std::fabs(auroc(pa, y) - auroc(pb, y)) >= observed - 1e-12) ++hits;
  }
  return (hits + 1.0) / (replicates + 1.0);
}

double hand_loglik(double b0, double b1, const std::vector<double>& x,
                   const std::vector<int>& y) {
  double ll = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double eta = b0 + b1 * x[i];
    ll += y[i] == 1 ? -std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta));
  }
  return ll;
}

/// Grid-refinement MLE for a two-parameter logistic model: repeatedly
/// evaluate a 21x21 grid and shrink it around the best cell. The
/// log-likelihood is concave, so the argmax never escapes the window.
std::pair<double, double> grid_search_mle(const std::vector<double>& x,
                                          const std::vector<int>& y) {
  double c0 = 0, c1 = 0;
  double width = 16.0;
  for (int level = 0; level < 8; ++level) {
    const double step = width / 20.0;
    double best_ll = -std::numeric_limits<double>::infinity();
    double best0 = c0, best1 = c1;
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        const double b0 = c0 + step * i;
        const double b1 = c1 + step * j;
        const double ll = hand_loglik(b0, b1, x, y);
        if (ll > best_ll) {
          best_ll = ll;
          best0 = b0;
          best1 = b1;
        }
      }
    }
    c0 = best0;
    c1 = best1;
    width /= 5.0;
  }
  return {c0, c1};
}

TEST(Acceptance, StatisticsOracles) {
  CriterionReporter report(6, "statistics oracles", 300.0);

  // (a) AUROC equals the O(n^2) pair-count oracle exactly on 500 vectors.
  for (std::uint64_t trial = 0; trial < 500; ++trial) {
    Rng rng = Rng(31337).derive("auc").derive(trial);
    const auto n = static_cast<std::size_t>(rng.uniform_int(4, 100));
    std::vector<int> labels(n);
    std::size_t pos = 0;
    do {
      pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.uniform() < 0.4 ? 1 : 0;
        pos += static_cast<std::size_t>(labels[i]);
      }
    } while (pos == 0 || pos == n);
    std::vector<double> scores(n);
    const bool tied = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform() + 0.3 * labels[i];
      scores[i] = tied ? std::floor(u * 8.0) / 8.0 : u;
    }
    ASSERT_EQ(auroc(scores, labels), pair_count_auc(scores, labels))
        << "trial " << trial;
  }

  // (b) DeLong: exact self-comparison null, and agreement with a paired
  // permutation oracle on 20 fixtures.
  for (std::uint64_t fx = 0; fx < 20; ++fx) {
    Rng rng = Rng(6001).derive("delong").derive(fx);
    const std::size_t n = 100;
    std::vector<int> y(n);
    std::size_t pos = 0;
    do {
      pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.uniform() < 0.4 ? 1 : 0;
        pos += static_cast<std::size_t>(y[i]);
      }
    } while (pos < 10 || pos > n - 10);
    const double shift = 0.15 * static_cast<double>(fx % 3);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double latent = 0.7 * rng.normal();
      a[i] = 1.0 * y[i] + latent + 0.7 * rng.normal();
      b[i] = (1.0 + shift) * y[i] + latent + 0.7 * rng.normal();
    }

    EXPECT_EQ(delong_test(a, a, y).p, 1.0);
    const DelongResult d = delong_test(a, b, y);
    const double p_perm = permutation_auc_p(a, b, y, rng, 10000);
    EXPECT_LE(std::fabs(d.p - p_perm), 0.02) << "fixture " << fx;
  }

  // (c) Logistic regression matches the grid-search MLE on 50 datasets.
  int accepted = 0;
  for (std::uint64_t seed = 0; accepted < 50; ++seed) {
    ASSERT_LT(seed, 200u) << "ran out of candidate datasets";
    Rng rng = Rng(9090).derive("logit").derive(seed);
    const auto n = static_cast<std::size_t>(rng.uniform_int(35, 60));
    const double true_b0 = rng.uniform(-1.0, 1.0);
    const double true_b1 = rng.uniform(-1.5, 1.5);
    std::vector<double> xs(n);
    std::vector<int> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = rng.normal();
      const double p = 1.0 / (1.0 + std::exp(-(true_b0 + true_b1 * xs[i])));
      ys[i] = rng.uniform() < p ? 1 : 0;
    }
    Matrix x;
    x.n_rows = n;
    x.n_cols = 1;
    x.v = xs;
    RegressionResult fit;
    try {
      fit = logistic_fit(x, ys, {"x"});
    } catch (const Error&) {
      continue;  // separated or otherwise degenerate draw; take the next one
    }
    if (std::fabs(fit.terms[0].beta) > 6.0 || std::fabs(fit.terms[1].beta) > 6.0) {
      continue;  // outside the oracle's search window
    }
    const auto [g0, g1] = grid_search_mle(xs, ys);
    EXPECT_NEAR(fit.terms[0].beta, g0, 1e-4) << "seed " << seed;
    EXPECT_NEAR(fit.terms[1].beta, g1, 1e-4) << "seed " << seed;
    ++accepted;
  }

  // (d) Small-sample identities.
  {
    Rng rng(17);
    for (int t = 0; t < 10; ++t) {
      Table2x2 tab{rng.uniform_int(0, 12) + 1, rng.uniform_int(0, 12),
                   rng.uniform_int(0, 12), rng.uniform_int(0, 12) + 1};
      const double p = fisher_exact(tab);
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0);
      // The p-value is invariant under these table symmetries; the tail sum
      // accumulates in a different order per orientation, so allow round-off.
      const Table2x2 row_swapped{tab.c, tab.d, tab.a, tab.b};
      const Table2x2 col_swapped{tab.b, tab.a, tab.d, tab.c};
      const Table2x2 transposed{tab.a, tab.c, tab.b, tab.d};
      EXPECT_NEAR(p, fisher_exact(row_swapped), 1e-12);
      EXPECT_NEAR(p, fisher_exact(col_swapped), 1e-12);
      EXPECT_NEAR(p, fisher_exact(transposed), 1e-12);

      const long disc_b = rng.uniform_int(0, 20);
      const long disc_c = rng.uniform_int(0, 20);
      EXPECT_DOUBLE_EQ(mcnemar(disc_b, disc_c, true),
                       mcnemar(disc_c, disc_b, true));
      EXPECT_DOUBLE_EQ(mcnemar(disc_b, disc_c, false),
                       mcnemar(disc_c, disc_b, false));
    }
    EXPECT_EQ(mcnemar(0, 0, false), 1.0);
    EXPECT_EQ(mcnemar(0, 0, true), 1.0);

    for (int t = 0; t < 10; ++t) {
      const auto na = static_cast<std::size_t>(rng.uniform_int(4, 20));
      const auto nb = static_cast<std::size_t>(rng.uniform_int(4, 20));
      std::vector<double> xa(na), xb(nb);
      for (double& v : xa) v = std::floor(rng.uniform() * 10.0);
      for (double& v : xb) v = std::floor(rng.uniform() * 10.0) + 2.0;
      const MannWhitneyResult ab = mann_whitney_u(xa, xb);
      const MannWhitneyResult ba = mann_whitney_u(xb, xa);
      EXPECT_EQ(ab.u + ba.u, static_cast<double>(na * nb));
      EXPECT_DOUBLE_EQ(ab.p, ba.p);
      EXPECT_DOUBLE_EQ(ab.z, -ba.z);
    }
    const std::vector<double> flat(6, 3.25);
    const MannWhitneyResult tied = mann_whitney_u(flat, flat);
    EXPECT_EQ(tied.z, 0.0);
    EXPECT_EQ(tied.p, 1.0);
  }
}

// ---------------------------------------------------------------------------
// Criterion 7: end-to-end signal recovery on a synthetic cohort whose
// outcome depends on calcium burden.
// ---------------------------------------------------------------------------

ExperimentData cohort_feature_table(const CohortSpec& spec) {
  const CohortResult cohort = generate_cohort(spec);
  const ExtractionConfig ecfg;
  const ScoringConfig scfg;

  ExperimentData data;
  data.registry = build_registry();
  const std::size_t n = cohort.patients.size();
  std::vector<std::vector<LesionComponent>> lesions(n);
  data.lesion_masses.resize(n);
  std::vector<double> all_masses;
  std::vector<std::size_t> all_rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CohortPatient& p = cohort.patients[i];
    lesions[i] = extract_lesions(p.imaging.volume, p.imaging.mask, ecfg);
    const PatientScores scores =
        aggregate_scores(lesions[i], p.imaging.volume, scfg);
    for (const ScoreBundle& b : scores.per_lesion) {
      data.lesion_masses[i].push_back(b.mass);
      all_masses.push_back(b.mass);
    }
    all_rows[i] = i;
  }
  const HistogramSpec hist = fit_histogram_spec(all_masses, -1, all_rows);

  data.x.n_rows = n;
  data.x.n_cols = data.registry.size();
  data.x.v.resize(n * data.registry.size());
  for (std::size_t i = 0; i < n; ++i) {
    const CohortPatient& p = cohort.patients[i];
    const FeatureVector fv = assemble_features(
        p.clinical, lesions[i], p.imaging.volume, scfg, hist, data.registry);
    data.patient_ids.push_back(fv.patient_id);
    data.y.push_back(fv.label);
    for (std::size_t j = 0; j < fv.values.size(); ++j) {
      data.x.at(i, j) = fv.values[j];
    }
  }
  data.has_masses = true;
  data.validate();
  return data;
}

TEST(Acceptance, EndToEndSignalRecovery) {
  CriterionReporter report(7, "end-to-end signal recovery", 600.0);

  CohortSpec spec;
  spec.n_patients = 1000;
  spec.prevalence = 0.09;
  spec.seed = 42;
  const ExperimentData data = cohort_feature_table(spec);

  const CvConfig cv;
  const TrainConfig tc;
  std::map<ModelId, ExperimentResult> runs;
  for (ModelId id : {ModelId::kM1, ModelId::kM2, ModelId::kM3}) {
    ModelSpec ms;
    ms.id = id;
    runs.emplace(id, run_experiment(data, ms, cv, tc));
  }
  const double auc_m1 = runs.at(ModelId::kM1).summary.metric("auroc").mean;
  const double auc_m2 = runs.at(ModelId::kM2).summary.metric("auroc").mean;
  const double auc_m3 = runs.at(ModelId::kM3).summary.metric("auroc").mean;
  std::printf("    mean out-of-fold AUROC: M1 %.4f, M2 %.4f, M3 %.4f\n",
              auc_m1, auc_m2, auc_m3);

  EXPECT_GE(auc_m3, auc_m2);
  EXPECT_GE(auc_m2, auc_m1 - 0.02);
  EXPECT_GE(auc_m3 - auc_m1, 0.05);

  const ModelComparison cmp =
      compare_models(runs.at(ModelId::kM3), runs.at(ModelId::kM1));
  std::printf("    DeLong M3 vs M1 on pooled out-of-fold scores: p = %g\n",
              cmp.delong.p);
  EXPECT_LT(cmp.delong.p, 0.05);
}

// ---------------------------------------------------------------------------
// Criterion 8: the run subcommand is deterministic — the identical command
// produces a byte-identical report bundle.
// ---------------------------------------------------------------------------

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << p;
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> file_list(const std::filesystem::path& root) {
  std::vector<std::string> rels;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) {
      rels.push_back(std::filesystem::relative(entry.path(), root).string());
    }
  }
  std::sort(rels.begin(), rels.end());
  return rels;
}

int shell(const std::string& cmd) { return std::system(cmd.c_str()); }

TEST(Acceptance, RunDeterminism) {
  CriterionReporter report(8, "run determinism", 600.0);

  const std::string cli = CALCIOMICS_CLI_PATH;
  ASSERT_FALSE(cli.empty());
  ASSERT_TRUE(std::filesystem::exists(cli)) << cli;

  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "calciomics-acceptance-run";
  fs::remove_all(base);
  std::error_code ec;
  fs::create_directories(base, ec);
  ASSERT_FALSE(ec);

  const std::string cohort = (base / "cohort").string();
  const std::string features = (base / "features" / "features.csv").string();
  const std::string masses = (base / "features" / "masses.csv").string();
  const std::string out = (base / "report").string();

  ASSERT_EQ(shell(cli + " synth --out \"" + cohort +
                  "\" --n 200 --seed 3 > /dev/null"),
            0);
  ASSERT_EQ(shell(cli + " extract --cohort \"" + cohort + "\" --out \"" +
                  features + "\" > /dev/null"),
            0);

  // One command line, run twice: snapshot the first bundle, then let the
  // second execution rewrite the same output directory.
  const std::string run_cmd = cli + " run --features \"" + features +
                              "\" --masses \"" + masses + "\" --out \"" + out +
                              "\" --model all --seed 1 > /dev/null";
  ASSERT_EQ(shell(run_cmd), 0);
  const fs::path snapshot = base / "report-first-run";
  fs::copy(out, snapshot, fs::copy_options::recursive, ec);
  ASSERT_FALSE(ec);
  ASSERT_EQ(shell(run_cmd), 0);

  const std::vector<std::string> first = file_list(snapshot);
  const std::vector<std::string> second = file_list(out);
  ASSERT_EQ(first, second);
  ASSERT_GE(first.size(), 15u);
  for (const std::string& rel : first) {
    EXPECT_EQ(read_bytes(snapshot / rel), read_bytes(fs::path(out) / rel))
        << rel;
  }
  fs::remove_all(base);
}

}  // namespace
}  // namespace calciomics
