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

#include "calciomics/stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtest/gtest.h"

#include "calciomics/rng.hpp"

namespace calciomics {
namespace {

// ---------------------------------------------------------------------------
// Independent oracles (deliberately naive O(n^2) formulations)
// ---------------------------------------------------------------------------

double auroc_pair_oracle(const std::vector<double>& s,
                         const std::vector<int>& y) {
  double concordant = 0, tied = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) concordant += 1;
      else if (s[i] == s[j]) tied += 1;
    }
  }
  return (concordant + 0.5 * tied) / pairs;
}

double auprc_block_oracle(std::vector<double> s, std::vector<int> y) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&s](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double n_pos = 0;
  for (int v : y) n_pos += v;
  double seen = 0, tp = 0, ap = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t j = k;
    double block_pos = 0;
    while (j < order.size() && s[order[j]] == s[order[k]]) {
      block_pos += y[order[j]];
      ++j;
    }
    seen += static_cast<double>(j - k);
    tp += block_pos;
    ap += (tp / seen) * (block_pos / n_pos);
    k = j;
  }
  return ap;
}

// Per-subject placement values computed the slow way, preserving input order.
Placements placements_oracle(const std::vector<double>& s,
                             const std::vector<int>& y) {
  Placements p;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double wins = 0, n_other = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] == y[i]) continue;
      n_other += 1;
      const bool i_pos = y[i] == 1;
      const double a = i_pos ? s[i] : s[j];
      const double b = i_pos ? s[j] : s[i];
      if (a > b) wins += 1;
      else if (a == b) wins += 0.5;
    }
    (y[i] == 1 ? p.v10 : p.v01).push_back(wins / n_other);
  }
  p.n_pos = p.v10.size();
  p.n_neg = p.v01.size();
  p.auc = auroc_pair_oracle(s, y);
  return p;
}

DelongResult delong_oracle(const std::vector<double>& sa,
                           const std::vector<double>& sb,
                           const std::vector<int>& y) {
  const Placements pa = placements_oracle(sa, y);
  const Placements pb = placements_oracle(sb, y);
  auto var_diff = [](const std::vector<double>& a,
                     const std::vector<double>& b) {
    double mean = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(a.size());
    double ss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i] - mean;
      ss += d * d;
    }
    return ss / static_cast<double>(a.size() - 1);
  };
  DelongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  r.variance = var_diff(pa.v10, pb.v10) / static_cast<double>(pa.n_pos) +
               var_diff(pa.v01, pb.v01) / static_cast<double>(pa.n_neg);
  if (r.variance <= 0) return r;
  r.z = (r.auc_a - r.auc_b) / std::sqrt(r.variance);
  r.p = two_sided_normal_p(r.z);
  return r;
}

std::vector<int> random_labels(Rng& rng, std::size_t n) {
  std::vector<int> y(n);
  for (;;) {
    std::size_t pos = 0;
    for (auto& v : y) pos += static_cast<std::size_t>(v = rng.bernoulli(0.4));
    if (pos >= 2 && n - pos >= 2) return y;
  }
}

std::vector<double> random_scores(Rng& rng, std::size_t n, bool with_ties) {
  std::vector<double> s(n);
  for (double& v : s) {
    v = with_ties ? std::floor(rng.uniform() * 8.0) / 8.0 : rng.uniform();
  }
  return s;
}

// ---------------------------------------------------------------------------
// Ranking metrics
// ---------------------------------------------------------------------------

TEST(AurocTest, KnownValues) {
  EXPECT_DOUBLE_EQ(auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auroc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
  // One inversion among 2x2 pairs: 3 concordant of 4.
  EXPECT_DOUBLE_EQ(auroc({0.9, 0.3, 0.4, 0.1}, {1, 1, 0, 0}), 0.75);
  EXPECT_THROW(auroc({0.1, 0.2}, {1, 1}), Error);
  EXPECT_THROW(auroc({0.1, 0.2}, {0, 2}), Error);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(auroc({nan, 0.2}, {1, 0}), Error);
}

TEST(AurocTest, MatchesPairCountingOracleExactly) {
  Rng rng(0x5eedau);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(4, 40));
    const auto y = random_labels(rng, n);
    const auto s = random_scores(rng, n, rep % 2 == 0);
    EXPECT_DOUBLE_EQ(auroc(s, y), auroc_pair_oracle(s, y));
  }
}

TEST(AurocTest, PlacementMeansEqualAuc) {
  Rng rng(91);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(5, 30));
    const auto y = random_labels(rng, n);
    const auto s = random_scores(rng, n, true);
    const Placements p = placements(s, y);
    double m10 = 0, m01 = 0;
    for (double v : p.v10) m10 += v;
    for (double v : p.v01) m01 += v;
    m10 /= static_cast<double>(p.n_pos);
    m01 /= static_cast<double>(p.n_neg);
    EXPECT_NEAR(m10, p.auc, 1e-12);
    EXPECT_NEAR(m01, p.auc, 1e-12);
  }
}

TEST(AurocTest, PlacementsKeepSubjectOrder) {
  // Subject order differs from score order; each placement must land at its
  // own subject, not at the subject's rank.
  const std::vector<double> s = {0.2, 0.9, 0.6, 0.1, 0.8, 0.3};
  const std::vector<int> y = {1, 1, 1, 0, 0, 0};
  const Placements got = placements(s, y);
  const Placements want = placements_oracle(s, y);
  ASSERT_EQ(got.v10.size(), want.v10.size());
  for (std::size_t i = 0; i < got.v10.size(); ++i) {
    EXPECT_DOUBLE_EQ(got.v10[i], want.v10[i]) << "positive subject " << i;
  }
  for (std::size_t i = 0; i < got.v01.size(); ++i) {
    EXPECT_DOUBLE_EQ(got.v01[i], want.v01[i]) << "negative subject " << i;
  }
}

TEST(AuprcTest, IdentitiesAndOracle) {
  EXPECT_DOUBLE_EQ(auprc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  // All-equal scores collapse to a single block: AP equals prevalence.
  EXPECT_DOUBLE_EQ(auprc({0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 0, 1, 0}), 0.4);
  EXPECT_THROW(auprc({0.1, 0.2}, {0, 0}), Error);

  Rng rng(1234);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(4, 40));
    auto y = random_labels(rng, n);
    const auto s = random_scores(rng, n, rep % 2 == 0);
    EXPECT_NEAR(auprc(s, y), auprc_block_oracle(s, y), 1e-12);
  }
}

TEST(RocPrTest, PolylineEndpointsAndTrapezoidIdentity) {
  Rng rng(55);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(4, 50));
    const auto y = random_labels(rng, n);
    const auto s = random_scores(rng, n, true);
    const auto pts = roc_points(s, y);
    ASSERT_GE(pts.size(), 2u);
    EXPECT_DOUBLE_EQ(pts.front().fpr, 0.0);
    EXPECT_DOUBLE_EQ(pts.front().tpr, 0.0);
    EXPECT_DOUBLE_EQ(pts.back().fpr, 1.0);
    EXPECT_DOUBLE_EQ(pts.back().tpr, 1.0);
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_GE(pts[i].fpr, pts[i - 1].fpr);
      EXPECT_GE(pts[i].tpr, pts[i - 1].tpr);
      area += (pts[i].fpr - pts[i - 1].fpr) *
              (pts[i].tpr + pts[i - 1].tpr) / 2.0;
    }
    // Trapezoidal area under the tie-aware polyline is the tie-corrected AUC.
    EXPECT_NEAR(area, auroc(s, y), 1e-12);

    const auto pr = pr_points(s, y);
    ASSERT_FALSE(pr.empty());
    EXPECT_DOUBLE_EQ(pr.back().recall, 1.0);
    for (std::size_t i = 0; i < pr.size(); ++i) {
      EXPECT_GT(pr[i].precision, 0.0 - 1e-15);
      EXPECT_LE(pr[i].precision, 1.0);
      if (i > 0) {
        EXPECT_GE(pr[i].recall, pr[i - 1].recall);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// DeLong
// ---------------------------------------------------------------------------

TEST(DelongTest, SelfComparisonIsNull) {
  const std::vector<double> s = {0.9, 0.1, 0.6, 0.4, 0.7, 0.2};
  const std::vector<int> y = {1, 0, 1, 0, 1, 0};
  const DelongResult r = delong_test(s, s, y);
  EXPECT_DOUBLE_EQ(r.auc_a, r.auc_b);
  EXPECT_DOUBLE_EQ(r.z, 0.0);
  EXPECT_DOUBLE_EQ(r.p, 1.0);
}

TEST(DelongTest, SwappedArgumentsNegateZ) {
  Rng rng(7);
  const auto y = random_labels(rng, 30);
  const auto sa = random_scores(rng, 30, false);
  const auto sb = random_scores(rng, 30, true);
  const DelongResult ab = delong_test(sa, sb, y);
  const DelongResult ba = delong_test(sb, sa, y);
  EXPECT_DOUBLE_EQ(ab.z, -ba.z);
  EXPECT_DOUBLE_EQ(ab.p, ba.p);
  EXPECT_DOUBLE_EQ(ab.variance, ba.variance);
  EXPECT_DOUBLE_EQ(ab.auc_a, ba.auc_b);
}

TEST(DelongTest, MatchesSubjectPairedOracle) {
  // The covariance pairs score vectors subject by subject; pairing by rank
  // instead collapses the variance. The naive oracle is the ground truth.
  Rng rng(0xde1097u);
  for (int rep = 0; rep < 150; ++rep) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(6, 50));
    const auto y = random_labels(rng, n);
    const auto sa = random_scores(rng, n, rep % 2 == 0);
    auto sb = random_scores(rng, n, rep % 3 == 0);
    if (rep % 4 == 0) {
      // Correlated pair: perturb a copy so the covariance term matters.
      sb = sa;
      for (double& v : sb) {
        if (rng.bernoulli(0.3)) v = rng.uniform();
      }
    }
    const DelongResult got = delong_test(sa, sb, y);
    const DelongResult want = delong_oracle(sa, sb, y);
    ASSERT_NEAR(got.variance, want.variance, 1e-12);
    EXPECT_NEAR(got.z, want.z, 1e-9);
    EXPECT_NEAR(got.p, want.p, 1e-9);
  }
}

TEST(DelongTest, DegenerateVariance) {
  const std::vector<int> y = {1, 1, 0, 0};
  // Identical separating vectors: zero variance, equal AUCs -> null result.
  const std::vector<double> perfect = {0.9, 0.8, 0.2, 0.1};
  const DelongResult r = delong_test(perfect, perfect, y);
  EXPECT_DOUBLE_EQ(r.p, 1.0);
  // Zero variance with unequal AUCs cannot be scored.
  const std::vector<double> inverted = {0.1, 0.2, 0.8, 0.9};
  EXPECT_THROW(delong_test(perfect, inverted, y), Error);
  // Fewer than two observations per class is refused.
  EXPECT_THROW(
      delong_test({0.9, 0.2, 0.3}, {0.8, 0.1, 0.4}, {1, 0, 0}), Error);
  EXPECT_THROW(delong_test({0.9, 0.2}, {0.8}, {1, 0}), Error);
}

// ---------------------------------------------------------------------------
// Contingency tables
// ---------------------------------------------------------------------------

TEST(Chi2Test, FrozenReferenceValues) {
  // Reference chi-square statistics and p-values computed with an
  // independent statistics package.
  struct Case {
    Table2x2 t;
    double chi2, p, chi2_yates, p_yates;
  };
  const std::vector<Case> cases = {
      {{27, 62, 482, 416},
       17.658586780395652, 2.6431926558076823e-05,
       16.736516543261803, 4.2946381197820039e-05},
      {{36, 53, 211, 687},
       12.403282114809173, 0.00042857989954249215,
       11.516198832675594, 0.00068992322831298988},
      {{38, 51, 354, 544},
       0.36290007757563608, 0.54690000160298569,
       0.23897982978256724, 0.62494390823751034},
      {{10, 20, 30, 15},
       8.0357142857142847, 0.0045863920802535025,
       6.7522321428571432, 0.0093630476375339503},
  };
  for (const Case& c : cases) {
    const Chi2Result plain = chi2_2x2(c.t, /*yates=*/false);
    EXPECT_NEAR(plain.chi2, c.chi2, 1e-9 * c.chi2);
    EXPECT_NEAR(plain.p, c.p, 1e-8 * c.p);
    const Chi2Result yates = chi2_2x2(c.t, /*yates=*/true);
    EXPECT_NEAR(yates.chi2, c.chi2_yates, 1e-9 * c.chi2_yates);
    EXPECT_NEAR(yates.p, c.p_yates, 1e-8 * c.p_yates);
  }
}

TEST(Chi2Test, RejectsDegenerateTables) {
  EXPECT_THROW(chi2_2x2({-1, 2, 3, 4}), Error);
  EXPECT_THROW(chi2_2x2({0, 0, 3, 4}), Error);   // empty row
  EXPECT_THROW(chi2_2x2({0, 2, 0, 4}), Error);   // empty column
}

TEST(FisherTest, FrozenReferenceValues) {
  EXPECT_NEAR(fisher_exact({3, 7, 12, 2}), 0.01037243480708281, 1e-10);
  EXPECT_NEAR(fisher_exact({1, 9, 11, 3}), 0.0027594561852200836, 1e-10);
  EXPECT_NEAR(fisher_exact({5, 0, 1, 4}), 0.047619047619047616, 1e-12);
  EXPECT_NEAR(fisher_exact({0, 5, 6, 0}), 0.0021645021645021645, 1e-12);
  EXPECT_NEAR(fisher_exact({27, 62, 482, 416}), 3.1117019591138255e-05,
              3.1117019591138255e-05 * 1e-7);
  // A table whose odds ratio is exactly 1 in distribution: p = 1.
  EXPECT_NEAR(fisher_exact({2, 3, 4, 5}), 1.0, 1e-12);
}

TEST(McNemarTest, FormulaAndConventions) {
  EXPECT_DOUBLE_EQ(mcnemar(0, 0, false), 1.0);
  EXPECT_DOUBLE_EQ(mcnemar(0, 0, true), 1.0);
  // Frozen references from an independent chi-square implementation.
  EXPECT_NEAR(mcnemar(15, 5, false), 0.025347318677468325, 1e-12);
  EXPECT_NEAR(mcnemar(15, 5, true), 0.04417134490844271, 1e-12);
  // Symmetric in the discordant counts.
  EXPECT_DOUBLE_EQ(mcnemar(5, 15, false), mcnemar(15, 5, false));
  EXPECT_DOUBLE_EQ(mcnemar(5, 15, true), mcnemar(15, 5, true));
  EXPECT_THROW(mcnemar(-1, 3, false), Error);
}

TEST(McNemarTest, CorrectedApproximatesExactBinomial) {
  // Two-sided exact binomial references at k = min(b,c), n = b+c, p = 1/2.
  EXPECT_NEAR(mcnemar(20, 10, true), 0.09873714670538905, 0.05);
  EXPECT_NEAR(mcnemar(18, 7, true), 0.043285250663757324, 0.05);
  EXPECT_NEAR(mcnemar(30, 15, true), 0.035697803555194696, 0.05);
}

// ---------------------------------------------------------------------------
// Rank / location tests
// ---------------------------------------------------------------------------

TEST(MannWhitneyTest, FrozenReferenceValues) {
  const std::vector<double> a = {1.2, 3.4, 2.2, 5.0, 3.4, 0.7, 4.1, 2.2, 6.3, 1.9};
  const std::vector<double> b = {2.8, 3.4, 4.9, 5.5, 6.1, 2.2, 7.0, 5.5};
  const MannWhitneyResult r = mann_whitney_u(a, b);
  EXPECT_DOUBLE_EQ(r.u, 20.0);
  EXPECT_NEAR(r.p, 0.081732113200201309, 1e-12);

  const MannWhitneyResult sep =
      mann_whitney_u({1, 2, 3, 4, 5}, {6, 7, 8, 9, 10});
  EXPECT_DOUBLE_EQ(sep.u, 0.0);
  EXPECT_NEAR(sep.p, 0.012185780355344813, 1e-12);
}

TEST(MannWhitneyTest, SwapIdentityAndDegenerates) {
  const std::vector<double> a = {1.5, 2.5, 9.0, 4.0};
  const std::vector<double> b = {3.0, 3.5, 0.5, 7.0, 8.0};
  const MannWhitneyResult ab = mann_whitney_u(a, b);
  const MannWhitneyResult ba = mann_whitney_u(b, a);
  EXPECT_DOUBLE_EQ(ab.u + ba.u,
                   static_cast<double>(a.size() * b.size()));
  EXPECT_DOUBLE_EQ(ab.p, ba.p);
  EXPECT_DOUBLE_EQ(ab.z, -ba.z);

  // All observations tied: no evidence either way.
  const MannWhitneyResult tied = mann_whitney_u({2, 2, 2}, {2, 2});
  EXPECT_DOUBLE_EQ(tied.z, 0.0);
  EXPECT_DOUBLE_EQ(tied.p, 1.0);

  EXPECT_THROW(mann_whitney_u({}, {1.0}), Error);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(mann_whitney_u({inf}, {1.0}), Error);
}

TEST(TTestTest, FrozenReferenceValues) {
  const std::vector<double> x = {4.2, 5.1, 3.8, 6.0, 5.5, 4.9, 5.2, 4.4, 6.1, 5.0};
  const std::vector<double> y = {5.9, 6.4, 7.1, 6.8, 5.5, 7.3, 6.0, 6.6};
  const TTestResult student = t_test(x, y, /*pooled=*/true);
  EXPECT_NEAR(student.t, -4.3581663924131107, 1e-12);
  EXPECT_DOUBLE_EQ(student.df, 16.0);
  EXPECT_NEAR(student.p, 0.00048785896972293105, 1e-14);

  const TTestResult welch = t_test(x, y, /*pooled=*/false);
  EXPECT_NEAR(welch.t, -4.4496507050060057, 1e-12);
  EXPECT_NEAR(welch.df, 15.944278242400488, 1e-10);
  EXPECT_NEAR(welch.p, 0.00040670184530789658, 1e-14);
}

TEST(TTestTest, SymmetryAndDegenerates) {
  const std::vector<double> a = {1.0, 2.0, 4.0};
  const std::vector<double> b = {3.0, 5.0, 5.5, 6.0};
  for (bool pooled : {true, false}) {
    const TTestResult ab = t_test(a, b, pooled);
    const TTestResult ba = t_test(b, a, pooled);
    EXPECT_DOUBLE_EQ(ab.t, -ba.t);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
    EXPECT_DOUBLE_EQ(ab.df, ba.df);
  }
  // Zero variance in both samples: equal means are a null result,
  // unequal means are undefined.
  const TTestResult same = t_test({2, 2, 2}, {2, 2}, true);
  EXPECT_DOUBLE_EQ(same.t, 0.0);
  EXPECT_DOUBLE_EQ(same.p, 1.0);
  EXPECT_THROW(t_test({2, 2, 2}, {3, 3}, true), Error);
  EXPECT_THROW(t_test({1.0}, {2.0, 3.0}, true), Error);
}

TEST(ShapiroWilkTest, FrozenReferenceValues) {
  const std::vector<double> n12 = {7.152350, 12.527457, 8.258677, 9.481654,
                                   9.849313, 8.518231, 7.264415, 11.297786,
                                   10.722116, 6.094274, 14.694819, 11.936994};
  const ShapiroWilkResult r12 = shapiro_wilk(n12);
  EXPECT_NEAR(r12.w, 0.97675659573026363, 1e-6);
  EXPECT_NEAR(r12.p, 0.96732981797169293, 1e-5);

  const std::vector<double> n20 = {
      1.065129, 0.100315, 1.669832, 0.548675, 2.072363, 0.824443, 0.076944,
      0.040503, 0.219685, 0.993272, 0.742600, 0.372090, 0.809778, 0.503546,
      0.334647, 0.313562, 0.349161, 0.162366, 1.698813, 2.371805};
  const ShapiroWilkResult r20 = shapiro_wilk(n20);
  EXPECT_NEAR(r20.w, 0.8654458164649631, 1e-6);
  EXPECT_NEAR(r20.p, 0.0097813544354918777, 1e-5);
  EXPECT_LT(r20.p, 0.05);  // exponential data flagged as non-normal

  const std::vector<double> n50 = {
      8.413755, 10.481143, 6.207347, 12.791543, 11.276589, 9.415905,
      9.376101, 10.607671, 9.464679, 9.548182, 11.440136, 11.029410,
      9.871744, 9.829047, 10.321833, 8.771963, 9.192499, 11.096520,
      9.739034, 7.251148, 9.045443, 11.313243, 9.535434, 9.702534,
      11.283673, 13.649221, 8.573623, 12.696414, 7.539974, 10.349955,
      7.660941, 12.702916, 11.667846, 12.275434, 8.228934, 11.369110,
      8.961973, 9.085229, 11.013074, 11.753436, 10.408840, 8.744026,
      8.348367, 12.888634, 11.187892, 11.439456, 14.366976, 8.368274,
      15.118916, 16.301816};
  const ShapiroWilkResult r50 = shapiro_wilk(n50);
  EXPECT_NEAR(r50.w, 0.9731472767169094, 1e-6);
  EXPECT_NEAR(r50.p, 0.3093396342255106, 1e-4);
  EXPECT_GT(r50.p, 0.05);  // normal draws pass
}

TEST(ShapiroWilkTest, InputValidation) {
  EXPECT_THROW(shapiro_wilk({1.0, 2.0}), Error);
  EXPECT_THROW(shapiro_wilk({3.0, 3.0, 3.0, 3.0}), Error);
  EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 0.0)), Error);
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

TEST(LogisticTest, FrozenMaximumLikelihoodFit) {
  // Coefficients, standard errors, and log-likelihood frozen from an
  // independent numerical maximum-likelihood fit of the same design.
  const std::vector<double> x1 = {
      -0.623223, -0.556297, 0.037388,  0.995960,  0.029919,  0.348075,
      0.132315,  0.151695,  -0.148900, -0.062405, -1.834275, -0.524987,
      0.479866,  1.225152,  0.907079,  -0.245031, 0.223027,  1.141075,
      -0.048132, -0.440020, -1.122719, -1.140438, -0.537850, 1.217568,
      0.723678,  -0.513554, 1.596087,  0.694058,  -1.458843, -0.758834,
      0.643080,  1.674749,  0.468916,  0.317616,  -0.166358, -0.333895};
  const std::vector<int> x2 = {0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 1,
                               0, 1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0,
                               0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 1, 0};
  const std::vector<int> y = {1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 0,
                              0, 1, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1,
                              0, 1, 1, 1, 0, 0, 1, 1, 0, 1, 0, 1};
  Matrix x(x1.size(), 2, 0.0);
  for (std::size_t i = 0; i < x1.size(); ++i) {
    x.at(i, 0) = x1[i];
    x.at(i, 1) = static_cast<double>(x2[i]);
  }
  const RegressionResult r = logistic_fit(x, y, {"score", "exposed"});
  EXPECT_TRUE(r.converged);
  ASSERT_EQ(r.terms.size(), 3u);
  EXPECT_EQ(r.terms[0].name, "(Intercept)");
  EXPECT_EQ(r.terms[1].name, "score");
  EXPECT_EQ(r.terms[2].name, "exposed");

  EXPECT_NEAR(r.terms[0].beta, 0.8285920067728952, 1e-6);
  EXPECT_NEAR(r.terms[1].beta, 1.390912337122622, 1e-6);
  EXPECT_NEAR(r.terms[2].beta, -1.6306089944900244, 1e-6);
  EXPECT_NEAR(r.terms[0].se, 0.5144134372710735, 1e-6);
  EXPECT_NEAR(r.terms[1].se, 0.5861551468447027, 1e-6);
  EXPECT_NEAR(r.terms[2].se, 0.8535954159748597, 1e-6);
  EXPECT_NEAR(r.log_likelihood, -19.643478017386652, 1e-8);
  EXPECT_NEAR(r.terms[1].p, 0.0176470208672027, 1e-6);

  for (const RegressionTerm& t : r.terms) {
    EXPECT_NEAR(t.odds_ratio, std::exp(t.beta), 1e-12);
    EXPECT_NEAR(t.ci_low, std::exp(t.beta - 1.96 * t.se), 1e-12);
    EXPECT_NEAR(t.ci_high, std::exp(t.beta + 1.96 * t.se), 1e-12);
  }
}

TEST(LogisticTest, RejectsPathologicalDesigns) {
  // Perfect separation has no finite MLE.
  Matrix x(6, 1, 0.0);
  const std::vector<int> y = {0, 0, 0, 1, 1, 1};
  for (std::size_t i = 0; i < 6; ++i) x.at(i, 0) = static_cast<double>(i);
  EXPECT_THROW(logistic_fit(x, y, {"v"}), Error);

  // Collinear duplicate column.
  Matrix xc(8, 2, 0.0);
  const std::vector<int> yc = {0, 1, 0, 1, 1, 0, 1, 0};
  for (std::size_t i = 0; i < 8; ++i) {
    xc.at(i, 0) = static_cast<double>(i % 3);
    xc.at(i, 1) = 2.0 * xc.at(i, 0);
  }
  EXPECT_THROW(logistic_fit(xc, yc, {"v", "v2"}), Error);

  // Single-class labels and shape mismatches.
  Matrix xs(4, 1, 1.0);
  EXPECT_THROW(logistic_fit(xs, {1, 1, 1, 1}, {"v"}), Error);
  EXPECT_THROW(logistic_fit(xs, {0, 1, 0}, {"v"}), Error);
  EXPECT_THROW(logistic_fit(xs, {0, 1, 0, 2}, {"v"}), Error);
  EXPECT_THROW(logistic_fit(xs, {0, 1, 0, 1}, {"v", "w"}), Error);
}

// ---------------------------------------------------------------------------
// Thresholded classification metrics
// ---------------------------------------------------------------------------

TEST(ClassificationTest, HandComputedConfusion) {
  const std::vector<double> proba = {0.9, 0.3, 0.6, 0.2};
  const std::vector<int> labels = {1, 0, 1, 1};
  const ClassificationMetrics m = classification_metrics(proba, labels, 0.5);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_DOUBLE_EQ(m.precision, 1.0);
  EXPECT_NEAR(m.sensitivity, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.specificity, 1.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_NEAR(m.f1, 0.8, 1e-15);
  EXPECT_FALSE(m.no_positive_predictions);

  // The threshold is inclusive: proba == threshold predicts positive.
  const ClassificationMetrics edge =
      classification_metrics({0.5, 0.49}, {1, 0}, 0.5);
  EXPECT_EQ(edge.tp, 1u);
  EXPECT_EQ(edge.tn, 1u);
}

TEST(ClassificationTest, NoPositivePredictionsFlag) {
  const ClassificationMetrics m =
      classification_metrics({0.1, 0.2, 0.3}, {1, 0, 1}, 0.9);
  EXPECT_TRUE(m.no_positive_predictions);
  EXPECT_DOUBLE_EQ(m.precision, 0.0);
  EXPECT_DOUBLE_EQ(m.sensitivity, 0.0);
  EXPECT_DOUBLE_EQ(m.specificity, 1.0);
  EXPECT_THROW(classification_metrics({}, {}), Error);
  EXPECT_THROW(classification_metrics({0.5}, {1, 0}), Error);
}

}  // namespace
}  // namespace calciomics
