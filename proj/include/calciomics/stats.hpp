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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "calciomics/common.hpp"
#include "calciomics/mathutil.hpp"

namespace calciomics {

// ---------------------------------------------------------------------------
// Ranking primitives
// ---------------------------------------------------------------------------

namespace detail {

struct ScoreBlocks {
  // Scores grouped by distinct value, ascending. Counts per block.
  std::vector<double> value;
  std::vector<std::size_t> pos, neg;
  std::size_t n_pos = 0, n_neg = 0;
};

inline ScoreBlocks score_blocks(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "scores/labels length mismatch");
  require(!scores.empty(), "empty score vector");
  for (double s : scores) require(std::isfinite(s), "non-finite score");
  for (int y : labels) require(y == 0 || y == 1, "labels must be 0/1");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  ScoreBlocks b;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    if (b.value.empty() || scores[i] != b.value.back()) {
      b.value.push_back(scores[i]);
      b.pos.push_back(0);
      b.neg.push_back(0);
    }
    if (labels[i]) {
      ++b.pos.back();
      ++b.n_pos;
    } else {
      ++b.neg.back();
      ++b.n_neg;
    }
  }
  return b;
}

}  // namespace detail

/// Placement values behind the AUROC and the DeLong test. v10 holds, for each
/// positive in its original input position, the fraction of negatives it
/// outranks (ties count half); v01 mirrors it for negatives. Keeping input
/// order matters: the DeLong covariance pairs the two score vectors subject by
/// subject, so placements must not be reordered by score. auc is computed from
/// exact integer tallies, so mean(v10) == mean(v01) == auc is an identity.
struct Placements {
  std::vector<double> v10, v01;
  double auc = 0;
  std::size_t n_pos = 0, n_neg = 0;
};

inline Placements placements(const std::vector<double>& scores,
                             const std::vector<int>& labels) {
  require(scores.size() == labels.size(),
          "placements: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (const int y : labels) {
    require(y == 0 || y == 1, "placements: labels must be 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, "labels must include both classes");
  for (const double s : scores) {
    require(std::isfinite(s), "placements: scores must be finite");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  std::vector<double> by_subject(n, 0.0);
  double total2 = 0;  // doubled concordance tally; exact in double
  std::size_t neg_below = 0, pos_below = 0, k = 0;
  while (k < n) {
    std::size_t j = k;
    std::size_t bp = 0, bn = 0;
    while (j < n && scores[order[j]] == scores[order[k]]) {
      if (labels[order[j]] == 1) {
        ++bp;
      } else {
        ++bn;
      }
      ++j;
    }
    const double numer2_pos = 2.0 * static_cast<double>(neg_below) +
                              static_cast<double>(bn);
    const std::size_t pos_above = n_pos - pos_below - bp;
    const double numer2_neg = 2.0 * static_cast<double>(pos_above) +
                              static_cast<double>(bp);
    for (std::size_t t = k; t < j; ++t) {
      by_subject[order[t]] =
          labels[order[t]] == 1
              ? numer2_pos / (2.0 * static_cast<double>(n_neg))
              : numer2_neg / (2.0 * static_cast<double>(n_pos));
    }
    total2 += static_cast<double>(bp) * numer2_pos;
    neg_below += bn;
    pos_below += bp;
    k = j;
  }

  Placements p;
  p.n_pos = n_pos;
  p.n_neg = n_neg;
  p.v10.reserve(n_pos);
  p.v01.reserve(n_neg);
  for (std::size_t i = 0; i < n; ++i) {
    (labels[i] == 1 ? p.v10 : p.v01).push_back(by_subject[i]);
  }
  p.auc = total2 / (2.0 * static_cast<double>(n_pos) *
                    static_cast<double>(n_neg));
  return p;
}

/// Tie-corrected Mann-Whitney AUROC: (#concordant + half #tied) / (n1 n0).
inline double auroc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  return placements(scores, labels).auc;
}

/// Average precision with equal-score blocks treated atomically.
inline double auprc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  const detail::ScoreBlocks b = detail::score_blocks(scores, labels);
  require(b.n_pos > 0, "auprc requires at least one positive");
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = b.value.size(); k-- > 0;) {  // descending score
    tp += b.pos[k];
    seen += b.pos[k] + b.neg[k];
    if (b.pos[k] == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += precision * (static_cast<double>(b.pos[k]) /
                       static_cast<double>(b.n_pos));
  }
  return ap;
}

struct RocPoint {
  double fpr = 0, tpr = 0;
};
struct PrPoint {
  double recall = 0, precision = 0;
};

/// ROC polyline from (0,0) to (1,1), one vertex per distinct score.
inline std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  const detail::ScoreBlocks b = detail::score_blocks(scores, labels);
  require(b.n_pos > 0 && b.n_neg > 0, "labels must include both classes");
  std::vector<RocPoint> pts;
  pts.push_back({0, 0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = b.value.size(); k-- > 0;) {
    tp += b.pos[k];
    fp += b.neg[k];
    pts.push_back({static_cast<double>(fp) / static_cast<double>(b.n_neg),
                   static_cast<double>(tp) / static_cast<double>(b.n_pos)});
  }
  return pts;
}

/// Precision-recall points per atomic score block, descending score.
inline std::vector<PrPoint> pr_points(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
  const detail::ScoreBlocks b = detail::score_blocks(scores, labels);
  require(b.n_pos > 0, "pr_points requires at least one positive");
  std::vector<PrPoint> pts;
  pts.push_back({0.0, 1.0});
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = b.value.size(); k-- > 0;) {
    tp += b.pos[k];
    seen += b.pos[k] + b.neg[k];
    pts.push_back({static_cast<double>(tp) / static_cast<double>(b.n_pos),
                   static_cast<double>(tp) / static_cast<double>(seen)});
  }
  return pts;
}

// ---------------------------------------------------------------------------
// DeLong test
// ---------------------------------------------------------------------------

struct DelongResult {
  double auc_a = 0, auc_b = 0;
  double variance = 0;
  double z = 0;
  double p = 1;
};

/// DeLong comparison of two correlated AUROCs scored on the same patients.
inline DelongResult delong_test(const std::vector<double>& scores_a,
                                const std::vector<double>& scores_b,
                                const std::vector<int>& labels) {
  require(scores_a.size() == scores_b.size(),
          "delong_test: paired score vectors must align");
  const Placements pa = placements(scores_a, labels);
  const Placements pb = placements(scores_b, labels);
  require(pa.n_pos >= 2 && pa.n_neg >= 2,
          "delong_test: need at least two observations per class");

  auto paired_diff_variance = [](const std::vector<double>& a,
                                 const std::vector<double>& b) {
    const std::size_t n = a.size();
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (a[i] - b[i]) - mean;
      ss += d * d;
    }
    return ss / static_cast<double>(n - 1);
  };

  DelongResult r;
  r.auc_a = pa.auc;
  r.auc_b = pb.auc;
  r.variance = paired_diff_variance(pa.v10, pb.v10) /
                   static_cast<double>(pa.n_pos) +
               paired_diff_variance(pa.v01, pb.v01) /
                   static_cast<double>(pa.n_neg);
  const double diff = r.auc_a - r.auc_b;
  if (r.variance <= 0) {
    require(diff == 0,
            "delong_test: zero variance with unequal AUCs (degenerate inputs)");
    r.z = 0;
    r.p = 1;
    return r;
  }
  r.z = diff / std::sqrt(r.variance);
  r.p = two_sided_normal_p(r.z);
  return r;
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct ClassificationMetrics {
  double precision = 0, sensitivity = 0, specificity = 0, accuracy = 0, f1 = 0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool no_positive_predictions = false;
};

inline ClassificationMetrics classification_metrics(
    const std::vector<double>& proba, const std::vector<int>& labels,
    double threshold = 0.5) {
  require(proba.size() == labels.size(), "proba/labels length mismatch");
  require(!proba.empty(), "classification_metrics: empty input");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < proba.size(); ++i) {
    const bool pred = proba[i] >= threshold;
    if (pred && labels[i]) ++m.tp;
    else if (pred && !labels[i]) ++m.fp;
    else if (!pred && labels[i]) ++m.fn;
    else ++m.tn;
  }
  const auto d = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.no_positive_predictions = (m.tp + m.fp) == 0;
  m.precision = d(m.tp, m.tp + m.fp);
  m.sensitivity = d(m.tp, m.tp + m.fn);
  m.specificity = d(m.tn, m.tn + m.fp);
  m.accuracy = d(m.tp + m.tn, proba.size());
  const double pr_sum = m.precision + m.sensitivity;
  m.f1 = pr_sum > 0 ? 2.0 * m.precision * m.sensitivity / pr_sum : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Contingency-table tests
// ---------------------------------------------------------------------------

struct Table2x2 {
  // [[a, b], [c, d]]; rows = groups, columns = outcomes.
  long a = 0, b = 0, c = 0, d = 0;

  void validate() const {
    require(a >= 0 && b >= 0 && c >= 0 && d >= 0,
            "2x2 table: counts must be nonnegative");
    require(a + b > 0 && c + d > 0 && a + c > 0 && b + d > 0,
            "2x2 table: empty margin");
  }
};

struct Chi2Result {
  double chi2 = 0;
  double p = 1;
};

inline Chi2Result chi2_2x2(const Table2x2& t, bool yates = false) {
  t.validate();
  const double n = static_cast<double>(t.a + t.b + t.c + t.d);
  const double r1 = static_cast<double>(t.a + t.b);
  const double r2 = static_cast<double>(t.c + t.d);
  const double c1 = static_cast<double>(t.a + t.c);
  const double c2 = static_cast<double>(t.b + t.d);
  double det = std::fabs(static_cast<double>(t.a) * static_cast<double>(t.d) -
                         static_cast<double>(t.b) * static_cast<double>(t.c));
  if (yates) det = std::max(0.0, det - n / 2.0);
  Chi2Result r;
  r.chi2 = n * det * det / (r1 * r2 * c1 * c2);
  r.p = chi2_sf_df1(r.chi2);
  return r;
}

namespace detail {

inline double log_choose(long n, long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace detail

/// Two-sided Fisher exact test: the sum of hypergeometric probabilities of
/// all tables (same margins) no more probable than the observed one.
inline double fisher_exact(const Table2x2& t) {
  t.validate();
  const long r1 = t.a + t.b, r2 = t.c + t.d, c1 = t.a + t.c;
  const long n = r1 + r2;
  const double log_denom = detail::log_choose(n, c1);
  auto log_prob = [&](long a) {
    return detail::log_choose(r1, a) + detail::log_choose(r2, c1 - a) - log_denom;
  };
  const long a_min = std::max(0L, c1 - r2);
  const long a_max = std::min(r1, c1);
  const double lp_obs = log_prob(t.a);
  double p = 0;
  for (long a = a_min; a <= a_max; ++a) {
    const double lp = log_prob(a);
    if (lp <= lp_obs + 1e-7) p += std::exp(lp);
  }
  return std::min(1.0, p);
}

/// McNemar's test on discordant-pair counts b and c.
inline double mcnemar(long b, long c, bool corrected) {
  require(b >= 0 && c >= 0, "mcnemar: counts must be nonnegative");
  if (b + c == 0) return 1.0;
  const double nd = static_cast<double>(b + c);
  const double delta = std::fabs(static_cast<double>(b - c));
  const double num = corrected ? (delta - 1.0) : delta;
  const double chi2 = num * num / nd;
  return chi2_sf_df1(chi2);
}

// ---------------------------------------------------------------------------
// Rank / location tests
// ---------------------------------------------------------------------------

struct MannWhitneyResult {
  double u = 0;  // U statistic of the first sample
  double z = 0;
  double p = 1;
};

/// Mann-Whitney U with normal approximation, tie correction, and continuity
/// correction.
inline MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), "mann_whitney_u: empty sample");
  const std::size_t na = a.size(), nb = b.size();
  std::vector<std::pair<double, int>> all;  // value, sample id
  all.reserve(na + nb);
  for (double v : a) {
    require(std::isfinite(v), "mann_whitney_u: non-finite value");
    all.emplace_back(v, 0);
  }
  for (double v : b) {
    require(std::isfinite(v), "mann_whitney_u: non-finite value");
    all.emplace_back(v, 1);
  }
  std::sort(all.begin(), all.end());

  const double n_total = static_cast<double>(na + nb);
  double rank_sum_a = 0;
  double tie_term = 0;  // sum of t^3 - t over tie groups
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t in_a = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      in_a += (all[j].second == 0);
      ++j;
    }
    const double t = static_cast<double>(j - i);
    const double avg_rank = (static_cast<double>(i + 1) +
                             static_cast<double>(j)) / 2.0;
    rank_sum_a += avg_rank * static_cast<double>(in_a);
    tie_term += t * t * t - t;
    i = j;
  }

  MannWhitneyResult r;
  r.u = rank_sum_a -
        static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0;
  const double mean_u = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double var_u =
      static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
      ((n_total + 1.0) - tie_term / (n_total * (n_total - 1.0)));
  if (var_u <= 0) {
    r.z = 0;
    r.p = 1;
    return r;
  }
  double num = r.u - mean_u;
  // Continuity correction toward the mean, never across it.
  if (num > 0) num = std::max(0.0, num - 0.5);
  else if (num < 0) num = std::min(0.0, num + 0.5);
  r.z = num / std::sqrt(var_u);
  r.p = two_sided_normal_p(r.z);
  return r;
}

struct TTestResult {
  double t = 0;
  double df = 0;
  double p = 1;
};

/// Two-sample t-test; pooled variance (Student) or Welch.
inline TTestResult t_test(const std::vector<double>& a,
                          const std::vector<double>& b, bool pooled) {
  require(a.size() >= 2 && b.size() >= 2, "t_test: need >= 2 values per sample");
  auto mean_var = [](const std::vector<double>& x) {
    double mean = 0;
    for (double v : x) {
      require(std::isfinite(v), "t_test: non-finite value");
      mean += v;
    }
    mean /= static_cast<double>(x.size());
    double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair<double, double>(mean, ss / static_cast<double>(x.size() - 1));
  };
  const auto [ma, va] = mean_var(a);
  const auto [mb, vb] = mean_var(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  TTestResult r;
  double se2, df;
  if (pooled) {
    const double sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
    se2 = sp2 * (1.0 / na + 1.0 / nb);
    df = na + nb - 2.0;
  } else {
    se2 = va / na + vb / nb;
    const double term_a = va / na, term_b = vb / nb;
    df = se2 > 0 ? se2 * se2 /
                       (term_a * term_a / (na - 1.0) + term_b * term_b / (nb - 1.0))
                 : na + nb - 2.0;
  }
  if (se2 <= 0) {
    require(ma == mb, "t_test: zero variance with unequal means");
    r.t = 0;
    r.df = df;
    r.p = 1;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = df;
  r.p = t_two_sided_p(r.t, df);
  return r;
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston's approximation)
// ---------------------------------------------------------------------------

struct ShapiroWilkResult {
  double w = 0;
  double p = 1;
};

/// Shapiro-Wilk normality test, Royston's polynomial approximation,
/// valid for 3 <= n <= 5000.
inline ShapiroWilkResult shapiro_wilk(std::vector<double> x) {
  const std::size_t n = x.size();
  require(n >= 3 && n <= 5000, "shapiro_wilk: n must be in [3, 5000]");
  std::sort(x.begin(), x.end());
  require(x.back() > x.front(), "shapiro_wilk: all values identical");

  // Expected normal order statistics (Blom) and base weights.
  std::vector<double> m(n);
  double m_sq_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) /
                           (static_cast<double>(n) + 0.25));
    m_sq_sum += m[i] * m[i];
  }
  std::vector<double> a(n);
  const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
  if (n == 3) {
    a[0] = -std::sqrt(0.5);
    a[1] = 0.0;
    a[2] = std::sqrt(0.5);
  } else {
    const double c_n = m[n - 1] / std::sqrt(m_sq_sum);
    const double c_n1 = m[n - 2] / std::sqrt(m_sq_sum);
    const double a_n = c_n + 0.221157 * rsn - 0.147981 * rsn * rsn -
                       2.071190 * std::pow(rsn, 3) + 4.434685 * std::pow(rsn, 4) -
                       2.706056 * std::pow(rsn, 5);
    if (n <= 5) {
      const double phi = (m_sq_sum - 2.0 * m[n - 1] * m[n - 1]) /
                         (1.0 - 2.0 * a_n * a_n);
      for (std::size_t i = 0; i < n; ++i) a[i] = m[i] / std::sqrt(phi);
      a[n - 1] = a_n;
      a[0] = -a_n;
    } else {
      const double a_n1 = c_n1 + 0.042981 * rsn - 0.293762 * rsn * rsn -
                          1.752461 * std::pow(rsn, 3) +
                          5.682633 * std::pow(rsn, 4) -
                          3.582633 * std::pow(rsn, 5);
      const double phi =
          (m_sq_sum - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) /
          (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
      for (std::size_t i = 0; i < n; ++i) a[i] = m[i] / std::sqrt(phi);
      a[n - 1] = a_n;
      a[n - 2] = a_n1;
      a[0] = -a_n;
      a[1] = -a_n1;
    }
  }

  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double numer = 0, denom = 0;
  for (std::size_t i = 0; i < n; ++i) {
    numer += a[i] * x[i];
    denom += (x[i] - mean) * (x[i] - mean);
  }
  ShapiroWilkResult r;
  r.w = std::min(1.0, numer * numer / denom);

  if (n == 3) {
    const double pi6 = 6.0 / 3.14159265358979323846;
    const double stqr = std::asin(std::sqrt(0.75));
    r.p = std::clamp(pi6 * (std::asin(std::sqrt(r.w)) - stqr), 0.0, 1.0);
    return r;
  }
  double z;
  if (n <= 11) {
    const double nn = static_cast<double>(n);
    const double gamma = -2.273 + 0.459 * nn;
    const double mu = 0.5440 - 0.39978 * nn + 0.025054 * nn * nn -
                      0.0006714 * nn * nn * nn;
    const double sigma = std::exp(1.3822 - 0.77857 * nn + 0.062767 * nn * nn -
                                  0.0020322 * nn * nn * nn);
    z = (-std::log(gamma - std::log1p(-r.w)) - mu) / sigma;
  } else {
    const double u = std::log(static_cast<double>(n));
    const double mu = -1.5861 - 0.31082 * u - 0.083751 * u * u +
                      0.0038915 * u * u * u;
    const double sigma = std::exp(-0.4803 - 0.082676 * u + 0.0030302 * u * u);
    z = (std::log1p(-r.w) - mu) / sigma;
  }
  r.p = normal_sf(z);
  return r;
}

// ---------------------------------------------------------------------------
// Logistic regression (IRLS)
// ---------------------------------------------------------------------------

struct RegressionTerm {
  std::string name;
  double beta = 0, se = 0;
  double odds_ratio = 1, ci_low = 1, ci_high = 1;
  double p = 1;
};

struct RegressionResult {
  std::vector<RegressionTerm> terms;  // intercept first
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0;
};

namespace detail {

inline double logistic_ll(const Matrix& design, const std::vector<int>& y,
                          const std::vector<double>& beta) {
  double ll = 0;
  for (std::size_t i = 0; i < design.n_rows; ++i) {
    double eta = 0;
    for (std::size_t j = 0; j < design.n_cols; ++j) {
      eta += design.at(i, j) * beta[j];
    }
    // log(1 + e^eta) computed stably.
    const double softplus = std::max(eta, 0.0) + std::log1p(std::exp(-std::fabs(eta)));
    ll += static_cast<double>(y[i]) * eta - softplus;
  }
  return ll;
}

}  // namespace detail

/// Maximum-likelihood logistic regression via IRLS with step halving.
/// X holds the non-intercept columns; the intercept is always included.
inline RegressionResult logistic_fit(const Matrix& x, const std::vector<int>& y,
                                     const std::vector<std::string>& term_names) {
  require(x.n_rows == y.size(), "logistic_fit: X rows != labels");
  require(x.n_cols == term_names.size(), "logistic_fit: X cols != term names");
  require(x.n_rows >= 2, "logistic_fit: too few rows");
  std::size_t n_pos = 0;
  for (int v : y) {
    require(v == 0 || v == 1, "logistic_fit: labels must be 0/1");
    n_pos += static_cast<std::size_t>(v);
  }
  require(n_pos > 0 && n_pos < y.size(), "logistic_fit: degenerate labels");

  const std::size_t n = x.n_rows;
  const std::size_t p = x.n_cols + 1;
  Matrix design(n, p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    design.at(i, 0) = 1.0;
    for (std::size_t j = 0; j < x.n_cols; ++j) {
      const double v = x.at(i, j);
      require(std::isfinite(v), "logistic_fit: non-finite design value");
      design.at(i, j + 1) = v;
    }
  }
  auto term_label = [&term_names](std::size_t j) {
    return j == 0 ? std::string("(Intercept)") : term_names[j - 1];
  };

  std::vector<double> beta(p, 0.0);
  double ll = detail::logistic_ll(design, y, beta);
  constexpr int kMaxIter = 200;
  constexpr double kScoreTol = 1e-8;
  constexpr double kRelLlTol = 1e-10;
  constexpr double kBetaDivergence = 15.0;

  RegressionResult result;
  std::vector<double> prob(n), score(p), info_v;
  Matrix info(p, p, 0.0);
  for (int iter = 1; iter <= kMaxIter; ++iter) {
    // Score and observed information at the current beta.
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0;
      for (std::size_t j = 0; j < p; ++j) eta += design.at(i, j) * beta[j];
      prob[i] = sigmoid(eta);
    }
    std::fill(score.begin(), score.end(), 0.0);
    std::fill(info.v.begin(), info.v.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double resid = static_cast<double>(y[i]) - prob[i];
      const double w = prob[i] * (1.0 - prob[i]);
      for (std::size_t j = 0; j < p; ++j) {
        const double dij = design.at(i, j);
        score[j] += dij * resid;
        for (std::size_t k = j; k < p; ++k) {
          info.at(j, k) += w * dij * design.at(i, k);
        }
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = 0; k < j; ++k) info.at(j, k) = info.at(k, j);
    }

    double max_score = 0;
    for (double s : score) max_score = std::max(max_score, std::fabs(s));
    double max_beta = 0;
    for (double b : beta) max_beta = std::max(max_beta, std::fabs(b));
    if (max_beta > kBetaDivergence && max_score > 1e-6) {
      fail("logistic_fit: complete or quasi-complete separation detected");
    }
    if (max_score < kScoreTol) {
      result.converged = true;
      result.iterations = iter - 1;
      break;
    }

    Matrix chol = info;
    const int bad = cholesky_factor(chol);
    if (bad >= 0) {
      if (iter == 1) {
        // At beta = 0 the information is 0.25 X'X: a failed pivot means a
        // linearly dependent design column, not an optimization artifact.
        fail("logistic_fit: rank-deficient design; collinear term: " +
             term_label(static_cast<std::size_t>(bad)));
      }
      fail("logistic_fit: information matrix singular during IRLS");
    }
    const std::vector<double> delta = cholesky_solve(chol, score);

    double step = 1.0;
    double new_ll = -std::numeric_limits<double>::infinity();
    std::vector<double> candidate(p);
    for (int h = 0; h < 40; ++h) {
      for (std::size_t j = 0; j < p; ++j) candidate[j] = beta[j] + step * delta[j];
      new_ll = detail::logistic_ll(design, y, candidate);
      if (new_ll >= ll - 1e-12) break;
      step /= 2.0;
    }
    beta = candidate;
    const double rel_change = std::fabs(new_ll - ll) / (std::fabs(ll) + 1e-3);
    ll = new_ll;
    if (rel_change < kRelLlTol) {
      result.converged = true;
      result.iterations = iter;
      break;
    }
    if (iter == kMaxIter) result.iterations = iter;
  }
  require(result.converged, "logistic_fit: IRLS failed to converge");
  result.log_likelihood = ll;

  // Standard errors from the inverse observed information at the optimum.
  for (std::size_t i = 0; i < n; ++i) {
    double eta = 0;
    for (std::size_t j = 0; j < p; ++j) eta += design.at(i, j) * beta[j];
    prob[i] = sigmoid(eta);
  }
  std::fill(info.v.begin(), info.v.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = prob[i] * (1.0 - prob[i]);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = j; k < p; ++k) {
        info.at(j, k) += w * design.at(i, j) * design.at(i, k);
      }
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < j; ++k) info.at(j, k) = info.at(k, j);
  }
  Matrix chol = info;
  require(cholesky_factor(chol) < 0,
          "logistic_fit: information matrix singular at the optimum");
  const Matrix cov = cholesky_inverse(chol);

  result.terms.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    RegressionTerm& t = result.terms[j];
    t.name = term_label(j);
    t.beta = beta[j];
    t.se = std::sqrt(cov.at(j, j));
    t.odds_ratio = std::exp(t.beta);
    t.ci_low = std::exp(t.beta - 1.96 * t.se);
    t.ci_high = std::exp(t.beta + 1.96 * t.se);
    t.p = t.se > 0 ? two_sided_normal_p(t.beta / t.se) : 1.0;
  }
  return result;
}

}  // namespace calciomics
