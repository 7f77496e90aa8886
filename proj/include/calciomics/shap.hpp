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
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "calciomics/common.hpp"
#include "calciomics/gbt.hpp"

namespace calciomics {

/// Per-prediction Shapley attribution in margin units.
struct Attribution {
  double phi0 = 0;          // expected margin of the ensemble
  std::vector<double> phi;  // one value per feature
};

namespace detail {

/// Cover-weighted expected value of every node's subtree.
inline std::vector<double> node_expectations(const GbtTree& tree) {
  std::vector<double> value(tree.nodes.size(), 0.0);
  // Nodes are stored parent-before-children, so a reverse sweep sees both
  // children before their parent.
  for (std::size_t k = tree.nodes.size(); k-- > 0;) {
    const GbtNode& n = tree.nodes[k];
    if (n.leaf) {
      value[k] = n.weight;
      continue;
    }
    const auto l = static_cast<std::size_t>(n.left);
    const auto r = static_cast<std::size_t>(n.right);
    const double cl = tree.nodes[l].cover;
    const double cr = tree.nodes[r].cover;
    require(cl > 0 && cr > 0, "shap: zero-cover node in model");
    value[k] = (cl * value[l] + cr * value[r]) / (cl + cr);
  }
  return value;
}

struct PathElement {
  int feature_index = -1;
  double zero_fraction = 0;
  double one_fraction = 0;
  double pweight = 0;
};

inline void extend_path(PathElement* path, unsigned depth, double zero_fraction,
                        double one_fraction, int feature_index) {
  path[depth].feature_index = feature_index;
  path[depth].zero_fraction = zero_fraction;
  path[depth].one_fraction = one_fraction;
  path[depth].pweight = depth == 0 ? 1.0 : 0.0;
  for (int i = static_cast<int>(depth) - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight *
                           static_cast<double>(i + 1) /
                           static_cast<double>(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight *
                      static_cast<double>(depth - static_cast<unsigned>(i)) /
                      static_cast<double>(depth + 1);
  }
}

inline void unwind_path(PathElement* path, unsigned depth, unsigned index) {
  const double one_fraction = path[index].one_fraction;
  const double zero_fraction = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  for (int i = static_cast<int>(depth) - 1; i >= 0; --i) {
    if (one_fraction != 0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next_one_portion * static_cast<double>(depth + 1) /
                        (static_cast<double>(i + 1) * one_fraction);
      next_one_portion =
          tmp - path[i].pweight * zero_fraction *
                    static_cast<double>(depth - static_cast<unsigned>(i)) /
                    static_cast<double>(depth + 1);
    } else {
      path[i].pweight =
          path[i].pweight * static_cast<double>(depth + 1) /
          (zero_fraction * static_cast<double>(depth - static_cast<unsigned>(i)));
    }
  }
  for (unsigned i = index; i < depth; ++i) {
    path[i].feature_index = path[i + 1].feature_index;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

inline double unwound_path_sum(const PathElement* path, unsigned depth,
                               unsigned index) {
  const double one_fraction = path[index].one_fraction;
  const double zero_fraction = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  double total = 0;
  for (int i = static_cast<int>(depth) - 1; i >= 0; --i) {
    if (one_fraction != 0) {
      const double tmp = next_one_portion * static_cast<double>(depth + 1) /
                         (static_cast<double>(i + 1) * one_fraction);
      total += tmp;
      next_one_portion =
          path[i].pweight -
          tmp * zero_fraction *
              static_cast<double>(depth - static_cast<unsigned>(i)) /
              static_cast<double>(depth + 1);
    } else {
      total += path[i].pweight /
               (zero_fraction *
                static_cast<double>(depth - static_cast<unsigned>(i)) /
                static_cast<double>(depth + 1));
    }
  }
  return total;
}

inline void tree_shap_recurse(const GbtTree& tree, const double* x,
                              std::vector<double>& phi, std::size_t node,
                              unsigned depth, PathElement* parent_path,
                              double parent_zero, double parent_one,
                              int parent_feature) {
  // Each level gets a fresh copy of the path one stride further into the
  // shared buffer, so sibling recursions never clobber each other.
  PathElement* path = parent_path + depth + 1;
  for (unsigned i = 0; i < depth; ++i) path[i] = parent_path[i];
  extend_path(path, depth, parent_zero, parent_one, parent_feature);

  const GbtNode& n = tree.nodes[node];
  if (n.leaf) {
    for (unsigned i = 1; i <= depth; ++i) {
      const double w = unwound_path_sum(path, depth, i);
      const PathElement& el = path[i];
      phi[static_cast<std::size_t>(el.feature_index)] +=
          w * (el.one_fraction - el.zero_fraction) * n.weight;
    }
    return;
  }

  const auto left = static_cast<std::size_t>(n.left);
  const auto right = static_cast<std::size_t>(n.right);
  const bool go_left = x[static_cast<std::size_t>(n.feature)] < n.threshold;
  const std::size_t hot = go_left ? left : right;
  const std::size_t cold = go_left ? right : left;
  require(n.cover > 0, "shap: zero-cover node in model");

  double incoming_zero = 1.0, incoming_one = 1.0;
  unsigned path_index = 0;
  for (; path_index <= depth; ++path_index) {
    if (path[path_index].feature_index == n.feature) break;
  }
  unsigned d = depth;
  if (path_index != depth + 1) {
    incoming_zero = path[path_index].zero_fraction;
    incoming_one = path[path_index].one_fraction;
    unwind_path(path, d, path_index);
    --d;
  }
  const double hot_zero = tree.nodes[hot].cover / n.cover;
  const double cold_zero = tree.nodes[cold].cover / n.cover;
  tree_shap_recurse(tree, x, phi, hot, d + 1, path, hot_zero * incoming_zero,
                    incoming_one, n.feature);
  tree_shap_recurse(tree, x, phi, cold, d + 1, path, cold_zero * incoming_zero,
                    0.0, n.feature);
}

inline unsigned tree_depth(const GbtTree& tree, std::size_t node = 0) {
  const GbtNode& n = tree.nodes[node];
  if (n.leaf) return 0;
  return 1 + std::max(tree_depth(tree, static_cast<std::size_t>(n.left)),
                      tree_depth(tree, static_cast<std::size_t>(n.right)));
}

}  // namespace detail

/// Exact path-dependent Shapley values for one prediction: the classic
/// polynomial-time recursion over decision paths, with cover-weighted
/// conditional expectations, summed over the ensemble's active trees.
inline Attribution shap_values(const TreeEnsemble& e,
                               const std::vector<double>& x) {
  require(x.size() == e.feature_count, "shap_values: feature-count mismatch");
  Attribution a;
  a.phi0 = e.base_margin;
  a.phi.assign(e.feature_count, 0.0);
  for (int t = 0; t <= e.best_round; ++t) {
    const GbtTree& tree = e.trees[static_cast<std::size_t>(t)];
    const std::vector<double> expectations = detail::node_expectations(tree);
    a.phi0 += expectations[0];
    const unsigned depth = detail::tree_depth(tree) + 2;
    std::vector<detail::PathElement> storage(
        static_cast<std::size_t>(depth) * (depth + 1));
    detail::tree_shap_recurse(tree, x.data(), a.phi, 0, 0, storage.data(), 1.0,
                              1.0, -1);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

namespace detail {

/// Tree expectation conditioned on the features in `fixed` taking x's values;
/// all other splits average over children by cover.
inline double conditional_expectation(const GbtTree& tree, std::size_t node,
                                      const std::vector<double>& x,
                                      std::uint32_t fixed) {
  const GbtNode& n = tree.nodes[node];
  if (n.leaf) return n.weight;
  const auto left = static_cast<std::size_t>(n.left);
  const auto right = static_cast<std::size_t>(n.right);
  if (fixed & (1u << static_cast<unsigned>(n.feature))) {
    const std::size_t next =
        x[static_cast<std::size_t>(n.feature)] < n.threshold ? left : right;
    return conditional_expectation(tree, next, x, fixed);
  }
  const double cl = tree.nodes[left].cover;
  const double cr = tree.nodes[right].cover;
  require(cl > 0 && cr > 0, "shap: zero-cover node in model");
  return (cl * conditional_expectation(tree, left, x, fixed) +
          cr * conditional_expectation(tree, right, x, fixed)) /
         (cl + cr);
}

}  // namespace detail

/// Textbook Shapley values by enumerating all 2^M feature subsets with the
/// same cover-weighted conditional-expectation game. Verification oracle;
/// feasible only for featureCount <= 12.
inline Attribution brute_force_shap(const TreeEnsemble& e,
                                    const std::vector<double>& x) {
  require(x.size() == e.feature_count, "brute_force_shap: feature-count mismatch");
  const std::size_t m = e.feature_count;
  require(m <= 12, "brute_force_shap: featureCount must be <= 12");

  const auto n_subsets = static_cast<std::uint32_t>(1u << m);
  std::vector<double> value(n_subsets, e.base_margin);
  for (int t = 0; t <= e.best_round; ++t) {
    const GbtTree& tree = e.trees[static_cast<std::size_t>(t)];
    for (std::uint32_t s = 0; s < n_subsets; ++s) {
      value[s] += detail::conditional_expectation(tree, 0, x, s);
    }
  }

  std::vector<double> factorial(m + 1, 1.0);
  for (std::size_t i = 1; i <= m; ++i) {
    factorial[i] = factorial[i - 1] * static_cast<double>(i);
  }

  Attribution a;
  a.phi0 = value[0];
  a.phi.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto bit = static_cast<std::uint32_t>(1u << j);
    for (std::uint32_t s = 0; s < n_subsets; ++s) {
      if (s & bit) continue;
      const auto s_size = static_cast<std::size_t>(std::popcount(s));
      const double weight = factorial[s_size] * factorial[m - s_size - 1] /
                            factorial[m];
      a.phi[j] += weight * (value[s | bit] - value[s]);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Cross-validated ranking
// ---------------------------------------------------------------------------

struct FeatureRanking {
  std::vector<double> mean_abs_shap;  // per feature, averaged over folds
  std::vector<std::size_t> order;     // feature indices, descending value
  std::size_t fold_count = 0;
};

/// Mean |SHAP| per feature on each fold's rows, averaged across folds.
/// `fold_rows` holds, per fold, the rows attribution is evaluated on.
inline FeatureRanking rank_features(const std::vector<TreeEnsemble>& fold_models,
                                    const Matrix& x,
                                    const std::vector<std::vector<std::size_t>>& fold_rows) {
  require(!fold_models.empty(), "rank_features: no fold models");
  require(fold_models.size() == fold_rows.size(),
          "rank_features: folds/models mismatch");
  const std::size_t m = fold_models[0].feature_count;
  FeatureRanking r;
  r.fold_count = fold_models.size();
  r.mean_abs_shap.assign(m, 0.0);

  std::vector<double> row(m);
  for (std::size_t f = 0; f < fold_models.size(); ++f) {
    require(fold_models[f].feature_count == m,
            "rank_features: feature-count mismatch across folds");
    require(!fold_rows[f].empty(), "rank_features: empty fold row set");
    std::vector<double> fold_mean(m, 0.0);
    for (const std::size_t i : fold_rows[f]) {
      require(i < x.n_rows, "rank_features: row index out of range");
      std::copy(x.row(i), x.row(i) + m, row.begin());
      const Attribution a = shap_values(fold_models[f], row);
      for (std::size_t j = 0; j < m; ++j) fold_mean[j] += std::fabs(a.phi[j]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      r.mean_abs_shap[j] +=
          fold_mean[j] / static_cast<double>(fold_rows[f].size());
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    r.mean_abs_shap[j] /= static_cast<double>(r.fold_count);
  }

  r.order.resize(m);
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&r](std::size_t a_, std::size_t b_) {
                     return r.mean_abs_shap[a_] > r.mean_abs_shap[b_];
                   });
  return r;
}

/// Top-k feature indices; stable sort already breaks ties by registry order.
inline std::vector<std::size_t> select_top_k(const FeatureRanking& r,
                                             std::size_t k) {
  require(k <= r.order.size(), "select_top_k: k exceeds feature count");
  return {r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(k)};
}

}  // namespace calciomics
