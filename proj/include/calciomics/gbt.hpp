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
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "calciomics/common.hpp"
#include "calciomics/rng.hpp"
#include "calciomics/stats.hpp"

namespace calciomics {

struct TrainConfig {
  double learning_rate = 0.05;
  int max_depth = 3;
  double min_child_weight = 3.0;  // Hessian mass per leaf
  double subsample_rows = 0.6;
  double colsample_by_tree = 0.75;
  double l1_alpha = 0.5;
  double l2_lambda = 5.0;
  double min_split_gain = 0.5;  // gamma
  int max_rounds = 1000;
  int early_stop_patience = 30;
  std::uint64_t seed = 1;

  void validate() const {
    require(learning_rate > 0 && learning_rate <= 1,
            "TrainConfig: learningRate must be in (0,1]");
    require(max_depth >= 1, "TrainConfig: maxDepth must be >= 1");
    require(min_child_weight >= 0, "TrainConfig: minChildWeight must be >= 0");
    require(subsample_rows > 0 && subsample_rows <= 1,
            "TrainConfig: subsample must be in (0,1]");
    require(colsample_by_tree > 0 && colsample_by_tree <= 1,
            "TrainConfig: colsample must be in (0,1]");
    require(l1_alpha >= 0 && l2_lambda >= 0 && min_split_gain >= 0,
            "TrainConfig: alpha, lambda, gamma must be >= 0");
    require(max_rounds >= 0, "TrainConfig: maxRounds must be >= 0");
    require(early_stop_patience >= 1, "TrainConfig: patience must be >= 1");
  }
};

/// Flat node store; index 0 is the root. Internal nodes route
/// value < threshold to `left`, everything else (ties included) to `right`.
struct GbtNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0;
  int left = -1, right = -1;
  double weight = 0;  // leaf value, already scaled by the learning rate
  double cover = 0;   // Hessian sum of the rows that built this node
  double g_sum = 0;   // gradient sum of those rows (audit)
  double gain = 0;    // accepted split gain (internal nodes)
};

struct GbtTree {
  std::vector<GbtNode> nodes;

  double predict(const double* row) const {
    int idx = 0;
    while (!nodes[static_cast<std::size_t>(idx)].leaf) {
      const GbtNode& n = nodes[static_cast<std::size_t>(idx)];
      idx = row[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left
                                                                   : n.right;
    }
    return nodes[static_cast<std::size_t>(idx)].weight;
  }
  double predict(const std::vector<double>& row) const { return predict(row.data()); }
};

struct TreeEnsemble {
  static constexpr const char* kVersion = "gbt-json-v1";
  double base_margin = 0;
  int best_round = -1;  // prediction uses trees[0 .. best_round]
  std::size_t feature_count = 0;
  std::string registry_hash;
  std::vector<std::string> feature_names;  // optional; column order when set
  std::vector<GbtTree> trees;

  double predict_margin(const double* row) const {
    double margin = base_margin;
    for (int t = 0; t <= best_round; ++t) {
      margin += trees[static_cast<std::size_t>(t)].predict(row);
    }
    return margin;
  }
  double predict_margin(const std::vector<double>& row) const {
    require(row.size() == feature_count, "predict: feature-count mismatch");
    return predict_margin(row.data());
  }
  double predict_proba(const std::vector<double>& row) const {
    return sigmoid(predict_margin(row));
  }
};

struct RoundLog {
  int round = 0;
  double train_logloss = 0;
  double valid_auc = 0;
};

struct TrainOutput {
  TreeEnsemble model;
  std::vector<RoundLog> log;
  std::string stop_reason;
};

namespace detail {

/// L1 soft-thresholding of the gradient sum.
inline double soft_threshold(double g, double alpha) {
  if (g > alpha) return g - alpha;
  if (g < -alpha) return g + alpha;
  return 0.0;
}

inline double leaf_score(double g, double h, double alpha, double lambda) {
  const double s = soft_threshold(g, alpha);
  return s * s / (h + lambda);
}

struct SplitCandidate {
  bool found = false;
  int feature = -1;
  double threshold = 0;
  double gain = 0;
  double g_left = 0, h_left = 0;
};

}  // namespace detail

/// Trains a boosted ensemble for the binary logistic objective with exact
/// greedy splits. Early stopping tracks validation AUROC; the returned model
/// is truncated at the best round.
inline TrainOutput train_gbt(const Matrix& x_train, const std::vector<int>& y_train,
                             const Matrix& x_valid, const std::vector<int>& y_valid,
                             const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = x_train.n_rows;
  const std::size_t m = x_train.n_cols;
  require(n > 0 && m > 0, "train_gbt: empty training table");
  require(y_train.size() == n, "train_gbt: labels/rows mismatch");
  require(x_valid.n_cols == m, "train_gbt: validation feature-count mismatch");
  require(y_valid.size() == x_valid.n_rows, "train_gbt: validation labels mismatch");
  for (double v : x_train.v) require(std::isfinite(v), "train_gbt: NaN in X");
  for (double v : x_valid.v) require(std::isfinite(v), "train_gbt: NaN in valid X");
  std::size_t n_pos = 0;
  for (int y : y_train) {
    require(y == 0 || y == 1, "train_gbt: labels must be 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  require(n_pos > 0 && n_pos < n, "train_gbt: degenerate labels");
  for (int y : y_valid) require(y == 0 || y == 1, "train_gbt: labels must be 0/1");

  TrainOutput out;
  TreeEnsemble& model = out.model;
  model.feature_count = m;
  const double prevalence = static_cast<double>(n_pos) / static_cast<double>(n);
  model.base_margin = logit_clamped(prevalence);

  // Global per-feature presort (ties by row index) shared by every node.
  std::vector<std::vector<std::uint32_t>> sorted_by_feature(m);
  for (std::size_t f = 0; f < m; ++f) {
    auto& order = sorted_by_feature[f];
    order.resize(n);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&x_train, f](std::uint32_t a, std::uint32_t b) {
                       return x_train.at(a, f) < x_train.at(b, f);
                     });
  }

  std::vector<double> margin_train(n, model.base_margin);
  std::vector<double> margin_valid(x_valid.n_rows, model.base_margin);
  std::vector<double> grad(n), hess(n);
  std::vector<char> in_sample(n), in_node(n);

  const auto n_sampled = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.subsample_rows *
                                               static_cast<double>(n))));
  const auto n_cols = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.colsample_by_tree *
                                               static_cast<double>(m))));

  Rng master(cfg.seed);
  const Rng row_stream = master.derive("row-subsample");
  const Rng col_stream = master.derive("col-subsample");

  double best_auc = -1.0;
  int best_round = -1;
  out.stop_reason = "max rounds reached";

  for (int round = 0; round < cfg.max_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(margin_train[i]);
      grad[i] = p - static_cast<double>(y_train[i]);
      hess[i] = p * (1.0 - p);
    }

    std::fill(in_sample.begin(), in_sample.end(), 0);
    if (n_sampled == n) {
      std::fill(in_sample.begin(), in_sample.end(), 1);
    } else {
      Rng rng = row_stream.derive(static_cast<std::uint64_t>(round));
      for (std::size_t i : rng.sample_without_replacement(n, n_sampled)) {
        in_sample[i] = 1;
      }
    }
    std::vector<std::size_t> columns;
    if (n_cols == m) {
      columns.resize(m);
      std::iota(columns.begin(), columns.end(), 0);
    } else {
      Rng rng = col_stream.derive(static_cast<std::uint64_t>(round));
      columns = rng.sample_without_replacement(m, n_cols);
      std::sort(columns.begin(), columns.end());
    }

    double root_g = 0, root_h = 0;
    std::vector<std::uint32_t> root_rows;
    root_rows.reserve(n_sampled);
    for (std::size_t i = 0; i < n; ++i) {
      if (!in_sample[i]) continue;
      root_rows.push_back(static_cast<std::uint32_t>(i));
      root_g += grad[i];
      root_h += hess[i];
    }
    if (root_h < cfg.min_child_weight) {
      out.stop_reason = "root Hessian mass below minChildWeight";
      break;
    }

    GbtTree tree;
    // Depth-first growth with an explicit stack of (node index, rows, depth).
    struct Pending {
      int node;
      std::vector<std::uint32_t> rows;
      double g, h;
      int depth;
    };
    tree.nodes.push_back({});
    {
      GbtNode& root = tree.nodes[0];
      root.cover = root_h;
      root.g_sum = root_g;
    }
    std::vector<Pending> stack;
    stack.push_back({0, std::move(root_rows), root_g, root_h, 0});

    while (!stack.empty()) {
      Pending node = std::move(stack.back());
      stack.pop_back();

      detail::SplitCandidate best;
      if (node.depth < cfg.max_depth) {
        std::fill(in_node.begin(), in_node.end(), 0);
        for (std::uint32_t r : node.rows) in_node[r] = 1;
        const double parent_score =
            detail::leaf_score(node.g, node.h, cfg.l1_alpha, cfg.l2_lambda);
        for (const std::size_t f : columns) {
          double g_left = 0, h_left = 0;
          double prev_value = 0;
          bool have_prev = false;
          for (const std::uint32_t r : sorted_by_feature[f]) {
            if (!in_node[r]) continue;
            const double value = x_train.at(r, f);
            if (have_prev && value > prev_value) {
              // Candidate boundary between two distinct adjacent values.
              const double h_right = node.h - h_left;
              if (h_left >= cfg.min_child_weight &&
                  h_right >= cfg.min_child_weight) {
                const double g_right = node.g - g_left;
                const double gain =
                    0.5 * (detail::leaf_score(g_left, h_left, cfg.l1_alpha,
                                              cfg.l2_lambda) +
                           detail::leaf_score(g_right, h_right, cfg.l1_alpha,
                                              cfg.l2_lambda) -
                           parent_score) -
                    cfg.min_split_gain;
                if (gain > 0 && gain > best.gain) {
                  best.found = true;
                  best.feature = static_cast<int>(f);
                  best.threshold = prev_value + (value - prev_value) / 2.0;
                  best.gain = gain;
                  best.g_left = g_left;
                  best.h_left = h_left;
                }
              }
            }
            g_left += grad[r];
            h_left += hess[r];
            prev_value = value;
            have_prev = true;
          }
        }
      }

      GbtNode& cur = tree.nodes[static_cast<std::size_t>(node.node)];
      if (!best.found) {
        cur.leaf = true;
        cur.weight = -detail::soft_threshold(node.g, cfg.l1_alpha) /
                     (node.h + cfg.l2_lambda) * cfg.learning_rate;
        continue;
      }
      cur.leaf = false;
      cur.feature = best.feature;
      cur.threshold = best.threshold;
      cur.gain = best.gain;

      std::vector<std::uint32_t> left_rows, right_rows;
      left_rows.reserve(node.rows.size());
      right_rows.reserve(node.rows.size());
      for (const std::uint32_t r : node.rows) {
        if (x_train.at(r, static_cast<std::size_t>(best.feature)) <
            best.threshold) {
          left_rows.push_back(r);
        } else {
          right_rows.push_back(r);
        }
      }
      const int left_idx = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      const int right_idx = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      // cur may be dangling after push_back; re-fetch.
      GbtNode& cur2 = tree.nodes[static_cast<std::size_t>(node.node)];
      cur2.left = left_idx;
      cur2.right = right_idx;
      tree.nodes[static_cast<std::size_t>(left_idx)].cover = best.h_left;
      tree.nodes[static_cast<std::size_t>(left_idx)].g_sum = best.g_left;
      tree.nodes[static_cast<std::size_t>(right_idx)].cover = node.h - best.h_left;
      tree.nodes[static_cast<std::size_t>(right_idx)].g_sum = node.g - best.g_left;
      stack.push_back({right_idx, std::move(right_rows), node.g - best.g_left,
                       node.h - best.h_left, node.depth + 1});
      stack.push_back({left_idx, std::move(left_rows), best.g_left, best.h_left,
                       node.depth + 1});
    }

    model.trees.push_back(std::move(tree));
    const GbtTree& grown = model.trees.back();
    for (std::size_t i = 0; i < n; ++i) {
      margin_train[i] += grown.predict(x_train.row(i));
    }
    for (std::size_t i = 0; i < x_valid.n_rows; ++i) {
      margin_valid[i] += grown.predict(x_valid.row(i));
    }

    RoundLog rl;
    rl.round = round;
    double ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = margin_train[i];
      const double softplus =
          std::max(eta, 0.0) + std::log1p(std::exp(-std::fabs(eta)));
      ll += softplus - static_cast<double>(y_train[i]) * eta;
    }
    rl.train_logloss = ll / static_cast<double>(n);
    rl.valid_auc = auroc(margin_valid, y_valid);
    out.log.push_back(rl);

    if (rl.valid_auc > best_auc) {
      best_auc = rl.valid_auc;
      best_round = round;
    }
    if (round - best_round >= cfg.early_stop_patience) {
      out.stop_reason = "early stopping";
      break;
    }
  }

  model.best_round = best_round;
  model.trees.resize(static_cast<std::size_t>(best_round + 1));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json ensemble_to_json(const TreeEnsemble& e) {
  nlohmann::json j;
  j["version"] = TreeEnsemble::kVersion;
  j["baseMargin"] = e.base_margin;
  j["bestRound"] = e.best_round;
  j["featureCount"] = e.feature_count;
  j["registryHash"] = e.registry_hash;
  if (!e.feature_names.empty()) j["featureNames"] = e.feature_names;
  nlohmann::json trees = nlohmann::json::array();
  for (const GbtTree& t : e.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const GbtNode& n : t.nodes) {
      nlohmann::json node;
      node["leaf"] = n.leaf;
      node["cover"] = n.cover;
      node["gsum"] = n.g_sum;
      if (n.leaf) {
        node["weight"] = n.weight;
      } else {
        node["feature"] = n.feature;
        node["threshold"] = n.threshold;
        node["left"] = n.left;
        node["right"] = n.right;
        node["gain"] = n.gain;
      }
      nodes.push_back(node);
    }
    trees.push_back(nlohmann::json{{"nodes", nodes}});
  }
  j["trees"] = trees;
  return j;
}

inline TreeEnsemble ensemble_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.value("version", "") == TreeEnsemble::kVersion,
          "model JSON: missing or mismatched version");
  TreeEnsemble e;
  try {
    e.base_margin = j.at("baseMargin").get<double>();
    e.best_round = j.at("bestRound").get<int>();
    e.feature_count = j.at("featureCount").get<std::size_t>();
    e.registry_hash = j.at("registryHash").get<std::string>();
    if (j.contains("featureNames")) {
      e.feature_names = j.at("featureNames").get<std::vector<std::string>>();
      require(e.feature_names.size() == e.feature_count,
              "model JSON: featureNames length != featureCount");
    }
    for (const nlohmann::json& tj : j.at("trees")) {
      GbtTree t;
      for (const nlohmann::json& nj : tj.at("nodes")) {
        GbtNode n;
        n.leaf = nj.at("leaf").get<bool>();
        n.cover = nj.at("cover").get<double>();
        n.g_sum = nj.at("gsum").get<double>();
        if (n.leaf) {
          n.weight = nj.at("weight").get<double>();
        } else {
          n.feature = nj.at("feature").get<int>();
          n.threshold = nj.at("threshold").get<double>();
          n.left = nj.at("left").get<int>();
          n.right = nj.at("right").get<int>();
          n.gain = nj.at("gain").get<double>();
        }
        t.nodes.push_back(n);
      }
      require(!t.nodes.empty(), "model JSON: empty tree");
      e.trees.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(std::string("model JSON: corrupt payload: ") + ex.what());
  }
  require(e.best_round >= -1 &&
              e.best_round + 1 <= static_cast<int>(e.trees.size()),
          "model JSON: bestRound out of range");
  return e;
}

inline void save_model(const TreeEnsemble& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  out << ensemble_to_json(e).dump(2) << '\n';
  require(out.good(), "write failure on " + path);
}

inline TreeEnsemble load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open for reading: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded(), "model JSON: parse failure in " + path);
  return ensemble_from_json(j);
}

}  // namespace calciomics
