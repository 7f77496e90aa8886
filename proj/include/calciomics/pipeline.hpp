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
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "calciomics/common.hpp"
#include "calciomics/csv.hpp"
#include "calciomics/features.hpp"
#include "calciomics/gbt.hpp"
#include "calciomics/rng.hpp"
#include "calciomics/shap.hpp"
#include "calciomics/stats.hpp"

namespace calciomics {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct CvConfig {
  int k = 5;
  int repeats = 1;
  bool stratified = true;
  double threshold = 0.5;  // operating point for thresholded metrics
  std::uint64_t seed = 1;

  void validate() const {
    require(k >= 2, "CvConfig: k must be >= 2");
    require(repeats >= 1, "CvConfig: repeats must be >= 1");
    require(threshold > 0 && threshold < 1,
            "CvConfig: threshold must be in (0,1)");
  }
};

enum class ModelId { kM1 = 1, kM2 = 2, kM3 = 3 };

inline const char* model_name(ModelId id) {
  switch (id) {
    case ModelId::kM1: return "M1";
    case ModelId::kM2: return "M2";
    case ModelId::kM3: return "M3";
  }
  fail("model_name: unknown model id");
}

inline ModelId parse_model_id(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (s == "M1") return ModelId::kM1;
  if (s == "M2") return ModelId::kM2;
  if (s == "M3") return ModelId::kM3;
  fail("unknown model id (expected one of m1, m2, m3): " + s);
}

struct ModelSpec {
  ModelId id = ModelId::kM3;
  std::size_t shap_top_k = 10;
};

// ---------------------------------------------------------------------------
// Experiment input
// ---------------------------------------------------------------------------

struct ExperimentData {
  FeatureRegistry registry;
  Matrix x;  // n rows, registry.size() columns
  std::vector<int> y;
  std::vector<std::string> patient_ids;
  // Per-row per-lesion masses; required for models that use the mass
  // histogram features, whose bin edges must be refit inside each fold.
  std::vector<std::vector<double>> lesion_masses;
  bool has_masses = false;

  void validate() const {
    require(x.n_cols == registry.size(), "ExperimentData: column count mismatch");
    require(x.n_rows == y.size() && x.n_rows == patient_ids.size(),
            "ExperimentData: row count mismatch");
    require(x.n_rows >= 2, "ExperimentData: need at least two rows");
    if (has_masses) {
      require(lesion_masses.size() == x.n_rows,
              "ExperimentData: masses row count mismatch");
    }
    for (double v : x.v) {
      require(std::isfinite(v), "ExperimentData: non-finite feature value");
    }
    std::set<std::string> seen;
    for (const std::string& id : patient_ids) {
      require(!id.empty(), "ExperimentData: empty patient id");
      require(seen.insert(id).second,
              "ExperimentData: duplicate patient id: " + id);
    }
    for (int label : y) {
      require(label == 0 || label == 1, "ExperimentData: labels must be 0/1");
    }
  }
};

// ---------------------------------------------------------------------------
// Fold assignment
// ---------------------------------------------------------------------------

struct FoldAssignment {
  std::vector<int> fold;  // per row, in the caller's row order
  std::vector<std::string> warnings;
};

/// Splits rows into k mutually exclusive, exhaustive folds. Rows are
/// canonicalized by patient id before shuffling, so fold membership is a
/// function of (patient id, label, seed, repeat) and survives any
/// permutation of the input rows. Stratified mode shuffles each class
/// separately and deals round-robin, keeping per-fold class counts within
/// one patient of each other.
inline FoldAssignment kfold_split(const std::vector<int>& labels,
                                  const std::vector<std::string>& ids,
                                  const CvConfig& cfg, int repeat = 0) {
  cfg.validate();
  require(labels.size() == ids.size(), "kfold_split: labels/ids mismatch");
  const std::size_t n = labels.size();
  require(n >= static_cast<std::size_t>(cfg.k),
          "kfold_split: fewer rows than folds");
  require(repeat >= 0 && repeat < cfg.repeats, "kfold_split: repeat out of range");

  std::vector<std::size_t> canon(n);
  std::iota(canon.begin(), canon.end(), std::size_t{0});
  std::sort(canon.begin(), canon.end(), [&ids](std::size_t a, std::size_t b) {
    return ids[a] < ids[b];
  });
  for (std::size_t i = 1; i < n; ++i) {
    require(ids[canon[i - 1]] != ids[canon[i]],
            "kfold_split: duplicate patient id: " + ids[canon[i]]);
  }

  Rng rng = Rng(cfg.seed).derive("folds").derive(static_cast<std::uint64_t>(repeat));
  FoldAssignment out;
  out.fold.assign(n, -1);

  auto deal = [&out, &rng, &cfg](std::vector<std::size_t>& pool) {
    rng.shuffle(pool);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      out.fold[pool[i]] = static_cast<int>(i % static_cast<std::size_t>(cfg.k));
    }
  };

  if (cfg.stratified) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
      (labels[canon[i]] ? pos : neg).push_back(canon[i]);
    }
    deal(pos);
    deal(neg);
  } else {
    deal(canon);
  }

  std::vector<std::size_t> fold_pos(static_cast<std::size_t>(cfg.k), 0);
  std::vector<std::size_t> fold_neg(static_cast<std::size_t>(cfg.k), 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto f = static_cast<std::size_t>(out.fold[i]);
    (labels[i] ? fold_pos[f] : fold_neg[f]) += 1;
  }
  for (int f = 0; f < cfg.k; ++f) {
    auto fi = static_cast<std::size_t>(f);
    if (fold_pos[fi] == 0 || fold_neg[fi] == 0) {
      out.warnings.push_back("fold " + std::to_string(f) +
                             " lacks one class; AUROC on it is undefined");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment results
// ---------------------------------------------------------------------------

struct FoldRecord {
  int repeat = 0;
  int fold = 0;
  // Original row indices; train_rows canonically ordered by patient id,
  // ascending-sorted copy kept for the leakage assertions.
  std::vector<std::size_t> train_rows, test_rows;
  std::vector<std::size_t> train_rows_sorted;
  HistogramSpec hist;
  bool hist_fitted = false;
  std::vector<std::size_t> feature_cols;  // registry indices, ascending
  TreeEnsemble model;
  std::vector<RoundLog> log;
  std::string stop_reason;

  std::size_t n_test = 0, n_test_pos = 0;
  double auroc = 0, auprc = 0;
  double precision = 0, sensitivity = 0, specificity = 0, accuracy = 0, f1 = 0;
};

struct MetricStat {
  std::string name;
  double mean = 0, sd = 0;
  std::vector<double> values;  // one per fold x repeat
};

struct MetricsSummary {
  std::vector<MetricStat> metrics;
  std::size_t fold_count = 0;
  bool pooled_auc = false;  // false: AUROC/AUPRC averaged over folds
  const MetricStat& metric(const std::string& name) const {
    for (const MetricStat& m : metrics) {
      if (m.name == name) return m;
    }
    fail("MetricsSummary: unknown metric: " + name);
  }
};

struct ExperimentResult {
  ModelSpec spec;
  CvConfig cv;
  TrainConfig train;
  std::vector<FoldRecord> folds;            // k * repeats entries
  std::vector<std::vector<int>> assignments;  // per repeat, per row
  std::vector<double> oof;                  // per row, mean over repeats
  std::vector<int> labels;
  std::vector<std::string> ids;
  MetricsSummary summary;
  // Mean |SHAP| per registry feature on fold training rows, averaged over
  // folds; features never offered to a fold's model contribute 0 there.
  std::vector<double> ranking_mean_abs_shap;
  std::vector<std::string> warnings;
};

namespace detail {

/// Registry columns a model may see. M1: clinical; M2: + Agatston;
/// M3: + every remaining (calcium-omics) feature as a selection candidate.
inline void model_scope(const FeatureRegistry& registry, ModelId id,
                        std::vector<std::size_t>* base,
                        std::vector<std::size_t>* candidates) {
  base->clear();
  candidates->clear();
  for (const std::string& name : clinical_feature_names()) {
    base->push_back(registry.index_of(name));
  }
  if (id == ModelId::kM1) return;
  base->push_back(registry.index_of("AgatstonScore2D"));
  std::sort(base->begin(), base->end());
  if (id == ModelId::kM2) return;
  std::vector<bool> in_base(registry.size(), false);
  for (std::size_t c : *base) in_base[c] = true;
  for (std::size_t c = 0; c < registry.size(); ++c) {
    if (!in_base[c]) candidates->push_back(c);
  }
}

inline std::uint64_t fold_fingerprint(const std::vector<std::string>& ids,
                                      const std::vector<std::size_t>& rows) {
  std::vector<std::string> sorted;
  sorted.reserve(rows.size());
  for (std::size_t r : rows) sorted.push_back(ids[r]);
  std::sort(sorted.begin(), sorted.end());
  std::uint64_t h = fnv1a64("train-fold");
  for (const std::string& id : sorted) {
    h = fnv1a64(id.data(), id.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

inline void assert_disjoint(const std::vector<std::size_t>& train_sorted,
                            const std::vector<std::size_t>& test_rows,
                            const std::string& artifact) {
  for (std::size_t t : test_rows) {
    require(!std::binary_search(train_sorted.begin(), train_sorted.end(), t),
            "leakage guard: " + artifact + " was fitted on test row " +
                std::to_string(t));
  }
}

inline Matrix gather(const Matrix& x, const std::vector<std::size_t>& rows,
                     const std::vector<std::size_t>& cols) {
  Matrix out;
  out.n_rows = rows.size();
  out.n_cols = cols.size();
  out.v.resize(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = x.row(rows[i]);
    double* dst = &out.v[i * cols.size()];
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

inline std::vector<int> gather_labels(const std::vector<int>& y,
                                      const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(y[r]);
  return out;
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Each call must
/// write only to its own slot; exceptions are rethrown on the caller.
template <typename Fn>
inline void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, jobs <= 1 ? 1 : static_cast<std::size_t>(jobs));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

/// Cross-validated training and evaluation of one model specification.
/// Every fitted artifact (histogram edges, selected features, trained model)
/// is derived from the fold's training rows only; the evaluation step
/// re-asserts train/test disjointness before scoring.
inline ExperimentResult run_experiment(const ExperimentData& data,
                                       const ModelSpec& spec,
                                       const CvConfig& cv,
                                       const TrainConfig& train_cfg,
                                       int jobs = 1) {
  data.validate();
  cv.validate();
  train_cfg.validate();
  require(spec.shap_top_k >= 1, "ModelSpec: shapTopK must be >= 1");

  const std::size_t n = data.x.n_rows;

  std::vector<std::size_t> base_cols, candidate_cols;
  detail::model_scope(data.registry, spec.id, &base_cols, &candidate_cols);

  // Which massHist columns sit in this model's scope; those must be refit
  // per fold from the raw lesion masses.
  std::vector<std::size_t> hist_cols;
  for (int b = 1; b <= HistogramSpec::kBins; ++b) {
    const std::size_t c = data.registry.index_of("massHist" + std::to_string(b));
    if (std::find(candidate_cols.begin(), candidate_cols.end(), c) !=
        candidate_cols.end()) {
      hist_cols.push_back(c);
    }
  }
  const bool needs_masses = !hist_cols.empty();
  require(!needs_masses || data.has_masses,
          "run_experiment: model scope includes mass-histogram features but "
          "no per-lesion masses were provided");

  ExperimentResult result;
  result.spec = spec;
  result.cv = cv;
  result.train = train_cfg;
  result.labels = data.y;
  result.ids = data.patient_ids;
  result.folds.resize(static_cast<std::size_t>(cv.k) *
                      static_cast<std::size_t>(cv.repeats));
  result.oof.assign(n, 0.0);

  std::vector<std::vector<double>> oof_per_repeat(
      static_cast<std::size_t>(cv.repeats), std::vector<double>(n, 0.0));

  for (int r = 0; r < cv.repeats; ++r) {
    FoldAssignment assignment = kfold_split(data.y, data.patient_ids, cv, r);
    for (const std::string& w : assignment.warnings) {
      result.warnings.push_back("repeat " + std::to_string(r) + ": " + w);
    }
    result.assignments.push_back(assignment.fold);
  }

  // Canonical row order (by patient id): matrices handed to training are
  // assembled in this order, which makes every fold artifact — and hence
  // every metric — invariant to the order rows arrived in.
  std::vector<std::size_t> canon(n);
  std::iota(canon.begin(), canon.end(), std::size_t{0});
  std::sort(canon.begin(), canon.end(), [&data](std::size_t a, std::size_t b) {
    return data.patient_ids[a] < data.patient_ids[b];
  });

  detail::parallel_for(
      result.folds.size(), jobs,
      [&](std::size_t task) {
        const int r = static_cast<int>(task) / cv.k;
        const int f = static_cast<int>(task) % cv.k;
        const std::vector<int>& fold_of = result.assignments[static_cast<std::size_t>(r)];

        FoldRecord rec;
        rec.repeat = r;
        rec.fold = f;
        for (std::size_t ci : canon) {
          (fold_of[ci] == f ? rec.test_rows : rec.train_rows).push_back(ci);
        }
        require(!rec.train_rows.empty() && !rec.test_rows.empty(),
                "run_experiment: empty train or test fold");
        rec.train_rows_sorted = rec.train_rows;
        std::sort(rec.train_rows_sorted.begin(), rec.train_rows_sorted.end());

        // Fold-local working copy of the rows we will touch. Only the mass
        // histogram columns differ from the input table, and only when the
        // model scope includes them.
        Matrix x_work = data.x;
        if (needs_masses) {
          std::vector<double> train_masses;
          for (std::size_t row : rec.train_rows) {
            train_masses.insert(train_masses.end(),
                                data.lesion_masses[row].begin(),
                                data.lesion_masses[row].end());
          }
          rec.hist = fit_histogram_spec(train_masses, f, rec.train_rows_sorted);
          rec.hist_fitted = true;
          for (std::size_t row = 0; row < n; ++row) {
            const auto counts = mass_hist(data.lesion_masses[row], rec.hist);
            for (std::size_t b = 0; b < hist_cols.size(); ++b) {
              x_work.at(row, hist_cols[b]) = static_cast<double>(counts[b]);
            }
          }
        }

        // Shared inner split: the last 20% of the shuffled training rows
        // drive early stopping (and SHAP selection sees the same partition).
        std::vector<std::size_t> perm = rec.train_rows;
        Rng inner_rng = Rng(cv.seed)
                            .derive("inner-split")
                            .derive(static_cast<std::uint64_t>(r))
                            .derive(static_cast<std::uint64_t>(f));
        inner_rng.shuffle(perm);
        const std::size_t n_train = perm.size();
        const auto n_valid = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n_train))));
        require(n_valid < n_train,
                "run_experiment: training fold too small for an inner split");
        const std::vector<std::size_t> inner_train(perm.begin(),
                                                   perm.end() - static_cast<std::ptrdiff_t>(n_valid));
        const std::vector<std::size_t> inner_valid(perm.end() - static_cast<std::ptrdiff_t>(n_valid),
                                                   perm.end());

        TrainConfig fold_cfg = train_cfg;
        fold_cfg.seed = Rng(train_cfg.seed)
                            .derive("train")
                            .derive(static_cast<std::uint64_t>(r))
                            .derive(static_cast<std::uint64_t>(f))
                            .next_u64();

        // Feature selection (M3): rank every candidate by mean |SHAP| of a
        // selection model trained on this fold's training rows only.
        rec.feature_cols = base_cols;
        if (!candidate_cols.empty()) {
          std::vector<std::size_t> all_cols = base_cols;
          all_cols.insert(all_cols.end(), candidate_cols.begin(),
                          candidate_cols.end());
          std::sort(all_cols.begin(), all_cols.end());
          const Matrix sx_train = detail::gather(x_work, inner_train, all_cols);
          const Matrix sx_valid = detail::gather(x_work, inner_valid, all_cols);
          const TrainOutput sel = train_gbt(sx_train,
                                            detail::gather_labels(data.y, inner_train),
                                            sx_valid,
                                            detail::gather_labels(data.y, inner_valid),
                                            fold_cfg);
          std::vector<double> mean_abs(all_cols.size(), 0.0);
          const Matrix sx_all = detail::gather(x_work, rec.train_rows, all_cols);
          for (std::size_t i = 0; i < sx_all.n_rows; ++i) {
            std::vector<double> row(sx_all.row(i), sx_all.row(i) + all_cols.size());
            const Attribution a = shap_values(sel.model, row);
            for (std::size_t j = 0; j < mean_abs.size(); ++j) {
              mean_abs[j] += std::fabs(a.phi[j]);
            }
          }
          for (double& v : mean_abs) v /= static_cast<double>(sx_all.n_rows);

          std::vector<std::size_t> cand_pos;  // positions of candidates in all_cols
          for (std::size_t j = 0; j < all_cols.size(); ++j) {
            if (std::find(base_cols.begin(), base_cols.end(), all_cols[j]) ==
                base_cols.end()) {
              cand_pos.push_back(j);
            }
          }
          std::stable_sort(cand_pos.begin(), cand_pos.end(),
                           [&mean_abs](std::size_t a, std::size_t b) {
                             return mean_abs[a] > mean_abs[b];
                           });
          const std::size_t take = std::min(spec.shap_top_k, cand_pos.size());
          for (std::size_t j = 0; j < take; ++j) {
            rec.feature_cols.push_back(all_cols[cand_pos[j]]);
          }
          std::sort(rec.feature_cols.begin(), rec.feature_cols.end());
        }

        // Final model on the selected columns, same inner split.
        const Matrix fx_train = detail::gather(x_work, inner_train, rec.feature_cols);
        const Matrix fx_valid = detail::gather(x_work, inner_valid, rec.feature_cols);
        TrainOutput trained = train_gbt(fx_train,
                                        detail::gather_labels(data.y, inner_train),
                                        fx_valid,
                                        detail::gather_labels(data.y, inner_valid),
                                        fold_cfg);
        rec.model = std::move(trained.model);
        rec.log = std::move(trained.log);
        rec.stop_reason = trained.stop_reason;
        rec.model.registry_hash = data.registry.hash();
        for (std::size_t c : rec.feature_cols) {
          rec.model.feature_names.push_back(data.registry.features[c].name);
        }

        // Evaluation on the held-out fold, behind the leakage assertions.
        detail::assert_disjoint(rec.train_rows_sorted, rec.test_rows,
                                "trained model");
        if (rec.hist_fitted) {
          require(rec.hist.fitted_fold == f,
                  "leakage guard: histogram spec fitted for a different fold");
          detail::assert_disjoint(rec.hist.training_rows, rec.test_rows,
                                  "histogram spec");
        }
        std::vector<double> test_scores;
        std::vector<int> test_labels;
        for (std::size_t row : rec.test_rows) {
          std::vector<double> feat(rec.feature_cols.size());
          const double* src = x_work.row(row);
          for (std::size_t j = 0; j < rec.feature_cols.size(); ++j) {
            feat[j] = src[rec.feature_cols[j]];
          }
          const double proba = rec.model.predict_proba(feat);
          test_scores.push_back(proba);
          test_labels.push_back(data.y[row]);
          oof_per_repeat[static_cast<std::size_t>(r)][row] = proba;
        }
        rec.n_test = rec.test_rows.size();
        rec.n_test_pos = static_cast<std::size_t>(
            std::count(test_labels.begin(), test_labels.end(), 1));
        rec.auroc = auroc(test_scores, test_labels);
        rec.auprc = auprc(test_scores, test_labels);
        const ClassificationMetrics cm =
            classification_metrics(test_scores, test_labels, cv.threshold);
        rec.precision = cm.precision;
        rec.sensitivity = cm.sensitivity;
        rec.specificity = cm.specificity;
        rec.accuracy = cm.accuracy;
        rec.f1 = cm.f1;

        result.folds[task] = std::move(rec);
      });

  for (std::size_t row = 0; row < n; ++row) {
    double s = 0;
    for (int r = 0; r < cv.repeats; ++r) {
      s += oof_per_repeat[static_cast<std::size_t>(r)][row];
    }
    result.oof[row] = s / static_cast<double>(cv.repeats);
  }

  // Fold-averaged metric summary.
  const std::vector<std::pair<std::string, double FoldRecord::*>> metric_fields = {
      {"auroc", &FoldRecord::auroc},
      {"auprc", &FoldRecord::auprc},
      {"precision", &FoldRecord::precision},
      {"sensitivity", &FoldRecord::sensitivity},
      {"specificity", &FoldRecord::specificity},
      {"accuracy", &FoldRecord::accuracy},
      {"f1", &FoldRecord::f1}};
  result.summary.fold_count = result.folds.size();
  for (const auto& [name, field] : metric_fields) {
    MetricStat stat;
    stat.name = name;
    for (const FoldRecord& fr : result.folds) stat.values.push_back(fr.*field);
    const auto cnt = static_cast<double>(stat.values.size());
    stat.mean = std::accumulate(stat.values.begin(), stat.values.end(), 0.0) / cnt;
    if (stat.values.size() > 1) {
      double ss = 0;
      for (double v : stat.values) ss += (v - stat.mean) * (v - stat.mean);
      stat.sd = std::sqrt(ss / (cnt - 1.0));
    }
    result.summary.metrics.push_back(std::move(stat));
  }

  // Report-level ranking: per-fold mean |SHAP| on the fold's training rows,
  // mapped back to registry indices and averaged over folds.
  result.ranking_mean_abs_shap.assign(data.registry.size(), 0.0);
  for (const FoldRecord& fr : result.folds) {
    // Rebuild the fold's working matrix view for its selected columns.
    std::vector<double> mean_abs(fr.feature_cols.size(), 0.0);
    for (std::size_t row : fr.train_rows) {
      std::vector<double> feat(fr.feature_cols.size());
      const double* src = data.x.row(row);
      for (std::size_t j = 0; j < fr.feature_cols.size(); ++j) {
        feat[j] = src[fr.feature_cols[j]];
      }
      if (fr.hist_fitted) {
        const auto counts = mass_hist(data.lesion_masses[row], fr.hist);
        for (std::size_t b = 0; b < hist_cols.size(); ++b) {
          const auto it = std::find(fr.feature_cols.begin(),
                                    fr.feature_cols.end(), hist_cols[b]);
          if (it != fr.feature_cols.end()) {
            feat[static_cast<std::size_t>(it - fr.feature_cols.begin())] =
                static_cast<double>(counts[b]);
          }
        }
      }
      const Attribution a = shap_values(fr.model, feat);
      for (std::size_t j = 0; j < mean_abs.size(); ++j) {
        mean_abs[j] += std::fabs(a.phi[j]);
      }
    }
    for (std::size_t j = 0; j < fr.feature_cols.size(); ++j) {
      result.ranking_mean_abs_shap[fr.feature_cols[j]] +=
          mean_abs[j] / static_cast<double>(fr.train_rows.size());
    }
  }
  for (double& v : result.ranking_mean_abs_shap) {
    v /= static_cast<double>(result.folds.size());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct ModelComparison {
  std::string model_a, model_b;
  DelongResult delong;
  std::size_t mcnemar_b = 0, mcnemar_c = 0;  // discordant pair counts
  double mcnemar_statistic = 0;
  double mcnemar_p = 1;
};

/// Paired comparison of two runs over the same data and fold assignments:
/// DeLong on the pooled out-of-fold scores, McNemar on the thresholded
/// out-of-fold predictions.
inline ModelComparison compare_models(const ExperimentResult& a,
                                      const ExperimentResult& b) {
  require(a.ids == b.ids && a.labels == b.labels,
          "compare_models: runs cover different patients");
  require(a.assignments == b.assignments,
          "compare_models: fold assignments differ");
  require(a.cv.threshold == b.cv.threshold,
          "compare_models: operating thresholds differ");
  ModelComparison out;
  out.model_a = model_name(a.spec.id);
  out.model_b = model_name(b.spec.id);
  out.delong = delong_test(a.oof, b.oof, a.labels);
  for (std::size_t i = 0; i < a.oof.size(); ++i) {
    const bool correct_a = (a.oof[i] >= a.cv.threshold) == (a.labels[i] == 1);
    const bool correct_b = (b.oof[i] >= b.cv.threshold) == (b.labels[i] == 1);
    if (correct_a && !correct_b) ++out.mcnemar_b;
    if (!correct_a && correct_b) ++out.mcnemar_c;
  }
  const auto disc_b = static_cast<long>(out.mcnemar_b);
  const auto disc_c = static_cast<long>(out.mcnemar_c);
  if (disc_b + disc_c > 0) {
    const double num = std::fabs(static_cast<double>(disc_b - disc_c)) - 1.0;
    out.mcnemar_statistic = num * num / static_cast<double>(disc_b + disc_c);
  }
  out.mcnemar_p = mcnemar(disc_b, disc_c, true);
  return out;
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json train_config_json(const TrainConfig& t) {
  nlohmann::json j;
  j["learningRate"] = t.learning_rate;
  j["maxDepth"] = t.max_depth;
  j["minChildWeight"] = t.min_child_weight;
  j["subsample"] = t.subsample_rows;
  j["colsampleByTree"] = t.colsample_by_tree;
  j["alpha"] = t.l1_alpha;
  j["lambda"] = t.l2_lambda;
  j["gamma"] = t.min_split_gain;
  j["maxRounds"] = t.max_rounds;
  j["earlyStopPatience"] = t.early_stop_patience;
  j["seed"] = t.seed;
  return j;
}

/// Descriptive full-data logistic companion table for one run. Columns with
/// (near) zero variance are dropped; a failed fit (e.g. separation) yields
/// an explanatory comment instead of rows.
inline void write_regression_rows(CsvWriter* csv, const ExperimentResult& run,
                                  const ExperimentData& data) {
  std::vector<std::size_t> cols;
  {
    // Features used: scope base plus (for selecting models) every feature
    // chosen in more than half of the folds.
    std::vector<std::size_t> base, candidates;
    model_scope(data.registry, run.spec.id, &base, &candidates);
    std::vector<std::size_t> votes(data.registry.size(), 0);
    for (const FoldRecord& fr : run.folds) {
      for (std::size_t c : fr.feature_cols) ++votes[c];
    }
    cols = base;
    for (std::size_t c : candidates) {
      if (votes[c] * 2 > run.folds.size()) cols.push_back(c);
    }
    std::sort(cols.begin(), cols.end());
  }
  std::vector<std::size_t> kept;
  for (std::size_t c : cols) {
    double mn = data.x.at(0, c), mx = mn;
    for (std::size_t i = 1; i < data.x.n_rows; ++i) {
      mn = std::min(mn, data.x.at(i, c));
      mx = std::max(mx, data.x.at(i, c));
    }
    if (mx - mn > 1e-12) kept.push_back(c);
  }
  if (kept.empty()) {
    csv->write_comment(std::string("regression skipped (") +
                       model_name(run.spec.id) + "): no varying features");
    return;
  }
  Matrix xr;
  xr.n_rows = data.x.n_rows;
  xr.n_cols = kept.size();
  xr.v.resize(xr.n_rows * xr.n_cols);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < kept.size(); ++j) {
    names.push_back(data.registry.features[kept[j]].name);
    for (std::size_t i = 0; i < xr.n_rows; ++i) {
      xr.at(i, j) = data.x.at(i, kept[j]);
    }
  }
  try {
    const RegressionResult fit = logistic_fit(xr, data.y, names);
    for (const RegressionTerm& t : fit.terms) {
      csv->write_row({model_name(run.spec.id), t.name, format_double(t.odds_ratio),
                      format_double(t.ci_low), format_double(t.ci_high),
                      format_double(t.p)});
    }
  } catch (const Error& e) {
    csv->write_comment(std::string("regression skipped (") +
                       model_name(run.spec.id) + "): " + e.what());
  }
}

}  // namespace detail

/// Writes the full report bundle into `dir`: fold metrics, Table-2-shaped
/// summary, pooled ROC/PR curves, SHAP ranking, logistic companion table,
/// out-of-fold scores, per-fold models and training logs, and a manifest
/// sufficient to reproduce everything byte-for-byte.
inline void emit_report(const std::vector<ExperimentResult>& runs,
                        const std::vector<ModelComparison>& comparisons,
                        const ExperimentData& data, const std::string& dir) {
  require(!runs.empty(), "emit_report: no runs");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, "cannot create directory: " + dir);
  fs::create_directories(dir + "/models", ec);
  require(!ec, "cannot create directory: " + dir + "/models");
  fs::create_directories(dir + "/logs", ec);
  require(!ec, "cannot create directory: " + dir + "/logs");

  {
    CsvWriter csv(dir + "/metrics_summary.csv");
    std::vector<std::string> header = {"model"};
    for (const MetricStat& m : runs[0].summary.metrics) {
      header.push_back(m.name + "Mean");
      header.push_back(m.name + "Sd");
    }
    csv.write_row(header);
    for (const ExperimentResult& run : runs) {
      std::vector<std::string> row = {model_name(run.spec.id)};
      for (const MetricStat& m : run.summary.metrics) {
        row.push_back(format_double(m.mean));
        row.push_back(format_double(m.sd));
      }
      csv.write_row(row);
    }
  }

  {
    CsvWriter csv(dir + "/metrics_folds.csv");
    csv.write_row({"model", "repeat", "fold", "nTest", "nTestPos", "bestRound",
                   "stopReason", "auroc", "auprc", "precision", "sensitivity",
                   "specificity", "accuracy", "f1"});
    for (const ExperimentResult& run : runs) {
      for (const FoldRecord& fr : run.folds) {
        csv.write_row({model_name(run.spec.id), std::to_string(fr.repeat),
                       std::to_string(fr.fold), std::to_string(fr.n_test),
                       std::to_string(fr.n_test_pos),
                       std::to_string(fr.model.best_round), fr.stop_reason,
                       format_double(fr.auroc), format_double(fr.auprc),
                       format_double(fr.precision), format_double(fr.sensitivity),
                       format_double(fr.specificity), format_double(fr.accuracy),
                       format_double(fr.f1)});
      }
    }
  }

  {
    CsvWriter roc(dir + "/roc_points.csv");
    roc.write_row({"model", "fpr", "tpr"});
    CsvWriter pr(dir + "/pr_points.csv");
    pr.write_row({"model", "recall", "precision"});
    for (const ExperimentResult& run : runs) {
      for (const RocPoint& p : roc_points(run.oof, run.labels)) {
        roc.write_row({model_name(run.spec.id), format_double(p.fpr),
                       format_double(p.tpr)});
      }
      for (const PrPoint& p : pr_points(run.oof, run.labels)) {
        pr.write_row({model_name(run.spec.id), format_double(p.recall),
                      format_double(p.precision)});
      }
    }
  }

  {
    CsvWriter csv(dir + "/ranking.csv");
    csv.write_row({"model", "rank", "feature", "meanAbsShap"});
    for (const ExperimentResult& run : runs) {
      std::vector<std::size_t> order(data.registry.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&run](std::size_t a, std::size_t b) {
                         return run.ranking_mean_abs_shap[a] >
                                run.ranking_mean_abs_shap[b];
                       });
      std::size_t rank = 1;
      for (std::size_t c : order) {
        if (run.ranking_mean_abs_shap[c] <= 0) continue;
        csv.write_row({model_name(run.spec.id), std::to_string(rank),
                       data.registry.features[c].name,
                       format_double(run.ranking_mean_abs_shap[c])});
        ++rank;
      }
    }
  }

  {
    CsvWriter csv(dir + "/regression.csv");
    csv.write_row({"model", "term", "oddsRatio", "ciLow", "ciHigh", "pValue"});
    for (const ExperimentResult& run : runs) {
      detail::write_regression_rows(&csv, run, data);
    }
  }

  {
    CsvWriter csv(dir + "/oof_scores.csv");
    csv.write_row({"model", "patientId", "label", "score"});
    for (const ExperimentResult& run : runs) {
      for (std::size_t i = 0; i < run.oof.size(); ++i) {
        csv.write_row({model_name(run.spec.id), run.ids[i],
                       std::to_string(run.labels[i]), format_double(run.oof[i])});
      }
    }
  }

  if (!comparisons.empty()) {
    CsvWriter csv(dir + "/comparisons.csv");
    csv.write_row({"modelA", "modelB", "aucA", "aucB", "delongZ", "delongP",
                   "mcnemarB", "mcnemarC", "mcnemarStatistic", "mcnemarP"});
    for (const ModelComparison& c : comparisons) {
      csv.write_row({c.model_a, c.model_b, format_double(c.delong.auc_a),
                     format_double(c.delong.auc_b), format_double(c.delong.z),
                     format_double(c.delong.p),
                     std::to_string(c.mcnemar_b), std::to_string(c.mcnemar_c),
                     format_double(c.mcnemar_statistic),
                     format_double(c.mcnemar_p)});
    }
  }

  for (const ExperimentResult& run : runs) {
    for (const FoldRecord& fr : run.folds) {
      const std::string stem = std::string(model_name(run.spec.id)) + "-rep" +
                               std::to_string(fr.repeat) + "-fold" +
                               std::to_string(fr.fold);
      save_model(fr.model, dir + "/models/" + stem + ".json");
      CsvWriter log(dir + "/logs/" + stem + ".csv");
      log.write_row({"round", "trainLogloss", "validAUC"});
      for (const RoundLog& rl : fr.log) {
        log.write_row({std::to_string(rl.round), format_double(rl.train_logloss),
                       format_double(rl.valid_auc)});
      }
    }
  }

  nlohmann::json manifest;
  manifest["kind"] = "calciomics-run-manifest";
  manifest["registry"] = {{"version", data.registry.version},
                          {"hash", data.registry.hash()}};
  manifest["nPatients"] = data.x.n_rows;
  manifest["cv"] = {{"k", runs[0].cv.k},
                    {"repeats", runs[0].cv.repeats},
                    {"stratified", runs[0].cv.stratified},
                    {"threshold", runs[0].cv.threshold},
                    {"seed", runs[0].cv.seed}};
  manifest["train"] = detail::train_config_json(runs[0].train);
  manifest["aucAggregation"] =
      runs[0].summary.pooled_auc ? "pooled" : "fold-averaged";
  nlohmann::json models = nlohmann::json::array();
  for (const ExperimentResult& run : runs) {
    nlohmann::json m;
    m["id"] = model_name(run.spec.id);
    m["shapTopK"] = run.spec.shap_top_k;
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldRecord& fr : run.folds) {
      nlohmann::json fj;
      fj["repeat"] = fr.repeat;
      fj["fold"] = fr.fold;
      fj["bestRound"] = fr.model.best_round;
      fj["stopReason"] = fr.stop_reason;
      fj["trainingFingerprint"] =
          to_hex(detail::fold_fingerprint(run.ids, fr.train_rows));
      nlohmann::json feats = nlohmann::json::array();
      for (std::size_t c : fr.feature_cols) {
        feats.push_back(data.registry.features[c].name);
      }
      fj["features"] = feats;
      if (fr.hist_fitted) {
        nlohmann::json edges = nlohmann::json::array();
        for (double e : fr.hist.edges) edges.push_back(e);
        fj["massHistEdges"] = edges;
      }
      folds.push_back(fj);
    }
    m["folds"] = folds;
    nlohmann::json metrics;
    for (const MetricStat& s : run.summary.metrics) {
      metrics[s.name] = {{"mean", s.mean}, {"sd", s.sd}};
    }
    m["metrics"] = metrics;
    nlohmann::json warn = nlohmann::json::array();
    for (const std::string& w : run.warnings) warn.push_back(w);
    m["warnings"] = warn;
    models.push_back(m);
  }
  manifest["models"] = models;
  nlohmann::json assignments = nlohmann::json::array();
  for (const std::vector<int>& a : runs[0].assignments) {
    assignments.push_back(a);
  }
  manifest["foldAssignments"] = assignments;
  if (!comparisons.empty()) {
    nlohmann::json comps = nlohmann::json::array();
    for (const ModelComparison& c : comparisons) {
      comps.push_back({{"modelA", c.model_a},
                       {"modelB", c.model_b},
                       {"delongP", c.delong.p},
                       {"mcnemarP", c.mcnemar_p}});
    }
    manifest["comparisons"] = comps;
  }
  std::ofstream mf(dir + "/manifest.json", std::ios::binary);
  require(mf.good(), "cannot open for writing: " + dir + "/manifest.json");
  mf << manifest.dump(2) << '\n';
  require(mf.good(), "write failure on manifest.json");
}

}  // namespace calciomics
