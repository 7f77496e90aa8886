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
 *
 * calciomics: coronary calcium scoring, calcium-omics feature extraction,
 * and cross-validated prognosis pipelines over CT volume files.
 */
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calciomics/agatston.hpp"
#include "calciomics/cohort.hpp"
#include "calciomics/common.hpp"
#include "calciomics/csv.hpp"
#include "calciomics/features.hpp"
#include "calciomics/gbt.hpp"
#include "calciomics/pipeline.hpp"
#include "calciomics/shap.hpp"
#include "calciomics/stats.hpp"
#include "calciomics/volume.hpp"

namespace {

using namespace calciomics;

std::string parent_dir(const std::string& path) {
  const std::filesystem::path p(path);
  const std::filesystem::path dir = p.parent_path();
  return dir.empty() ? std::string(".") : dir.string();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  out << content;
  require(out.good(), "write failure on " + path);
}

/// Every subcommand that produces files also records the configuration it
/// actually ran with, defaults included, beside its outputs.
void write_resolved_config(CLI::App* sub, const std::string& path) {
  write_text_file(path, sub->config_to_str(true, false));
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  require(out.good(), "write failure on " + path);
}

// ---------------------------------------------------------------------------
// Shared feature-table I/O
// ---------------------------------------------------------------------------

constexpr const char* kRegistryCommentPrefix = "# registry ";

struct FeatureTable {
  ExperimentData data;  // registry, x, y, ids (+ masses when provided)
};

/// Reads features.csv (and optionally masses.csv) back into memory,
/// verifying the registry fingerprint comment and the exact column layout.
FeatureTable read_feature_table(const std::string& features_path,
                                const std::string& masses_path) {
  FeatureTable t;
  t.data.registry = build_registry();

  {
    std::ifstream in(features_path, std::ios::binary);
    require(in.good(), "cannot open for reading: " + features_path);
    std::string first;
    std::getline(in, first);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    require(first.rfind(kRegistryCommentPrefix, 0) == 0,
            "feature table lacks the registry comment line: " + features_path);
    std::istringstream ss(first.substr(std::string(kRegistryCommentPrefix).size()));
    std::string version, hash;
    ss >> version >> hash;
    require(version == t.data.registry.version &&
                hash == t.data.registry.hash(),
            "feature table was built under a different feature registry: " +
                features_path);
  }

  const CsvTable csv = read_csv(features_path);
  require(csv.header.size() == 2 + t.data.registry.size(),
          "feature table has the wrong column count");
  require(csv.header[0] == "patientId" && csv.header[1] == "label",
          "feature table must start with patientId,label columns");
  for (std::size_t j = 0; j < t.data.registry.size(); ++j) {
    require(csv.header[j + 2] == t.data.registry.features[j].name,
            "feature column " + std::to_string(j + 2) + " is " +
                csv.header[j + 2] + ", expected " +
                t.data.registry.features[j].name);
  }
  require(!csv.rows.empty(), "feature table has no rows");

  t.data.x.n_rows = csv.rows.size();
  t.data.x.n_cols = t.data.registry.size();
  t.data.x.v.resize(t.data.x.n_rows * t.data.x.n_cols);
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const std::vector<std::string>& row = csv.rows[i];
    require(row.size() == csv.header.size(),
            "feature table row " + std::to_string(i + 1) + " is ragged");
    t.data.patient_ids.push_back(row[0]);
    const long label = parse_long(row[1]);
    require(label == 0 || label == 1, "label must be 0/1 for " + row[0]);
    t.data.y.push_back(static_cast<int>(label));
    for (std::size_t j = 0; j < t.data.registry.size(); ++j) {
      const double v = parse_double(row[j + 2]);
      require(std::isfinite(v), "non-finite feature value for " + row[0] +
                                    " in column " + csv.header[j + 2]);
      t.data.x.at(i, j) = v;
    }
  }

  if (!masses_path.empty()) {
    std::map<std::string, std::vector<double>> by_patient;
    const CsvTable mcsv = read_csv(masses_path);
    const std::size_t id_col = mcsv.column("patientId");
    const std::size_t mass_col = mcsv.column("mass");
    for (const std::vector<std::string>& row : mcsv.rows) {
      by_patient[row[id_col]].push_back(parse_double(row[mass_col]));
    }
    t.data.lesion_masses.resize(t.data.patient_ids.size());
    std::size_t matched = 0;
    for (std::size_t i = 0; i < t.data.patient_ids.size(); ++i) {
      const auto it = by_patient.find(t.data.patient_ids[i]);
      if (it != by_patient.end()) {
        t.data.lesion_masses[i] = it->second;
        ++matched;
      }
    }
    require(matched == by_patient.size(),
            "masses file names patients absent from the feature table");
    t.data.has_masses = true;
  }
  return t;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

void register_synth(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "synth", "Generate a synthetic cohort (volumes, masks, clinical table)");
  auto spec = std::make_shared<CohortSpec>();
  auto out_dir = std::make_shared<std::string>();
  sub->add_option("--out", *out_dir, "Output directory")->required();
  sub->add_option("--n", spec->n_patients, "Number of patients")
      ->capture_default_str();
  sub->add_option("--prevalence", spec->prevalence, "Target outcome prevalence")
      ->capture_default_str();
  sub->add_option("--seed", spec->seed, "Master RNG seed")->capture_default_str();
  sub->add_option("--age-mean", spec->age_mean, "Mean age")->capture_default_str();
  sub->add_option("--age-sd", spec->age_sd, "Age standard deviation")
      ->capture_default_str();
  sub->add_option("--female-rate", spec->female_rate, "P(female)")
      ->capture_default_str();
  sub->add_option("--diabetes-rate", spec->diabetes_rate, "P(diabetes)")
      ->capture_default_str();
  sub->add_option("--smoking-rate", spec->smoking_rate, "P(smoking)")
      ->capture_default_str();
  sub->add_option("--b-agatston", spec->b_agatston,
                  "Outcome weight on log1p(Agatston)")
      ->capture_default_str();
  sub->add_option("--b-num-art", spec->b_num_art,
                  "Outcome weight on the number of calcified arteries")
      ->capture_default_str();
  sub->add_option("--b-diabetes", spec->b_diabetes, "Outcome weight on diabetes")
      ->capture_default_str();
  sub->add_option("--b-female", spec->b_female, "Outcome weight on female")
      ->capture_default_str();
  sub->add_option("--nx", spec->dims.nx, "Grid size x")->capture_default_str();
  sub->add_option("--ny", spec->dims.ny, "Grid size y")->capture_default_str();
  sub->add_option("--nz", spec->dims.nz, "Grid size z")->capture_default_str();
  sub->add_option("--dx", spec->spacing.dx, "Voxel spacing x (mm)")
      ->capture_default_str();
  sub->add_option("--dy", spec->spacing.dy, "Voxel spacing y (mm)")
      ->capture_default_str();
  sub->add_option("--dz", spec->spacing.dz, "Voxel spacing z (mm)")
      ->capture_default_str();
  sub->add_option("--noise", spec->noise_sigma_hu, "Additive HU noise sigma")
      ->capture_default_str();
  sub->add_option("--mean-extra-lesions", spec->mean_extra_lesions,
                  "Mean lesion count above the guaranteed first lesion")
      ->capture_default_str();
  sub->add_option("--max-lesions", spec->max_lesions, "Lesion count cap")
      ->capture_default_str();
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, spec, out_dir] {
    const CohortResult cohort = generate_cohort(*spec);
    write_cohort(cohort, *out_dir);
    write_resolved_config(sub, *out_dir + "/synth_config.toml");
    std::size_t n_pos = 0, n_lesions = 0;
    for (const CohortPatient& p : cohort.patients) {
      n_pos += static_cast<std::size_t>(p.clinical.label);
      n_lesions += p.imaging.lesions.size();
    }
    std::cout << "wrote " << cohort.patients.size() << " patients ("
              << n_pos << " positive, " << n_lesions << " lesions) to "
              << *out_dir << "\n";
  });
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

void register_extract(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "extract", "Extract lesions, scores, and the feature table from a cohort");
  struct Args {
    std::string cohort_dir, out_features, out_masses, scores_dir;
    ExtractionConfig ecfg;
    ScoringConfig scfg;
    int jobs = 1;
  };
  auto a = std::make_shared<Args>();
  sub->add_option("--cohort", a->cohort_dir, "Cohort directory (from synth)")
      ->required();
  sub->add_option("--out", a->out_features, "Output feature CSV path")
      ->required();
  sub->add_option("--masses", a->out_masses,
                  "Per-lesion mass sidecar CSV (default: masses.csv beside --out)");
  sub->add_option("--scores-dir", a->scores_dir,
                  "Directory for per-patient score reports (default: scores/ beside --out)");
  sub->add_option("--threshold-hu", a->ecfg.threshold_hu,
                  "Calcification HU threshold")
      ->capture_default_str();
  sub->add_option("--connectivity", a->ecfg.connectivity,
                  "Voxel connectivity (6, 18, or 26)")
      ->capture_default_str();
  sub->add_option("--min-voxels", a->ecfg.min_lesion_voxels,
                  "Minimum voxels per lesion")
      ->capture_default_str();
  sub->add_option("--min-slice-area", a->scfg.min_slice_area_mm2,
                  "Minimum per-slice area (mm^2) contributing to the 2D score")
      ->capture_default_str();
  sub->add_option("--mass-calibration", a->scfg.mass_calibration,
                  "Mass units per (HU * mm^3)")
      ->capture_default_str();
  sub->add_option("--agatston-scale", a->scfg.agatston_scale,
                  "Slice-thickness rescaling factor")
      ->capture_default_str();
  sub->add_option("--jobs", a->jobs, "Per-patient parallelism")
      ->envname("CALCIOMICS_JOBS")
      ->capture_default_str();
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, a] {
    const std::string out_dir = parent_dir(a->out_features);
    if (a->out_masses.empty()) a->out_masses = out_dir + "/masses.csv";
    if (a->scores_dir.empty()) a->scores_dir = out_dir + "/scores";
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec, "cannot create directory: " + out_dir);
    std::filesystem::create_directories(a->scores_dir, ec);
    require(!ec, "cannot create directory: " + a->scores_dir);

    const CsvTable clin = read_csv(a->cohort_dir + "/clinical.csv");
    const std::size_t c_id = clin.column("patientId");
    const std::size_t c_age = clin.column("age");
    const std::size_t c_female = clin.column("female");
    const std::size_t c_diabetes = clin.column("diabetes");
    const std::size_t c_smoking = clin.column("smoking");
    const std::size_t c_label = clin.column("label");
    require(!clin.rows.empty(), "clinical table has no rows");

    const std::size_t n = clin.rows.size();
    struct PatientWork {
      ClinicalRecord clinical;
      Volume volume;
      std::vector<LesionComponent> lesions;
      PatientScores scores;
      std::vector<double> masses;
    };
    std::vector<PatientWork> work(n);

    detail::parallel_for(n, a->jobs, [&](std::size_t i) {
      const std::vector<std::string>& row = clin.rows[i];
      PatientWork& w = work[i];
      w.clinical.patient_id = row[c_id];
      w.clinical.age = parse_double(row[c_age]);
      w.clinical.female = static_cast<int>(parse_long(row[c_female]));
      w.clinical.diabetes = static_cast<int>(parse_long(row[c_diabetes]));
      w.clinical.smoking = static_cast<int>(parse_long(row[c_smoking]));
      w.clinical.label = static_cast<int>(parse_long(row[c_label]));
      w.clinical.validate();
      w.volume = load_volume(a->cohort_dir + "/" + w.clinical.patient_id + ".vol");
      const ArteryLabelMap mask =
          load_mask(a->cohort_dir + "/" + w.clinical.patient_id + ".mask");
      w.lesions = extract_lesions(w.volume, mask, a->ecfg);
      w.scores = aggregate_scores(w.lesions, w.volume, a->scfg);
      for (const ScoreBundle& b : w.scores.per_lesion) w.masses.push_back(b.mass);
    });

    // Mass-histogram bin edges fitted over the whole table. Cross-validated
    // consumers refit these inside each training fold from the sidecar.
    std::vector<double> all_masses;
    std::vector<std::size_t> all_rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      all_rows[i] = i;
      all_masses.insert(all_masses.end(), work[i].masses.begin(),
                        work[i].masses.end());
    }
    require(!all_masses.empty(),
            "no lesions anywhere in the cohort; cannot fit mass histogram");
    const HistogramSpec hist = fit_histogram_spec(all_masses, -1, all_rows);

    const FeatureRegistry registry = build_registry();
    CsvWriter features(a->out_features);
    features.write_comment("registry " + registry.version + " " +
                           registry.hash());
    std::vector<std::string> header = {"patientId", "label"};
    for (const FeatureDef& f : registry.features) header.push_back(f.name);
    features.write_row(header);

    CsvWriter masses_csv(a->out_masses);
    masses_csv.write_row({"patientId", "lesionIndex", "mass"});

    std::size_t total_lesions = 0;
    for (std::size_t i = 0; i < n; ++i) {
      PatientWork& w = work[i];
      const FeatureVector fv = assemble_features(w.clinical, w.lesions, w.volume,
                                                 a->scfg, hist, registry);
      std::vector<std::string> row = {w.clinical.patient_id,
                                      std::to_string(w.clinical.label)};
      for (double v : fv.values) row.push_back(format_double(v));
      features.write_row(row);
      for (std::size_t li = 0; li < w.masses.size(); ++li) {
        masses_csv.write_row({w.clinical.patient_id, std::to_string(li),
                              format_double(w.masses[li])});
      }
      write_json_file(a->scores_dir + "/" + w.clinical.patient_id + ".json",
                      score_report_json(w.clinical.patient_id, w.scores));
      total_lesions += w.lesions.size();
    }

    write_json_file(out_dir + "/registry.json", registry.to_json());
    write_resolved_config(sub, out_dir + "/extract_config.toml");
    std::cout << "extracted " << n << " patients, " << total_lesions
              << " lesions -> " << a->out_features << "\n";
  });
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

void register_run(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "run", "Cross-validated training, evaluation, and report bundle");
  struct Args {
    std::string features, masses, out_dir, model = "all";
    CvConfig cv;
    TrainConfig train;
    std::size_t top_k = 10;
    std::uint64_t seed = 1;
    int jobs = 1;
  };
  auto a = std::make_shared<Args>();
  sub->add_option("--features", a->features, "Feature CSV from extract")
      ->required();
  sub->add_option("--masses", a->masses,
                  "Per-lesion mass sidecar (required for m3)");
  sub->add_option("--out", a->out_dir, "Report output directory")->required();
  sub->add_option("--model", a->model, "m1, m2, m3, or all")
      ->capture_default_str();
  sub->add_option("--k", a->cv.k, "Cross-validation folds")->capture_default_str();
  sub->add_option("--repeats", a->cv.repeats, "Cross-validation repeats")
      ->capture_default_str();
  sub->add_flag("--stratified,!--no-stratified", a->cv.stratified,
                "Stratify folds by outcome")
      ->capture_default_str();
  sub->add_option("--threshold", a->cv.threshold,
                  "Operating threshold for classification metrics")
      ->capture_default_str();
  sub->add_option("--seed", a->seed, "Seed for folds, inner splits, and training")
      ->capture_default_str();
  sub->add_option("--top-k", a->top_k, "Calcium-omics features kept by SHAP (m3)")
      ->capture_default_str();
  sub->add_option("--eta", a->train.learning_rate, "Boosting learning rate")
      ->capture_default_str();
  sub->add_option("--max-depth", a->train.max_depth, "Tree depth cap")
      ->capture_default_str();
  sub->add_option("--min-child-weight", a->train.min_child_weight,
                  "Minimum Hessian mass per leaf")
      ->capture_default_str();
  sub->add_option("--subsample", a->train.subsample_rows, "Row subsample rate")
      ->capture_default_str();
  sub->add_option("--colsample", a->train.colsample_by_tree,
                  "Column subsample rate per tree")
      ->capture_default_str();
  sub->add_option("--alpha", a->train.l1_alpha, "L1 regularization")
      ->capture_default_str();
  sub->add_option("--lambda", a->train.l2_lambda, "L2 regularization")
      ->capture_default_str();
  sub->add_option("--gamma", a->train.min_split_gain, "Minimum split gain")
      ->capture_default_str();
  sub->add_option("--max-rounds", a->train.max_rounds, "Boosting round cap")
      ->capture_default_str();
  sub->add_option("--patience", a->train.early_stop_patience,
                  "Early-stopping patience (rounds)")
      ->capture_default_str();
  sub->add_option("--jobs", a->jobs, "Fold-level parallelism")
      ->envname("CALCIOMICS_JOBS")
      ->capture_default_str();
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, a] {
    a->cv.seed = a->seed;
    a->train.seed = a->seed;

    std::vector<ModelId> model_ids;
    if (a->model == "all") {
      model_ids = {ModelId::kM1, ModelId::kM2, ModelId::kM3};
    } else {
      model_ids = {parse_model_id(a->model)};
    }
    const bool wants_m3 =
        std::find(model_ids.begin(), model_ids.end(), ModelId::kM3) !=
        model_ids.end();
    const FeatureTable table =
        read_feature_table(a->features, wants_m3 ? a->masses : std::string());
    require(!wants_m3 || table.data.has_masses,
            "model m3 refits mass-histogram bins per fold; pass --masses");

    std::vector<ExperimentResult> runs;
    for (ModelId id : model_ids) {
      ModelSpec spec;
      spec.id = id;
      spec.shap_top_k = a->top_k;
      runs.push_back(run_experiment(table.data, spec, a->cv, a->train, a->jobs));
      const ExperimentResult& r = runs.back();
      std::cout << model_name(id) << ": auroc "
                << format_double(r.summary.metric("auroc").mean) << " +- "
                << format_double(r.summary.metric("auroc").sd) << ", auprc "
                << format_double(r.summary.metric("auprc").mean) << " +- "
                << format_double(r.summary.metric("auprc").sd) << "\n";
      for (const std::string& w : r.warnings) {
        std::cout << model_name(id) << " warning: " << w << "\n";
      }
    }
    std::vector<ModelComparison> comparisons;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      for (std::size_t j = i + 1; j < runs.size(); ++j) {
        comparisons.push_back(compare_models(runs[j], runs[i]));
        const ModelComparison& c = comparisons.back();
        std::cout << c.model_a << " vs " << c.model_b << ": delong p "
                  << format_double(c.delong.p) << ", mcnemar p "
                  << format_double(c.mcnemar_p) << "\n";
      }
    }
    emit_report(runs, comparisons, table.data, a->out_dir);
    write_resolved_config(sub, a->out_dir + "/run_config.toml");
    std::cout << "report bundle -> " << a->out_dir << "\n";
  });
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

nlohmann::json test_entry(const std::string& name, double statistic, double p,
                          nlohmann::json config) {
  nlohmann::json j;
  j["name"] = name;
  j["statistic"] = statistic;
  j["p"] = p;
  j["config"] = std::move(config);
  return j;
}

void register_stats(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "stats", "Association tests: a raw 2x2 table or a whole feature table");
  struct Args {
    std::string table, features, out;
  };
  auto a = std::make_shared<Args>();
  auto* topt = sub->add_option(
      "--table", a->table, "2x2 counts a,b,c,d (outcome rows, exposure columns)");
  auto* fopt =
      sub->add_option("--features", a->features, "Feature CSV from extract");
  topt->excludes(fopt);
  sub->add_option("--out", a->out, "Write the stats report JSON here");
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, a] {
    require(!a->table.empty() || !a->features.empty(),
            "stats: pass --table or --features");
    nlohmann::json report = nlohmann::json::array();

    if (!a->table.empty()) {
      std::vector<long> counts;
      std::stringstream ss(a->table);
      std::string cell;
      while (std::getline(ss, cell, ',')) counts.push_back(parse_long(cell));
      require(counts.size() == 4, "stats: --table needs exactly 4 counts");
      const Table2x2 t{counts[0], counts[1], counts[2], counts[3]};
      const nlohmann::json cfg = {{"table", counts}};
      const Chi2Result plain = chi2_2x2(t, false);
      const Chi2Result yates = chi2_2x2(t, true);
      const double fisher = fisher_exact(t);
      report.push_back(test_entry("chiSquare", plain.chi2, plain.p,
                                  {{"table", counts}, {"corrected", false}}));
      report.push_back(test_entry("chiSquareYates", yates.chi2, yates.p,
                                  {{"table", counts}, {"corrected", true}}));
      nlohmann::json fisher_entry;
      fisher_entry["name"] = "fisherExact";
      fisher_entry["statistic"] = nullptr;  // exact test; no test statistic
      fisher_entry["p"] = fisher;
      fisher_entry["config"] = cfg;
      report.push_back(fisher_entry);
      std::cout << "chiSquare: statistic " << format_double(plain.chi2)
                << ", p " << format_double(plain.p) << "\n";
      std::cout << "chiSquareYates: statistic " << format_double(yates.chi2)
                << ", p " << format_double(yates.p) << "\n";
      std::cout << "fisherExact: p " << format_double(fisher) << "\n";
    } else {
      const FeatureTable table = read_feature_table(a->features, "");
      const ExperimentData& d = table.data;
      for (std::size_t j = 0; j < d.registry.size(); ++j) {
        const std::string& name = d.registry.features[j].name;
        std::vector<double> pos, neg;
        bool binary = true;
        for (std::size_t i = 0; i < d.x.n_rows; ++i) {
          const double v = d.x.at(i, j);
          if (v != 0.0 && v != 1.0) binary = false;
          (d.y[i] ? pos : neg).push_back(v);
        }
        if (binary) {
          Table2x2 t{0, 0, 0, 0};
          for (double v : pos) (v == 1.0 ? t.a : t.b) += 1;
          for (double v : neg) (v == 1.0 ? t.c : t.d) += 1;
          if ((t.a + t.c) == 0 || (t.b + t.d) == 0) {
            report.push_back(test_entry(name + ".skipped", 0.0, 1.0,
                                        {{"reason", "constant feature"}}));
            continue;
          }
          const nlohmann::json counts = {t.a, t.b, t.c, t.d};
          const Chi2Result plain = chi2_2x2(t, false);
          const Chi2Result yates = chi2_2x2(t, true);
          report.push_back(test_entry(
              name + ".chiSquare", plain.chi2, plain.p,
              {{"table", counts}, {"corrected", false}}));
          report.push_back(test_entry(
              name + ".chiSquareYates", yates.chi2, yates.p,
              {{"table", counts}, {"corrected", true}}));
          nlohmann::json fe;
          fe["name"] = name + ".fisherExact";
          fe["statistic"] = nullptr;
          fe["p"] = fisher_exact(t);
          fe["config"] = {{"table", counts}};
          report.push_back(fe);
          std::cout << name << ": chiSquare p " << format_double(plain.p)
                    << ", yates p " << format_double(yates.p) << ", fisher p "
                    << format_double(fe["p"].get<double>()) << "\n";
        } else {
          // Normality screen on each class decides between the t-test and
          // the rank test.
          bool normal = pos.size() >= 3 && neg.size() >= 3;
          for (const std::vector<double>* cls : {&pos, &neg}) {
            if (cls->size() < 3 || cls->size() > 5000) continue;
            std::vector<double> sorted = *cls;
            std::sort(sorted.begin(), sorted.end());
            if (sorted.front() == sorted.back()) {
              normal = false;  // degenerate sample; Shapiro-Wilk undefined
              continue;
            }
            const ShapiroWilkResult sw = shapiro_wilk(*cls);
            const bool is_pos = (cls == &pos);
            report.push_back(test_entry(
                name + (is_pos ? ".shapiroWilk.positive" : ".shapiroWilk.negative"),
                sw.w, sw.p, {{"n", cls->size()}}));
            if (sw.p <= 0.05) normal = false;
          }
          if (normal) {
            const TTestResult tt = t_test(pos, neg, /*pooled=*/true);
            report.push_back(test_entry(name + ".tTest", tt.t, tt.p,
                                        {{"welch", false},
                                         {"nPositive", pos.size()},
                                         {"nNegative", neg.size()}}));
            std::cout << name << ": tTest p " << format_double(tt.p) << "\n";
          } else {
            const MannWhitneyResult mw = mann_whitney_u(pos, neg);
            report.push_back(test_entry(name + ".mannWhitney", mw.u, mw.p,
                                        {{"nPositive", pos.size()},
                                         {"nNegative", neg.size()}}));
            std::cout << name << ": mannWhitney p " << format_double(mw.p)
                      << "\n";
          }
        }
      }
    }

    if (!a->out.empty()) {
      write_json_file(a->out, report);
      write_resolved_config(sub, parent_dir(a->out) + "/stats_config.toml");
      std::cout << "stats report -> " << a->out << "\n";
    }
  });
}

// ---------------------------------------------------------------------------
// shap
// ---------------------------------------------------------------------------

void register_shap(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "shap", "Feature attribution ranking for a trained model");
  struct Args {
    std::string model, features, out;
    bool check_local_accuracy = false;
  };
  auto a = std::make_shared<Args>();
  sub->add_option("--model", a->model, "Model JSON path")->required();
  sub->add_option("--features", a->features, "Feature CSV from extract")
      ->required();
  sub->add_option("--out", a->out, "Output ranking CSV")->required();
  sub->add_flag("--check-local-accuracy", a->check_local_accuracy,
                "Verify phi0 + sum(phi) equals the margin on every row");
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, a] {
    const TreeEnsemble model = load_model(a->model);
    const FeatureTable table = read_feature_table(a->features, "");
    const ExperimentData& d = table.data;
    require(model.registry_hash.empty() ||
                model.registry_hash == d.registry.hash(),
            "model was trained under a different feature registry");

    // Map model columns onto feature-table columns.
    std::vector<std::size_t> cols;
    std::vector<std::string> names;
    if (!model.feature_names.empty()) {
      for (const std::string& fname : model.feature_names) {
        cols.push_back(d.registry.index_of(fname));
        names.push_back(fname);
      }
    } else {
      require(model.feature_count == d.registry.size(),
              "model has no feature names and its width differs from the table");
      for (std::size_t j = 0; j < d.registry.size(); ++j) {
        cols.push_back(j);
        names.push_back(d.registry.features[j].name);
      }
    }

    std::vector<double> mean_abs(cols.size(), 0.0);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < d.x.n_rows; ++i) {
      std::vector<double> row(cols.size());
      for (std::size_t j = 0; j < cols.size(); ++j) {
        row[j] = d.x.at(i, cols[j]);
      }
      const Attribution at = shap_values(model, row);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        mean_abs[j] += std::fabs(at.phi[j]);
      }
      if (a->check_local_accuracy) {
        const double margin = model.predict_margin(row);
        double sum = at.phi0;
        for (double v : at.phi) sum += v;
        require(std::fabs(sum - margin) <=
                    1e-9 * std::max(1.0, std::fabs(margin)),
                "local accuracy violated on row " + std::to_string(i + 1));
        ++checked;
      }
    }
    for (double& v : mean_abs) v /= static_cast<double>(d.x.n_rows);

    std::vector<std::size_t> order(cols.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&mean_abs](std::size_t x, std::size_t y) {
                       return mean_abs[x] > mean_abs[y];
                     });
    CsvWriter csv(a->out);
    csv.write_row({"rank", "feature", "meanAbsShap"});
    for (std::size_t r = 0; r < order.size(); ++r) {
      csv.write_row({std::to_string(r + 1), names[order[r]],
                     format_double(mean_abs[order[r]])});
    }
    write_resolved_config(sub, parent_dir(a->out) + "/shap_config.toml");
    if (a->check_local_accuracy) {
      std::cout << "local accuracy verified on " << checked << " rows\n";
    }
    std::cout << "ranking (" << order.size() << " features) -> " << a->out
              << "\n";
  });
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

void register_compare(CLI::App& app) {
  auto* sub = app.add_subcommand(
      "compare", "DeLong and McNemar comparison of two models' pooled "
                 "out-of-fold scores");
  struct Args {
    std::string oof, model_a, model_b, out;
    double threshold = 0.5;
  };
  auto a = std::make_shared<Args>();
  sub->add_option("--oof", a->oof, "oof_scores.csv from a run bundle")
      ->required();
  sub->add_option("--model-a", a->model_a, "First model name as in the CSV")
      ->required();
  sub->add_option("--model-b", a->model_b, "Second model name as in the CSV")
      ->required();
  sub->add_option("--threshold", a->threshold, "McNemar operating threshold")
      ->capture_default_str();
  sub->add_option("--out", a->out, "Write the comparison JSON here");
  sub->set_config("--config", "", "TOML config file");
  sub->allow_config_extras(CLI::config_extras_mode::error);

  sub->callback([sub, a] {
    const CsvTable csv = read_csv(a->oof);
    const std::size_t c_model = csv.column("model");
    const std::size_t c_id = csv.column("patientId");
    const std::size_t c_label = csv.column("label");
    const std::size_t c_score = csv.column("score");
    std::map<std::string, std::pair<int, double>> rows_a, rows_b;
    for (const std::vector<std::string>& row : csv.rows) {
      if (row[c_model] != a->model_a && row[c_model] != a->model_b) continue;
      auto& dst = (row[c_model] == a->model_a) ? rows_a : rows_b;
      const auto [it, fresh] = dst.emplace(
          row[c_id], std::make_pair(static_cast<int>(parse_long(row[c_label])),
                                    parse_double(row[c_score])));
      require(fresh, "duplicate out-of-fold row for " + row[c_id]);
    }
    require(!rows_a.empty(), "no rows for model " + a->model_a);
    require(!rows_b.empty(), "no rows for model " + a->model_b);
    require(rows_a.size() == rows_b.size(),
            "models cover different patient counts");
    std::vector<double> sa, sb;
    std::vector<int> labels;
    for (const auto& [id, la] : rows_a) {
      const auto it = rows_b.find(id);
      require(it != rows_b.end(), "patient " + id + " missing for model " +
                                      a->model_b);
      require(it->second.first == la.first,
              "label mismatch between models for patient " + id);
      labels.push_back(la.first);
      sa.push_back(la.second);
      sb.push_back(it->second.second);
    }
    const DelongResult dl = delong_test(sa, sb, labels);
    long disc_b = 0, disc_c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool ca = (sa[i] >= a->threshold) == (labels[i] == 1);
      const bool cb = (sb[i] >= a->threshold) == (labels[i] == 1);
      disc_b += (ca && !cb);
      disc_c += (!ca && cb);
    }
    const double mc_p = mcnemar(disc_b, disc_c, true);
    std::cout << a->model_a << " auc " << format_double(dl.auc_a) << ", "
              << a->model_b << " auc " << format_double(dl.auc_b) << "\n";
    std::cout << "delong: z " << format_double(dl.z) << ", p "
              << format_double(dl.p) << "\n";
    std::cout << "mcnemar: b " << disc_b << ", c " << disc_c << ", p "
              << format_double(mc_p) << "\n";
    if (!a->out.empty()) {
      nlohmann::json j;
      j["modelA"] = a->model_a;
      j["modelB"] = a->model_b;
      j["aucA"] = dl.auc_a;
      j["aucB"] = dl.auc_b;
      j["delong"] = {{"z", dl.z}, {"p", dl.p}, {"variance", dl.variance}};
      j["mcnemar"] = {{"b", disc_b}, {"c", disc_c}, {"p", mc_p},
                      {"threshold", a->threshold}};
      write_json_file(a->out, j);
      write_resolved_config(sub, parent_dir(a->out) + "/compare_config.toml");
      std::cout << "comparison -> " << a->out << "\n";
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "calciomics: coronary calcium scoring, calcium-omics features, and "
      "cross-validated ischemia-prognosis pipelines"};
  app.require_subcommand(1);
  register_synth(app);
  register_extract(app);
  register_run(app);
  register_stats(app);
  register_shap(app);
  register_compare(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const calciomics::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
