#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hnrfs/pipeline.hpp"
#include "hnrfs/tables.hpp"
#include "json.hpp"

namespace hnrfs {

/// Everything a run needs. Loaded from JSON; unknown keys are rejected and
/// relative paths resolve against the config file's directory.
struct PipelineConfig {
  std::filesystem::path volumes_dir;
  std::filesystem::path reference_dir;
  std::filesystem::path clinical_csv;
  std::filesystem::path feature_dir;
  std::filesystem::path output_dir = "hnrfs_out";

  double d_max_mm = kDefaultDMaxMm;
  bool resample = true;
  Point3 target_spacing = Point3::Constant(2.0);
  ExtractionSettings extraction{};

  int outer_k = 5;
  int inner_k = 5;
  int repeats = 100;
  std::uint64_t seed = 2022;
  bool stratify_events = false;

  std::size_t clinical_cap = kClinicalCap;
  std::size_t radiomics_cap = kRadiomicsCap;
  double screen_threshold = 0.5;
  double correlation_threshold = 0.9;
  double epsilon = 1e-4;
  TieMethod ties = TieMethod::efron;

  FusionMode fusion = FusionMode::standardized;
  bool radiomics = true;
  double stratification_threshold = 0.0;

  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// FNV-1a over the canonical JSON, excluding the output directory.
  std::string hash() const;
  void validate() const;
  SelectionSettings selection_settings(Modality m) const;
  Provenance provenance() const;
};

/// Failure inside a named pipeline stage, optionally for one patient.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string patient, const std::string& message);
  const std::string& stage() const { return stage_; }
  const std::string& patient() const { return patient_; }

 private:
  std::string stage_;
  std::string patient_;
};

struct DiceRow {
  double gtvp_before = 0.0, gtvp_after = 0.0;
  double gtvn_before = 0.0, gtvn_after = 0.0;
};

struct PostprocessRow {
  std::string patient_id;
  RemovalReport report;
  NodeStatistics stats;
  std::optional<DiceRow> dice;
};

struct Cohort {
  FeatureTable clinical;
  std::optional<FeatureTable> ct;
  std::optional<FeatureTable> pet;
  std::vector<LabelRow> labels;
  std::vector<PostprocessRow> postprocess;
};

/// Post-processing, node statistics, resampling and radiomics for every
/// patient in the clinical CSV. Volumes are <id>__mask.nii, <id>__CT.nii
/// and <id>__PT.nii under volumes_dir; references (optional) are
/// <id>__mask.nii under reference_dir.
Cohort build_cohort_from_volumes(const PipelineConfig& config);

/// Reads clinical_features.csv, labels.csv and, when present,
/// ct_features.csv / pet_features.csv from a directory.
Cohort load_cohort_from_features(const std::filesystem::path& dir, bool radiomics = true);

struct ModelResults {
  std::map<Modality, ModalityModel> models;
  std::vector<RiskRow> risks;  // in label order
};

ModelResults build_models(const Cohort& cohort, const PipelineConfig& config);

struct Evaluation {
  /// Keys: clinical, ct, pet, fused. Empty when undefined.
  std::map<std::string, std::optional<double>> cindex;
  std::map<std::string, GroupComparison> groups;
};

/// C-index per score column and threshold stratification with KM/log-rank.
/// Modality columns are transformed as they enter fusion before
/// thresholding; the fused column uses the stored risk groups.
Evaluation evaluate_risks(std::span<const RiskRow> risks, std::span<const LabelRow> labels,
                          FusionMode mode, double threshold);

nlohmann::json to_json(const SelectionReport& r);
nlohmann::json to_json(const GroupComparison& g);
nlohmann::json to_json(const LogRankResult& r);
nlohmann::json to_json(const PostprocessRow& r);
nlohmann::json cindex_json(const Evaluation& e);
nlohmann::json groups_json(const Evaluation& e);
std::vector<NamedCurve> km_curves(const Evaluation& e);

/// Tracks files written by a command so they can be removed on failure.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir);
  std::filesystem::path file(const std::string& name);
  void rollback() noexcept;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
};

void write_cohort(const Cohort& cohort, OutputSet& out, const Provenance& prov);
void write_models(const ModelResults& results, const Cohort& cohort, OutputSet& out,
                  const Provenance& prov);

/// features -> models -> fusion -> stratification -> evaluation, with every
/// artifact written to config.output_dir. Removes partial outputs on error.
nlohmann::json run_pipeline(const PipelineConfig& config);

}  // namespace hnrfs
