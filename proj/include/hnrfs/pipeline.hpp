#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnrfs/coxph.hpp"
#include "hnrfs/radiomics.hpp"
#include "hnrfs/survstat.hpp"
#include "hnrfs/volume.hpp"

namespace hnrfs {

/// Patients x named features for one modality.
struct FeatureTable {
  Modality modality = Modality::clinical;
  std::vector<std::string> patient_ids;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd values;

  /// Throws SchemaError on shape mismatch, duplicate ids or names, or
  /// non-finite values.
  void validate() const;
  Eigen::Index column(const std::string& name) const;
  std::optional<std::size_t> row(const std::string& patient_id) const;
  FeatureTable select_columns(std::span<const std::string> names) const;
  FeatureTable select_rows(std::span<const std::size_t> rows) const;
};

/// Raw clinical row. Status fields hold the source coding (1 positive,
/// 0 negative) and are empty when missing.
struct ClinicalRecord {
  std::string patient_id;
  std::optional<double> gender;  // 1 male, 0 female
  std::optional<double> age;
  std::optional<double> tobacco;
  std::optional<double> alcohol;
  std::optional<double> performance_status;  // Zubrod 0-4
  std::optional<double> hpv_status;
  std::optional<double> surgery;
  std::optional<double> chemotherapy;
  std::optional<SurvivalRecord> outcome;
};

/// Status coding: positive -> +1, negative -> -1, missing -> 0.
double encode_status(const std::optional<double>& raw);

/// Encodes clinical rows and appends GTVp/GTVn count and volume from the
/// per-patient node statistics (which must cover every patient).
FeatureTable encode_clinical(std::span<const ClinicalRecord> records,
                             const std::map<std::string, NodeStatistics>& node_stats);
/// Clinical fields only, for cohorts without segmentations.
FeatureTable encode_clinical(std::span<const ClinicalRecord> records);

/// Repeated k-fold partitions. fold_of[r][i] is the fold of patient_ids[i]
/// in repeat r. Assignments depend on the set of ids, not their order.
struct CVPlan {
  int k = 5;
  int repeats = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> patient_ids;
  std::vector<std::vector<int>> fold_of;

  std::vector<Eigen::Index> members(int repeat, int fold) const;
  std::vector<Eigen::Index> complement(int repeat, int fold) const;
};

CVPlan make_cv_plan(std::span<const std::string> patient_ids, int k, int repeats, std::uint64_t seed);

/// As make_cv_plan, but events and censored patients are dealt separately
/// so every fold receives a near-equal share of events.
CVPlan make_stratified_cv_plan(std::span<const std::string> patient_ids,
                               std::span<const SurvivalRecord> records, int k, int repeats,
                               std::uint64_t seed);

struct RankedFeature {
  std::string name;
  double mean_cindex = 0.5;
  int failed_folds = 0;
};

struct CorrelationDrop {
  std::string removed;
  std::string kept;
  double r = 0.0;
};

struct SelectionStep {
  std::string added;
  double mean_cindex = 0.5;
};

struct SelectionReport {
  Modality modality = Modality::clinical;
  std::size_t cap = 0;
  std::vector<RankedFeature> ranked;
  std::vector<std::string> dropped_low_signal;
  std::vector<CorrelationDrop> dropped_correlated;
  std::vector<std::string> selected;
  std::vector<SelectionStep> trace;
  int failed_fits = 0;
};

struct SelectionSettings {
  int inner_k = 5;
  int repeats = 100;
  std::uint64_t seed = 2022;
  std::size_t cap = 10;
  double screen_threshold = 0.5;
  double correlation_threshold = 0.9;
  double epsilon = 1e-4;
  bool stratify_folds = false;
  FitOptions fit{};
};

inline constexpr std::size_t kClinicalCap = 5;
inline constexpr std::size_t kRadiomicsCap = 10;

/// Mean validation C-index of a Cox model on the given columns over every
/// (repeat, fold) of the plan. Failed fits and undefined validation
/// C-indices count as 0.5. `failures` receives the number of such cells.
double cv_mean_cindex(const Eigen::MatrixXd& X, std::span<const SurvivalRecord> records,
                      const CVPlan& plan, const FitOptions& fit, int* failures = nullptr);

/// Univariate screening: fills ranked (descending mean C, ties by name) and
/// dropped_low_signal (mean below the threshold).
SelectionReport univariate_screen(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                  const CVPlan& plan, const SelectionSettings& settings = {});

struct PruneResult {
  std::vector<std::string> kept;
  std::vector<CorrelationDrop> dropped;
};

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Walks `ranked` in order and drops a feature when |r| exceeds the
/// threshold against any feature kept so far.
PruneResult correlation_prune(const FeatureTable& table, std::span<const std::string> ranked,
                              double threshold = 0.9);

/// Greedy step-forward selection by mean validation C-index. Candidates are
/// tried in the given order, so ties go to the better-screened feature.
SelectionReport forward_select(const FeatureTable& table, std::span<const SurvivalRecord> records,
                               const CVPlan& plan, std::span<const std::string> candidates,
                               std::size_t max_features, double epsilon = 1e-4,
                               const FitOptions& fit = {});

/// Screening, pruning and forward selection on one training set.
SelectionReport select_features(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                const SelectionSettings& settings, std::uint64_t screen_seed,
                                std::uint64_t select_seed);

struct ModalityModel {
  Modality modality = Modality::clinical;
  std::vector<std::optional<CoxModel>> fold_models;
  std::vector<SelectionReport> fold_reports;
  std::vector<std::vector<std::size_t>> fold_training_rows;
  std::vector<int> outer_fold;      // per table row
  Eigen::VectorXd oof_scores;       // per table row
  std::optional<double> cindex;     // on the out-of-fold concatenation
  std::vector<int> flagged_folds;   // folds skipped for lack of events
  std::vector<std::string> warnings;
};

/// Per outer fold: select features and fit Cox on the training rows only,
/// then score the held-out rows. `outer_fold` gives a fold per table row.
ModalityModel fit_modality_model(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                 std::span<const int> outer_fold, int outer_k,
                                 const SelectionSettings& settings);

struct PatientRisk {
  std::string patient_id;
  bool has_gtvp = true;
  std::optional<double> clinical;
  std::optional<double> ct;
  std::optional<double> pet;
  double fused = 0.0;
};

enum class FusionMode { standardized, raw };

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

/// Averages the available modality scores per patient. In standardized mode
/// each modality is z-scored over the patients that have it first. Patients
/// without GTVp get the clinical score alone.
std::vector<PatientRisk> fuse_risk(std::vector<PatientRisk> scores,
                                   FusionMode mode = FusionMode::standardized);

enum class RiskGroup { low, high };

std::string to_string(RiskGroup g);

/// Score > threshold is high risk; everything else, including ties, low.
std::vector<RiskGroup> stratify(std::span<const double> scores, double threshold = 0.0);

struct GroupComparison {
  std::size_t n_low = 0;
  std::size_t n_high = 0;
  std::optional<KMCurve> km_low;
  std::optional<KMCurve> km_high;
  std::optional<LogRankResult> logrank;  // empty when degenerate
  std::string note;
};

GroupComparison compare_groups(std::span<const SurvivalRecord> records,
                               std::span<const RiskGroup> groups);

}  // namespace hnrfs
