#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hnrfs/pipeline.hpp"
#include "hnrfs/random.hpp"

namespace hnrfs {

/// Stamped on every output file as a leading '#' comment line.
struct Provenance {
  std::string version = HNRFS_VERSION;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string rng = kRngName;

  std::string comment_line() const;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::vector<std::string> split_csv_line(std::string_view line);

/// Labelled outcome for one patient.
struct LabelRow {
  std::string patient_id;
  SurvivalRecord record;
};

/// Columns: patient_id, gender, age, tobacco, alcohol, performance_status,
/// hpv_status, surgery, chemotherapy, and (when required) rfs_months,
/// relapse. Header names are matched case-insensitively with punctuation
/// folded to '_'; a few common aliases (PatientID, RFS, ...) are accepted.
std::vector<ClinicalRecord> read_clinical_csv(const std::filesystem::path& path,
                                              bool require_outcome = true);
void write_clinical_csv(std::span<const ClinicalRecord> records, const std::filesystem::path& path,
                        const Provenance& prov);

std::vector<LabelRow> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(std::span<const LabelRow> rows, const std::filesystem::path& path,
                      const Provenance& prov);

FeatureTable read_feature_csv(const std::filesystem::path& path, Modality modality);
void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path,
                       const Provenance& prov);

struct RiskRow {
  PatientRisk risk;
  RiskGroup group = RiskGroup::low;
};

std::vector<RiskRow> read_risk_csv(const std::filesystem::path& path);
void write_risk_csv(std::span<const RiskRow> rows, const std::filesystem::path& path,
                    const Provenance& prov);

/// Long format: curve, group, time, survival, at_risk, events, std_err.
struct NamedCurve {
  std::string curve;
  std::string group;
  KMCurve km;
};
void write_km_csv(std::span<const NamedCurve> curves, const std::filesystem::path& path,
                  const Provenance& prov);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hnrfs
