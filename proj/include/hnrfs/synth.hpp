#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "hnrfs/pipeline.hpp"
#include "hnrfs/survstat.hpp"
#include "hnrfs/volume.hpp"

namespace hnrfs {

enum class CovariateKind { normal, binary };

struct SynthSpec {
  std::size_t n = 200;
  Eigen::VectorXd betas;
  double censoring_rate = 0.0;
  double baseline_rate = 0.05;  // events per month
  std::uint64_t seed = 1;
  CovariateKind covariates = CovariateKind::normal;

  void validate() const;
};

struct SynthCohort {
  FeatureTable table;  // columns: signal_0.. then noise_0..
  std::vector<SurvivalRecord> records;
  Eigen::VectorXd linear_predictor;  // true x*beta
};

/// Exponential proportional-hazards cohort: T = -ln(U) / (rate * exp(x*beta)),
/// with independent exponential censoring whose rate is calibrated to the
/// requested censored fraction. Each patient draws from its own substream.
SynthCohort generate_survival(const SynthSpec& spec, std::size_t n_noise_features);

struct MultiModalCohort {
  FeatureTable clinical;
  FeatureTable ct;
  FeatureTable pet;
  std::vector<SurvivalRecord> records;  // aligned with clinical rows
  std::vector<std::string> planted_clinical, planted_ct, planted_pet;
};

/// One hazard shared by three modality tables: each table carries its own
/// planted columns plus noise. `missing_gtvp` patients are left out of the
/// CT and PET tables, as if no GTVp had been segmented.
MultiModalCohort generate_multimodal(std::size_t n, const Eigen::VectorXd& clinical_betas,
                                     const Eigen::VectorXd& ct_betas,
                                     const Eigen::VectorXd& pet_betas, std::size_t noise_per_modality,
                                     double censoring_rate, std::uint64_t seed,
                                     std::size_t missing_gtvp = 0);

struct Sphere {
  Point3 center = Point3::Zero();
  double radius_mm = 1.0;
};

struct PhantomIntensities {
  double ct_background = 0.0, ct_gtvp = 40.0, ct_gtvn = 30.0;
  double pet_background = 1.0, pet_gtvp = 10.0, pet_gtvn = 6.0;
  double noise_sd = 0.0;
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  Point3 spacing = Point3::Constant(2.0);
  Point3 origin = Point3::Zero();
  std::optional<Sphere> gtvp;
  std::vector<Sphere> gtvn;
  PhantomIntensities intensities{};
  std::uint64_t seed = 1;
};

struct Phantom {
  LabelVolume labels;
  ScalarVolume ct;
  ScalarVolume pet;
};

/// Labels voxels by sphere membership (GTVp wins overlaps) and fills the
/// scalar volumes with per-region constants plus optional Gaussian noise.
Phantom generate_volume_phantom(const PhantomSpec& spec);

}  // namespace hnrfs
