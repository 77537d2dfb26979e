#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnrfs/volume.hpp"

namespace hnrfs {

enum class Modality { clinical, ct, pet };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// Approximation of a default radiomics configuration: fixed bin width,
/// distance-1 symmetric GLCM over the 13 unique 3D directions, features
/// averaged over directions.
struct ExtractionSettings {
  double bin_width = 25.0;
  int glcm_distance = 1;
  bool symmetric_glcm = true;

  void validate() const;
};

inline constexpr std::array<std::array<int, 3>, 13> kGlcmDirections{{
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
    {1, 1, 0}, {1, -1, 0}, {1, 0, 1}, {1, 0, -1}, {0, 1, 1}, {0, 1, -1},
    {1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {1, -1, -1},
}};

class FeatureVector {
 public:
  explicit FeatureVector(Modality modality = Modality::clinical) : modality_(modality) {}

  /// Throws InvalidArgument on a duplicate name or non-finite value.
  void add(std::string name, double value);
  void append(const FeatureVector& other);

  Modality modality() const { return modality_; }
  void set_modality(Modality m) { modality_ = m; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  double at(const std::string& name) const;

 private:
  Modality modality_;
  std::vector<std::pair<std::string, double>> entries_;
};

/// 1-based bins anchored at the minimum: floor((v - min) / width) + 1.
std::vector<int> discretize(std::span<const double> values, double bin_width);

FeatureVector first_order_features(const ScalarVolume& vol, const LabelVolume& mask, Label class_label,
                                   double bin_width = ExtractionSettings{}.bin_width);

FeatureVector shape_features(const LabelVolume& mask, Label class_label);

/// Raw co-occurrence counts, one Ng x Ng matrix per direction in
/// kGlcmDirections order (bins are 1-based; row i-1 holds bin i).
std::vector<Eigen::MatrixXd> glcm_matrices(const ScalarVolume& vol, const LabelVolume& mask,
                                           Label class_label, const ExtractionSettings& settings);

FeatureVector glcm_features(const ScalarVolume& vol, const LabelVolume& mask, Label class_label,
                            const ExtractionSettings& settings = {});

struct ModalityFeatures {
  FeatureVector ct{Modality::ct};
  FeatureVector pet{Modality::pet};
};

/// First-order, shape and GLCM features over GTVp for CT and PET. Returns
/// nullopt when there is no GTVp, or it is too small to form a single
/// in-mask voxel pair; callers then fall back to clinical-only scoring.
std::optional<ModalityFeatures> extract_all(const ScalarVolume& ct, const ScalarVolume& pet,
                                            const LabelVolume& mask,
                                            const ExtractionSettings& settings = {});

}  // namespace hnrfs
