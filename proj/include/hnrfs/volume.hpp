#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "hnrfs/errors.hpp"

namespace hnrfs {

using Point3 = Eigen::Vector3d;
using Label = std::uint8_t;

inline constexpr Label kBackground = 0;
inline constexpr Label kGtvp = 1;
inline constexpr Label kGtvn = 2;

struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Dense 3D grid with physical geometry. Voxel (i, j, k) sits at
/// origin + spacing .* (i, j, k); values are stored x-fastest.
template <typename Scalar>
class Volume {
 public:
  using value_type = Scalar;

  Volume() = default;

  Volume(Dims dims, Point3 spacing, Point3 origin, std::vector<Scalar> values)
      : dims_(dims), spacing_(spacing), origin_(origin), values_(std::move(values)) {
    validate();
  }

  Volume(Dims dims, Point3 spacing, Point3 origin, Scalar fill = Scalar{})
      : Volume(dims, spacing, origin, std::vector<Scalar>(dims.count(), fill)) {}

  const Dims& dims() const { return dims_; }
  const Point3& spacing() const { return spacing_; }
  const Point3& origin() const { return origin_; }
  std::span<const Scalar> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double voxel_volume_mm3() const { return spacing_.prod(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims_.nx * (j + dims_.ny * k);
  }
  std::array<std::size_t, 3> coords(std::size_t linear) const {
    return {linear % dims_.nx, (linear / dims_.nx) % dims_.ny, linear / (dims_.nx * dims_.ny)};
  }
  Point3 position(std::size_t i, std::size_t j, std::size_t k) const {
    return origin_ + spacing_.cwiseProduct(Point3(double(i), double(j), double(k)));
  }
  Point3 position(std::size_t linear) const {
    const auto c = coords(linear);
    return position(c[0], c[1], c[2]);
  }

  Scalar operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[index(i, j, k)];
  }
  Scalar operator[](std::size_t linear) const { return values_[linear]; }

  void set(std::size_t linear, Scalar v) {
    check_value(v);
    values_[linear] = v;
  }
  void set(std::size_t i, std::size_t j, std::size_t k, Scalar v) { set(index(i, j, k), v); }

  bool same_geometry(const Volume& other) const {
    return dims_ == other.dims_ && spacing_ == other.spacing_ && origin_ == other.origin_;
  }
  template <typename Other>
  bool same_grid(const Volume<Other>& other) const {
    return dims_ == other.dims() && spacing_ == other.spacing() && origin_ == other.origin();
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.same_geometry(b) && a.values_ == b.values_;
  }

 private:
  void validate() const {
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0) {
      throw InvalidArgument("volume: dimensions must be positive");
    }
    if (!(spacing_.array() > 0.0).all() || !spacing_.allFinite()) {
      throw InvalidArgument("volume: spacing must be finite and > 0");
    }
    if (!origin_.allFinite()) throw InvalidArgument("volume: origin must be finite");
    if (values_.size() != dims_.count()) {
      throw InvalidArgument("volume: expected " + std::to_string(dims_.count()) + " values, got " +
                            std::to_string(values_.size()));
    }
    for (const Scalar& v : values_) check_value(v);
  }

  static void check_value(Scalar v) {
    if constexpr (std::is_same_v<Scalar, Label>) {
      if (v > kGtvn) throw ValidationError("label volume: invalid label " + std::to_string(int(v)));
    } else {
      (void)v;
    }
  }

  Dims dims_{};
  Point3 spacing_ = Point3::Ones();
  Point3 origin_ = Point3::Zero();
  std::vector<Scalar> values_;
};

using ScalarVolume = Volume<double>;
using LabelVolume = Volume<Label>;

struct NodeComponent {
  Label class_label = kGtvn;
  std::size_t voxel_count = 0;
  double volume_ml = 0.0;
  Point3 centroid = Point3::Zero();
  /// Linear indices of member voxels, ascending.
  std::vector<std::size_t> voxels;
};

/// 26-connected components of one class, sorted by descending voxel count
/// (ties by lowest member index).
std::vector<NodeComponent> connected_components(const LabelVolume& vol, Label class_label);

double centroid_distance(const Point3& p, const Point3& n);

/// Mean physical position over every voxel of the class; false when absent.
bool class_centroid(const LabelVolume& vol, Label class_label, Point3& centroid);

struct RemovedNode {
  NodeComponent component;
  double distance_mm = 0.0;
};

struct RemovalReport {
  bool has_reference = false;
  Point3 reference = Point3::Zero();
  double d_max_mm = 0.0;
  std::size_t kept = 0;
  std::vector<double> kept_distances_mm;
  std::vector<RemovedNode> removed;
};

struct FilterResult {
  LabelVolume volume;
  RemovalReport report;
};

inline constexpr double kDefaultDMaxMm = 150.0;

/// Relabels to background every GTVn component whose centroid lies farther
/// than d_max from the GTVp centroid. Without GTVp the input is returned.
FilterResult filter_distant_nodes(const LabelVolume& vol, double d_max_mm = kDefaultDMaxMm);

/// 2|A and B| / (|A| + |B|); 1 when both are empty.
double dice(const LabelVolume& a, const LabelVolume& b, Label class_label);

/// Grid covering the same physical extent at a new spacing.
ScalarVolume resample_trilinear(const ScalarVolume& vol, const Point3& target_spacing);
LabelVolume resample_nearest(const LabelVolume& vol, const Point3& target_spacing);

/// (v - mean) / std with the population standard deviation.
ScalarVolume zscore_normalize(const ScalarVolume& vol);

struct NodeStatistics {
  std::size_t gtvp_count = 0;
  double gtvp_volume_ml = 0.0;
  std::size_t gtvn_count = 0;
  double gtvn_volume_ml = 0.0;
  double smallest_gtvn_ml = 0.0;  // 0 when there are no nodes
  std::vector<double> gtvn_distances_mm;  // empty without GTVp
};

NodeStatistics node_statistics(const LabelVolume& vol);

}  // namespace hnrfs
