#include "hnrfs/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hnrfs/errors.hpp"

namespace hnrfs {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::clinical: return "clinical";
    case Modality::ct: return "ct";
    case Modality::pet: return "pet";
  }
  return "unknown";
}

Modality modality_from_string(const std::string& s) {
  if (s == "clinical") return Modality::clinical;
  if (s == "ct" || s == "CT") return Modality::ct;
  if (s == "pet" || s == "PET") return Modality::pet;
  throw InvalidArgument("unknown modality '" + s + "'");
}

void ExtractionSettings::validate() const {
  if (!(bin_width > 0.0) || !std::isfinite(bin_width)) {
    throw InvalidArgument("extraction: bin_width must be > 0");
  }
  if (glcm_distance < 1) throw InvalidArgument("extraction: glcm_distance must be >= 1");
}

void FeatureVector::add(std::string name, double value) {
  if (!std::isfinite(value)) throw InvalidArgument("feature '" + name + "' is not finite");
  for (const auto& e : entries_) {
    if (e.first == name) throw InvalidArgument("duplicate feature name '" + name + "'");
  }
  entries_.emplace_back(std::move(name), value);
}

void FeatureVector::append(const FeatureVector& other) {
  for (const auto& [name, value] : other.entries_) add(name, value);
}

std::vector<std::string> FeatureVector::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

double FeatureVector::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw InvalidArgument("no feature named '" + name + "'");
}

std::vector<int> discretize(std::span<const double> values, double bin_width) {
  if (values.empty()) throw InvalidArgument("discretize: no values");
  if (!(bin_width > 0.0)) throw InvalidArgument("discretize: bin_width must be > 0");
  const double lo = *std::min_element(values.begin(), values.end());
  std::vector<int> bins;
  bins.reserve(values.size());
  for (double v : values) bins.push_back(static_cast<int>(std::floor((v - lo) / bin_width)) + 1);
  return bins;
}

namespace {

void check_grid(const ScalarVolume& vol, const LabelVolume& mask, const char* what) {
  if (!vol.same_grid(mask)) {
    throw ShapeError(std::string(what) + ": image and mask grids differ");
  }
}

std::vector<double> region_values(const ScalarVolume& vol, const LabelVolume& mask, Label label) {
  std::vector<double> out;
  const auto m = mask.values();
  const auto v = vol.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == label) out.push_back(v[i]);
  }
  return out;
}

// Linear interpolation between order statistics, as numpy's default.
double percentile(std::span<const double> sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double entropy_log2(std::span<const double> probabilities) {
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

FeatureVector first_order_features(const ScalarVolume& vol, const LabelVolume& mask, Label class_label,
                                   double bin_width) {
  check_grid(vol, mask, "first_order_features");
  std::vector<double> v = region_values(vol, mask, class_label);
  if (v.empty()) throw DegenerateError("first_order_features: empty region");
  // Sorting first makes every sum independent of voxel iteration order.
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());

  double sum = 0.0, energy = 0.0;
  for (double x : v) {
    sum += x;
    energy += x * x;
  }
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
  for (double x : v) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
    mad += std::abs(d);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  mad /= n;

  const auto bins = discretize(v, bin_width);
  const int n_bins = *std::max_element(bins.begin(), bins.end());
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_bins), 0);
  for (int b : bins) ++counts[static_cast<std::size_t>(b - 1)];
  std::vector<double> probs;
  for (std::size_t c : counts) probs.push_back(static_cast<double>(c) / n);

  FeatureVector f;
  f.add("firstorder_Mean", mean);
  f.add("firstorder_Median", percentile(v, 50.0));
  f.add("firstorder_Minimum", v.front());
  f.add("firstorder_Maximum", v.back());
  f.add("firstorder_Range", v.back() - v.front());
  f.add("firstorder_Variance", m2);
  f.add("firstorder_StandardDeviation", std::sqrt(m2));
  f.add("firstorder_Skewness", m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0);
  f.add("firstorder_Kurtosis", m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0);
  f.add("firstorder_Energy", energy);
  f.add("firstorder_RootMeanSquared", std::sqrt(energy / n));
  f.add("firstorder_MeanAbsoluteDeviation", mad);
  f.add("firstorder_10Percentile", percentile(v, 10.0));
  f.add("firstorder_90Percentile", percentile(v, 90.0));
  f.add("firstorder_InterquartileRange", percentile(v, 75.0) - percentile(v, 25.0));
  f.add("firstorder_Entropy", entropy_log2(probs));
  return f;
}

FeatureVector shape_features(const LabelVolume& mask, Label class_label) {
  const Dims d = mask.dims();
  const Point3& s = mask.spacing();
  const std::array<double, 3> face_area{s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
  auto inside = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) {
    if (i < 0 || j < 0 || k < 0 || i >= std::ptrdiff_t(d.nx) || j >= std::ptrdiff_t(d.ny) ||
        k >= std::ptrdiff_t(d.nz)) {
      return false;
    }
    return mask(std::size_t(i), std::size_t(j), std::size_t(k)) == class_label;
  };

  std::size_t voxels = 0;
  std::array<std::size_t, 3> faces{0, 0, 0};
  for (std::size_t k = 0; k < d.nz; ++k) {
    for (std::size_t j = 0; j < d.ny; ++j) {
      for (std::size_t i = 0; i < d.nx; ++i) {
        if (mask(i, j, k) != class_label) continue;
        ++voxels;
        const auto x = std::ptrdiff_t(i), y = std::ptrdiff_t(j), z = std::ptrdiff_t(k);
        faces[0] += !inside(x - 1, y, z) + !inside(x + 1, y, z);
        faces[1] += !inside(x, y - 1, z) + !inside(x, y + 1, z);
        faces[2] += !inside(x, y, z - 1) + !inside(x, y, z + 1);
      }
    }
  }
  if (voxels == 0) throw DegenerateError("shape_features: empty region");
  const double volume_mm3 = static_cast<double>(voxels) * mask.voxel_volume_mm3();
  const double area = static_cast<double>(faces[0]) * face_area[0] +
                      static_cast<double>(faces[1]) * face_area[1] +
                      static_cast<double>(faces[2]) * face_area[2];

  FeatureVector f;
  f.add("shape_VoxelVolume", volume_mm3 / 1000.0);
  f.add("shape_SurfaceArea", area);
  f.add("shape_SurfaceVolumeRatio", area / volume_mm3);
  f.add("shape_Sphericity",
        std::cbrt(std::numbers::pi) * std::pow(6.0 * volume_mm3, 2.0 / 3.0) / area);
  return f;
}

std::vector<Eigen::MatrixXd> glcm_matrices(const ScalarVolume& vol, const LabelVolume& mask,
                                           Label class_label, const ExtractionSettings& settings) {
  settings.validate();
  check_grid(vol, mask, "glcm");
  const auto values = region_values(vol, mask, class_label);
  if (values.empty()) throw DegenerateError("glcm: empty region");
  const double lo = *std::min_element(values.begin(), values.end());
  int n_levels = 1;
  std::vector<int> bin(vol.size(), 0);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (mask[i] != class_label) continue;
    bin[i] = static_cast<int>(std::floor((vol[i] - lo) / settings.bin_width)) + 1;
    n_levels = std::max(n_levels, bin[i]);
  }

  const Dims d = vol.dims();
  std::vector<Eigen::MatrixXd> out;
  out.reserve(kGlcmDirections.size());
  for (const auto& dir : kGlcmDirections) {
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_levels, n_levels);
    const std::ptrdiff_t ox = dir[0] * settings.glcm_distance;
    const std::ptrdiff_t oy = dir[1] * settings.glcm_distance;
    const std::ptrdiff_t oz = dir[2] * settings.glcm_distance;
    for (std::size_t k = 0; k < d.nz; ++k) {
      for (std::size_t j = 0; j < d.ny; ++j) {
        for (std::size_t i = 0; i < d.nx; ++i) {
          const std::size_t a = vol.index(i, j, k);
          if (mask[a] != class_label) continue;
          const auto x = std::ptrdiff_t(i) + ox, y = std::ptrdiff_t(j) + oy, z = std::ptrdiff_t(k) + oz;
          if (x < 0 || y < 0 || z < 0 || x >= std::ptrdiff_t(d.nx) || y >= std::ptrdiff_t(d.ny) ||
              z >= std::ptrdiff_t(d.nz)) {
            continue;
          }
          const std::size_t b = vol.index(std::size_t(x), std::size_t(y), std::size_t(z));
          if (mask[b] != class_label) continue;
          counts(bin[a] - 1, bin[b] - 1) += 1.0;
          if (settings.symmetric_glcm) counts(bin[b] - 1, bin[a] - 1) += 1.0;
        }
      }
    }
    out.push_back(std::move(counts));
  }
  return out;
}

namespace {

struct GlcmStats {
  double energy, entropy, contrast, correlation, idm, autocorrelation, shade, prominence;
};

GlcmStats glcm_stats(const Eigen::MatrixXd& p) {
  const Eigen::Index ng = p.rows();
  const Eigen::VectorXd px = p.rowwise().sum();
  const Eigen::VectorXd py = p.colwise().sum().transpose();
  const Eigen::VectorXd levels = Eigen::VectorXd::LinSpaced(ng, 1.0, static_cast<double>(ng));
  const double mux = levels.dot(px);
  const double muy = levels.dot(py);
  const double sx = std::sqrt((levels.array() - mux).square().matrix().dot(px));
  const double sy = std::sqrt((levels.array() - muy).square().matrix().dot(py));

  GlcmStats s{};
  for (Eigen::Index a = 0; a < ng; ++a) {
    for (Eigen::Index b = 0; b < ng; ++b) {
      const double v = p(a, b);
      if (v == 0.0) continue;
      const double i = double(a + 1), j = double(b + 1);
      const double diff = i - j;
      const double c = i + j - mux - muy;
      s.energy += v * v;
      s.entropy -= v * std::log2(v);
      s.contrast += diff * diff * v;
      s.idm += v / (1.0 + diff * diff);
      s.autocorrelation += i * j * v;
      s.shade += c * c * c * v;
      s.prominence += c * c * c * c * v;
    }
  }
  const double denom = sx * sy;
  s.correlation = denom > 0.0 ? (s.autocorrelation - mux * muy) / denom : 1.0;
  return s;
}

}  // namespace

FeatureVector glcm_features(const ScalarVolume& vol, const LabelVolume& mask, Label class_label,
                            const ExtractionSettings& settings) {
  const auto matrices = glcm_matrices(vol, mask, class_label, settings);
  GlcmStats mean{};
  int used = 0;
  for (const auto& counts : matrices) {
    const double total = counts.sum();
    if (total == 0.0) continue;
    const GlcmStats s = glcm_stats(counts / total);
    mean.energy += s.energy;
    mean.entropy += s.entropy;
    mean.contrast += s.contrast;
    mean.correlation += s.correlation;
    mean.idm += s.idm;
    mean.autocorrelation += s.autocorrelation;
    mean.shade += s.shade;
    mean.prominence += s.prominence;
    ++used;
  }
  if (used == 0) throw DegenerateError("glcm: no in-mask voxel pairs");
  const double k = used;
  FeatureVector f;
  f.add("glcm_JointEnergy", mean.energy / k);
  f.add("glcm_JointEntropy", mean.entropy / k);
  f.add("glcm_Contrast", mean.contrast / k);
  f.add("glcm_Correlation", mean.correlation / k);
  f.add("glcm_Idm", mean.idm / k);
  f.add("glcm_Autocorrelation", mean.autocorrelation / k);
  f.add("glcm_ClusterShade", mean.shade / k);
  f.add("glcm_ClusterProminence", mean.prominence / k);
  return f;
}

std::optional<ModalityFeatures> extract_all(const ScalarVolume& ct, const ScalarVolume& pet,
                                            const LabelVolume& mask,
                                            const ExtractionSettings& settings) {
  settings.validate();
  check_grid(ct, mask, "extract_all(ct)");
  check_grid(pet, mask, "extract_all(pet)");
  const auto labels = mask.values();
  if (std::find(labels.begin(), labels.end(), kGtvp) == labels.end()) return std::nullopt;

  ModalityFeatures out;
  const FeatureVector shape = shape_features(mask, kGtvp);
  try {
    for (auto [image, target] : {std::pair{&ct, &out.ct}, std::pair{&pet, &out.pet}}) {
      target->append(first_order_features(*image, mask, kGtvp, settings.bin_width));
      target->append(shape);
      target->append(glcm_features(*image, mask, kGtvp, settings));
    }
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
  return out;
}

}  // namespace hnrfs
