#include "hnrfs/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hnrfs {

std::vector<NodeComponent> connected_components(const LabelVolume& vol, Label class_label) {
  const Dims d = vol.dims();
  const auto values = vol.values();
  std::vector<bool> seen(values.size(), false);
  std::vector<NodeComponent> components;
  std::vector<std::size_t> stack;

  for (std::size_t seed = 0; seed < values.size(); ++seed) {
    if (seen[seed] || values[seed] != class_label) continue;
    NodeComponent comp;
    comp.class_label = class_label;
    seen[seed] = true;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      comp.voxels.push_back(cur);
      const auto c = vol.coords(cur);
      for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const auto x = static_cast<std::ptrdiff_t>(c[0]) + dx;
            const auto y = static_cast<std::ptrdiff_t>(c[1]) + dy;
            const auto z = static_cast<std::ptrdiff_t>(c[2]) + dz;
            if (x < 0 || y < 0 || z < 0 || x >= std::ptrdiff_t(d.nx) || y >= std::ptrdiff_t(d.ny) ||
                z >= std::ptrdiff_t(d.nz)) {
              continue;
            }
            const std::size_t nb = vol.index(std::size_t(x), std::size_t(y), std::size_t(z));
            if (!seen[nb] && values[nb] == class_label) {
              seen[nb] = true;
              stack.push_back(nb);
            }
          }
        }
      }
    }
    std::sort(comp.voxels.begin(), comp.voxels.end());
    Point3 sum = Point3::Zero();
    for (std::size_t v : comp.voxels) sum += vol.position(v);
    comp.voxel_count = comp.voxels.size();
    comp.centroid = sum / static_cast<double>(comp.voxel_count);
    comp.volume_ml = static_cast<double>(comp.voxel_count) * vol.voxel_volume_mm3() / 1000.0;
    components.push_back(std::move(comp));
  }
  std::stable_sort(components.begin(), components.end(),
                   [](const NodeComponent& a, const NodeComponent& b) {
                     return a.voxel_count > b.voxel_count;
                   });
  return components;
}

double centroid_distance(const Point3& p, const Point3& n) {
  const Point3 diff = p - n;
  return std::sqrt(diff.x() * diff.x() + diff.y() * diff.y() + diff.z() * diff.z());
}

bool class_centroid(const LabelVolume& vol, Label class_label, Point3& centroid) {
  Point3 sum = Point3::Zero();
  std::size_t count = 0;
  const auto values = vol.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != class_label) continue;
    sum += vol.position(i);
    ++count;
  }
  if (count == 0) return false;
  centroid = sum / static_cast<double>(count);
  return true;
}

FilterResult filter_distant_nodes(const LabelVolume& vol, double d_max_mm) {
  if (!(d_max_mm > 0.0)) throw InvalidArgument("filter_distant_nodes: d_max must be > 0");
  FilterResult result{vol, {}};
  result.report.d_max_mm = d_max_mm;
  result.report.has_reference = class_centroid(vol, kGtvp, result.report.reference);
  if (!result.report.has_reference) return result;

  for (auto& comp : connected_components(vol, kGtvn)) {
    const double dist = centroid_distance(result.report.reference, comp.centroid);
    if (dist > d_max_mm) {
      for (std::size_t v : comp.voxels) result.volume.set(v, kBackground);
      result.report.removed.push_back({std::move(comp), dist});
    } else {
      ++result.report.kept;
      result.report.kept_distances_mm.push_back(dist);
    }
  }
  return result;
}

double dice(const LabelVolume& a, const LabelVolume& b, Label class_label) {
  if (!(a.dims() == b.dims())) throw ShapeError("dice: volumes differ in dimensions");
  std::size_t na = 0, nb = 0, both = 0;
  const auto va = a.values();
  const auto vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const bool in_a = va[i] == class_label;
    const bool in_b = vb[i] == class_label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

struct ResampleGrid {
  Dims dims;
  Point3 origin;
};

ResampleGrid resampled_grid(const Dims& dims, const Point3& spacing, const Point3& origin,
                            const Point3& target) {
  if (!(target.array() > 0.0).all() || !target.allFinite()) {
    throw InvalidArgument("resample: target spacing must be finite and > 0");
  }
  std::array<std::size_t, 3> n{};
  Point3 new_origin;
  for (int a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(dims[a]) * spacing[a];
    n[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(extent / target[a])));
    // Keep the outer voxel edge fixed: first edge at origin - spacing/2.
    new_origin[a] = target[a] == spacing[a] ? origin[a] : origin[a] - 0.5 * spacing[a] + 0.5 * target[a];
  }
  return {{n[0], n[1], n[2]}, new_origin};
}

// Continuous source index for a physical coordinate, clamped to the grid.
double source_index(double pos, double origin, double spacing, std::size_t n) {
  const double u = (pos - origin) / spacing;
  return std::clamp(u, 0.0, static_cast<double>(n - 1));
}

}  // namespace

ScalarVolume resample_trilinear(const ScalarVolume& vol, const Point3& target_spacing) {
  const auto grid = resampled_grid(vol.dims(), vol.spacing(), vol.origin(), target_spacing);
  const Dims& src = vol.dims();
  std::vector<double> out;
  out.reserve(grid.dims.count());
  for (std::size_t k = 0; k < grid.dims.nz; ++k) {
    const double uz = source_index(grid.origin.z() + target_spacing.z() * double(k),
                                   vol.origin().z(), vol.spacing().z(), src.nz);
    const auto z0 = static_cast<std::size_t>(std::floor(uz));
    const std::size_t z1 = std::min(z0 + 1, src.nz - 1);
    const double fz = uz - double(z0);
    for (std::size_t j = 0; j < grid.dims.ny; ++j) {
      const double uy = source_index(grid.origin.y() + target_spacing.y() * double(j),
                                     vol.origin().y(), vol.spacing().y(), src.ny);
      const auto y0 = static_cast<std::size_t>(std::floor(uy));
      const std::size_t y1 = std::min(y0 + 1, src.ny - 1);
      const double fy = uy - double(y0);
      for (std::size_t i = 0; i < grid.dims.nx; ++i) {
        const double ux = source_index(grid.origin.x() + target_spacing.x() * double(i),
                                       vol.origin().x(), vol.spacing().x(), src.nx);
        const auto x0 = static_cast<std::size_t>(std::floor(ux));
        const std::size_t x1 = std::min(x0 + 1, src.nx - 1);
        const double fx = ux - double(x0);
        auto lerp = [](double a, double b, double t) {
          if (t == 0.0) return a;
          return std::clamp(a + t * (b - a), std::min(a, b), std::max(a, b));
        };
        const double c00 = lerp(vol(x0, y0, z0), vol(x1, y0, z0), fx);
        const double c10 = lerp(vol(x0, y1, z0), vol(x1, y1, z0), fx);
        const double c01 = lerp(vol(x0, y0, z1), vol(x1, y0, z1), fx);
        const double c11 = lerp(vol(x0, y1, z1), vol(x1, y1, z1), fx);
        out.push_back(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz));
      }
    }
  }
  return ScalarVolume(grid.dims, target_spacing, grid.origin, std::move(out));
}

LabelVolume resample_nearest(const LabelVolume& vol, const Point3& target_spacing) {
  const auto grid = resampled_grid(vol.dims(), vol.spacing(), vol.origin(), target_spacing);
  const Dims& src = vol.dims();
  auto nearest = [](double u) { return static_cast<std::size_t>(std::floor(u + 0.5)); };
  std::vector<Label> out;
  out.reserve(grid.dims.count());
  for (std::size_t k = 0; k < grid.dims.nz; ++k) {
    const auto z = nearest(source_index(grid.origin.z() + target_spacing.z() * double(k),
                                        vol.origin().z(), vol.spacing().z(), src.nz));
    for (std::size_t j = 0; j < grid.dims.ny; ++j) {
      const auto y = nearest(source_index(grid.origin.y() + target_spacing.y() * double(j),
                                          vol.origin().y(), vol.spacing().y(), src.ny));
      for (std::size_t i = 0; i < grid.dims.nx; ++i) {
        const auto x = nearest(source_index(grid.origin.x() + target_spacing.x() * double(i),
                                            vol.origin().x(), vol.spacing().x(), src.nx));
        out.push_back(vol(x, y, z));
      }
    }
  }
  return LabelVolume(grid.dims, target_spacing, grid.origin, std::move(out));
}

ScalarVolume zscore_normalize(const ScalarVolume& vol) {
  const auto values = vol.values();
  if (values.size() < 2) throw DegenerateError("zscore_normalize: need at least two voxels");
  const Eigen::Map<const Eigen::ArrayXd> v(values.data(), static_cast<Eigen::Index>(values.size()));
  const double mean = v.mean();
  const double sd = std::sqrt((v - mean).square().mean());
  if (!(sd > 0.0)) throw DegenerateError("zscore_normalize: zero variance");
  std::vector<double> out(values.size());
  Eigen::Map<Eigen::ArrayXd>(out.data(), v.size()) = (v - mean) / sd;
  return ScalarVolume(vol.dims(), vol.spacing(), vol.origin(), std::move(out));
}

NodeStatistics node_statistics(const LabelVolume& vol) {
  NodeStatistics stats;
  const auto primary = connected_components(vol, kGtvp);
  stats.gtvp_count = primary.size();
  for (const auto& c : primary) stats.gtvp_volume_ml += c.volume_ml;

  const auto nodes = connected_components(vol, kGtvn);
  stats.gtvn_count = nodes.size();
  if (!nodes.empty()) stats.smallest_gtvn_ml = std::numeric_limits<double>::infinity();
  for (const auto& c : nodes) {
    stats.gtvn_volume_ml += c.volume_ml;
    stats.smallest_gtvn_ml = std::min(stats.smallest_gtvn_ml, c.volume_ml);
  }
  Point3 reference;
  if (class_centroid(vol, kGtvp, reference)) {
    for (const auto& c : nodes) stats.gtvn_distances_mm.push_back(centroid_distance(reference, c.centroid));
  }
  return stats;
}

}  // namespace hnrfs
