#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hnrfs/synth.hpp"
#include "hnrfs/random.hpp"
#include "hnrfs/volume.hpp"

using namespace hnrfs;

namespace {

LabelVolume blank(Dims d, double spacing = 2.0) {
  return LabelVolume(d, Point3::Constant(spacing), Point3::Zero());
}

// GTVp at x = 30 mm with nodes planted along +x at the given distances.
PhantomSpec node_line(std::initializer_list<double> distances) {
  PhantomSpec s;
  s.dims = Dims{130, 30, 30};
  const Point3 p(30.0, 30.0, 30.0);
  s.gtvp = Sphere{p, 10.0};
  for (double d : distances) s.gtvn.push_back(Sphere{p + Point3(d, 0.0, 0.0), 6.0});
  return s;
}

}  // namespace

TEST(LabelVolume, RejectsUnknownLabel) {
  EXPECT_THROW(LabelVolume(Dims{2, 1, 1}, Point3::Ones(), Point3::Zero(), std::vector<Label>{0, 3}),
               ValidationError);
  auto v = blank(Dims{2, 2, 2});
  EXPECT_THROW(v.set(0, Label{7}), ValidationError);
  EXPECT_THROW(ScalarVolume(Dims{2, 2, 2}, Point3(1, 0, 1), Point3::Zero()), InvalidArgument);
  EXPECT_THROW(ScalarVolume(Dims{2, 2, 2}, Point3::Ones(), Point3::Zero(), std::vector<double>(7)),
               InvalidArgument);
}

TEST(Components, DisjointBlobsAndDiagonalContact) {
  auto v = blank(Dims{8, 8, 8});
  v.set(0, 0, 0, kGtvn);
  v.set(1, 0, 0, kGtvn);
  v.set(5, 5, 5, kGtvn);
  v.set(6, 5, 5, kGtvn);
  EXPECT_EQ(connected_components(v, kGtvn).size(), 2u);
  v.set(2, 1, 1, kGtvn);  // touches (1,0,0) only through a corner
  const auto comps = connected_components(v, kGtvn);
  ASSERT_EQ(comps.size(), 2u);
  EXPECT_EQ(comps[0].voxel_count, 3u);
  EXPECT_TRUE(connected_components(v, kGtvp).empty());
}

TEST(Components, SingleVoxelArithmetic) {
  auto v = blank(Dims{6, 6, 6});
  v.set(3, 1, 4, kGtvp);
  const auto c = connected_components(v, kGtvp);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].centroid, Point3(6, 2, 8));
  EXPECT_DOUBLE_EQ(c[0].volume_ml, 0.008);
}

TEST(Components, SphereVolumeAndCounts) {
  PhantomSpec s;
  s.dims = Dims{32, 32, 32};
  s.gtvp = Sphere{Point3(31, 31, 31), 10.0};
  s.gtvn = {Sphere{Point3(10, 10, 10), 4.0}, Sphere{Point3(52, 52, 52), 5.0}};
  const auto ph = generate_volume_phantom(s);
  const auto p = connected_components(ph.labels, kGtvp);
  ASSERT_EQ(p.size(), 1u);
  const double truth = 4.0 / 3.0 * M_PI * 1000.0;
  EXPECT_NEAR(p[0].voxel_count * 8.0, truth, 0.15 * truth);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ph.labels.size(); ++i) total += ph.labels[i] == kGtvn;
  const auto n = connected_components(ph.labels, kGtvn);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_GE(n[0].voxel_count, n[1].voxel_count);
  EXPECT_EQ(n[0].voxel_count + n[1].voxel_count, total);
}

TEST(Distance, Basics) {
  EXPECT_EQ(centroid_distance(Point3(1, 2, 3), Point3(1, 2, 3)), 0.0);
  EXPECT_EQ(centroid_distance(Point3(0, 0, 0), Point3(3, 4, 0)), 5.0);
  const Point3 a(1.5, -2, 7), b(-3, 0.25, 2);
  EXPECT_EQ(centroid_distance(a, b), centroid_distance(b, a));
}

TEST(Filter, RemovesOnlyTheDistantNode) {
  const auto ph = generate_volume_phantom(node_line({40, 80, 120, 200}));
  const auto r = filter_distant_nodes(ph.labels, 150.0);
  ASSERT_TRUE(r.report.has_reference);
  ASSERT_EQ(r.report.removed.size(), 1u);
  EXPECT_NEAR(r.report.removed[0].distance_mm, 200.0, std::sqrt(12.0));
  EXPECT_EQ(r.report.kept, 3u);
  EXPECT_EQ(connected_components(r.volume, kGtvn).size(), 3u);
  for (std::size_t i = 0; i < ph.labels.size(); ++i) {
    EXPECT_EQ(ph.labels[i] == kGtvp, r.volume[i] == kGtvp);
  }
  // A removed node is all background afterwards, and nothing else changed.
  std::set<std::size_t> removed(r.report.removed[0].component.voxels.begin(),
                                r.report.removed[0].component.voxels.end());
  for (std::size_t i = 0; i < ph.labels.size(); ++i) {
    EXPECT_EQ(r.volume[i], removed.count(i) ? kBackground : ph.labels[i]);
  }
}

TEST(Filter, KeepsNearNodeAndIsIdempotent) {
  const auto ph = generate_volume_phantom(node_line({100}));
  const auto once = filter_distant_nodes(ph.labels, 150.0);
  EXPECT_TRUE(once.volume == ph.labels);
  const auto far = generate_volume_phantom(node_line({40, 200}));
  const auto a = filter_distant_nodes(far.labels, 150.0);
  const auto b = filter_distant_nodes(a.volume, 150.0);
  EXPECT_TRUE(a.volume == b.volume);
  EXPECT_TRUE(b.report.removed.empty());
}

TEST(Filter, NoReferencePassthrough) {
  auto v = blank(Dims{10, 10, 10});
  v.set(0, 0, 0, kGtvn);
  v.set(9, 9, 9, kGtvn);
  const auto r = filter_distant_nodes(v, 1.0);
  EXPECT_FALSE(r.report.has_reference);
  EXPECT_TRUE(r.volume == v);
  EXPECT_THROW(filter_distant_nodes(v, 0.0), InvalidArgument);
}

TEST(Filter, ReferenceIsMeanOfAllGtvpVoxels) {
  auto v = blank(Dims{40, 3, 3}, 1.0);
  v.set(0, 0, 0, kGtvp);
  v.set(20, 0, 0, kGtvp);
  v.set(20, 1, 0, kGtvp);
  v.set(20, 2, 0, kGtvp);
  v.set(39, 0, 0, kGtvn);
  const auto r = filter_distant_nodes(v, 100.0);
  EXPECT_NEAR(r.report.reference.x(), 15.0, 1e-12);
  EXPECT_NEAR(r.report.reference.y(), 0.75, 1e-12);
  EXPECT_NEAR(r.report.kept_distances_mm.at(0), std::hypot(24.0, 0.75), 1e-12);
}

TEST(Dice, Arithmetic) {
  auto a = blank(Dims{4, 1, 1}), b = blank(Dims{4, 1, 1});
  EXPECT_EQ(dice(a, b, kGtvn), 1.0);
  a.set(0, kGtvn);
  EXPECT_EQ(dice(a, b, kGtvn), 0.0);
  a.set(1, kGtvn);
  b.set(1, kGtvn);
  b.set(2, kGtvn);
  EXPECT_EQ(dice(a, b, kGtvn), 0.5);
  EXPECT_EQ(dice(b, a, kGtvn), 0.5);
  EXPECT_EQ(dice(a, a, kGtvn), 1.0);
  EXPECT_THROW(dice(a, blank(Dims{2, 2, 1}), kGtvn), ShapeError);
}

TEST(Dice, FilteringSpuriousNodeImprovesGtvn) {
  const auto truth = generate_volume_phantom(node_line({40, 80, 120}));
  const auto pred = generate_volume_phantom(node_line({40, 80, 120, 200}));
  const auto filtered = filter_distant_nodes(pred.labels, 150.0);
  EXPECT_EQ(dice(pred.labels, truth.labels, kGtvp), dice(filtered.volume, truth.labels, kGtvp));
  EXPECT_GT(dice(filtered.volume, truth.labels, kGtvn), dice(pred.labels, truth.labels, kGtvn));
}

TEST(Resample, IdentityAndConstant) {
  Rng rng(1);
  std::vector<double> vals(5 * 4 * 3);
  for (auto& v : vals) v = rng.normal();
  const ScalarVolume vol(Dims{5, 4, 3}, Point3(1.5, 2.0, 3.0), Point3(-4, 2, 9), vals);
  const auto same = resample_trilinear(vol, vol.spacing());
  EXPECT_TRUE(same.same_geometry(vol));
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_NEAR(same[i], vals[i], 1e-12);

  const ScalarVolume flat(Dims{7, 5, 3}, Point3(1, 1, 3), Point3::Zero(), 4.25);
  const auto out = resample_trilinear(flat, Point3(2, 2, 2));
  EXPECT_EQ(out.dims(), (Dims{4, 3, 5}));
  for (double v : out.values()) EXPECT_EQ(v, 4.25);
  EXPECT_THROW(resample_trilinear(flat, Point3(0, 1, 1)), InvalidArgument);
}

TEST(Resample, ReproducesAffineField) {
  const Dims d{20, 16, 12};
  const Point3 sp(1.0, 1.25, 1.5), org(3, -2, 10);
  std::vector<double> vals(d.count());
  ScalarVolume probe(d, sp, org);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const Point3 p = probe.position(i);
    vals[i] = p.x() + 2 * p.y() + 3 * p.z();
  }
  const ScalarVolume vol(d, sp, org, vals);
  const auto out = resample_trilinear(vol, Point3(2, 2, 2));
  const Point3 lo = org, hi = org + sp.cwiseProduct(Point3(d.nx - 1, d.ny - 1, d.nz - 1));
  std::size_t checked = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Point3 p = out.position(i);
    if ((p.array() < lo.array()).any() || (p.array() > hi.array()).any()) continue;
    EXPECT_NEAR(out[i], p.x() + 2 * p.y() + 3 * p.z(), 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Resample, BoundsAndLabelSets) {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    const Dims d{2 + rng.below(8), 2 + rng.below(8), 2 + rng.below(8)};
    std::vector<double> vals(d.count());
    std::vector<Label> labels(d.count());
    const bool without_gtvn = t % 3 == 0;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      vals[i] = 100 * rng.uniform() - 50;
      labels[i] = static_cast<Label>(rng.below(without_gtvn ? 2 : 3));
    }
    const Point3 sp(0.5 + 2 * rng.uniform(), 0.5 + 2 * rng.uniform(), 0.5 + 2 * rng.uniform());
    const Point3 target(0.4 + 3 * rng.uniform(), 0.4 + 3 * rng.uniform(), 0.4 + 3 * rng.uniform());
    const ScalarVolume sv(d, sp, Point3::Zero(), vals);
    const auto out = resample_trilinear(sv, target);
    const auto [mn, mx] = std::minmax_element(vals.begin(), vals.end());
    for (double v : out.values()) {
      EXPECT_GE(v, *mn);
      EXPECT_LE(v, *mx);
    }
    const LabelVolume lv(d, sp, Point3::Zero(), labels);
    const std::set<Label> before(labels.begin(), labels.end());
    const auto lout = resample_nearest(lv, target);
    for (Label l : lout.values()) EXPECT_TRUE(before.count(l));
    EXPECT_TRUE(resample_nearest(lv, sp) == lv);
  }
}

TEST(ZScore, Arithmetic) {
  const ScalarVolume v(Dims{3, 1, 1}, Point3::Ones(), Point3::Zero(), std::vector<double>{1, 2, 3});
  const auto z = zscore_normalize(v);
  EXPECT_NEAR(z[0], -1.224744871391589, 1e-12);
  EXPECT_EQ(z[1], 0.0);
  EXPECT_NEAR(z[2], 1.224744871391589, 1e-12);
  const ScalarVolume w(Dims{3, 1, 1}, Point3::Ones(), Point3::Zero(), std::vector<double>{-7, 3.5, 14});
  const auto zw = zscore_normalize(w);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(zw[i], z[i], 1e-12);
  EXPECT_THROW(zscore_normalize(ScalarVolume(Dims{3, 1, 1}, Point3::Ones(), Point3::Zero(), 2.0)),
               DegenerateError);
}

TEST(ZScore, UnitMoments) {
  Rng rng(2);
  std::vector<double> vals(1000);
  for (auto& x : vals) x = 3 + 5 * rng.normal();
  const auto z = zscore_normalize(ScalarVolume(Dims{10, 10, 10}, Point3::Ones(), Point3::Zero(), vals));
  double m = 0, s = 0;
  for (double x : z.values()) m += x;
  m /= 1000;
  for (double x : z.values()) s += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(s / 1000), 1.0, 1e-9);
}

TEST(NodeStatistics, PlantedDistances) {
  const auto ph = generate_volume_phantom(node_line({40, 80, 120}));
  const auto st = node_statistics(ph.labels);
  EXPECT_EQ(st.gtvp_count, 1u);
  ASSERT_EQ(st.gtvn_count, 3u);
  auto dist = st.gtvn_distances_mm;
  std::sort(dist.begin(), dist.end());
  const double diag = std::sqrt(12.0);
  EXPECT_NEAR(dist[0], 40.0, diag);
  EXPECT_NEAR(dist[1], 80.0, diag);
  EXPECT_NEAR(dist[2], 120.0, diag);
  double smallest = 1e300, total = 0;
  for (const auto& c : connected_components(ph.labels, kGtvn)) {
    smallest = std::min(smallest, c.volume_ml);
    total += c.volume_ml;
  }
  EXPECT_EQ(st.smallest_gtvn_ml, smallest);
  EXPECT_NEAR(st.gtvn_volume_ml, total, 1e-12);
}

TEST(NodeStatistics, EmptyClasses) {
  PhantomSpec s;
  s.dims = Dims{20, 20, 20};
  s.gtvp = Sphere{Point3(20, 20, 20), 6.0};
  const auto st = node_statistics(generate_volume_phantom(s).labels);
  EXPECT_EQ(st.gtvn_count, 0u);
  EXPECT_TRUE(st.gtvn_distances_mm.empty());
  const auto none = node_statistics(blank(Dims{3, 3, 3}));
  EXPECT_EQ(none.gtvp_count, 0u);
  EXPECT_EQ(none.gtvp_volume_ml, 0.0);
}
