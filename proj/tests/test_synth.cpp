#include <gtest/gtest.h>

#include <cmath>

#include "hnrfs/synth.hpp"

using namespace hnrfs;

TEST(Survival, DeterministicUnderSeed) {
  SynthSpec s;
  s.betas = Eigen::VectorXd::Constant(2, 0.4);
  s.censoring_rate = 0.3;
  const auto a = generate_survival(s, 3), b = generate_survival(s, 3);
  EXPECT_TRUE(a.table.values == b.table.values);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].time, b.records[i].time);
    EXPECT_EQ(a.records[i].event, b.records[i].event);
  }
  s.seed = 2;
  EXPECT_FALSE(generate_survival(s, 3).table.values == a.table.values);
  EXPECT_EQ(a.table.feature_names, (std::vector<std::string>{"signal_0", "signal_1", "noise_0", "noise_1", "noise_2"}));
}

TEST(Survival, NoCensoringMeansAllEvents) {
  SynthSpec s;
  s.betas = Eigen::VectorXd::Constant(1, 1.0);
  for (const auto& r : generate_survival(s, 0).records) EXPECT_TRUE(r.event);
}

TEST(Survival, CensoringFractionOnTarget) {
  for (double target : {0.1, 0.25, 0.5, 0.8}) {
    SynthSpec s;
    s.n = 600;
    s.betas = Eigen::VectorXd::Constant(2, 0.5);
    s.censoring_rate = target;
    s.seed = 100;
    std::size_t censored = 0;
    for (const auto& r : generate_survival(s, 0).records) censored += !r.event;
    EXPECT_NEAR(static_cast<double>(censored) / 600.0, target, 0.05);
  }
}

TEST(Survival, LinearPredictorMatchesBetas) {
  SynthSpec s;
  s.n = 50;
  s.betas = (Eigen::VectorXd(2) << 0.7, -1.1).finished();
  const auto c = generate_survival(s, 2);
  const Eigen::VectorXd eta = c.table.values.leftCols(2) * s.betas;
  EXPECT_LE((eta - c.linear_predictor).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Survival, ExponentialTimesHaveRightMean) {
  // Null model, no censoring: T ~ Exp(baseline_rate).
  SynthSpec s;
  s.n = 4000;
  s.betas = Eigen::VectorXd::Zero(1);
  s.baseline_rate = 0.05;
  double sum = 0.0;
  for (const auto& r : generate_survival(s, 0).records) sum += r.time;
  EXPECT_NEAR(sum / 4000.0, 20.0, 3 * 20.0 / std::sqrt(4000.0));
}

TEST(Survival, RejectsBadSpecs) {
  SynthSpec s;
  s.betas = Eigen::VectorXd::Zero(1);
  s.n = 1;
  EXPECT_THROW(generate_survival(s, 0), InvalidArgument);
  s.n = 10;
  s.censoring_rate = 1.0;
  EXPECT_THROW(generate_survival(s, 0), InvalidArgument);
  s.censoring_rate = 0.0;
  s.baseline_rate = 0.0;
  EXPECT_THROW(generate_survival(s, 0), InvalidArgument);
}

TEST(Multimodal, TablesShareOutcomeAndDropMissing) {
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(2, 0.5);
  const auto c = generate_multimodal(40, b, b, b, 3, 0.2, 9, 5);
  EXPECT_EQ(c.clinical.patient_ids.size(), 40u);
  EXPECT_EQ(c.ct.patient_ids.size(), 35u);
  EXPECT_EQ(c.pet.patient_ids.size(), 35u);
  EXPECT_EQ(c.ct.patient_ids.front(), c.clinical.patient_ids[5]);
  EXPECT_EQ(c.planted_pet, (std::vector<std::string>{"pet_signal_0", "pet_signal_1"}));
  EXPECT_EQ(c.clinical.feature_names.size(), 5u);
  c.clinical.validate();
  c.ct.validate();
  EXPECT_THROW(generate_multimodal(4, b, b, b, 1, 0.0, 1, 4), InvalidArgument);
}

TEST(Phantom, SpheresAndIntensities) {
  PhantomSpec s;
  s.dims = Dims{40, 40, 40};
  s.gtvp = Sphere{Point3(30, 30, 30), 8.0};
  s.gtvn = {Sphere{Point3(60, 30, 30), 5.0}, Sphere{Point3(36, 30, 30), 5.0}};
  const auto ph = generate_volume_phantom(s);
  // GTVp wins the overlap at x = 36.
  EXPECT_EQ(ph.labels(18, 15, 15), kGtvp);
  EXPECT_EQ(ph.labels(30, 15, 15), kGtvn);
  EXPECT_EQ(ph.labels(0, 0, 0), kBackground);
  EXPECT_EQ(ph.ct(15, 15, 15), s.intensities.ct_gtvp);
  EXPECT_EQ(ph.pet(30, 15, 15), s.intensities.pet_gtvn);
  EXPECT_EQ(ph.pet(0, 0, 0), s.intensities.pet_background);
  EXPECT_TRUE(ph.ct.same_grid(ph.labels));
}

TEST(Phantom, NoiseIsSeeded) {
  PhantomSpec s;
  s.dims = Dims{10, 10, 10};
  s.gtvp = Sphere{Point3(10, 10, 10), 4.0};
  s.intensities.noise_sd = 3.0;
  const auto a = generate_volume_phantom(s), b = generate_volume_phantom(s);
  EXPECT_TRUE(a.ct == b.ct);
  s.seed = 2;
  EXPECT_FALSE(generate_volume_phantom(s).ct == a.ct);
}

TEST(Phantom, GtvpOnlyHasNoNodes) {
  PhantomSpec s;
  s.dims = Dims{20, 20, 20};
  s.gtvp = Sphere{Point3(20, 20, 20), 6.0};
  EXPECT_EQ(node_statistics(generate_volume_phantom(s).labels).gtvn_count, 0u);
}

TEST(Phantom, PlantedDistance) {
  PhantomSpec s;
  s.dims = Dims{90, 20, 20};
  s.gtvp = Sphere{Point3(20, 20, 20), 8.0};
  s.gtvn = {Sphere{Point3(140, 20, 20), 6.0}};
  const auto st = node_statistics(generate_volume_phantom(s).labels);
  ASSERT_EQ(st.gtvn_distances_mm.size(), 1u);
  EXPECT_NEAR(st.gtvn_distances_mm[0], 120.0, std::sqrt(12.0));
}

TEST(Phantom, RejectsBadSpheres) {
  PhantomSpec s;
  s.dims = Dims{10, 10, 10};
  s.gtvp = Sphere{Point3(10, 10, 10), 1.0};
  EXPECT_THROW(generate_volume_phantom(s), InvalidArgument);
  s.gtvp = Sphere{Point3(10, 10, 10), 15.0};
  EXPECT_THROW(generate_volume_phantom(s), InvalidArgument);
}
