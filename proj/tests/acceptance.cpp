// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>

#include "hnrfs/commands.hpp"
#include "hnrfs/nifti.hpp"
#include "hnrfs/run.hpp"
#include "hnrfs/synth.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hnrfs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Check {
  std::ostringstream failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures << (failures.tellp() > 0 ? "; " : "") << what;
  }
  bool ok() const { return const_cast<std::ostringstream&>(failures).tellp() == 0; }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hnrfs");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<SurvivalRecord> records_of(const std::vector<std::pair<double, int>>& v) {
  std::vector<SurvivalRecord> r;
  for (auto [t, e] : v) r.push_back(SurvivalRecord::make(t, e != 0));
  return r;
}

// ---- 1: Cox ----
std::string cox_correctness(Check& c) {
  SynthSpec spec;
  spec.n = 2000;
  spec.betas = Eigen::VectorXd::Constant(1, std::log(2.0));
  spec.covariates = CovariateKind::binary;
  spec.seed = 20220901;
  const auto cohort = generate_survival(spec, 0);
  const auto model = fit_cox(cohort.table.values, cohort.records);
  const double rel = std::abs(model.beta(0) - std::log(2.0)) / std::log(2.0);
  c.expect(model.converged, "fit did not converge");
  c.expect(rel <= 0.10, "beta off by " + fmt(100 * rel) + "%");

  Rng rng(77);
  double worst = 0.0;
  for (int t = 0; t < 25; ++t) {
    const auto n = 2 + rng.below(29);
    const auto p = static_cast<Eigen::Index>(1 + rng.below(4));
    const auto recs = oracle::random_records(rng, n, 6, 0.7);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), p);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
    Eigen::VectorXd beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta(j) = 0.5 * rng.normal();
    const auto ties = t % 2 ? TieMethod::breslow : TieMethod::efron;
    const auto d = nlpl_gradient_hessian(X, recs, beta, ties);
    worst = std::max(worst, (d.gradient - oracle::central_gradient(X, recs, beta, ties == TieMethod::efron)).cwiseAbs().maxCoeff());
  }
  c.expect(worst <= 1e-6, "gradient vs finite differences " + fmt(worst));
  return "beta=" + fmt(model.beta(0)) + " (ln2=" + fmt(std::log(2.0)) + "), max|grad-FD|=" + fmt(worst);
}

// ---- 2: C-index ----
std::string cindex_oracle(Check& c) {
  const auto worked = concordance_index(records_of({{2, 1}, {4, 1}, {6, 0}, {8, 1}}),
                                        std::vector<double>{0.9, 0.3, 0.5, 0.7});
  c.expect(worked == 0.6, "worked example gave " + fmt(worked));
  Rng rng(2);
  int mismatches = 0, compared = 0;
  for (int t = 0; t < 100; ++t) {
    const auto n = 2 + rng.below(199);
    const auto recs = oracle::random_records(rng, n, 1 + static_cast<int>(rng.below(30)), 0.6);
    std::vector<double> risk(n);
    const int levels = 1 + static_cast<int>(rng.below(10));
    for (auto& r : risk) r = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
    if (oracle::cindex_pairs(recs, risk).comparable == 0) continue;
    ++compared;
    if (concordance_index(recs, risk) != oracle::cindex(recs, risk)) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches");
  c.expect(compared >= 95, "only " + std::to_string(compared) + " instances had comparable pairs");
  return "worked example=" + fmt(worked) + ", " + std::to_string(compared) + " random instances exact";
}

// ---- 3: KM and log-rank ----
std::string km_logrank(Check& c) {
  const auto km = km_estimate(records_of({{1, 1}, {2, 1}, {3, 1}}));
  c.expect(km.survival == std::vector<double>{2.0 / 3.0, 1.0 / 3.0, 0.0}, "product-limit hand case");
  const auto g = records_of({{1, 1}, {3, 0}, {4, 1}, {6, 1}});
  const auto same = logrank_test(g, g);
  c.expect(same.chi_square == 0.0 && same.p_value == 1.0, "identical groups");
  const auto two = logrank_test(records_of({{1, 1}, {2, 1}}), records_of({{3, 1}, {4, 1}}));
  c.expect(std::abs(two.chi_square - 2.882) <= 0.001, "two-vs-two chi2 " + fmt(two.chi_square));
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 0.03 * i;
    worst = std::max(worst, std::abs(chi2_sf(x, 1) - std::erfc(std::sqrt(x / 2.0))));
  }
  c.expect(worst <= 1e-10, "chi2_sf vs erfc " + fmt(worst));
  return "two-vs-two chi2=" + fmt(two.chi_square) + ", max|chi2_sf-erfc|=" + fmt(worst);
}

// ---- 4: post-processing ----
std::string postprocessing(Check& c) {
  const Dims d{130, 20, 20};
  const Point3 sp = Point3::Constant(2.0);
  auto paint = [&](LabelVolume& v, const Point3& center, double r, Label l) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if ((v.position(i) - center).norm() <= r) v.set(i, l);
    }
  };
  const Point3 p(20, 20, 20);
  LabelVolume truth(d, sp, Point3::Zero());
  paint(truth, p, 8.0, kGtvp);
  for (double dist : {40.0, 80.0, 120.0}) paint(truth, p + Point3(dist, 0, 0), 5.0, kGtvn);
  LabelVolume pred = truth;
  paint(pred, p + Point3(200.0, 0, 0), 5.0, kGtvn);

  const auto once = filter_distant_nodes(pred, 150.0);
  const auto twice = filter_distant_nodes(once.volume, 150.0);
  c.expect(once.report.removed.size() == 1, std::to_string(once.report.removed.size()) + " nodes removed");
  if (once.report.removed.size() == 1) {
    c.expect(std::abs(once.report.removed[0].distance_mm - 200.0) < 1e-9, "removed node distance");
  }
  c.expect(once.report.kept == 3, "kept node count");
  c.expect(twice.volume == once.volume && twice.report.removed.empty(), "not idempotent");
  bool gtvp_same = true;
  for (std::size_t i = 0; i < pred.size(); ++i) gtvp_same &= (pred[i] == kGtvp) == (once.volume[i] == kGtvp);
  c.expect(gtvp_same, "GTVp voxels changed");
  const double before = dice(pred, truth, kGtvn), after = dice(once.volume, truth, kGtvn);
  c.expect(after >= before, "GTVn Dice decreased");
  return "removed distance=" + (once.report.removed.empty() ? std::string("-") : fmt(once.report.removed[0].distance_mm)) +
         " mm, GTVn Dice " + fmt(before) + " -> " + fmt(after);
}

// ---- 5: radiomics ----
std::string radiomics_sanity(Check& c) {
  const LabelVolume cube(Dims{4, 4, 4}, Point3::Ones(), Point3::Zero(), kGtvp);
  const ScalarVolume flat(Dims{4, 4, 4}, Point3::Ones(), Point3::Zero(), 42.0);
  const auto g = glcm_features(flat, cube, kGtvp);
  const auto f = first_order_features(flat, cube, kGtvp);
  c.expect(f.at("firstorder_Entropy") == 0.0, "constant entropy");
  c.expect(g.at("glcm_Contrast") == 0.0, "constant contrast");
  c.expect(g.at("glcm_JointEnergy") == 1.0, "constant joint energy");

  Rng rng(5);
  int regions = 0;
  for (int t = 0; t < 40; ++t) {
    const Dims d{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
    std::vector<double> img(d.count());
    std::vector<Label> lab(d.count());
    for (std::size_t i = 0; i < d.count(); ++i) {
      img[i] = 200.0 * rng.uniform();
      lab[i] = rng.uniform() < 0.75 ? kGtvp : kBackground;
    }
    const ScalarVolume im(d, Point3::Ones(), Point3::Zero(), img);
    const LabelVolume m(d, Point3::Ones(), Point3::Zero(), lab);
    std::vector<double> inside;
    for (std::size_t i = 0; i < d.count(); ++i) if (lab[i] == kGtvp) inside.push_back(img[i]);
    if (inside.empty()) continue;
    ExtractionSettings st;
    st.symmetric_glcm = t % 2 == 0;
    const auto ib = discretize(inside, st.bin_width);
    std::vector<int> bins(d.count(), 0);
    int ng = 1;
    for (std::size_t i = 0, k = 0; i < d.count(); ++i) {
      if (lab[i] != kGtvp) continue;
      bins[i] = ib[k++];
      ng = std::max(ng, bins[i]);
    }
    const auto mats = glcm_matrices(im, m, kGtvp, st);
    for (std::size_t k = 0; k < kGlcmDirections.size(); ++k) {
      const auto& o = kGlcmDirections[k];
      if (!(mats[k] == oracle::glcm_pairs(m, bins, ng, o[0], o[1], o[2], st.symmetric_glcm))) {
        c.expect(false, "GLCM mismatch in region " + std::to_string(t));
      }
    }
    ++regions;
  }

  PhantomSpec ps;
  ps.dims = Dims{20, 20, 20};
  ps.gtvp = Sphere{Point3(20, 20, 20), 10.0};
  ps.intensities.noise_sd = 30.0;
  const auto ph = generate_volume_phantom(ps);
  auto shifted = ph.ct;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted.set(i, shifted[i] + 1000.0);
  const auto a = glcm_features(ph.ct, ph.labels, kGtvp), b = glcm_features(shifted, ph.labels, kGtvp);
  double worst = 0.0;
  for (const auto& [name, v] : a.entries()) worst = std::max(worst, std::abs(b.at(name) - v));
  c.expect(worst <= 1e-12, "shift invariance " + fmt(worst));

  LabelVolume one(Dims{3, 3, 3}, Point3::Constant(2.0), Point3::Zero());
  one.set(1, 1, 1, kGtvp);
  const auto s = shape_features(one, kGtvp);
  c.expect(s.at("shape_VoxelVolume") == 0.008, "single voxel volume " + fmt(s.at("shape_VoxelVolume")));
  c.expect(s.at("shape_SurfaceArea") == 24.0, "single voxel area");
  return std::to_string(regions) + " GLCM regions exact, shift drift=" + fmt(worst);
}

// ---- 6: end-to-end power ----
std::size_t recovered(const ModalityModel& m, const std::vector<std::string>& planted) {
  std::size_t count = 0;
  for (const auto& name : planted) {
    std::size_t folds = 0;
    for (const auto& r : m.fold_reports) folds += std::count(r.selected.begin(), r.selected.end(), name) > 0;
    if (2 * folds > m.fold_reports.size()) ++count;
  }
  return count;
}

std::string pipeline_power(Check& c) {
  auto cohort_of = [](const MultiModalCohort& mm) {
    Cohort co;
    co.clinical = mm.clinical;
    co.ct = mm.ct;
    co.pet = mm.pet;
    for (std::size_t i = 0; i < mm.records.size(); ++i) co.labels.push_back({mm.clinical.patient_ids[i], mm.records[i]});
    return co;
  };
  auto betas = [](double a, double b, double d, bool null) {
    Eigen::VectorXd v(3);
    v << a, b, d;
    return null ? Eigen::VectorXd::Zero(3).eval() : v;
  };
  PipelineConfig config;
  config.repeats = 10;
  config.inner_k = 5;
  config.outer_k = 5;
  config.seed = 2022;

  const auto planted = generate_multimodal(400, betas(0.8, -0.6, 0.5, false), betas(0.7, 0.5, -0.6, false),
                                           betas(-0.5, 0.6, 0.7, false), 50, 0.25, 31);
  const auto results = build_models(cohort_of(planted), config);
  std::ostringstream rec;
  const std::pair<Modality, const std::vector<std::string>*> want[] = {
      {Modality::clinical, &planted.planted_clinical}, {Modality::ct, &planted.planted_ct}, {Modality::pet, &planted.planted_pet}};
  for (const auto& [m, names] : want) {
    const auto k = recovered(results.models.at(m), *names);
    rec << to_string(m) << "=" << k << "/3 ";
    c.expect(k >= 2, to_string(m) + " recovered " + std::to_string(k) + "/3");
  }
  const auto labels = cohort_of(planted).labels;
  const auto ev = evaluate_risks(results.risks, labels, config.fusion, config.stratification_threshold);
  const double fused = ev.cindex.at("fused").value_or(0.0);
  c.expect(fused >= 0.65, "fused C-index " + fmt(fused));
  const double p = ev.groups.at("fused").logrank ? ev.groups.at("fused").logrank->p_value : 1.0;
  c.expect(p <= 0.05, "log-rank p " + fmt(p));

  const auto null = generate_multimodal(400, betas(0, 0, 0, true), betas(0, 0, 0, true), betas(0, 0, 0, true), 50, 0.25, 32);
  const auto null_results = build_models(cohort_of(null), config);
  const auto null_ev = evaluate_risks(null_results.risks, cohort_of(null).labels, config.fusion, 0.0);
  const double null_c = null_ev.cindex.at("fused").value_or(0.0);
  c.expect(std::abs(null_c - 0.5) <= 0.06, "null fused C-index " + fmt(null_c));
  return rec.str() + "fused=" + fmt(fused) + " null=" + fmt(null_c) + " logrank p=" + fmt(p);
}

// ---- 7: determinism and formats ----
std::string determinism(Check& c) {
  test::TempDir dir;
  const auto sim = (dir / "sim").string();
  c.expect(cli({"--seed", "7", "--output", sim, "simulate", "--n", "150", "--noise", "10"}) == 0, "simulate");
  const auto config = (dir / "sim" / "config.json").string();
  c.expect(cli({"--config", config, "--repeats", "3", "--output", (dir / "a").string(), "run"}) == 0, "run a");
  c.expect(cli({"--config", config, "--repeats", "3", "--output", (dir / "b").string(), "run"}) == 0, "run b");
  for (const char* f : {"risk_scores.csv", "run_report.json", "selection_report.json", "km_curves.csv"}) {
    const auto x = test::read_file(dir / "a" / f);
    c.expect(!x.empty() && x == test::read_file(dir / "b" / f), std::string(f) + " differs between reruns");
  }

  const auto st = (dir / "staged").string();
  c.expect(cli({"--config", config, "--repeats", "3", "--output", st, "features"}) == 0, "features");
  c.expect(cli({"--config", config, "--repeats", "3", "--output", st, "fit", "--features", st}) == 0, "fit");
  c.expect(cli({"--config", config, "--repeats", "3", "--output", st, "evaluate"}) == 0, "evaluate");
  double worst = 0.0;
  try {
    const auto ra = read_risk_csv(dir / "a" / "risk_scores.csv");
    const auto rb = read_risk_csv(dir / "staged" / "risk_scores.csv");
    c.expect(ra.size() == rb.size(), "risk row count");
    for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i) {
      worst = std::max(worst, std::abs(ra[i].risk.fused - rb[i].risk.fused));
    }
    const json ca = json::parse(test::read_file(dir / "a" / "run_report.json"))["c_index"];
    const json cb = json::parse(test::read_file(dir / "staged" / "evaluation.json"))["c_index"];
    for (const char* k : {"clinical", "ct", "pet", "fused"}) {
      worst = std::max(worst, std::abs(ca[k].get<double>() - cb[k].get<double>()));
    }
  } catch (const std::exception& e) {
    c.expect(false, std::string("staged outputs: ") + e.what());
  }
  c.expect(worst <= 1e-12, "staged vs monolithic " + fmt(worst));

  Rng rng(9);
  std::vector<double> v(6 * 5 * 4);
  for (auto& x : v) x = static_cast<double>(static_cast<float>(500.0 * rng.normal()));
  const ScalarVolume vol(Dims{6, 5, 4}, Point3(2, 2, 3), Point3(-1, 2.5, 7), v);
  write_nifti(vol, dir / "le.nii");
  c.expect(read_scalar_nifti(dir / "le.nii") == vol, "NIfTI round trip");
  auto bytes = test::read_file(dir / "le.nii");
  auto flip = [&](std::size_t off, std::size_t width, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(bytes.begin() + off + i * width, bytes.begin() + off + (i + 1) * width);
  };
  flip(0, 4, 1);
  flip(40, 2, 8);
  flip(70, 2, 2);
  flip(76, 4, 8);
  flip(108, 4, 3);
  flip(252, 2, 2);
  flip(256, 4, 6);
  flip(280, 4, 12);
  flip(352, 4, vol.size());
  test::write_file(dir / "be.nii", bytes);
  c.expect(read_scalar_nifti(dir / "be.nii") == vol, "byte-swapped NIfTI");
  return "reruns byte-identical, staged vs run max diff=" + fmt(worst);
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<std::string(Check&)> body;
    double budget_s;
  };
  const std::vector<Criterion> criteria = {
      {"cox correctness", cox_correctness, 30},
      {"c-index oracle equivalence", cindex_oracle, 60},
      {"kaplan-meier and log-rank", km_logrank, 60},
      {"node post-processing", postprocessing, 60},
      {"radiomics sanity", radiomics_sanity, 60},
      {"end-to-end pipeline power", pipeline_power, 600},
      {"determinism and formats", determinism, 300},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    std::string detail;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      detail = criteria[i].body(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(secs < criteria[i].budget_s, "took " + fmt(secs) + " s");
    const bool ok = c.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].name << ": " << detail << " ("
              << fmt(secs) << " s)";
    if (!ok) std::cout << " -- " << c.failures.str();
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
