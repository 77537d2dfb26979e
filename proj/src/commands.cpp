#include "hnrfs/commands.hpp"

#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "hnrfs/nifti.hpp"
#include "hnrfs/random.hpp"
#include "hnrfs/run.hpp"
#include "hnrfs/synth.hpp"

namespace hnrfs {

using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> d_max;
  std::optional<int> repeats;
  std::string output;
};

PipelineConfig resolve_config(const GlobalOptions& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : PipelineConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.d_max) c.d_max_mm = *g.d_max;
  if (g.repeats) c.repeats = *g.repeats;
  if (!g.output.empty()) c.output_dir = g.output;
  c.validate();
  return c;
}

json provenance_block(const Provenance& p) {
  return json{{"tool", "hnrfs"}, {"version", p.version}, {"config_hash", p.config_hash}, {"seed", p.seed}, {"rng", p.rng}};
}

void ensure_not_input(const std::filesystem::path& out, std::initializer_list<std::filesystem::path> inputs) {
  for (const auto& in : inputs) {
    if (in.empty() || !std::filesystem::exists(in) || !std::filesystem::exists(out)) continue;
    if (std::filesystem::equivalent(in, out)) {
      throw InvalidArgument("output '" + out.string() + "' would overwrite input '" + in.string() + "'");
    }
  }
}

// Runs a stage body against a fresh output set; any failure removes what
// the stage wrote and is re-raised tagged with the stage name.
template <typename Fn>
void staged(const std::string& stage, const std::filesystem::path& dir, Fn&& body) {
  std::optional<OutputSet> out;
  try {
    out.emplace(dir);
    body(*out);
  } catch (const StageError&) {
    if (out) out->rollback();
    throw;
  } catch (const std::exception& e) {
    if (out) out->rollback();
    throw StageError(stage, "", e.what());
  }
}

// ---- simulate ----

struct SimulateOptions {
  std::size_t n = 400;
  std::size_t noise = 50;
  double censoring = 0.25;
  std::size_t missing_gtvp = 0;
  bool null_model = false;
  std::size_t phantoms = 0;
};

Eigen::VectorXd planted(std::initializer_list<double> b, bool null_model) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(b.size()));
  Eigen::Index i = 0;
  for (double x : b) v(i++) = null_model ? 0.0 : x;
  return v;
}

void write_phantom_cohort(std::size_t count, std::uint64_t seed, const PipelineConfig& config,
                          OutputSet& out, const Provenance& prov) {
  const auto vol_dir = out.dir() / "volumes";
  const auto ref_dir = out.dir() / "references";
  std::filesystem::create_directories(vol_dir);
  std::filesystem::create_directories(ref_dir);
  std::vector<ClinicalRecord> clinical;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 5000 + i));
    char id[16];
    std::snprintf(id, sizeof id, "V%04zu", i);
    PhantomSpec spec;
    spec.dims = Dims{48, 48, 136};
    spec.seed = derive_seed(seed, 9000 + i);
    spec.intensities.noise_sd = 2.0;
    const double radius = 8.0 + 8.0 * rng.uniform();
    const Point3 p(48.0, 48.0, 40.0);
    spec.gtvp = Sphere{p, radius};
    spec.gtvn.push_back(Sphere{p + Point3(0.0, 20.0 + 10.0 * rng.uniform(), 20.0), 6.0});
    PhantomSpec truth = spec;
    // Every other patient carries a spurious detection far from the tumor.
    if (i % 2 == 1) spec.gtvn.push_back(Sphere{p + Point3(0.0, 0.0, 200.0), 5.0});
    const Phantom ph = generate_volume_phantom(spec);
    const Phantom ref = generate_volume_phantom(truth);
    write_nifti(ph.labels, out.file("volumes/" + std::string(id) + "__mask.nii"));
    write_nifti(ph.ct, out.file("volumes/" + std::string(id) + "__CT.nii"));
    write_nifti(ph.pet, out.file("volumes/" + std::string(id) + "__PT.nii"));
    write_nifti(ref.labels, out.file("references/" + std::string(id) + "__mask.nii"));

    ClinicalRecord r;
    r.patient_id = id;
    r.gender = rng.uniform() < 0.8 ? 1.0 : 0.0;
    r.age = std::round(45.0 + 25.0 * rng.uniform());
    r.tobacco = rng.uniform() < 0.5 ? std::optional<double>(1.0) : std::nullopt;
    r.alcohol = rng.uniform() < 0.5 ? 1.0 : 0.0;
    r.performance_status = std::floor(3.0 * rng.uniform());
    r.hpv_status = rng.uniform() < 0.3 ? std::nullopt : std::optional<double>(rng.uniform() < 0.5 ? 1.0 : 0.0);
    r.surgery = rng.uniform() < 0.3 ? 1.0 : 0.0;
    r.chemotherapy = rng.uniform() < 0.8 ? 1.0 : 0.0;
    const double hazard = 0.06 * std::exp((radius - 12.0) / 3.0);
    const double t = rng.exponential(hazard);
    const double c = 6.0 + 54.0 * rng.uniform();
    r.outcome = SurvivalRecord::make(std::max(std::min(t, c), 0.1), t <= c);
    clinical.push_back(r);
  }
  write_clinical_csv(clinical, out.file("clinical.csv"), prov);

  PipelineConfig vc = config;
  vc.volumes_dir = "volumes";
  vc.reference_dir = "references";
  vc.clinical_csv = "clinical.csv";
  vc.feature_dir.clear();
  json j = vc.to_json();
  j["paths"].erase("output_dir");
  write_text(out.file("volume_config.json"), j.dump(2) + "\n");
}

void cmd_simulate(const GlobalOptions& g, const SimulateOptions& s) {
  PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  staged("simulate", config.output_dir, [&](OutputSet& out) {
    const auto cohort = generate_multimodal(
        s.n, planted({0.8, -0.6, 0.5}, s.null_model), planted({0.7, 0.5, -0.6}, s.null_model),
        planted({-0.5, 0.6, 0.7}, s.null_model), s.noise, s.censoring, config.seed, s.missing_gtvp);
    std::vector<LabelRow> labels;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
      labels.push_back({cohort.clinical.patient_ids[i], cohort.records[i]});
    }
    write_feature_csv(cohort.clinical, out.file("clinical_features.csv"), prov);
    write_feature_csv(cohort.ct, out.file("ct_features.csv"), prov);
    write_feature_csv(cohort.pet, out.file("pet_features.csv"), prov);
    write_labels_csv(labels, out.file("labels.csv"), prov);
    json truth{{"provenance", provenance_block(prov)},
               {"null", s.null_model},
               {"planted", {{"clinical", cohort.planted_clinical}, {"ct", cohort.planted_ct}, {"pet", cohort.planted_pet}}}};
    write_text(out.file("planted.json"), truth.dump(2) + "\n");

    PipelineConfig fc = config;
    fc.feature_dir = ".";
    fc.volumes_dir.clear();
    fc.clinical_csv.clear();
    fc.reference_dir.clear();
    json j = fc.to_json();
    j["paths"].erase("output_dir");
    write_text(out.file("config.json"), j.dump(2) + "\n");

    if (s.phantoms > 0) write_phantom_cohort(s.phantoms, config.seed, config, out, prov);
  });
}

// ---- postprocess ----

struct PostprocessOptions {
  std::string mask;
  std::string reference;
};

PostprocessRow postprocess_one(const std::string& id, const std::filesystem::path& mask_path,
                               const std::filesystem::path& ref_path, double d_max, OutputSet& out) {
  const LabelVolume mask = read_label_nifti(mask_path);
  const FilterResult r = filter_distant_nodes(mask, d_max);
  PostprocessRow row;
  row.patient_id = id;
  row.report = r.report;
  row.stats = node_statistics(r.volume);
  if (!ref_path.empty()) {
    const LabelVolume ref = read_label_nifti(ref_path);
    row.dice = DiceRow{dice(mask, ref, kGtvp), dice(r.volume, ref, kGtvp), dice(mask, ref, kGtvn),
                       dice(r.volume, ref, kGtvn)};
  }
  const auto target = out.dir() / (id + "__mask.nii");
  ensure_not_input(target, {mask_path, ref_path});
  write_nifti(r.volume, out.file(id + "__mask.nii"));
  return row;
}

std::string stem_id(const std::filesystem::path& p) {
  std::string name = p.filename().string();
  for (const std::string suffix : {"__mask.nii", ".nii"}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) return name.substr(0, name.size() - suffix.size());
  }
  return name;
}

void cmd_postprocess(const GlobalOptions& g, const PostprocessOptions& o) {
  const PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  staged("postprocess", config.output_dir, [&](OutputSet& out) {
    std::vector<PostprocessRow> rows;
    if (!o.mask.empty()) {
      const std::string id = stem_id(o.mask);
      rows.push_back(postprocess_one(id, o.mask, o.reference, config.d_max_mm, out));
    } else {
      if (config.volumes_dir.empty()) throw InvalidArgument("postprocess needs --mask or paths.volumes_dir");
      std::vector<std::filesystem::path> masks;
      for (const auto& e : std::filesystem::directory_iterator(config.volumes_dir)) {
        if (e.path().filename().string().ends_with("__mask.nii")) masks.push_back(e.path());
      }
      std::sort(masks.begin(), masks.end());
      for (const auto& m : masks) {
        const std::string id = stem_id(m);
        std::filesystem::path ref;
        if (!config.reference_dir.empty() && std::filesystem::exists(config.reference_dir / m.filename())) {
          ref = config.reference_dir / m.filename();
        }
        try {
          rows.push_back(postprocess_one(id, m, ref, config.d_max_mm, out));
        } catch (const std::exception& e) {
          throw StageError("postprocess", id, e.what());
        }
      }
    }
    json patients = json::array();
    double sums[4] = {0, 0, 0, 0};
    int n = 0;
    for (const auto& r : rows) {
      patients.push_back(to_json(r));
      if (r.dice) {
        sums[0] += r.dice->gtvn_before;
        sums[1] += r.dice->gtvp_before;
        sums[2] += r.dice->gtvn_after;
        sums[3] += r.dice->gtvp_after;
        ++n;
      }
    }
    json report{{"provenance", provenance_block(prov)}, {"d_max_mm", config.d_max_mm}, {"patients", patients}};
    if (n > 0) {
      auto row = [&](double gtvn, double gtvp) {
        return json{{"gtvn_dice", gtvn / n}, {"gtvp_dice", gtvp / n}, {"mean_dice", 0.5 * (gtvn + gtvp) / n}};
      };
      report["dice"] = {{"patients", n}, {"original", row(sums[0], sums[1])}, {"postprocessed", row(sums[2], sums[3])}};
    }
    write_text(out.file("postprocess.json"), report.dump(2) + "\n");
  });
}

// ---- features / fit ----

void cmd_features(const GlobalOptions& g) {
  const PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  staged("features", config.output_dir, [&](OutputSet& out) {
    Cohort cohort;
    if (!config.volumes_dir.empty()) {
      cohort = build_cohort_from_volumes(config);
    } else if (!config.feature_dir.empty()) {
      ensure_not_input(out.dir(), {config.feature_dir});
      cohort = load_cohort_from_features(config.feature_dir, config.radiomics);
    } else {
      throw InvalidArgument("features needs paths.volumes_dir or paths.feature_dir");
    }
    write_cohort(cohort, out, prov);
  });
}

void cmd_fit(const GlobalOptions& g, const std::string& features) {
  const PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  std::filesystem::path dir = features;
  if (dir.empty()) dir = config.feature_dir.empty() ? config.output_dir : config.feature_dir;
  staged("fit", config.output_dir, [&](OutputSet& out) {
    const Cohort cohort = load_cohort_from_features(dir, config.radiomics);
    const ModelResults results = build_models(cohort, config);
    write_models(results, cohort, out, prov);
  });
}

// ---- evaluate / km ----

struct EvaluateOptions {
  std::string risk;
  std::string labels;
};

std::filesystem::path default_input(const std::string& given, const PipelineConfig& c, const std::string& name) {
  if (!given.empty()) return given;
  return c.output_dir / name;
}

void cmd_evaluate(const GlobalOptions& g, const EvaluateOptions& o) {
  const PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  const auto risk_path = default_input(o.risk, config, "risk_scores.csv");
  const auto labels_path = default_input(o.labels, config, "labels.csv");
  staged("evaluate", config.output_dir, [&](OutputSet& out) {
    const auto risks = read_risk_csv(risk_path);
    const auto labels = read_labels_csv(labels_path);
    const Evaluation ev = evaluate_risks(risks, labels, config.fusion, config.stratification_threshold);
    json report{{"provenance", provenance_block(prov)},
                {"c_index", cindex_json(ev)},
                {"stratification", {{"threshold", config.stratification_threshold}, {"groups", groups_json(ev)}}}};
    write_text(out.file("evaluation.json"), report.dump(2) + "\n");
  });
}

struct KmOptions {
  std::string risk;
  std::string labels;
  std::string group_a;
  std::string group_b;
};

void cmd_km(const GlobalOptions& g, const KmOptions& o) {
  const PipelineConfig config = resolve_config(g);
  const Provenance prov = config.provenance();
  staged("km", config.output_dir, [&](OutputSet& out) {
    std::vector<NamedCurve> curves;
    json report{{"provenance", provenance_block(prov)}};
    if (!o.group_a.empty() || !o.group_b.empty()) {
      if (o.group_a.empty() || o.group_b.empty()) throw InvalidArgument("km needs both --group-a and --group-b");
      const auto a = read_labels_csv(o.group_a);
      const auto b = read_labels_csv(o.group_b);
      std::vector<SurvivalRecord> ra, rb;
      for (const auto& r : a) ra.push_back(r.record);
      for (const auto& r : b) rb.push_back(r.record);
      curves.push_back({"groups", "a", km_estimate(ra)});
      curves.push_back({"groups", "b", km_estimate(rb)});
      json lr = nullptr;
      std::string note;
      try {
        lr = to_json(logrank_test(ra, rb));
      } catch (const DegenerateError& e) {
        note = e.what();
      }
      report["n_a"] = ra.size();
      report["n_b"] = rb.size();
      report["logrank"] = lr;
      if (!note.empty()) report["note"] = note;
    } else {
      const auto risks = read_risk_csv(default_input(o.risk, config, "risk_scores.csv"));
      const auto labels = read_labels_csv(default_input(o.labels, config, "labels.csv"));
      const Evaluation ev = evaluate_risks(risks, labels, config.fusion, config.stratification_threshold);
      curves = km_curves(ev);
      report["threshold"] = config.stratification_threshold;
      report["groups"] = groups_json(ev);
    }
    write_km_csv(curves, out.file("km_curves.csv"), prov);
    write_text(out.file("km_report.json"), report.dump(2) + "\n");
  });
}

void cmd_run(const GlobalOptions& g) {
  const PipelineConfig config = resolve_config(g);
  ensure_not_input(config.output_dir, {config.volumes_dir, config.feature_dir});
  run_pipeline(config);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"hnrfs: segmentation-guided recurrence-free survival modelling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("hnrfs ") + HNRFS_VERSION);

  GlobalOptions g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides config)");
  app.add_option("--d-max", g.d_max, "Node distance threshold in mm (overrides config)");
  app.add_option("--repeats", g.repeats, "Inner cross-validation repeats (overrides config)");
  app.add_option("--output", g.output, "Output directory (overrides config)");

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic cohort in pipeline input formats");
  simulate->add_option("--n", sim.n, "Patients")->capture_default_str();
  simulate->add_option("--noise", sim.noise, "Noise features per modality")->capture_default_str();
  simulate->add_option("--censoring", sim.censoring, "Censored fraction")->capture_default_str();
  simulate->add_option("--missing-gtvp", sim.missing_gtvp, "Patients without radiomics")->capture_default_str();
  simulate->add_flag("--null", sim.null_model, "Zero all planted effects");
  simulate->add_option("--phantoms", sim.phantoms, "Also write this many phantom volume patients")
      ->capture_default_str();

  PostprocessOptions pp;
  auto* postprocess = app.add_subcommand("postprocess", "Remove distant GTVn components from masks");
  postprocess->add_option("--mask", pp.mask, "Single mask volume (default: every mask in paths.volumes_dir)");
  postprocess->add_option("--reference", pp.reference, "Reference mask for Dice");

  auto* features = app.add_subcommand("features", "Build clinical, CT and PET feature tables");

  std::string fit_dir;
  auto* fit = app.add_subcommand("fit", "Select features and fit per-modality Cox models");
  fit->add_option("--features", fit_dir, "Directory with feature tables and labels.csv");

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "C-index and risk-group comparison for a risk CSV");
  evaluate->add_option("--risk", ev.risk, "Risk score CSV");
  evaluate->add_option("--labels", ev.labels, "Labels CSV");

  KmOptions km;
  auto* kmc = app.add_subcommand("km", "Kaplan-Meier curves and log-rank test");
  kmc->add_option("--risk", km.risk, "Risk score CSV");
  kmc->add_option("--labels", km.labels, "Labels CSV");
  kmc->add_option("--group-a", km.group_a, "Labels CSV of the first group");
  kmc->add_option("--group-b", km.group_b, "Labels CSV of the second group");

  auto* run = app.add_subcommand("run", "Full pipeline from config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*simulate) cmd_simulate(g, sim);
    else if (*postprocess) cmd_postprocess(g, pp);
    else if (*features) cmd_features(g);
    else if (*fit) cmd_fit(g, fit_dir);
    else if (*evaluate) cmd_evaluate(g, ev);
    else if (*kmc) cmd_km(g, km);
    else if (*run) cmd_run(g);
  } catch (const StageError& e) {
    std::cerr << "hnrfs: error " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "hnrfs: error [stage=config] " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hnrfs
