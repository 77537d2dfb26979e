#include "hnrfs/run.hpp"

#include <cmath>
#include <set>

#include "hnrfs/nifti.hpp"

namespace hnrfs {

using nlohmann::json;

StageError::StageError(std::string stage, std::string patient, const std::string& message)
    : Error("[stage=" + stage + (patient.empty() ? "" : " patient=" + patient) + "] " + message),
      stage_(std::move(stage)),
      patient_(std::move(patient)) {}

OutputSet::OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create output directory '" + dir_.string() + "'");
}

std::filesystem::path OutputSet::file(const std::string& name) {
  auto p = dir_ / name;
  if (std::find(written_.begin(), written_.end(), p) == written_.end()) written_.push_back(p);
  return p;
}

void OutputSet::rollback() noexcept {
  for (const auto& p : written_) {
    std::error_code ec;
    std::filesystem::remove(p, ec);
  }
  written_.clear();
}

namespace {

bool same_spacing(const Point3& a, const Point3& b) { return (a - b).cwiseAbs().maxCoeff() < 1e-9; }

template <typename Fn>
auto in_stage(const std::string& stage, const std::string& patient, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, patient, e.what());
  }
}

FeatureTable table_from_vectors(Modality m, const std::vector<std::string>& ids,
                                const std::vector<FeatureVector>& vectors) {
  FeatureTable t;
  t.modality = m;
  t.patient_ids = ids;
  if (!vectors.empty()) t.feature_names = vectors.front().names();
  t.values.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(t.feature_names.size()));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].names() != t.feature_names) throw SchemaError("feature vectors disagree on names");
    for (std::size_t j = 0; j < t.feature_names.size(); ++j) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i].entries()[j].second;
    }
  }
  t.validate();
  return t;
}

}  // namespace

Cohort build_cohort_from_volumes(const PipelineConfig& config) {
  if (config.volumes_dir.empty() || config.clinical_csv.empty()) {
    throw StageError("features", "", "paths.volumes_dir and paths.clinical_csv are required");
  }
  const auto clinical = in_stage("ingest", "", [&] { return read_clinical_csv(config.clinical_csv, true); });
  Cohort cohort;
  std::map<std::string, NodeStatistics> stats;
  std::vector<std::string> rad_ids;
  std::vector<FeatureVector> ct_vectors, pet_vectors;

  for (const auto& rec : clinical) {
    const std::string& id = rec.patient_id;
    cohort.labels.push_back({id, *rec.outcome});

    const LabelVolume mask =
        in_stage("postprocess", id, [&] { return read_label_nifti(config.volumes_dir / (id + "__mask.nii")); });
    PostprocessRow row;
    row.patient_id = id;
    const FilterResult filtered = in_stage("postprocess", id, [&] {
      auto r = filter_distant_nodes(mask, config.d_max_mm);
      if (!config.reference_dir.empty()) {
        const auto ref_path = config.reference_dir / (id + "__mask.nii");
        if (std::filesystem::exists(ref_path)) {
          const LabelVolume ref = read_label_nifti(ref_path);
          row.dice = DiceRow{dice(mask, ref, kGtvp), dice(r.volume, ref, kGtvp), dice(mask, ref, kGtvn),
                             dice(r.volume, ref, kGtvn)};
        }
      }
      return r;
    });
    row.report = filtered.report;
    row.stats = node_statistics(filtered.volume);
    stats[id] = row.stats;
    cohort.postprocess.push_back(std::move(row));

    if (!config.radiomics) continue;
    auto features = in_stage("features", id, [&] {
      ScalarVolume ct = read_scalar_nifti(config.volumes_dir / (id + "__CT.nii"));
      ScalarVolume pet = read_scalar_nifti(config.volumes_dir / (id + "__PT.nii"));
      LabelVolume m = filtered.volume;
      if (config.resample) {
        if (!same_spacing(ct.spacing(), config.target_spacing)) ct = resample_trilinear(ct, config.target_spacing);
        if (!same_spacing(pet.spacing(), config.target_spacing)) pet = resample_trilinear(pet, config.target_spacing);
        if (!same_spacing(m.spacing(), config.target_spacing)) m = resample_nearest(m, config.target_spacing);
      }
      if (!ct.same_grid(m) || !pet.same_grid(m)) throw ShapeError("CT, PET and mask grids differ");
      return extract_all(ct, pet, m, config.extraction);
    });
    if (features) {
      rad_ids.push_back(id);
      ct_vectors.push_back(std::move(features->ct));
      pet_vectors.push_back(std::move(features->pet));
    }
  }
  cohort.clinical = in_stage("encode", "", [&] { return encode_clinical(clinical, stats); });
  if (config.radiomics && !rad_ids.empty()) {
    cohort.ct = table_from_vectors(Modality::ct, rad_ids, ct_vectors);
    cohort.pet = table_from_vectors(Modality::pet, rad_ids, pet_vectors);
  }
  return cohort;
}

Cohort load_cohort_from_features(const std::filesystem::path& dir, bool radiomics) {
  return in_stage("ingest", "", [&] {
    Cohort cohort;
    cohort.clinical = read_feature_csv(dir / "clinical_features.csv", Modality::clinical);
    cohort.labels = read_labels_csv(dir / "labels.csv");
    if (radiomics) {
      if (std::filesystem::exists(dir / "ct_features.csv")) {
        cohort.ct = read_feature_csv(dir / "ct_features.csv", Modality::ct);
      }
      if (std::filesystem::exists(dir / "pet_features.csv")) {
        cohort.pet = read_feature_csv(dir / "pet_features.csv", Modality::pet);
      }
    }
    return cohort;
  });
}

ModelResults build_models(const Cohort& cohort, const PipelineConfig& config) {
  config.validate();
  std::map<std::string, SurvivalRecord> outcome;
  std::vector<std::string> ids;
  std::vector<SurvivalRecord> all_records;
  for (const auto& l : cohort.labels) {
    if (!outcome.emplace(l.patient_id, l.record).second) {
      throw StageError("fit", l.patient_id, "duplicate label row");
    }
    ids.push_back(l.patient_id);
    all_records.push_back(l.record);
  }
  const std::set<std::string> clinical_ids(cohort.clinical.patient_ids.begin(), cohort.clinical.patient_ids.end());
  for (const auto& id : ids) {
    if (!clinical_ids.count(id)) throw StageError("fit", id, "patient has no clinical features");
  }

  const std::uint64_t outer_seed = derive_seed(config.seed, 0xF01D);
  const CVPlan outer = in_stage("fit", "", [&] {
    return config.stratify_events ? make_stratified_cv_plan(ids, all_records, config.outer_k, 1, outer_seed)
                                  : make_cv_plan(ids, config.outer_k, 1, outer_seed);
  });
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < ids.size(); ++i) fold_of[ids[i]] = outer.fold_of[0][i];

  ModelResults results;
  auto fit_one = [&](const FeatureTable& table) {
    std::vector<SurvivalRecord> records;
    std::vector<int> folds;
    for (const auto& id : table.patient_ids) {
      const auto it = outcome.find(id);
      if (it == outcome.end()) throw StageError("fit", id, "patient has features but no outcome");
      records.push_back(it->second);
      folds.push_back(fold_of.at(id));
    }
    const std::string stage = "fit:" + to_string(table.modality);
    results.models[table.modality] = in_stage(stage, "", [&] {
      return fit_modality_model(table, records, folds, config.outer_k,
                                config.selection_settings(table.modality));
    });
  };

  // Restrict the clinical table to labelled patients, in label order.
  std::vector<std::size_t> clinical_rows;
  for (const auto& id : ids) clinical_rows.push_back(*cohort.clinical.row(id));
  const FeatureTable clinical = cohort.clinical.select_rows(clinical_rows);
  fit_one(clinical);
  const bool use_radiomics = config.radiomics && cohort.ct && cohort.pet;
  if (use_radiomics) {
    fit_one(*cohort.ct);
    fit_one(*cohort.pet);
  }

  std::vector<PatientRisk> risks;
  const auto& clin_model = results.models.at(Modality::clinical);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    PatientRisk p;
    p.patient_id = ids[i];
    p.clinical = clin_model.oof_scores(static_cast<Eigen::Index>(i));
    p.has_gtvp = false;
    if (use_radiomics) {
      const auto ct_row = cohort.ct->row(ids[i]);
      const auto pet_row = cohort.pet->row(ids[i]);
      if (ct_row && pet_row) {
        p.has_gtvp = true;
        p.ct = results.models.at(Modality::ct).oof_scores(static_cast<Eigen::Index>(*ct_row));
        p.pet = results.models.at(Modality::pet).oof_scores(static_cast<Eigen::Index>(*pet_row));
      }
    }
    risks.push_back(std::move(p));
  }
  risks = fuse_risk(std::move(risks), config.fusion);
  std::vector<double> fused;
  for (const auto& p : risks) fused.push_back(p.fused);
  const auto groups = stratify(fused, config.stratification_threshold);
  for (std::size_t i = 0; i < risks.size(); ++i) results.risks.push_back({risks[i], groups[i]});
  return results;
}

Evaluation evaluate_risks(std::span<const RiskRow> risks, std::span<const LabelRow> labels,
                          FusionMode mode, double threshold) {
  std::map<std::string, SurvivalRecord> outcome;
  for (const auto& l : labels) outcome.emplace(l.patient_id, l.record);

  std::vector<PatientRisk> plain;
  for (const auto& r : risks) plain.push_back(r.risk);
  // Re-derive the per-modality transform used in fusion by fusing each
  // modality on its own.
  auto transformed = [&](std::optional<double> PatientRisk::*slot) {
    std::vector<PatientRisk> single;
    for (const auto& p : plain) {
      PatientRisk q;
      q.patient_id = p.patient_id;
      q.has_gtvp = false;
      q.clinical = p.*slot;
      if (q.clinical) single.push_back(q);
    }
    return fuse_risk(std::move(single), mode);
  };

  Evaluation ev;
  auto score_column = [&](const std::string& name, const std::vector<PatientRisk>& rows,
                          const std::vector<RiskGroup>& groups) {
    std::vector<SurvivalRecord> recs;
    std::vector<double> score;
    for (const auto& p : rows) {
      const auto it = outcome.find(p.patient_id);
      if (it == outcome.end()) throw StageError("evaluate", p.patient_id, "no outcome for scored patient");
      recs.push_back(it->second);
      score.push_back(p.fused);
    }
    std::optional<double> c;
    if (recs.size() >= 2) {
      try {
        c = concordance_index(recs, score);
      } catch (const DegenerateError&) {
      }
    }
    ev.cindex[name] = c;
    if (!recs.empty()) ev.groups[name] = compare_groups(recs, groups);
  };

  const std::vector<std::pair<std::string, std::optional<double> PatientRisk::*>> columns = {
      {"clinical", &PatientRisk::clinical}, {"ct", &PatientRisk::ct}, {"pet", &PatientRisk::pet}};
  for (const auto& [name, slot] : columns) {
    const auto rows = transformed(slot);
    if (rows.empty()) {
      ev.cindex[name] = std::nullopt;
      continue;
    }
    std::vector<double> s;
    for (const auto& p : rows) s.push_back(p.fused);
    score_column(name, rows, stratify(s, threshold));
  }
  std::vector<RiskGroup> fused_groups;
  for (const auto& r : risks) fused_groups.push_back(r.group);
  score_column("fused", plain, fused_groups);
  return ev;
}

json to_json(const LogRankResult& r) {
  return json{{"chi_square", r.chi_square}, {"p_value", r.p_value}, {"neg_log2_p", r.neg_log2_p}};
}

json to_json(const SelectionReport& r) {
  json ranked = json::array();
  for (const auto& f : r.ranked) {
    ranked.push_back({{"name", f.name}, {"mean_cindex", f.mean_cindex}, {"failed_folds", f.failed_folds}});
  }
  json correlated = json::array();
  for (const auto& d : r.dropped_correlated) {
    correlated.push_back({{"removed", d.removed}, {"kept", d.kept}, {"r", d.r}});
  }
  json trace = json::array();
  for (const auto& s : r.trace) trace.push_back({{"added", s.added}, {"mean_cindex", s.mean_cindex}});
  return json{{"modality", to_string(r.modality)},
              {"cap", r.cap},
              {"ranked", ranked},
              {"dropped_low_signal", r.dropped_low_signal},
              {"dropped_correlated", correlated},
              {"selected", r.selected},
              {"trace", trace},
              {"failed_fits", r.failed_fits}};
}

json to_json(const GroupComparison& g) {
  return json{{"n_low", g.n_low},
              {"n_high", g.n_high},
              {"logrank", g.logrank ? to_json(*g.logrank) : json(nullptr)},
              {"note", g.note}};
}

json to_json(const PostprocessRow& r) {
  json removed = json::array();
  for (const auto& n : r.report.removed) {
    removed.push_back({{"voxels", n.component.voxel_count},
                       {"volume_ml", n.component.volume_ml},
                       {"centroid_mm", {n.component.centroid.x(), n.component.centroid.y(), n.component.centroid.z()}},
                       {"distance_mm", n.distance_mm}});
  }
  json j{{"patient_id", r.patient_id},
         {"has_reference", r.report.has_reference},
         {"d_max_mm", r.report.d_max_mm},
         {"kept_nodes", r.report.kept},
         {"kept_distances_mm", r.report.kept_distances_mm},
         {"removed_nodes", removed},
         {"node_statistics",
          {{"gtvp_count", r.stats.gtvp_count},
           {"gtvp_volume_ml", r.stats.gtvp_volume_ml},
           {"gtvn_count", r.stats.gtvn_count},
           {"gtvn_volume_ml", r.stats.gtvn_volume_ml},
           {"smallest_gtvn_ml", r.stats.smallest_gtvn_ml},
           {"gtvn_distances_mm", r.stats.gtvn_distances_mm}}}};
  if (!r.report.has_reference) j["note"] = "no GTVp reference; nodes left unchanged";
  if (r.dice) {
    j["dice"] = {{"gtvp_before", r.dice->gtvp_before},
                 {"gtvp_after", r.dice->gtvp_after},
                 {"gtvn_before", r.dice->gtvn_before},
                 {"gtvn_after", r.dice->gtvn_after}};
  }
  return j;
}

json cindex_json(const Evaluation& e) {
  json j = json::object();
  for (const auto& [k, v] : e.cindex) j[k] = v ? json(*v) : json(nullptr);
  return j;
}

json groups_json(const Evaluation& e) {
  json j = json::object();
  for (const auto& [k, g] : e.groups) j[k] = to_json(g);
  return j;
}

std::vector<NamedCurve> km_curves(const Evaluation& e) {
  std::vector<NamedCurve> out;
  for (const auto& [k, g] : e.groups) {
    if (g.km_low) out.push_back({k, "low", *g.km_low});
    if (g.km_high) out.push_back({k, "high", *g.km_high});
  }
  return out;
}

namespace {

json dice_summary(const std::vector<PostprocessRow>& rows) {
  double sums[4] = {0, 0, 0, 0};
  int n = 0;
  for (const auto& r : rows) {
    if (!r.dice) continue;
    sums[0] += r.dice->gtvn_before;
    sums[1] += r.dice->gtvp_before;
    sums[2] += r.dice->gtvn_after;
    sums[3] += r.dice->gtvp_after;
    ++n;
  }
  if (n == 0) return nullptr;
  auto row = [&](double gtvn, double gtvp) {
    return json{{"gtvn_dice", gtvn / n}, {"gtvp_dice", gtvp / n}, {"mean_dice", 0.5 * (gtvn + gtvp) / n}};
  };
  return json{{"patients", n}, {"original", row(sums[0], sums[1])}, {"postprocessed", row(sums[2], sums[3])}};
}

}  // namespace

void write_cohort(const Cohort& cohort, OutputSet& out, const Provenance& prov) {
  write_feature_csv(cohort.clinical, out.file("clinical_features.csv"), prov);
  if (cohort.ct) write_feature_csv(*cohort.ct, out.file("ct_features.csv"), prov);
  if (cohort.pet) write_feature_csv(*cohort.pet, out.file("pet_features.csv"), prov);
  write_labels_csv(cohort.labels, out.file("labels.csv"), prov);
  if (!cohort.postprocess.empty()) {
    json rows = json::array();
    for (const auto& r : cohort.postprocess) rows.push_back(to_json(r));
    json j{{"provenance", {{"version", prov.version}, {"config_hash", prov.config_hash}, {"seed", prov.seed}, {"rng", prov.rng}}},
           {"patients", rows},
           {"dice", dice_summary(cohort.postprocess)}};
    write_text(out.file("postprocess.json"), j.dump(2) + "\n");
  }
}

namespace {

json provenance_json(const Provenance& p) {
  return json{{"tool", "hnrfs"}, {"version", p.version}, {"config_hash", p.config_hash}, {"seed", p.seed}, {"rng", p.rng}};
}

json modality_json(const ModalityModel& m) {
  json folds = json::array();
  for (std::size_t f = 0; f < m.fold_reports.size(); ++f) {
    json fold = to_json(m.fold_reports[f]);
    fold["fold"] = f;
    if (m.fold_models[f]) {
      json beta = json::object();
      for (std::size_t j = 0; j < m.fold_models[f]->feature_names.size(); ++j) {
        beta[m.fold_models[f]->feature_names[j]] = m.fold_models[f]->beta(static_cast<Eigen::Index>(j));
      }
      fold["model"] = {{"beta", beta},
                       {"converged", m.fold_models[f]->converged},
                       {"iterations", m.fold_models[f]->iterations}};
    } else {
      fold["model"] = nullptr;
    }
    folds.push_back(fold);
  }
  return json{{"modality", to_string(m.modality)},
              {"patients", m.oof_scores.size()},
              {"oof_cindex", m.cindex ? json(*m.cindex) : json(nullptr)},
              {"flagged_folds", m.flagged_folds},
              {"warnings", m.warnings},
              {"folds", folds}};
}

}  // namespace

void write_models(const ModelResults& results, const Cohort& cohort, OutputSet& out,
                  const Provenance& prov) {
  (void)cohort;
  write_risk_csv(results.risks, out.file("risk_scores.csv"), prov);
  json modalities = json::object();
  for (const auto& [m, model] : results.models) modalities[to_string(m)] = modality_json(model);
  json j{{"provenance", provenance_json(prov)}, {"modalities", modalities}};
  write_text(out.file("selection_report.json"), j.dump(2) + "\n");
}

json run_pipeline(const PipelineConfig& config) {
  config.validate();
  const Provenance prov = config.provenance();
  OutputSet out(config.output_dir);
  try {
    Cohort cohort;
    if (!config.volumes_dir.empty()) {
      cohort = build_cohort_from_volumes(config);
    } else if (!config.feature_dir.empty()) {
      cohort = load_cohort_from_features(config.feature_dir, config.radiomics);
    } else {
      throw StageError("ingest", "", "config needs paths.volumes_dir or paths.feature_dir");
    }
    write_cohort(cohort, out, prov);

    const ModelResults results = build_models(cohort, config);
    write_models(results, cohort, out, prov);

    const Evaluation ev = in_stage("evaluate", "", [&] {
      return evaluate_risks(results.risks, cohort.labels, config.fusion, config.stratification_threshold);
    });
    write_km_csv(km_curves(ev), out.file("km_curves.csv"), prov);

    std::size_t events = 0, with_gtvp = 0;
    for (const auto& l : cohort.labels) events += l.record.event;
    for (const auto& r : results.risks) with_gtvp += r.risk.has_gtvp;
    json modalities = json::object();
    for (const auto& [m, model] : results.models) modalities[to_string(m)] = modality_json(model);

    json report{{"provenance", provenance_json(prov)},
                {"config", config.to_json()},
                {"cohort", {{"patients", cohort.labels.size()}, {"events", events}, {"with_gtvp", with_gtvp}}},
                {"c_index", cindex_json(ev)},
                {"fusion", to_string(config.fusion)},
                {"stratification", {{"threshold", config.stratification_threshold}, {"groups", groups_json(ev)}}},
                {"modalities", modalities}};
    report["config"]["paths"].erase("output_dir");
    if (!cohort.postprocess.empty()) report["dice"] = dice_summary(cohort.postprocess);
    write_text(out.file("run_report.json"), report.dump(2) + "\n");
    return report;
  } catch (...) {
    out.rollback();
    throw;
  }
}

}  // namespace hnrfs
