#include "hnrfs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hnrfs/errors.hpp"
#include "hnrfs/random.hpp"

namespace hnrfs {

void FeatureTable::validate() const {
  if (values.rows() != static_cast<Eigen::Index>(patient_ids.size()) ||
      values.cols() != static_cast<Eigen::Index>(feature_names.size())) {
    throw SchemaError("feature table: matrix is " + std::to_string(values.rows()) + "x" +
                      std::to_string(values.cols()) + " for " + std::to_string(patient_ids.size()) +
                      " patients and " + std::to_string(feature_names.size()) + " features");
  }
  if (std::set<std::string>(patient_ids.begin(), patient_ids.end()).size() != patient_ids.size()) {
    throw SchemaError("feature table: duplicate patient id");
  }
  if (std::set<std::string>(feature_names.begin(), feature_names.end()).size() !=
      feature_names.size()) {
    throw SchemaError("feature table: duplicate feature name");
  }
  if (!values.allFinite()) throw SchemaError("feature table: non-finite value");
}

Eigen::Index FeatureTable::column(const std::string& name) const {
  const auto it = std::find(feature_names.begin(), feature_names.end(), name);
  if (it == feature_names.end()) throw SchemaError("feature table: no column '" + name + "'");
  return it - feature_names.begin();
}

std::optional<std::size_t> FeatureTable::row(const std::string& patient_id) const {
  const auto it = std::find(patient_ids.begin(), patient_ids.end(), patient_id);
  if (it == patient_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - patient_ids.begin());
}

FeatureTable FeatureTable::select_columns(std::span<const std::string> names) const {
  FeatureTable out{modality, patient_ids, {names.begin(), names.end()}, {}};
  std::vector<Eigen::Index> cols;
  for (const auto& n : names) cols.push_back(column(n));
  out.values = values(Eigen::all, cols);
  return out;
}

FeatureTable FeatureTable::select_rows(std::span<const std::size_t> rows) const {
  FeatureTable out{modality, {}, feature_names, {}};
  std::vector<Eigen::Index> idx;
  for (std::size_t r : rows) {
    out.patient_ids.push_back(patient_ids.at(r));
    idx.push_back(static_cast<Eigen::Index>(r));
  }
  out.values = values(idx, Eigen::all);
  return out;
}

double encode_status(const std::optional<double>& raw) {
  if (!raw) return 0.0;
  return *raw > 0.0 ? 1.0 : -1.0;
}

namespace {

const std::vector<std::string> kClinicalNames = {
    "gender", "age", "tobacco", "alcohol", "performance_status", "hpv_status", "surgery",
    "chemotherapy"};

const std::vector<std::string> kVolumeNames = {"gtvp_count", "gtvp_volume_ml", "gtvn_count",
                                               "gtvn_volume_ml"};

FeatureTable encode_clinical_impl(std::span<const ClinicalRecord> records,
                                  const std::map<std::string, NodeStatistics>* node_stats) {
  FeatureTable table;
  table.modality = Modality::clinical;
  table.feature_names = kClinicalNames;
  if (node_stats) {
    table.feature_names.insert(table.feature_names.end(), kVolumeNames.begin(), kVolumeNames.end());
  }
  std::set<std::string> seen;
  double age_sum = 0.0;
  int age_count = 0;
  for (const auto& r : records) {
    if (!seen.insert(r.patient_id).second) {
      throw ValidationError("clinical: duplicate patient id '" + r.patient_id + "'");
    }
    if (r.age) {
      age_sum += *r.age;
      ++age_count;
    }
  }
  // Missing age is imputed with the cohort mean; age is not a status field.
  const double age_fill = age_count > 0 ? age_sum / age_count : 0.0;

  table.values.resize(static_cast<Eigen::Index>(records.size()),
                      static_cast<Eigen::Index>(table.feature_names.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto row = static_cast<Eigen::Index>(i);
    table.patient_ids.push_back(r.patient_id);
    table.values(row, 0) = encode_status(r.gender);
    table.values(row, 1) = r.age.value_or(age_fill);
    table.values(row, 2) = encode_status(r.tobacco);
    table.values(row, 3) = encode_status(r.alcohol);
    // Zubrod score is ordinal: keep grades >= 1, code grade 0 as the
    // negative status and missing as 0.
    table.values(row, 4) =
        !r.performance_status ? 0.0 : (*r.performance_status > 0.0 ? *r.performance_status : -1.0);
    table.values(row, 5) = encode_status(r.hpv_status);
    table.values(row, 6) = encode_status(r.surgery);
    table.values(row, 7) = encode_status(r.chemotherapy);
    if (node_stats) {
      const auto it = node_stats->find(r.patient_id);
      if (it == node_stats->end()) {
        throw ValidationError("clinical: no node statistics for patient '" + r.patient_id + "'");
      }
      table.values(row, 8) = static_cast<double>(it->second.gtvp_count);
      table.values(row, 9) = it->second.gtvp_volume_ml;
      table.values(row, 10) = static_cast<double>(it->second.gtvn_count);
      table.values(row, 11) = it->second.gtvn_volume_ml;
    }
  }
  table.validate();
  return table;
}

}  // namespace

FeatureTable encode_clinical(std::span<const ClinicalRecord> records,
                             const std::map<std::string, NodeStatistics>& node_stats) {
  return encode_clinical_impl(records, &node_stats);
}

FeatureTable encode_clinical(std::span<const ClinicalRecord> records) {
  return encode_clinical_impl(records, nullptr);
}

std::vector<Eigen::Index> CVPlan::members(int repeat, int fold) const {
  std::vector<Eigen::Index> out;
  const auto& f = fold_of.at(static_cast<std::size_t>(repeat));
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] == fold) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::vector<Eigen::Index> CVPlan::complement(int repeat, int fold) const {
  std::vector<Eigen::Index> out;
  const auto& f = fold_of.at(static_cast<std::size_t>(repeat));
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] != fold) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// Positions of the ids in lexicographic order, so plans key on ids.
std::vector<std::size_t> canonical_order(std::span<const std::string> ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ids[order[i]] == ids[order[i - 1]]) {
      throw InvalidArgument("cv plan: duplicate patient id '" + ids[order[i]] + "'");
    }
  }
  return order;
}

CVPlan plan_skeleton(std::span<const std::string> ids, int k, int repeats, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("cv plan: k must be >= 2");
  if (repeats < 1) throw InvalidArgument("cv plan: repeats must be >= 1");
  if (ids.size() < static_cast<std::size_t>(k)) {
    throw InvalidArgument("cv plan: " + std::to_string(ids.size()) + " patients for " +
                          std::to_string(k) + " folds");
  }
  CVPlan plan;
  plan.k = k;
  plan.repeats = repeats;
  plan.seed = seed;
  plan.patient_ids.assign(ids.begin(), ids.end());
  return plan;
}

}  // namespace

CVPlan make_cv_plan(std::span<const std::string> patient_ids, int k, int repeats, std::uint64_t seed) {
  CVPlan plan = plan_skeleton(patient_ids, k, repeats, seed);
  const auto canonical = canonical_order(patient_ids);
  for (int r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto order = canonical;
    shuffle(order, rng);
    std::vector<int> fold(patient_ids.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) fold[order[pos]] = static_cast<int>(pos % k);
    plan.fold_of.push_back(std::move(fold));
  }
  return plan;
}

CVPlan make_stratified_cv_plan(std::span<const std::string> patient_ids,
                               std::span<const SurvivalRecord> records, int k, int repeats,
                               std::uint64_t seed) {
  if (records.size() != patient_ids.size()) {
    throw InvalidArgument("cv plan: ids and records differ in length");
  }
  CVPlan plan = plan_skeleton(patient_ids, k, repeats, seed);
  const auto canonical = canonical_order(patient_ids);
  std::vector<std::size_t> events, censored;
  for (std::size_t i : canonical) (records[i].event ? events : censored).push_back(i);
  for (int r = 0; r < repeats; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    auto e = events;
    auto c = censored;
    shuffle(e, rng);
    shuffle(c, rng);
    std::vector<int> fold(patient_ids.size());
    std::size_t pos = 0;
    for (std::size_t i : e) fold[i] = static_cast<int>(pos++ % k);
    for (std::size_t i : c) fold[i] = static_cast<int>(pos++ % k);
    plan.fold_of.push_back(std::move(fold));
  }
  return plan;
}

namespace {

std::vector<SurvivalRecord> pick(std::span<const SurvivalRecord> records,
                                 const std::vector<Eigen::Index>& rows) {
  std::vector<SurvivalRecord> out;
  out.reserve(rows.size());
  for (Eigen::Index r : rows) out.push_back(records[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

double cv_mean_cindex(const Eigen::MatrixXd& X, std::span<const SurvivalRecord> records,
                      const CVPlan& plan, const FitOptions& fit, int* failures) {
  if (static_cast<std::size_t>(X.rows()) != records.size() ||
      records.size() != plan.patient_ids.size()) {
    throw ShapeError("cv_mean_cindex: design, records and plan disagree on patient count");
  }
  double total = 0.0;
  int failed = 0;
  for (int r = 0; r < plan.repeats; ++r) {
    for (int f = 0; f < plan.k; ++f) {
      const auto train = plan.complement(r, f);
      const auto val = plan.members(r, f);
      double c = 0.5;
      try {
        const Eigen::MatrixXd x_train = X(train, Eigen::all);
        const auto rec_train = pick(records, train);
        const CoxModel model = fit_cox(x_train, rec_train, fit);
        const Eigen::VectorXd risk = predict_risk(model, X(val, Eigen::all));
        const auto rec_val = pick(records, val);
        c = concordance_index(rec_val, {risk.data(), static_cast<std::size_t>(risk.size())});
      } catch (const Error&) {
        c = 0.5;
        ++failed;
      }
      total += c;
    }
  }
  if (failures) *failures = failed;
  return total / static_cast<double>(plan.repeats * plan.k);
}

SelectionReport univariate_screen(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                  const CVPlan& plan, const SelectionSettings& settings) {
  if (static_cast<std::size_t>(table.values.rows()) != records.size()) {
    throw ShapeError("univariate_screen: table and records differ in patient count");
  }
  SelectionReport report;
  report.modality = table.modality;
  report.cap = settings.cap;
  for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
    RankedFeature rf;
    rf.name = table.feature_names[static_cast<std::size_t>(j)];
    rf.mean_cindex = cv_mean_cindex(table.values.col(j), records, plan, settings.fit, &rf.failed_folds);
    report.failed_fits += rf.failed_folds;
    report.ranked.push_back(std::move(rf));
  }
  std::sort(report.ranked.begin(), report.ranked.end(),
            [](const RankedFeature& a, const RankedFeature& b) {
              if (a.mean_cindex != b.mean_cindex) return a.mean_cindex > b.mean_cindex;
              return a.name < b.name;
            });
  for (const auto& rf : report.ranked) {
    if (rf.mean_cindex < settings.screen_threshold) report.dropped_low_signal.push_back(rf.name);
  }
  return report;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("pearson: need equal lengths >= 2");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (!(denom > 0.0)) throw DegenerateError("pearson: zero variance");
  return (da * db).sum() / denom;
}

PruneResult correlation_prune(const FeatureTable& table, std::span<const std::string> ranked,
                              double threshold) {
  PruneResult out;
  for (const auto& name : ranked) {
    const Eigen::VectorXd x = table.values.col(table.column(name));
    bool drop = false;
    for (const auto& kept : out.kept) {
      double r = 0.0;
      try {
        r = pearson(x, table.values.col(table.column(kept)));
      } catch (const DegenerateError&) {
        continue;
      }
      if (std::abs(r) > threshold) {
        out.dropped.push_back({name, kept, r});
        drop = true;
        break;
      }
    }
    if (!drop) out.kept.push_back(name);
  }
  return out;
}

SelectionReport forward_select(const FeatureTable& table, std::span<const SurvivalRecord> records,
                               const CVPlan& plan, std::span<const std::string> candidates,
                               std::size_t max_features, double epsilon, const FitOptions& fit) {
  SelectionReport report;
  report.modality = table.modality;
  report.cap = max_features;
  double incumbent = 0.5;
  std::vector<Eigen::Index> chosen_cols;
  while (report.selected.size() < max_features) {
    double best = -1.0;
    const std::string* best_name = nullptr;
    for (const auto& cand : candidates) {
      if (std::find(report.selected.begin(), report.selected.end(), cand) != report.selected.end()) {
        continue;
      }
      auto cols = chosen_cols;
      cols.push_back(table.column(cand));
      int failed = 0;
      const double c = cv_mean_cindex(table.values(Eigen::all, cols), records, plan, fit, &failed);
      report.failed_fits += failed;
      if (c > best) {
        best = c;
        best_name = &cand;
      }
    }
    if (!best_name || !(best > incumbent + epsilon)) break;
    report.selected.push_back(*best_name);
    report.trace.push_back({*best_name, best});
    chosen_cols.push_back(table.column(*best_name));
    incumbent = best;
  }
  return report;
}

SelectionReport select_features(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                const SelectionSettings& settings, std::uint64_t screen_seed,
                                std::uint64_t select_seed) {
  auto make_plan = [&](std::uint64_t seed) {
    return settings.stratify_folds
               ? make_stratified_cv_plan(table.patient_ids, records, settings.inner_k,
                                         settings.repeats, seed)
               : make_cv_plan(table.patient_ids, settings.inner_k, settings.repeats, seed);
  };
  SelectionReport report = univariate_screen(table, records, make_plan(screen_seed), settings);

  std::vector<std::string> survivors;
  for (const auto& rf : report.ranked) {
    if (rf.mean_cindex >= settings.screen_threshold) survivors.push_back(rf.name);
  }
  auto pruned = correlation_prune(table, survivors, settings.correlation_threshold);
  report.dropped_correlated = std::move(pruned.dropped);

  const SelectionReport forward = forward_select(table, records, make_plan(select_seed), pruned.kept,
                                                 settings.cap, settings.epsilon, settings.fit);
  report.selected = forward.selected;
  report.trace = forward.trace;
  report.failed_fits += forward.failed_fits;
  return report;
}

ModalityModel fit_modality_model(const FeatureTable& table, std::span<const SurvivalRecord> records,
                                 std::span<const int> outer_fold, int outer_k,
                                 const SelectionSettings& settings) {
  table.validate();
  const std::size_t n = table.patient_ids.size();
  if (records.size() != n || outer_fold.size() != n) {
    throw ShapeError("fit_modality_model: table, records and folds differ in patient count");
  }
  ModalityModel out;
  out.modality = table.modality;
  out.outer_fold.assign(outer_fold.begin(), outer_fold.end());
  out.oof_scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  out.fold_models.resize(static_cast<std::size_t>(outer_k));
  out.fold_reports.resize(static_cast<std::size_t>(outer_k));
  out.fold_training_rows.resize(static_cast<std::size_t>(outer_k));

  for (int f = 0; f < outer_k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) (outer_fold[i] == f ? test : train).push_back(i);
    if (test.empty()) continue;
    out.fold_training_rows[static_cast<std::size_t>(f)] = train;
    const std::string where = to_string(table.modality) + " fold " + std::to_string(f);

    std::vector<SurvivalRecord> train_rec;
    for (std::size_t i : train) train_rec.push_back(records[i]);
    const bool has_event = std::any_of(train_rec.begin(), train_rec.end(),
                                       [](const SurvivalRecord& r) { return r.event; });
    if (!has_event || train.size() < static_cast<std::size_t>(settings.inner_k)) {
      out.flagged_folds.push_back(f);
      out.warnings.push_back(where + ": training portion unusable, scores set to 0");
      continue;
    }
    const FeatureTable train_table = table.select_rows(train);
    auto& report = out.fold_reports[static_cast<std::size_t>(f)];
    report = select_features(train_table, train_rec, settings,
                             derive_seed(settings.seed, 100 + static_cast<std::uint64_t>(f)),
                             derive_seed(settings.seed, 200 + static_cast<std::uint64_t>(f)));
    if (report.selected.empty()) {
      out.warnings.push_back(where + ": no feature selected, scores set to 0");
      continue;
    }
    try {
      const FeatureTable chosen = train_table.select_columns(report.selected);
      CoxModel model = fit_cox(chosen.values, train_rec, settings.fit, report.selected);
      const FeatureTable held_out = table.select_rows(test).select_columns(report.selected);
      const Eigen::VectorXd scores = predict_risk(model, held_out.values, held_out.feature_names);
      for (std::size_t t = 0; t < test.size(); ++t) {
        out.oof_scores(static_cast<Eigen::Index>(test[t])) = scores(static_cast<Eigen::Index>(t));
      }
      out.fold_models[static_cast<std::size_t>(f)] = std::move(model);
    } catch (const Error& e) {
      out.flagged_folds.push_back(f);
      out.warnings.push_back(where + ": final fit failed (" + e.what() + "), scores set to 0");
    }
  }
  try {
    out.cindex = concordance_index(records, {out.oof_scores.data(), n});
  } catch (const DegenerateError&) {
    out.cindex.reset();
  }
  return out;
}

std::string to_string(FusionMode m) { return m == FusionMode::raw ? "raw" : "standardized"; }

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "standardized") return FusionMode::standardized;
  if (s == "raw") return FusionMode::raw;
  throw InvalidArgument("unknown fusion mode '" + s + "'");
}

std::vector<PatientRisk> fuse_risk(std::vector<PatientRisk> scores, FusionMode mode) {
  using Slot = std::optional<double> PatientRisk::*;
  constexpr std::array<Slot, 3> slots{&PatientRisk::clinical, &PatientRisk::ct, &PatientRisk::pet};
  for (const auto& p : scores) {
    if (!p.clinical) throw InvalidArgument("fuse_risk: patient '" + p.patient_id + "' has no clinical score");
  }
  std::array<double, 3> mean{0, 0, 0}, sd{1, 1, 1};
  if (mode == FusionMode::standardized) {
    for (std::size_t s = 0; s < slots.size(); ++s) {
      double sum = 0.0, n = 0.0;
      for (const auto& p : scores) {
        if (p.*slots[s]) {
          sum += *(p.*slots[s]);
          n += 1.0;
        }
      }
      if (n == 0.0) continue;
      mean[s] = sum / n;
      double ss = 0.0;
      for (const auto& p : scores) {
        if (p.*slots[s]) ss += (*(p.*slots[s]) - mean[s]) * (*(p.*slots[s]) - mean[s]);
      }
      sd[s] = std::sqrt(ss / n);
    }
  }
  auto standardized = [&](const PatientRisk& p, std::size_t s) {
    const double v = *(p.*slots[s]);
    if (mode == FusionMode::raw) return v;
    return sd[s] > 0.0 ? (v - mean[s]) / sd[s] : 0.0;
  };
  for (auto& p : scores) {
    if (!p.has_gtvp) {
      p.fused = standardized(p, 0);
      continue;
    }
    double sum = 0.0;
    int count = 0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (p.*slots[s]) {
        sum += standardized(p, s);
        ++count;
      }
    }
    p.fused = sum / count;
  }
  return scores;
}

std::string to_string(RiskGroup g) { return g == RiskGroup::high ? "high" : "low"; }

std::vector<RiskGroup> stratify(std::span<const double> scores, double threshold) {
  std::vector<RiskGroup> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s > threshold ? RiskGroup::high : RiskGroup::low);
  return out;
}

GroupComparison compare_groups(std::span<const SurvivalRecord> records,
                               std::span<const RiskGroup> groups) {
  if (records.size() != groups.size()) throw InvalidArgument("compare_groups: length mismatch");
  std::vector<SurvivalRecord> low, high;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (groups[i] == RiskGroup::high ? high : low).push_back(records[i]);
  }
  GroupComparison out;
  out.n_low = low.size();
  out.n_high = high.size();
  if (!low.empty()) out.km_low = km_estimate(low);
  if (!high.empty()) out.km_high = km_estimate(high);
  if (low.empty() || high.empty()) {
    out.note = "degenerate: only one risk group is populated";
    return out;
  }
  try {
    out.logrank = logrank_test(high, low);
  } catch (const DegenerateError& e) {
    out.note = std::string("degenerate: ") + e.what();
  }
  return out;
}

}  // namespace hnrfs
