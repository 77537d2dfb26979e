#include "hnrfs/run.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace hnrfs {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ValidationError("config: unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& target, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: '" + where + "." + key + "' has the wrong type");
  }
}

void read_path(const json& obj, const char* key, std::filesystem::path& target,
               const std::filesystem::path& base) {
  if (!obj.contains(key)) return;
  if (!obj.at(key).is_string()) throw ValidationError(std::string("config: paths.") + key + " must be a string");
  std::filesystem::path p = obj.at(key).get<std::string>();
  if (p.empty()) {
    target.clear();
    return;
  }
  if (p.is_relative() && !base.empty()) p = base / p;
  target = p.lexically_normal();
}

std::string tie_name(TieMethod t) { return t == TieMethod::breslow ? "breslow" : "efron"; }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base) {
  PipelineConfig c;
  reject_unknown(j, {"paths", "postprocess", "preprocess", "extraction", "cv", "selection", "cox",
                     "fusion", "stratification"},
                 "config");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown(p, {"volumes_dir", "reference_dir", "clinical_csv", "feature_dir", "output_dir"}, "paths");
    read_path(p, "volumes_dir", c.volumes_dir, base);
    read_path(p, "reference_dir", c.reference_dir, base);
    read_path(p, "clinical_csv", c.clinical_csv, base);
    read_path(p, "feature_dir", c.feature_dir, base);
    read_path(p, "output_dir", c.output_dir, base);
  }
  if (j.contains("postprocess")) {
    reject_unknown(j.at("postprocess"), {"d_max_mm"}, "postprocess");
    read(j.at("postprocess"), "d_max_mm", c.d_max_mm, "postprocess");
  }
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    reject_unknown(p, {"resample", "target_spacing_mm"}, "preprocess");
    read(p, "resample", c.resample, "preprocess");
    if (p.contains("target_spacing_mm")) {
      std::vector<double> s;
      read(p, "target_spacing_mm", s, "preprocess");
      if (s.size() != 3) throw ValidationError("config: preprocess.target_spacing_mm needs 3 values");
      c.target_spacing = Point3(s[0], s[1], s[2]);
    }
  }
  if (j.contains("extraction")) {
    const auto& e = j.at("extraction");
    reject_unknown(e, {"bin_width", "glcm_distance", "symmetric_glcm"}, "extraction");
    read(e, "bin_width", c.extraction.bin_width, "extraction");
    read(e, "glcm_distance", c.extraction.glcm_distance, "extraction");
    read(e, "symmetric_glcm", c.extraction.symmetric_glcm, "extraction");
  }
  if (j.contains("cv")) {
    const auto& v = j.at("cv");
    reject_unknown(v, {"outer_k", "inner_k", "repeats", "seed", "stratify_events"}, "cv");
    read(v, "outer_k", c.outer_k, "cv");
    read(v, "inner_k", c.inner_k, "cv");
    read(v, "repeats", c.repeats, "cv");
    read(v, "seed", c.seed, "cv");
    read(v, "stratify_events", c.stratify_events, "cv");
  }
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    reject_unknown(s, {"clinical_cap", "radiomics_cap", "screen_threshold", "correlation_threshold", "epsilon"},
                   "selection");
    read(s, "clinical_cap", c.clinical_cap, "selection");
    read(s, "radiomics_cap", c.radiomics_cap, "selection");
    read(s, "screen_threshold", c.screen_threshold, "selection");
    read(s, "correlation_threshold", c.correlation_threshold, "selection");
    read(s, "epsilon", c.epsilon, "selection");
  }
  if (j.contains("cox")) {
    reject_unknown(j.at("cox"), {"ties"}, "cox");
    std::string ties = tie_name(c.ties);
    read(j.at("cox"), "ties", ties, "cox");
    if (ties == "efron") c.ties = TieMethod::efron;
    else if (ties == "breslow") c.ties = TieMethod::breslow;
    else throw ValidationError("config: cox.ties must be 'efron' or 'breslow'");
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    reject_unknown(f, {"mode", "radiomics"}, "fusion");
    std::string mode = to_string(c.fusion);
    read(f, "mode", mode, "fusion");
    try {
      c.fusion = fusion_mode_from_string(mode);
    } catch (const InvalidArgument& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    read(f, "radiomics", c.radiomics, "fusion");
  }
  if (j.contains("stratification")) {
    reject_unknown(j.at("stratification"), {"threshold"}, "stratification");
    read(j.at("stratification"), "threshold", c.stratification_threshold, "stratification");
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
  return from_json(j, path.parent_path());
}

json PipelineConfig::to_json() const {
  return json{
      {"paths",
       {{"volumes_dir", volumes_dir.string()},
        {"reference_dir", reference_dir.string()},
        {"clinical_csv", clinical_csv.string()},
        {"feature_dir", feature_dir.string()},
        {"output_dir", output_dir.string()}}},
      {"postprocess", {{"d_max_mm", d_max_mm}}},
      {"preprocess",
       {{"resample", resample},
        {"target_spacing_mm", {target_spacing.x(), target_spacing.y(), target_spacing.z()}}}},
      {"extraction",
       {{"bin_width", extraction.bin_width},
        {"glcm_distance", extraction.glcm_distance},
        {"symmetric_glcm", extraction.symmetric_glcm}}},
      {"cv",
       {{"outer_k", outer_k},
        {"inner_k", inner_k},
        {"repeats", repeats},
        {"seed", seed},
        {"stratify_events", stratify_events}}},
      {"selection",
       {{"clinical_cap", clinical_cap},
        {"radiomics_cap", radiomics_cap},
        {"screen_threshold", screen_threshold},
        {"correlation_threshold", correlation_threshold},
        {"epsilon", epsilon}}},
      {"cox", {{"ties", tie_name(ties)}}},
      {"fusion", {{"mode", to_string(fusion)}, {"radiomics", radiomics}}},
      {"stratification", {{"threshold", stratification_threshold}}},
  };
}

std::string PipelineConfig::hash() const {
  json j = to_json();
  j["paths"].erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (!(d_max_mm > 0.0)) fail("postprocess.d_max_mm must be > 0");
  if (!(target_spacing.array() > 0.0).all()) fail("preprocess.target_spacing_mm must be > 0");
  try {
    extraction.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
  if (outer_k < 2) fail("cv.outer_k must be >= 2");
  if (inner_k < 2) fail("cv.inner_k must be >= 2");
  if (repeats < 1) fail("cv.repeats must be >= 1");
  if (clinical_cap < 1 || radiomics_cap < 1) fail("selection caps must be >= 1");
  if (!(screen_threshold >= 0.0 && screen_threshold <= 1.0)) fail("selection.screen_threshold must be in [0,1]");
  if (!(correlation_threshold > 0.0 && correlation_threshold <= 1.0)) {
    fail("selection.correlation_threshold must be in (0,1]");
  }
  if (!(epsilon >= 0.0)) fail("selection.epsilon must be >= 0");
  if (!std::isfinite(stratification_threshold)) fail("stratification.threshold must be finite");
}

SelectionSettings PipelineConfig::selection_settings(Modality m) const {
  SelectionSettings s;
  s.inner_k = inner_k;
  s.repeats = repeats;
  s.seed = derive_seed(seed, 10 + static_cast<std::uint64_t>(m));
  s.cap = m == Modality::clinical ? clinical_cap : radiomics_cap;
  s.screen_threshold = screen_threshold;
  s.correlation_threshold = correlation_threshold;
  s.epsilon = epsilon;
  s.stratify_folds = stratify_events;
  s.fit.tie_method = ties;
  return s;
}

Provenance PipelineConfig::provenance() const {
  Provenance p;
  p.config_hash = hash();
  p.seed = seed;
  return p;
}

}  // namespace hnrfs
