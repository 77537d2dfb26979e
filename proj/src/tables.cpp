#include "hnrfs/tables.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "hnrfs/errors.hpp"

namespace hnrfs {

std::string Provenance::comment_line() const {
  return "# hnrfs version=" + version + " config_hash=" + config_hash +
         " seed=" + std::to_string(seed) + " rng=" + rng;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

namespace {

struct CsvRow {
  std::size_t line;
  std::vector<std::string> fields;
};

struct Csv {
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
};

Csv read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Csv csv;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      csv.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != csv.header.size()) {
      throw FormatError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected " +
                        std::to_string(csv.header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    csv.rows.push_back({lineno, std::move(fields)});
  }
  if (!have_header) throw FormatError("'" + path.string() + "': no header row");
  return csv;
}

double parse_number(const std::string& text, const std::filesystem::path& path, std::size_t line,
                    const std::string& column) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw FormatError("'" + path.string() + "' line " + std::to_string(line) + ": column '" + column +
                      "' value '" + text + "' is not a number");
  }
  return v;
}

std::string fold_name(const std::string& raw) {
  std::string out;
  for (char c : raw) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  const std::map<std::string, std::string> aliases = {
      {"patientid", "patient_id"},       {"id", "patient_id"},
      {"tobacco_consumption", "tobacco"}, {"alcohol_consumption", "alcohol"},
      {"performance", "performance_status"}, {"zubrod", "performance_status"},
      {"hpv", "hpv_status"},             {"hpv_status_0_1", "hpv_status"},
      {"rfs", "rfs_months"},             {"time", "rfs_months"},
      {"event", "relapse"},              {"sex", "gender"}};
  const auto it = aliases.find(out);
  return it == aliases.end() ? out : it->second;
}

void require_columns(const Csv& csv, const std::vector<std::string>& needed,
                     const std::filesystem::path& path) {
  std::vector<std::string> missing;
  for (const auto& n : needed) {
    if (!csv.find(n)) missing.push_back(n);
  }
  if (missing.empty()) return;
  std::string list;
  for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
  throw SchemaError("'" + path.string() + "': missing required column(s): " + list);
}

std::optional<double> parse_status(const std::string& text, const std::filesystem::path& path,
                                   std::size_t line, const std::string& column) {
  if (text.empty()) return std::nullopt;
  std::string lower;
  for (char c : text) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (column == "gender") {
    if (lower == "m" || lower == "male") return 1.0;
    if (lower == "f" || lower == "female") return 0.0;
  }
  if (lower == "na" || lower == "nan" || lower == "missing") return std::nullopt;
  return parse_number(text, path, line, column);
}

SurvivalRecord parse_outcome(const CsvRow& row, std::size_t time_col, std::size_t event_col,
                             const std::filesystem::path& path) {
  const double t = parse_number(row.fields[time_col], path, row.line, "rfs_months");
  if (!(t > 0.0)) {
    throw ValidationError("'" + path.string() + "' line " + std::to_string(row.line) +
                          ": rfs_months must be > 0");
  }
  const double e = parse_number(row.fields[event_col], path, row.line, "relapse");
  if (e != 0.0 && e != 1.0) {
    throw ValidationError("'" + path.string() + "' line " + std::to_string(row.line) +
                          ": relapse must be 0 or 1");
  }
  return SurvivalRecord::make(t, e == 1.0);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

const std::vector<std::string> kClinicalColumns = {
    "patient_id", "gender", "age", "tobacco", "alcohol", "performance_status", "hpv_status",
    "surgery", "chemotherapy"};

}  // namespace

std::vector<ClinicalRecord> read_clinical_csv(const std::filesystem::path& path, bool require_outcome) {
  Csv csv = read_csv(path);
  for (auto& h : csv.header) h = fold_name(h);
  auto needed = kClinicalColumns;
  if (require_outcome) {
    needed.push_back("rfs_months");
    needed.push_back("relapse");
  }
  require_columns(csv, needed, path);

  const auto col = [&](const std::string& n) { return *csv.find(n); };
  std::vector<ClinicalRecord> out;
  std::set<std::string> seen;
  for (const auto& row : csv.rows) {
    ClinicalRecord r;
    r.patient_id = row.fields[col("patient_id")];
    if (r.patient_id.empty()) {
      throw ValidationError("'" + path.string() + "' line " + std::to_string(row.line) + ": empty patient_id");
    }
    if (!seen.insert(r.patient_id).second) {
      throw ValidationError("'" + path.string() + "' line " + std::to_string(row.line) +
                            ": duplicate patient id '" + r.patient_id + "'");
    }
    auto status = [&](const std::string& n) { return parse_status(row.fields[col(n)], path, row.line, n); };
    r.gender = status("gender");
    if (const auto& a = row.fields[col("age")]; !a.empty()) r.age = parse_number(a, path, row.line, "age");
    r.tobacco = status("tobacco");
    r.alcohol = status("alcohol");
    r.performance_status = status("performance_status");
    r.hpv_status = status("hpv_status");
    r.surgery = status("surgery");
    r.chemotherapy = status("chemotherapy");
    const auto tc = csv.find("rfs_months");
    const auto ec = csv.find("relapse");
    if (tc && ec && !(row.fields[*tc].empty() && row.fields[*ec].empty() && !require_outcome)) {
      r.outcome = parse_outcome(row, *tc, *ec, path);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_clinical_csv(std::span<const ClinicalRecord> records, const std::filesystem::path& path,
                        const Provenance& prov) {
  auto out = open_out(path);
  out << prov.comment_line() << '\n';
  for (std::size_t i = 0; i < kClinicalColumns.size(); ++i) out << (i ? "," : "") << kClinicalColumns[i];
  out << ",rfs_months,relapse\n";
  for (const auto& r : records) {
    out << r.patient_id << ',' << opt(r.gender) << ',' << opt(r.age) << ',' << opt(r.tobacco) << ','
        << opt(r.alcohol) << ',' << opt(r.performance_status) << ',' << opt(r.hpv_status) << ','
        << opt(r.surgery) << ',' << opt(r.chemotherapy) << ',';
    if (r.outcome) out << format_double(r.outcome->time) << ',' << (r.outcome->event ? 1 : 0);
    else out << ',';
    out << '\n';
  }
  finish(out, path);
}

std::vector<LabelRow> read_labels_csv(const std::filesystem::path& path) {
  Csv csv = read_csv(path);
  for (auto& h : csv.header) h = fold_name(h);
  require_columns(csv, {"patient_id", "rfs_months", "relapse"}, path);
  const auto id = *csv.find("patient_id");
  std::vector<LabelRow> out;
  std::set<std::string> seen;
  for (const auto& row : csv.rows) {
    if (!seen.insert(row.fields[id]).second) {
      throw ValidationError("'" + path.string() + "' line " + std::to_string(row.line) +
                            ": duplicate patient id '" + row.fields[id] + "'");
    }
    out.push_back({row.fields[id], parse_outcome(row, *csv.find("rfs_months"), *csv.find("relapse"), path)});
  }
  return out;
}

void write_labels_csv(std::span<const LabelRow> rows, const std::filesystem::path& path,
                      const Provenance& prov) {
  auto out = open_out(path);
  out << prov.comment_line() << "\npatient_id,rfs_months,relapse\n";
  for (const auto& r : rows) {
    out << r.patient_id << ',' << format_double(r.record.time) << ',' << (r.record.event ? 1 : 0) << '\n';
  }
  finish(out, path);
}

FeatureTable read_feature_csv(const std::filesystem::path& path, Modality modality) {
  const Csv csv = read_csv(path);
  if (csv.header.empty() || fold_name(csv.header[0]) != "patient_id") {
    throw SchemaError("'" + path.string() + "': first column must be patient_id");
  }
  FeatureTable t;
  t.modality = modality;
  t.feature_names.assign(csv.header.begin() + 1, csv.header.end());
  t.values.resize(static_cast<Eigen::Index>(csv.rows.size()),
                  static_cast<Eigen::Index>(t.feature_names.size()));
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const auto& row = csv.rows[i];
    t.patient_ids.push_back(row.fields[0]);
    for (std::size_t j = 0; j < t.feature_names.size(); ++j) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_number(row.fields[j + 1], path, row.line, t.feature_names[j]);
    }
  }
  t.validate();
  return t;
}

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path,
                       const Provenance& prov) {
  table.validate();
  auto out = open_out(path);
  out << prov.comment_line() << " modality=" << to_string(table.modality) << "\npatient_id";
  for (const auto& n : table.feature_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < table.patient_ids.size(); ++i) {
    out << table.patient_ids[i];
    for (Eigen::Index j = 0; j < table.values.cols(); ++j) {
      out << ',' << format_double(table.values(static_cast<Eigen::Index>(i), j));
    }
    out << '\n';
  }
  finish(out, path);
}

std::vector<RiskRow> read_risk_csv(const std::filesystem::path& path) {
  const Csv csv = read_csv(path);
  require_columns(csv, {"patient_id", "has_gtvp", "clinical", "ct", "pet", "fused", "risk_group"}, path);
  const auto c = [&](const char* n) { return *csv.find(n); };
  auto optional_number = [&](const CsvRow& row, const char* n) -> std::optional<double> {
    const auto& f = row.fields[c(n)];
    if (f.empty()) return std::nullopt;
    return parse_number(f, path, row.line, n);
  };
  std::vector<RiskRow> out;
  for (const auto& row : csv.rows) {
    RiskRow r;
    r.risk.patient_id = row.fields[c("patient_id")];
    r.risk.has_gtvp = row.fields[c("has_gtvp")] == "1";
    r.risk.clinical = optional_number(row, "clinical");
    r.risk.ct = optional_number(row, "ct");
    r.risk.pet = optional_number(row, "pet");
    r.risk.fused = parse_number(row.fields[c("fused")], path, row.line, "fused");
    const auto& g = row.fields[c("risk_group")];
    if (g != "high" && g != "low") {
      throw FormatError("'" + path.string() + "' line " + std::to_string(row.line) + ": bad risk_group");
    }
    r.group = g == "high" ? RiskGroup::high : RiskGroup::low;
    out.push_back(std::move(r));
  }
  return out;
}

void write_risk_csv(std::span<const RiskRow> rows, const std::filesystem::path& path,
                    const Provenance& prov) {
  auto out = open_out(path);
  out << prov.comment_line() << "\npatient_id,has_gtvp,clinical,ct,pet,fused,risk_group\n";
  for (const auto& r : rows) {
    out << r.risk.patient_id << ',' << (r.risk.has_gtvp ? 1 : 0) << ',' << opt(r.risk.clinical) << ','
        << opt(r.risk.ct) << ',' << opt(r.risk.pet) << ',' << format_double(r.risk.fused) << ','
        << to_string(r.group) << '\n';
  }
  finish(out, path);
}

void write_km_csv(std::span<const NamedCurve> curves, const std::filesystem::path& path,
                  const Provenance& prov) {
  auto out = open_out(path);
  out << prov.comment_line() << "\ncurve,group,time,survival,at_risk,events,std_err\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.km.event_times.size(); ++i) {
      out << c.curve << ',' << c.group << ',' << format_double(c.km.event_times[i]) << ','
          << format_double(c.km.survival[i]) << ',' << c.km.at_risk[i] << ',' << c.km.events[i] << ','
          << format_double(c.km.std_err[i]) << '\n';
    }
  }
  finish(out, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace hnrfs
