#include <gtest/gtest.h>

#include <map>

#include "hnrfs/commands.hpp"
#include "hnrfs/nifti.hpp"
#include "hnrfs/run.hpp"
#include "hnrfs/survstat.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace hnrfs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hnrfs");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

json load_json(const fs::path& p) { return json::parse(test::read_file(p)); }

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = test::read_file(e.path());
  }
  return files;
}

// Small simulated cohort shared by the tests in this file.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir();
    ASSERT_EQ(cli({"--seed", "11", "--output", sim().string(), "simulate", "--n", "120", "--noise", "8"}), 0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path sim() { return *dir_ / "sim"; }
  static fs::path out(const std::string& name) { return *dir_ / name; }
  static std::string config() { return (sim() / "config.json").string(); }

  static test::TempDir* dir_;
};

test::TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, SimulateWritesInputs) {
  for (const char* f : {"clinical_features.csv", "ct_features.csv", "pet_features.csv", "labels.csv",
                        "planted.json", "config.json"}) {
    EXPECT_TRUE(fs::exists(sim() / f)) << f;
  }
  EXPECT_EQ(load_json(sim() / "planted.json")["planted"]["ct"].size(), 3u);
}

TEST_F(CliTest, StagedCompositionMatchesRun) {
  const auto before = snapshot(sim());
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", out("run").string(), "run"}), 0);
  EXPECT_EQ(snapshot(sim()), before);

  const auto staged = out("staged").string();
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", staged, "features"}), 0);
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", staged, "fit", "--features", staged}), 0);
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", staged, "evaluate"}), 0);

  EXPECT_EQ(test::read_file(out("run") / "risk_scores.csv"), test::read_file(out("staged") / "risk_scores.csv"));
  const auto rows_a = read_risk_csv(out("run") / "risk_scores.csv");
  const auto rows_b = read_risk_csv(out("staged") / "risk_scores.csv");
  ASSERT_EQ(rows_a.size(), rows_b.size());
  for (std::size_t i = 0; i < rows_a.size(); ++i) EXPECT_NEAR(rows_a[i].risk.fused, rows_b[i].risk.fused, 1e-12);

  const json run_ci = load_json(out("run") / "run_report.json")["c_index"];
  const json staged_ci = load_json(out("staged") / "evaluation.json")["c_index"];
  for (const char* k : {"clinical", "ct", "pet", "fused"}) {
    ASSERT_TRUE(run_ci[k].is_number()) << k;
    EXPECT_NEAR(run_ci[k].get<double>(), staged_ci[k].get<double>(), 1e-12) << k;
  }

  // The reported fused C-index is the plain concordance of the CSV scores.
  const auto labels = read_labels_csv(out("run") / "labels.csv");
  std::vector<SurvivalRecord> recs;
  std::vector<double> fused;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    recs.push_back(labels[i].record);
    fused.push_back(rows_a[i].risk.fused);
  }
  EXPECT_EQ(concordance_index(recs, fused), run_ci["fused"].get<double>());
}

TEST_F(CliTest, RerunsAreByteIdentical) {
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", out("r1").string(), "run"}), 0);
  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--output", out("r2").string(), "run"}), 0);
  const auto a = snapshot(out("r1"));
  const auto b = snapshot(out("r2"));
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [name, text] : a) EXPECT_EQ(text, b.at(name)) << name;

  ASSERT_EQ(cli({"--config", config(), "--repeats", "2", "--seed", "12", "--output", out("r3").string(), "run"}), 0);
  EXPECT_NE(test::read_file(out("r1") / "risk_scores.csv"), test::read_file(out("r3") / "risk_scores.csv"));
}

TEST_F(CliTest, RadiomicsDisabledFallsBackToClinical) {
  json j = load_json(sim() / "config.json");
  j["fusion"]["radiomics"] = false;
  j["paths"]["feature_dir"] = sim().string();
  const auto cfg = out("noradio.json");
  test::write_file(cfg, j.dump());
  ASSERT_EQ(cli({"--config", cfg.string(), "--repeats", "2", "--output", out("noradio").string(), "run"}), 0);
  const auto rows = read_risk_csv(out("noradio") / "risk_scores.csv");
  for (const auto& r : rows) {
    EXPECT_FALSE(r.risk.ct.has_value());
    EXPECT_FALSE(r.risk.has_gtvp);
  }
  const json ci = load_json(out("noradio") / "run_report.json")["c_index"];
  EXPECT_EQ(ci["fused"], ci["clinical"]);
  EXPECT_TRUE(ci["ct"].is_null());
}

TEST_F(CliTest, KmOnIdenticalGroups) {
  const auto labels = (sim() / "labels.csv").string();
  ASSERT_EQ(cli({"--output", out("km").string(), "km", "--group-a", labels, "--group-b", labels}), 0);
  const json r = load_json(out("km") / "km_report.json");
  EXPECT_EQ(r["logrank"]["p_value"].get<double>(), 1.0);
  EXPECT_EQ(r["logrank"]["chi_square"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(out("km") / "km_curves.csv"));
}

TEST_F(CliTest, FailureIsStageTaggedAndRolledBack) {
  const auto bad = out("bad_features");
  fs::create_directories(bad);
  fs::copy_file(sim() / "clinical_features.csv", bad / "clinical_features.csv");
  test::write_file(bad / "labels.csv", "patient_id,time,event\nP00000,-1,1\n");
  const auto dest = out("bad_out");
  ::testing::internal::CaptureStderr();
  const int code = cli({"--repeats", "2", "--output", dest.string(), "fit", "--features", bad.string()});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("[stage="), std::string::npos) << err;
  EXPECT_TRUE(!fs::exists(dest) || fs::is_empty(dest));

  ::testing::internal::CaptureStderr();
  EXPECT_EQ(cli({"nonsense"}), 2);
  ::testing::internal::GetCapturedStderr();
}

TEST(Cli, PostprocessPhantomsRemoveOnlyDistantNode) {
  test::TempDir dir;
  const auto sim = dir / "sim";
  ASSERT_EQ(cli({"--seed", "3", "--output", sim.string(), "simulate", "--n", "20", "--noise", "2", "--phantoms", "2"}), 0);
  const auto before = snapshot(sim);
  const auto pp = dir / "pp";
  ASSERT_EQ(cli({"--config", (sim / "volume_config.json").string(), "--output", pp.string(), "postprocess"}), 0);
  EXPECT_EQ(snapshot(sim), before);

  const json r = load_json(pp / "postprocess.json");
  ASSERT_EQ(r["patients"].size(), 2u);
  EXPECT_EQ(r["patients"][0]["removed_nodes"].size(), 0u);
  ASSERT_EQ(r["patients"][1]["removed_nodes"].size(), 1u);
  EXPECT_GT(r["patients"][1]["removed_nodes"][0]["distance_mm"].get<double>(), 150.0);
  EXPECT_EQ(r["patients"][1]["dice"]["gtvn_after"].get<double>(), 1.0);
  EXPECT_LT(r["patients"][1]["dice"]["gtvn_before"].get<double>(), 1.0);

  const auto filtered = read_label_nifti(pp / "V0001__mask.nii");
  const auto original = read_label_nifti(sim / "volumes" / "V0001__mask.nii");
  for (std::size_t v = 0; v < filtered.size(); ++v) {
    EXPECT_EQ(filtered[v] == kGtvp, original[v] == kGtvp);
  }
  EXPECT_TRUE(filtered == read_label_nifti(sim / "references" / "V0001__mask.nii"));
}
