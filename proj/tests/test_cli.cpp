#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cdapose/checkpoint.hpp"
#include "cdapose/datasets.hpp"
#include "cdapose/pplo.hpp"

using namespace cdapose;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = CDAPOSE_CONFIG_DIR;

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t checkpoint_checksum(const fs::path& p) { return parameter_checksum(load_checkpoint<float>(p).model); }

class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "cdapose_cli_test"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    // Shared synthetic data and a small train config pointing at it.
    ASSERT_EQ(run("synth -c " + (kConfigs / "synth_small.json").string() + " -o " + (root() / "data").string()).code, 0);
    json cfg = json::parse(slurp(kConfigs / "train_small.json"));
    cfg["data"] = {{"source", "data/source.json"}, {"target", "data/target.json"}, {"truth", "data/target_truth.json"}};
    std::ofstream(root() / "train.json") << cfg.dump(2);
  }

  static CliRun run(const std::string& args) {
    static int counter = 0;
    const auto out = root() / ("stdout" + std::to_string(counter) + ".txt");
    const auto err = root() / ("stderr" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string("\"") + CDAPOSE_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string out_flag(const std::string& name) { return "--out " + (root() / name).string() + " -q "; }
  static std::string train_cfg() { return (root() / "train.json").string(); }
  static std::string data(const std::string& f) { return (root() / "data" / f).string(); }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train").code, 1);
}

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(run("synth -c " + (kConfigs / "synth_small.json").string() + " -o " + (root() / "data2").string()).code, 0);
  for (const char* f : {"source.json", "target.json", "target_truth.json"})
    EXPECT_EQ(slurp(root() / "data" / f), slurp(root() / "data2" / f)) << f;
  const auto target = parse_annotations(data("target.json"));
  for (const auto& inst : target.instances) EXPECT_FALSE(inst.pose.has_value());
  EXPECT_TRUE(fs::exists(root() / "data" / "manifest.json"));
}

TEST_F(Cli, SynthRejectsBadConfig) {
  std::ofstream(root() / "bad_synth.json") << R"({"domains": [{"name": "x", "count": 0}]})";
  const auto r = run("synth -c " + (root() / "bad_synth.json").string() + " -o " + (root() / "bad").string());
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_EQ(run("synth -c " + (root() / "missing.json").string()).code, 1);
}

TEST_F(Cli, IngestAlignsAndReportsCounts) {
  json doc;
  const auto animal = schemas::animal20();
  doc["categories"] = {{{"id", 1}, {"name", "horse"}, {"keypoints", animal.keypoint_names}}};
  doc["images"] = {{{"id", 1}, {"file_name", "h.ppm"}}};
  std::vector<double> kps;
  for (int k = 0; k < 20; ++k) kps.insert(kps.end(), {double(k), double(k + 1), 2.0});
  doc["annotations"] = {{{"id", 5}, {"image_id", 1}, {"category_id", 1}, {"keypoints", kps}}};
  std::ofstream(root() / "horse.json") << doc.dump(1);
  const auto out = root() / "ingest" / "merged.json";
  const auto r = run("ingest " + (root() / "horse.json").string() + " --alignment-table " +
                     (kConfigs / "animal20_to_coco17.json").string() + " -o " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("horse: 1"), std::string::npos) << r.out;
  const auto set = parse_annotations(out);
  EXPECT_EQ(set.schema.name, "coco17");
  // nose (index 4 in the animal layout) lands on the reference nose.
  EXPECT_EQ(set.instances[0].pose->keypoints[0].x, 4.0);
  EXPECT_EQ(set.instances[0].pose->keypoints[1].v, 2);  // left_eye
  EXPECT_EQ(set.instances[0].file_name, "../h.ppm");
}

TEST_F(Cli, IngestMalformedJsonNamesLine) {
  std::ofstream(root() / "broken.json") << "{\n  \"images\": [\n  ,\n]}";
  const auto r = run("ingest " + (root() / "broken.json").string() + " -o " + (root() / "x.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST_F(Cli, AnalyzeBones) {
  const auto dir = root() / "bones";
  const auto r = run("analyze-bones " + data("source.json") + " -o " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(dir / "bones.json"));
  EXPECT_NE(j.dump().find("dog"), std::string::npos);
  EXPECT_NE(slurp(dir / "bones.svg").find("<svg"), std::string::npos);
  std::ofstream(root() / "empty.json") << R"({"categories": [], "images": [], "annotations": []})";
  EXPECT_EQ(run("analyze-bones " + (root() / "empty.json").string() + " -o " + dir.string()).code, 1);
}

TEST_F(Cli, PploRefusesWithoutWscdaCheckpoint) {
  const auto r = run(out_flag("nockpt") + "train pplo -c " + train_cfg());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train wscda"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownConfigKeyIsUserError) {
  const auto r = run(out_flag("badkey") + "--set wscda.learning_rat=1 train wscda -c " + train_cfg());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos) << r.err;
}

TEST_F(Cli, FullPipelineIsReproducible) {
  auto pipeline = [&](const std::string& out) {
    EXPECT_EQ(run(out_flag(out) + "train wscda -c " + train_cfg()).code, 0);
    const auto r = run(out_flag(out) + "train pplo -c " + train_cfg());
    EXPECT_EQ(r.code, 0) << r.err;
    const auto dir = root() / out / "small";
    EXPECT_EQ(run("eval --checkpoint " + (dir / "pplo" / "pplo_final.ckpt.json").string() + " --set " +
                  data("target.json") + " --truth " + data("target_truth.json"))
                  .code,
              0);
    EXPECT_EQ(run("eval --checkpoint " + (dir / "wscda" / "wscda_final.ckpt.json").string() + " --set " +
                  data("target.json") + " --truth " + data("target_truth.json"))
                  .code,
              0);
    return dir;
  };
  const auto a = pipeline("runA"), b = pipeline("runB");
  for (const char* f : {"wscda/wscda_metrics.csv", "pplo/pplo_metrics.csv", "pplo/pseudo_labels.json",
                        "pplo/pplo_phases.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(checkpoint_checksum(a / "pplo" / "pplo_final.ckpt.json"),
            checkpoint_checksum(b / "pplo" / "pplo_final.ckpt.json"));
  const auto ea = json::parse(slurp(a / "pplo" / "eval_test.json"));
  const auto eb = json::parse(slurp(b / "pplo" / "eval_test.json"));
  EXPECT_EQ(ea["result"], eb["result"]);

  const auto manifest = json::parse(slurp(a / "pplo" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train pplo");
  EXPECT_FALSE(manifest["checkpoints"].empty());
  EXPECT_EQ(slurp(a / "pplo" / "pplo_metrics.csv").substr(0, std::string(kPploCsvHeader).size()), kPploCsvHeader);

  // Export.
  const auto exported = root() / "pseudo.json";
  const auto ex = run("export-pseudo-labels --store " + (a / "pplo" / "pseudo_labels.json").string() + " --set " +
                      data("target.json") + " -o " + exported.string());
  ASSERT_EQ(ex.code, 0) << ex.err;
  const auto store = PseudoLabelStore::from_json(json::parse(slurp(a / "pplo" / "pseudo_labels.json")));
  EXPECT_EQ(parse_annotations(exported).size(), store.size());

  // Report over both stages of one run.
  const auto rep_dir = root() / "report";
  const auto rep = run("report " + (a / "wscda" / "eval_test.json").string() + " " +
                       (a / "pplo" / "eval_test.json").string() + " -o " + rep_dir.string());
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_TRUE(fs::exists(rep_dir / "report.csv"));
  EXPECT_TRUE(fs::exists(rep_dir / "curve_ddl.svg"));

  // Results from a different evaluation set are refused.
  const auto all = root() / "eval_all.json";
  const auto ev = run("eval --checkpoint " + (a / "pplo" / "pplo_final.ckpt.json").string() + " --set " +
                      data("target.json") + " --truth " + data("target_truth.json") + " --split all -o " + all.string());
  EXPECT_EQ(ev.code, 0);
  EXPECT_NE(ev.err.find("training data"), std::string::npos) << ev.err;
  EXPECT_EQ(run("report " + (a / "pplo" / "eval_test.json").string() + " " + all.string() + " -o " +
                (root() / "report2").string())
                .code,
            1);
}

TEST_F(Cli, SupervisedBoostWithZeroLabelsMatchesPlainPipeline) {
  ASSERT_EQ(run(out_flag("plain") + "train wscda -c " + train_cfg()).code, 0);
  ASSERT_EQ(run(out_flag("plain") + "train pplo -c " + train_cfg()).code, 0);
  const auto r = run(out_flag("boost") + "train supervised-boost --n-gt 0 -c " + train_cfg());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(checkpoint_checksum(root() / "plain" / "small" / "pplo" / "pplo_final.ckpt.json"),
            checkpoint_checksum(root() / "boost" / "small" / "boost_n0" / "pplo" / "pplo_final.ckpt.json"));
  const auto r5 = run(out_flag("boost") + "train supervised-boost -c " + train_cfg());
  ASSERT_EQ(r5.code, 0) << r5.err;
  EXPECT_TRUE(fs::exists(root() / "boost" / "small" / "boost_n5" / "pplo" / "pplo_final.ckpt.json"));
  EXPECT_EQ(run(out_flag("boost") + "train supervised-boost --n-gt 100000 -c " + train_cfg()).code, 1);
}
