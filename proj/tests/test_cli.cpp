#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dada/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "dada_cli_tests";

int run(const std::string& args, const fs::path& err = {}) {
  std::string cmd = std::string(DADA_CLI_PATH) + " " + args;
  cmd += err.empty() ? " 2>/dev/null" : " 2>" + err.string();
  cmd += " >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path fresh(const std::string& name) {
  const auto d = kRoot / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small enough for the whole pipeline to finish in seconds.
fs::path tiny_config(const fs::path& dir) {
  const json c = {
      {"seed", 3},
      {"net",
       {{"window", 40}, {"patch", 4}, {"d_model", 8}, {"encoder_layers", 2}, {"d_r", 16}, {"pool_sizes", {2, 4, 8}}, {"k", 2}}},
      {"train", {{"epochs", 1}, {"batch_size", 16}, {"train_stride", 40}, {"lr", 1e-3}}},
      {"synth", {{"length", 2000}, {"series_per_family", 1}, {"calibration_length", 1000}}},
      {"detect", {{"n_pairs", 3}}}};
  const auto p = dir / "config.json";
  std::ofstream(p) << c.dump(2);
  return p;
}

}  // namespace

TEST(Cli, SmokePipelineRunsEndToEnd) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = fresh("smoke");
  const auto cfg = tiny_config(dir);
  const auto corpus = dir / "corpus";
  const auto run_dir = dir / "run";
  const std::string c = "--config " + cfg.string();

  ASSERT_EQ(run("synth " + c + " --out " + corpus.string()), 0);
  ASSERT_TRUE(fs::exists(corpus / "train_manifest.json"));
  ASSERT_TRUE(fs::exists(corpus / "meta.json"));

  ASSERT_EQ(run("inject " + c + " --input " + (corpus / "sine_0_normal.csv").string() + " --out " +
                (dir / "injected").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "injected" / "sine_0_normal_injected.csv"));
  const auto log = read_json(dir / "injected" / "sine_0_normal_injected.log.json");
  EXPECT_FALSE(log.at("channels").at(0).at("records").empty());

  ASSERT_EQ(run("pretrain " + c + " --run-dir " + run_dir.string() + " --set dataset.manifest=" +
                (corpus / "train_manifest.json").string()),
            0);
  ASSERT_TRUE(fs::exists(run_dir / "model.ckpt"));
  std::ifstream log_in(run_dir / "train_log.ndjson");
  std::string line;
  ASSERT_TRUE(static_cast<bool>(std::getline(log_in, line)));
  const auto rec = json::parse(line);
  for (const char* k : {"step", "epoch", "loss_norm", "loss_abnorm", "lr", "wallclock"}) EXPECT_TRUE(rec.contains(k)) << k;

  const auto scores = run_dir / "scores.csv";
  ASSERT_EQ(run("score " + c + " --checkpoint " + (run_dir / "model.ckpt").string() + " --input " +
                (corpus / "am_0_test.csv").string() + " --calibration " + (corpus / "am_0_calib.csv").string() +
                " --n-pairs 3 --q 1e-3 --seed 4 --plot --out " + scores.string()),
            0);
  EXPECT_EQ(slurp(scores).substr(0, 17), "t,score,decision\n");
  const auto side = read_json(run_dir / "scores.json");
  EXPECT_TRUE(side.at("threshold").is_number());
  EXPECT_EQ(side.at("spot_config").at("q").get<double>(), 1e-3);
  EXPECT_EQ(side.at("n_pairs").get<int>(), 3);
  EXPECT_TRUE(fs::exists(run_dir / "scores.svg"));

  const auto report = run_dir / "report.json";
  ASSERT_EQ(run("evaluate " + c + " --scores " + scores.string() + " --labels " + (corpus / "am_0_test.csv").string() +
                " --out " + report.string()),
            0);
  const auto r = read_json(report);
  for (const char* k : {"affiliation_p", "affiliation_r", "affiliation_f1", "auc_roc", "counts", "empty_prediction"}) {
    EXPECT_TRUE(r.contains(k)) << k;
  }
  EXPECT_EQ(r.size(), 6u);

  ASSERT_EQ(run("report " + c + " --reports " + report.string() + " --scores " + scores.string() + " --labels " +
                (corpus / "am_0_test.csv").string() + " --out " + (dir / "summary").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "summary" / "summary.md"));
  EXPECT_TRUE(fs::exists(dir / "summary" / "scores.svg"));

  const auto meta = read_json(run_dir / "meta.json");
  for (const char* cmd : {"pretrain", "score", "evaluate"}) {
    ASSERT_TRUE(meta.at("commands").contains(cmd)) << cmd;
    EXPECT_EQ(meta["commands"][cmd]["config_hash"].get<std::string>().size(), 16u);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 120.0);
}

TEST(Cli, SynthIsDeterministic) {
  const auto dir = fresh("synth_det");
  const auto cfg = tiny_config(dir);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --seed 11 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --seed 11 --out " + (dir / "b").string()), 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++n;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  }
  EXPECT_GT(n, 5u);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --seed 12 --out " + (dir / "c").string()), 0);
  EXPECT_NE(slurp(dir / "a" / "sine_0_normal.csv"), slurp(dir / "c" / "sine_0_normal.csv"));
}

TEST(Cli, RetrainingReproducesCheckpoint) {
  const auto dir = fresh("repro");
  const auto cfg = tiny_config(dir);
  const std::string c = "--config " + cfg.string();
  ASSERT_EQ(run("synth " + c + " --out " + (dir / "corpus").string()), 0);
  const std::string manifest = " --set dataset.manifest=" + (dir / "corpus" / "train_manifest.json").string();
  ASSERT_EQ(run("pretrain " + c + " --run-dir " + (dir / "a").string() + manifest), 0);
  ASSERT_EQ(run("pretrain " + c + " --run-dir " + (dir / "b").string() + manifest), 0);
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  EXPECT_EQ(slurp(dir / "a" / "history.json"), slurp(dir / "b" / "history.json"));
}

TEST(Cli, EvaluateWithPerfectDecisionsGivesF1One) {
  const auto dir = fresh("perfect");
  std::ofstream labels(dir / "labels.csv"), scores(dir / "scores.csv");
  labels << "c0,label\n";
  scores << "t,score,decision\n";
  for (int t = 0; t < 200; ++t) {
    const int y = (t >= 50 && t < 60) || (t >= 120 && t < 140);
    labels << 0.1 * t << ',' << y << '\n';
    scores << t << ',' << (y ? 2.0 : 0.5) << ',' << y << '\n';
  }
  labels.close();
  scores.close();
  ASSERT_EQ(run("evaluate --scores " + (dir / "scores.csv").string() + " --labels " + (dir / "labels.csv").string() +
                " --out " + (dir / "report.json").string()),
            0);
  const auto r = read_json(dir / "report.json");
  EXPECT_DOUBLE_EQ(r.at("affiliation_f1").get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(r.at("auc_roc").get<double>(), 1.0);
  EXPECT_EQ(r.at("counts").at("tp_events").get<int>(), 2);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  const auto dir = fresh("config_err");
  std::ofstream(dir / "bad.json") << R"({"train": {"learning_rate": 0.1}})";
  const auto err = dir / "err.txt";
  EXPECT_EQ(run("synth --config " + (dir / "bad.json").string() + " --out " + dir.string(), err), 2);
  const auto rec = json::parse(slurp(err));
  EXPECT_EQ(rec.at("error").at("exit_code").get<int>(), 2);
  EXPECT_NE(rec["error"]["message"].get<std::string>().find("learning_rate"), std::string::npos);
  EXPECT_EQ(run("synth --set bogus=1 --out " + dir.string()), 2);
  EXPECT_EQ(run("synth --set train.lr=-1 --out " + dir.string()), 2);
  EXPECT_EQ(run("nonsense"), 2);
  EXPECT_EQ(run("pretrain"), 2);  // dataset.manifest unset
}

TEST(Cli, DataErrorsExitWithThree) {
  const auto dir = fresh("data_err");
  std::ofstream(dir / "ragged.csv") << "c0,c1\n1,2\n3\n";
  const auto err = dir / "err.txt";
  EXPECT_EQ(run("inject --input " + (dir / "ragged.csv").string() + " --out " + dir.string(), err), 3);
  EXPECT_EQ(json::parse(slurp(err)).at("error").at("kind").get<std::string>(), "MalformedFile");
}

TEST(Cli, EvaluationErrorsExitWithFive) {
  const auto dir = fresh("eval_err");
  std::ofstream(dir / "labels.csv") << "c0,label\n1,0\n2,0\n3,0\n";
  std::ofstream(dir / "scores.csv") << "t,score,decision\n0,1,0\n1,1,0\n2,1,1\n";
  EXPECT_EQ(run("evaluate --scores " + (dir / "scores.csv").string() + " --labels " + (dir / "labels.csv").string() +
                " --out " + (dir / "r.json").string()),
            5);
}

TEST(Cli, FlagsOverrideConfigAndEnterTheHash) {
  const auto dir = fresh("override");
  const auto cfg = tiny_config(dir);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run("synth --config " + cfg.string() + " --set synth.length=2500 --out " + (dir / "b").string()), 0);
  const auto ma = read_json(dir / "a" / "meta.json")["commands"]["synth"];
  const auto mb = read_json(dir / "b" / "meta.json")["commands"]["synth"];
  EXPECT_NE(ma["config_hash"], mb["config_hash"]);
  EXPECT_EQ(mb["config"]["synth"]["length"].get<int>(), 2500);
  EXPECT_EQ(ma["seed"].get<int>(), 3);
}

TEST(Cli, NoAdabnCheckpointHasNoRouter) {
  const auto dir = fresh("no_adabn");
  const auto cfg = tiny_config(dir);
  const std::string c = "--config " + cfg.string();
  ASSERT_EQ(run("synth " + c + " --out " + (dir / "corpus").string()), 0);
  ASSERT_EQ(run("pretrain " + c + " --set net.adaptive=false --run-dir " + dir.string() + " --set dataset.manifest=" +
                (dir / "corpus" / "train_manifest.json").string()),
            0);
  const auto a = dada::load_archive(dir / "model.ckpt");
  for (const auto& [name, _] : a.tensors) EXPECT_EQ(name.find("router"), std::string::npos) << name;
}

TEST(Cli, FinetuneAndResumeContinueFromCheckpoint) {
  const auto dir = fresh("finetune");
  const auto cfg = tiny_config(dir);
  const std::string c = "--config " + cfg.string();
  ASSERT_EQ(run("synth " + c + " --out " + (dir / "corpus").string()), 0);
  const std::string manifest = " --set dataset.manifest=" + (dir / "corpus" / "train_manifest.json").string();
  ASSERT_EQ(run("pretrain " + c + manifest + " --run-dir " + (dir / "pre").string()), 0);
  ASSERT_EQ(run("pretrain " + c + manifest + " --epochs 2 --resume " + (dir / "pre" / "model.ckpt").string() +
                " --run-dir " + (dir / "resumed").string()),
            0);
  EXPECT_EQ(read_json(dir / "resumed" / "history.json").size(), 2u);

  std::ofstream(dir / "target.json") << json{{"entries",
                                              {{{"path", (dir / "corpus" / "am_0_calib.csv").string()},
                                                {"role", "normal"},
                                                {"domain_tag", "am"},
                                                {"format", "csv"}}}}}
                                            .dump();
  ASSERT_EQ(run("finetune " + c + " --checkpoint " + (dir / "pre" / "model.ckpt").string() + " --target " +
                (dir / "target.json").string() + " --run-dir " + (dir / "ft").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "ft" / "model.ckpt"));
  EXPECT_TRUE(read_json(dir / "ft" / "meta.json")["commands"].contains("finetune"));
}
