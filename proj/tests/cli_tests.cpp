// End-to-end checks of the command-line tool: it is exercised as a subprocess
// so exit codes, stderr messages, and on-disk artifacts are tested exactly as
// a user would see them.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "sbnn/data.hpp"
#include "sbnn/experiments.hpp"
#include "sbnn/model.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "sbnn_cli_XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

struct CmdResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  ASSERT_TRUE(os.good()) << path;
}

// Runs the CLI binary through the shell, capturing exit code and both streams.
CmdResult run_cli(const std::string& args, const TempDir& dir,
                  const std::string& env_prefix = "") {
  std::string out_file = dir.sub("stdout.txt"), err_file = dir.sub("stderr.txt");
  std::string cmd =
      env_prefix + " " + SBNN_CLI_PATH + " " + args + " > " + out_file + " 2> " + err_file;
  int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

// Small cluster-classification training config that finishes in well under a
// second; used wherever a test only needs some trained artifact.
std::string tiny_train_config() {
  return R"({
    "dataset": {"kind": "clusters", "samples_per_class": 10},
    "model": {"widths": [8], "method": "lbbnn-lrt", "flow_width": 8},
    "train": {"epochs": 5, "batch_size": 25, "learning_rate": 0.01, "seed": 4}
  })";
}

}  // namespace

TEST(Help, TopLevelListsSubcommandsAndExitsZero) {
  TempDir d;
  CmdResult r = run_cli("--help", d);
  EXPECT_EQ(r.exit_code, 0);
  for (const char* name : {"train", "eval", "logreg-sim", "uncertainty"})
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
}

TEST(Help, SubcommandHelpDocumentsItsFlags) {
  TempDir d;
  for (const char* sub : {"train", "eval", "logreg-sim", "uncertainty"}) {
    CmdResult r = run_cli(std::string(sub) + " --help", d);
    EXPECT_EQ(r.exit_code, 0) << sub;
    EXPECT_NE(r.out.find("--config"), std::string::npos) << sub;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << sub;
    EXPECT_NE(r.out.find("--seed"), std::string::npos) << sub;
  }
}

TEST(Errors, MissingConfigFlagFailsWithMessage) {
  TempDir d;
  CmdResult r = run_cli("train", d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("--config"), std::string::npos);
}

TEST(Errors, MissingConfigFileFailsWithMessage) {
  TempDir d;
  CmdResult r = run_cli("train --config " + d.sub("absent.json") + " --out " + d.sub("o"), d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("cannot open"), std::string::npos);
}

TEST(Errors, MalformedJsonFails) {
  TempDir d;
  write_file(d.sub("bad.json"), "{ this is not json");
  CmdResult r = run_cli("train --config " + d.sub("bad.json") + " --out " + d.sub("o"), d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("invalid JSON"), std::string::npos);
}

TEST(Errors, UnknownConfigKeyIsRejectedBeforeAnyWork) {
  TempDir d;
  write_file(d.sub("extra.json"),
             R"({"dataset": {"kind": "clusters"}, "bogus": 1})");
  CmdResult r = run_cli("train --config " + d.sub("extra.json") + " --out " + d.sub("o"), d);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("unknown key 'bogus'"), std::string::npos);
  EXPECT_FALSE(fs::exists(d.sub("o/history.csv")));
}

TEST(Errors, MissingDataFilesExitTwo) {
  TempDir d;
  write_file(d.sub("mnist.json"),
             R"({"dataset": {"kind": "mnist", "images": "/absent-images.idx",
                 "labels": "/absent-labels.idx"}})");
  CmdResult r = run_cli("train --config " + d.sub("mnist.json") + " --out " + d.sub("o"), d);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("data error"), std::string::npos);
}

TEST(Errors, DivergentTrainingExitsThreeAndNamesTheComponent) {
  TempDir d;
  write_file(d.sub("diverge.json"), R"({
    "dataset": {"kind": "clusters", "samples_per_class": 10},
    "model": {"widths": [8], "method": "lbbnn-lrt", "flow_width": 8},
    "train": {"epochs": 50, "batch_size": 10, "learning_rate": 1e18, "seed": 0}
  })");
  CmdResult r = run_cli("train --config " + d.sub("diverge.json") + " --out " + d.sub("o"), d);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.err.find("numerical failure"), std::string::npos);
  // The message must identify which computation went non-finite.
  EXPECT_NE(r.err.find("non-finite"), std::string::npos);
}

TEST(Train, WritesHistoryCheckpointAndManifest) {
  TempDir d;
  write_file(d.sub("cfg.json"), tiny_train_config());
  CmdResult r = run_cli("train --config " + d.sub("cfg.json") + " --out " + d.sub("run"), d);
  ASSERT_EQ(r.exit_code, 0) << r.err;

  sbnn::CsvTable hist = sbnn::read_csv(d.sub("run/history.csv"));
  std::vector<std::string> want = {"epoch", "nll",     "kl_weights", "kl_bias",
                                   "log_q_z", "log_r_z", "total"};
  EXPECT_EQ(hist.header, want);
  ASSERT_EQ(hist.rows.size(), 5u);
  for (std::size_t e = 0; e < hist.rows.size(); ++e)
    EXPECT_EQ(hist.rows[e][0], static_cast<double>(e + 1));

  sbnn::Network net = sbnn::Network::load(d.sub("run/checkpoint.bin"));
  EXPECT_EQ(net.n_in(), 2u);
  EXPECT_EQ(net.n_out(), 5u);

  nlohmann::json m = nlohmann::json::parse(slurp(d.sub("run/manifest.json")));
  EXPECT_EQ(m.at("command"), "train");
  EXPECT_EQ(m.at("seed"), 4);
  EXPECT_EQ(m.at("config").at("train").at("epochs"), 5);
  // The recorded hash must match an independent recomputation from the bytes.
  std::string want_hash =
      "fnv1a64:" + sbnn::detail::hex64(sbnn::detail::fnv1a64_file(d.sub("run/history.csv")));
  EXPECT_EQ(m.at("outputs").at("history.csv"), want_hash);
}

TEST(Train, SeedFlagOverridesConfigSeed) {
  TempDir d;
  write_file(d.sub("cfg.json"), tiny_train_config());
  CmdResult a = run_cli("train --config " + d.sub("cfg.json") + " --out " + d.sub("a"), d);
  CmdResult b = run_cli(
      "train --config " + d.sub("cfg.json") + " --seed 99 --out " + d.sub("b"), d);
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  nlohmann::json mb = nlohmann::json::parse(slurp(d.sub("b/manifest.json")));
  EXPECT_EQ(mb.at("seed"), 99);
  EXPECT_NE(slurp(d.sub("a/history.csv")), slurp(d.sub("b/history.csv")));
}

TEST(Eval, ScoresACheckpointOnTheConfiguredDataset) {
  TempDir d;
  write_file(d.sub("cfg.json"), tiny_train_config());
  ASSERT_EQ(run_cli("train --config " + d.sub("cfg.json") + " --out " + d.sub("run"), d)
                .exit_code,
            0);
  CmdResult r = run_cli("eval --checkpoint " + d.sub("run/checkpoint.bin") + " --config " +
                            d.sub("cfg.json") + " --samples 20 --mode median --out " +
                            d.sub("ev"),
                        d);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy="), std::string::npos);
  EXPECT_NE(r.out.find("density="), std::string::npos);

  sbnn::CsvTable ev = sbnn::read_csv(d.sub("ev/eval.csv"));
  EXPECT_EQ(ev.header, (std::vector<std::string>{"accuracy", "density"}));
  ASSERT_EQ(ev.rows.size(), 1u);
  EXPECT_GE(ev.rows[0][0], 0.0);
  EXPECT_LE(ev.rows[0][0], 1.0);
  EXPECT_GT(ev.rows[0][1], 0.0);
  EXPECT_LE(ev.rows[0][1], 1.0);
}

namespace {

std::string tiny_logreg_config() {
  return R"({"reps": 2, "method": "lbbnn-lrt", "n": 200, "epochs": 20,
             "batch_size": 100, "learning_rate": 0.01, "prior_alpha": 0.25,
             "flow_width": 8, "seed": 3})";
}

}  // namespace

TEST(LogregSim, FixedSeedRerunsAreByteIdentical) {
  TempDir d;
  write_file(d.sub("lr.json"), tiny_logreg_config());
  CmdResult a =
      run_cli("logreg-sim --config " + d.sub("lr.json") + " --out " + d.sub("a"), d);
  CmdResult b =
      run_cli("logreg-sim --config " + d.sub("lr.json") + " --out " + d.sub("b"), d);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  ASSERT_EQ(b.exit_code, 0) << b.err;
  for (const char* f : {"selection.csv", "inclusion_counts.csv", "manifest.json"}) {
    std::string fa = slurp(d.sub("a/") + f), fb = slurp(d.sub("b/") + f);
    EXPECT_FALSE(fa.empty()) << f;
    EXPECT_EQ(fa, fb) << f;
  }
}

TEST(LogregSim, ThreadCountDoesNotChangeTheMergedOutputs) {
  TempDir d;
  write_file(d.sub("lr.json"), tiny_logreg_config());
  CmdResult one =
      run_cli("logreg-sim --config " + d.sub("lr.json") + " --out " + d.sub("one"), d);
  CmdResult two = run_cli("logreg-sim --config " + d.sub("lr.json") + " --out " + d.sub("two"),
                          d, "SBNN_THREADS=2");
  ASSERT_EQ(one.exit_code, 0) << one.err;
  ASSERT_EQ(two.exit_code, 0) << two.err;
  EXPECT_EQ(slurp(d.sub("one/selection.csv")), slurp(d.sub("two/selection.csv")));
  EXPECT_EQ(slurp(d.sub("one/inclusion_counts.csv")), slurp(d.sub("two/inclusion_counts.csv")));
}

TEST(LogregSim, SelectionTableHasPerRunRowsAndConsistentCounts) {
  TempDir d;
  write_file(d.sub("lr.json"), tiny_logreg_config());
  ASSERT_EQ(run_cli("logreg-sim --config " + d.sub("lr.json") + " --out " + d.sub("o"), d)
                .exit_code,
            0);

  sbnn::CsvTable sel = sbnn::read_csv(d.sub("o/selection.csv"));
  ASSERT_EQ(sel.header.size(), 23u);
  EXPECT_EQ(sel.header[0], "run");
  EXPECT_EQ(sel.header[3], "included_0");
  EXPECT_EQ(sel.header[22], "included_19");
  ASSERT_EQ(sel.rows.size(), 2u);

  sbnn::CsvTable counts = sbnn::read_csv(d.sub("o/inclusion_counts.csv"));
  ASSERT_EQ(counts.rows.size(), 20u);
  for (int c = 0; c < 20; ++c) {
    double sum = 0.0;
    for (const auto& row : sel.rows) {
      double inc = row[3 + c];
      EXPECT_TRUE(inc == 0.0 || inc == 1.0);
      sum += inc;
    }
    EXPECT_EQ(counts.rows[c][0], c);
    EXPECT_EQ(counts.rows[c][1], sum);
  }
  // Per-rep scratch files must have been merged away.
  EXPECT_FALSE(fs::exists(d.sub("o/selection_rep0.csv")));
  EXPECT_FALSE(fs::exists(d.sub("o/selection_rep1.csv")));
}

TEST(LogregSim, RepsFlagOverridesTheConfigValue) {
  TempDir d;
  write_file(d.sub("lr.json"), tiny_logreg_config());
  ASSERT_EQ(run_cli("logreg-sim --config " + d.sub("lr.json") + " --reps 1 --out " + d.sub("o"),
                    d)
                .exit_code,
            0);
  EXPECT_EQ(sbnn::read_csv(d.sub("o/selection.csv")).rows.size(), 1u);
}

TEST(Uncertainty, WritesAllArtifactsAndTheyParseStrictly) {
  TempDir d;
  write_file(d.sub("unc.json"), R"({
    "method": "lbbnn-lrt", "samples_per_class": 10, "widths": [16],
    "epochs": 20, "batch_size": 25, "learning_rate": 0.01, "flow_width": 8,
    "samples": 3, "grid_resolution": 5, "ood_resolution": 4, "seed": 2
  })");
  CmdResult r =
      run_cli("uncertainty --config " + d.sub("unc.json") + " --out " + d.sub("u"), d);
  ASSERT_EQ(r.exit_code, 0) << r.err;

  sbnn::CsvTable ent = sbnn::read_csv(d.sub("u/entropy_grid.csv"));
  EXPECT_EQ(ent.header, (std::vector<std::string>{"x", "y", "entropy"}));
  ASSERT_EQ(ent.rows.size(), 25u);
  for (const auto& row : ent.rows) {
    EXPECT_GE(row[2], 0.0);
    EXPECT_LE(row[2], std::log(5.0) + 1e-9);
  }

  sbnn::CsvTable ood = sbnn::read_csv(d.sub("u/ood_grid.csv"));
  ASSERT_EQ(ood.rows.size(), 16u);
  EXPECT_EQ(ood.rows.front()[0], -1.0);
  EXPECT_EQ(ood.rows.back()[1], 2.0);
  for (const auto& row : ood.rows) EXPECT_TRUE(row[2] == 0.0 || row[2] == 1.0);

  sbnn::CsvTable curve = sbnn::read_csv(d.sub("u/curve.csv"));
  EXPECT_GE(curve.rows.size(), 1u);

  for (const char* f : {"sorted_entropy.csv", "sorted_max_prob.csv"}) {
    sbnn::CsvTable t = sbnn::read_csv(d.sub("u/") + f);
    ASSERT_EQ(t.rows.size(), 50u) << f;
    for (std::size_t i = 1; i < t.rows.size(); ++i)
      EXPECT_LE(t.rows[i - 1][1], t.rows[i][1]) << f;
  }

  nlohmann::json m = nlohmann::json::parse(slurp(d.sub("u/manifest.json")));
  EXPECT_EQ(m.at("outputs").size(), 5u);
}

TEST(StrictCsv, ReaderRejectsEveryFormatViolation) {
  TempDir d;
  auto expect_reject = [&](const std::string& text, const char* label) {
    std::string p = d.sub(std::string("bad_") + label + ".csv");
    write_file(p, text);
    EXPECT_THROW(sbnn::read_csv(p), sbnn::DataError) << label;
  };
  expect_reject("a,b\r\n1,2\r\n", "crlf");
  expect_reject("a,b\n1,2,3\n", "ragged");
  expect_reject("a,b\n1,\n", "empty_field");
  expect_reject("a,b\n1,x\n", "non_numeric");
  expect_reject("a,b\n1,2", "no_final_newline");
  expect_reject("a,\"b\"\n1,2\n", "quoted");
  expect_reject("", "empty_file");

  std::string good = d.sub("good.csv");
  write_file(good, "x,y\n0.25,-3\n1e-3,0.3333333333333333\n");
  sbnn::CsvTable t = sbnn::read_csv(good);
  EXPECT_EQ(t.header, (std::vector<std::string>{"x", "y"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], 0.25);
  EXPECT_EQ(t.rows[1][1], 0.3333333333333333);
}
