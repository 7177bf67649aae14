#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include "test_util.hpp"

using snn::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SNN_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  while (auto n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

}  // namespace

TEST(Cli, HelpListsEverySubcommandAndGlobalFlag) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"synth", "ingest", "train", "sweep", "subsets", "ensemble", "weights", "joint-train",
                        "transfer-eval", "confusion", "report", "--seed", "--parallelism", "--out", "--format"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  const auto sweep = run("sweep --help");
  EXPECT_EQ(sweep.code, 0);
  for (const char* s : {"--manifest", "--networks", "--lrs", "--regs", "--epoch-choices", "--dropout"}) {
    EXPECT_NE(sweep.out.find(s), std::string::npos) << s;
  }
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("weights --acc A=0").code, 1);
  EXPECT_EQ(run("weights --acc A=0.5 --format xml").code, 1);
  EXPECT_EQ(run("train --manifest /nonexistent/manifest.json --networks A").code, 2);
}

TEST(Cli, WeightsWorkedExample) {
  const auto r = run("weights --acc GoogLeNet=0.3 --acc VGG16=0.6");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("weights").at("GoogLeNet").get<double>(), 0.5);
  EXPECT_EQ(j.at("weights").at("VGG16").get<double>(), 1.0);
}

TEST(Cli, SubsetsCsv) {
  const auto r = run("subsets --networks VGG16,NIN --format csv");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "index,size,stack\n0,1,NIN\n1,1,VGG16\n2,2,NIN+VGG16\n");
}

TEST(Cli, SynthSweepTrainConfusionReport) {
  TempDir dir;
  const auto bundle = (dir / "bundle").string();
  ASSERT_EQ(run("synth --seed 2 --out " + bundle).code, 0);
  const auto manifest = bundle + "/manifest.json";

  const auto sweep = run("sweep --manifest " + manifest + " --networks A,B --lrs 0.01 --regs 0.1 --epoch-choices 50 " +
                         "--model " + (dir / "m.bin").string());
  ASSERT_EQ(sweep.code, 0);
  const auto sj = nlohmann::json::parse(sweep.out);
  EXPECT_GE(sj.at("winner_val_accuracy").get<double>(), 0.9);

  const auto sweep_file = (dir / "sweep.csv").string();
  ASSERT_EQ(run("sweep --manifest " + manifest + " --networks A --lrs 0.01 --regs 0.1,1 --epoch-choices 5 " +
                "--format csv --out " + sweep_file + " --parallelism 2")
                .code,
            0);
  EXPECT_EQ(snn::io::parse_csv(snn::io::read_file(sweep_file)).rows.size(), 2u);

  const auto conf = run("confusion --model " + (dir / "m.bin").string() + " --manifest " + manifest + " --format csv");
  ASSERT_EQ(conf.code, 0);
  EXPECT_EQ(std::count(conf.out.begin(), conf.out.end(), '\n'), 5);

  const auto train = run("train --manifest " + manifest + " --networks A --epochs 5 --format csv");
  ASSERT_EQ(train.code, 0);
  EXPECT_EQ(snn::io::parse_csv(train.out).rows.size(), 5u);

  snn::io::write_file_atomic(dir / "results.json",
                             R"({"datasets": {"mit": [{"networks": ["A"], "accuracy": 0.5},)"
                             R"({"networks": ["A","B"], "accuracy": 0.9}]}})");
  const auto rep = run("report --results " + (dir / "results.json").string());
  ASSERT_EQ(rep.code, 0);
  EXPECT_EQ(nlohmann::json::parse(rep.out).at("summary")[0].at("stack_spec").at("networks").size(), 2u);
}

TEST(Cli, IngestCsv) {
  TempDir dir;
  snn::io::write_file_atomic(dir / "f.csv", "f0,f1,f2\n1,2,3\n4,5,6\n");
  const auto out = (dir / "f.snnf").string();
  ASSERT_EQ(run("ingest --csv " + (dir / "f.csv").string() + " --network VGG16 --out " + out).code, 0);
  const auto m = snn::read_feature_file(out);
  EXPECT_EQ(m.network_id, "VGG16");
  EXPECT_EQ(m.n(), 2u);
  EXPECT_EQ(m.d(), 3u);
  snn::io::write_file_atomic(dir / "bad.csv", "x,y\n1,2\n");
  EXPECT_EQ(run("ingest --csv " + (dir / "bad.csv").string() + " --network V --out " + out).code, 1);
}

TEST(Cli, JointTrainAndTransferEval) {
  TempDir dir;
  const auto recipe = (dir / "recipe.json").string();
  snn::io::write_file_atomic(recipe, R"({"pretrain": {"epochs": 3, "lr0": 0.05, "batch_size": 32, "loss_kind": "softmax"},
    "finetune": {"epochs": 2, "lr0": 0.05, "batch_size": 4, "loss_kind": "softmax"},
    "transfer_grid": {"lrs": [0.05], "regs": [0.001], "epoch_choices": [5], "dropout": "off"},
    "seeds": [1]})");
  const auto base = (dir / "d.json").string();
  ASSERT_EQ(run("joint-train --recipe " + recipe + " --tasks D --model " + base).code, 0);
  const auto ab = run("joint-train --recipe " + recipe + " --tasks A,B --init " + base);
  ASSERT_EQ(ab.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(ab.out).at("val_accuracy").contains("B"));
  const auto t = run("transfer-eval --recipe " + recipe + " --trunk " + base + " --task C");
  ASSERT_EQ(t.code, 0);
  EXPECT_GT(nlohmann::json::parse(t.out).at("accuracy").get<double>(), 0.0);
  const auto study = run("transfer-eval --recipe " + recipe + " --format csv");
  ASSERT_EQ(study.code, 0);
  EXPECT_EQ(snn::io::parse_csv(study.out).rows.size(), 18u);  // 9 cells x (1 seed + median)
  EXPECT_EQ(run("joint-train --recipe " + recipe + " --tasks Z").code, 1);
}
