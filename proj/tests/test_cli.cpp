#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "abmem/data.hpp"
#include "test_util.hpp"

using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(ABMEM_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> jsonl(const std::string& path) {
  std::vector<json> lines;
  std::istringstream in(slurp(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(json::parse(line));
  }
  return lines;
}

// Small bank and model so a training run finishes in a few seconds.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    bank = dir.file("bank.bin");
    ASSERT_EQ(run("gen --classes 6 --per-class 20 --dim-visual 8 --dim-label 4 --seed 3 --out " + bank).code,
              0);
  }

  std::string model_flags() const {
    return "--bank " + bank +
           " --external-classes 3 --n-way 3 --k-shot 2 --queries 5 --hidden 8 --batch 4"
           " --set external_slots=20 --set abstraction_slots=5 --set abs_key_dim=4"
           " --set abs_value_dim=4 --set memory_steps=2";
  }

  testing_util::TempDir dir{"cli"};
  std::string bank;
};

}  // namespace

TEST_F(Cli, GenIsByteIdenticalAcrossRuns) {
  const std::string other = dir.file("again.bin");
  ASSERT_EQ(run("gen --classes 6 --per-class 20 --dim-visual 8 --dim-label 4 --seed 3 --out " + other).code, 0);
  EXPECT_EQ(slurp(bank), slurp(other));
  const auto set = abmem::load_bank(bank);
  EXPECT_EQ(set.records.size(), 120u);
  EXPECT_EQ(set.labels.size(), 6u);
  EXPECT_EQ(set.visual_dim, 8u);
}

TEST_F(Cli, GenSingleRecord) {
  const std::string one = dir.file("one.bin");
  ASSERT_EQ(run("gen --classes 1 --per-class 1 --dim-visual 3 --dim-label 2 --out " + one).code, 0);
  const auto set = abmem::load_bank(one);
  ASSERT_EQ(set.records.size(), 1u);
  EXPECT_EQ(set.records[0].visual.size(), 3u);
}

TEST_F(Cli, ZeroStepTrainWritesArtifacts) {
  const std::string out = dir.file("run0");
  ASSERT_EQ(run("train " + model_flags() + " --steps 0 --out " + out).code, 0);
  for (auto f : {"checkpoint.bin", "metrics.jsonl", "config.txt", "episode.jsonl", "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(out + "/" + f)) << f;
  }
  EXPECT_TRUE(jsonl(out + "/metrics.jsonl").empty());
  const json m = json::parse(slurp(out + "/manifest.json"));
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["steps_completed"], 0);
}

TEST_F(Cli, TrainEvalAndReplay) {
  const std::string out = dir.file("run");
  const auto t = run("train " + model_flags() + " --steps 15 --seed 4 --out " + out);
  ASSERT_EQ(t.code, 0) << t.out;
  const auto metrics = jsonl(out + "/metrics.jsonl");
  ASSERT_EQ(metrics.size(), 15u);
  EXPECT_EQ(metrics.back()["step"], 15);
  for (const auto& m : metrics) {
    EXPECT_TRUE(m.contains("loss") && m.contains("grad_norm") && m.contains("wall_ms"));
  }
  const json manifest = json::parse(slurp(out + "/manifest.json"));
  EXPECT_EQ(manifest["seed"], 4);
  EXPECT_EQ(manifest["steps_completed"], 15);

  // eval recount from the per-query report
  const std::string report = dir.file("eval.json");
  const auto e = run("eval --run " + out + " --report " + report);
  ASSERT_EQ(e.code, 0);
  const json r = json::parse(slurp(report));
  ASSERT_EQ(r["queries"].size(), 15u);
  std::size_t hits = 0;
  for (const auto& q : r["queries"]) {
    hits += q["class"] == q["predicted"];
    double total = 0;
    for (double p : q["probabilities"]) total += p;
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  EXPECT_DOUBLE_EQ(r["accuracy"].get<double>(), hits / 15.0);
  EXPECT_NE(e.out.find("(" + std::to_string(hits) + "/15)"), std::string::npos) << e.out;

  // the exported episode gives the same result
  const auto e2 = run("eval --run " + out + " --episode " + out + "/episode.jsonl");
  EXPECT_EQ(e2.out, e.out);

  // replaying the manifest reproduces the checkpoint
  const std::string replay = dir.file("replay");
  ASSERT_EQ(run("train --manifest " + out + "/manifest.json --out " + replay).code, 0);
  EXPECT_EQ(slurp(out + "/checkpoint.bin"), slurp(replay + "/checkpoint.bin"));

  // snapshot export
  const std::string snap = dir.file("snap.bin");
  EXPECT_EQ(run("snapshot --checkpoint " + out + "/checkpoint.bin --out " + snap).code, 0);
  EXPECT_TRUE(std::filesystem::exists(snap));

  // the 3-way episode against a 2-way model
  EXPECT_EQ(run("eval --run " + out + " --episode " + out + "/episode.jsonl --n-way 2").code, 6);
}

TEST_F(Cli, EvalRejectsForeignCheckpoint) {
  const std::string a = dir.file("a"), b = dir.file("b");
  ASSERT_EQ(run("train " + model_flags() + " --steps 0 --out " + a).code, 0);
  ASSERT_EQ(run("train " + model_flags() + " --steps 0 --hidden 6 --out " + b).code, 0);
  EXPECT_EQ(run("eval --run " + a + " --checkpoint " + b + "/checkpoint.bin").code, 6);
}

TEST_F(Cli, BaselineReportShape) {
  const auto r = run("baseline --method kvmemnn --runs 4 --samples 20 " + model_flags());
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["method"], "kvmemnn");
  EXPECT_EQ(j["runs"], 4);
  EXPECT_EQ(j["per_run"].size(), 4u);
  EXPECT_GE(j["std"].get<double>(), 0.0);
  for (auto m : {"knn-l1", "knn-l2", "esvm"}) {
    const auto k = run(std::string("baseline --method ") + m + " " + model_flags());
    ASSERT_EQ(k.code, 0) << m;
    EXPECT_EQ(json::parse(k.out)["std"], 0.0);
  }
}

TEST_F(Cli, KnnIsPerfectOnNoiselessBank) {
  const std::string clean = dir.file("clean.bin");
  ASSERT_EQ(run("gen --classes 6 --per-class 20 --dim-visual 8 --dim-label 4 --std 0 --out " + clean).code, 0);
  const auto r = run("baseline --method knn-l2 --bank " + clean +
                     " --external-classes 3 --n-way 3 --k-shot 1 --queries 10");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["mean"], 1.0);
}

TEST_F(Cli, GradcheckPasses) {
  const auto r = run("gradcheck");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("all passed"), std::string::npos);
}

TEST_F(Cli, EpisodeToStdout) {
  const auto r = run("episode " + model_flags() + " --out -");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(json::parse(first)["n_query"], 15);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --bank " + bank).code, 2);  // --out missing
  EXPECT_EQ(run("train " + model_flags() + " --set no_such_key=1 --out " + dir.file("x")).code, 2);
  EXPECT_EQ(run("gen --classes 5 --dim-visual 2 --sep 1.9 --out " + dir.file("g.bin")).code, 3);
  EXPECT_EQ(run("train --bank /nonexistent.bin --external-classes 1 --out " + dir.file("y")).code, 4);
  EXPECT_EQ(run("train " + model_flags() + " --n-way 6 --out " + dir.file("z")).code, 4);
  EXPECT_EQ(run("--version").code, 0);
}
