#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"

using namespace hgen;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Result hgen_cli(const std::string& args) {
  const std::string cmd = std::string(HGEN_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  Result r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Tiny settings cut down to seconds per stage.
const char* kFast =
    "--preset tiny --set prior.reconstructor_steps=20 --set prior.generator_steps=20 --set prior.n_corpus=8 "
    "--set prior.n_synth=24 --set prior.fg_min=0.0 --set prior.fg_max=1.0 --set shape.steps=20 --set texture.steps=20 "
    "--set refine.steps=5 --set refine.records=4 --set refine.views=2 --set refine.validation_size=2 "
    "--set shape.validation_size=4 --set texture.validation_size=4 --set eval.samples=34 --set eval.cloud_points=64 "
    "--set eval.fid_views=1 --set model.mesh_resolution=16";

fs::path printed_ply(const std::string& out) {
  std::istringstream in(out);
  std::string line, last;
  while (std::getline(in, line))
    if (line.ends_with(".ply")) last = line;
  return last;
}

const fs::path& fast_run() {
  static const fs::path dir = [] {
    const fs::path d = hgen::testing::scratch("cli_run");
    const std::string base = "--out " + d.string() + " " + kFast + " ";
    for (const char* stage : {"corpus-gen --n 700", "train-prior", "extract-priors", "train-shape", "train-texture",
                              "train-refine"}) {
      const auto r = hgen_cli(base + stage);
      if (r.code != 0) throw std::runtime_error(std::string(stage) + " failed: " + r.out);
    }
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, MissingPrerequisiteExitsTwoAndNamesArtifact) {
  const auto dir = hgen::testing::scratch("cli_missing");
  const auto r = hgen_cli("--out " + dir.string() + " train-shape");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("prior/stage.json"), std::string::npos) << r.out;
}

TEST(Cli, InvalidConfigExitsThree) {
  const auto dir = hgen::testing::scratch("cli_invalid");
  EXPECT_EQ(hgen_cli("--out " + dir.string() + " --set no_such_key=1 corpus-gen --n 2").code, 3);
  EXPECT_EQ(hgen_cli("--out " + dir.string() + " --set model.image_size=-4 corpus-gen --n 2").code, 3);
  write_text(dir.string() + ".json", "{\"shape\": {\"steps\": \"many\"}}");
  EXPECT_EQ(hgen_cli("--out " + dir.string() + " --config " + dir.string() + ".json corpus-gen --n 2").code, 3);
  EXPECT_EQ(hgen_cli("--out " + dir.string() + " --preset huge corpus-gen --n 2").code, 3);
}

TEST(Cli, CorpusSplitRule) {
  const auto dir = hgen::testing::scratch("cli_corpus");
  const auto r = hgen_cli("--out " + dir.string() + " --preset tiny corpus-gen --n 2000 --seed 1");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = corpus::load_corpus_manifest(dir / "corpus");
  EXPECT_EQ(m.split(false).size(), 1900u);
  EXPECT_EQ(m.split(true).size(), 100u);
  EXPECT_EQ(read_json(dir / "config.json")["corpus"]["seed"], 1);
}

TEST(Cli, GenerateTwiceIsByteIdentical) {
  const std::string base = "--out " + fast_run().string() + " ";
  const auto a = hgen_cli(base + "generate --seed 5");
  ASSERT_EQ(a.code, 0) << a.out;
  const fs::path file = printed_ply(a.out);
  ASSERT_TRUE(fs::exists(file)) << a.out;
  const std::string first = read_text(file);
  ASSERT_EQ(hgen_cli(base + "generate --seed 5").code, 0);
  EXPECT_EQ(read_text(file), first);
  const Json meta = read_json(fs::path(file).replace_extension(".json"));
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_NE(file.filename().string().find(meta["config_hash"].get<std::string>()), std::string::npos);
}

TEST(Cli, EvaluateWritesFiniteReport) {
  const auto r = hgen_cli("--out " + fast_run().string() + " evaluate");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("COV"), std::string::npos);
  const Json j = read_json(fast_run() / "eval" / "metrics.json");
  for (const char* k : {"cov", "mmd", "fpd", "fid", "fid3d"}) EXPECT_TRUE(std::isfinite(j[k].get<double>())) << k;
  EXPECT_EQ(j["config_hash"], read_json(fast_run() / "eval" / "stage.json")["config_hash"]);
}

TEST(Cli, ApplicationsWriteOutputs) {
  const std::string base = "--out " + fast_run().string() + " ";
  EXPECT_EQ(hgen_cli(base + "retexture --seed 2 --codes 3").code, 0);
  EXPECT_EQ(hgen_cli(base + "interpolate --from 1 --to 2 --steps 3 --no-refine").code, 0);
  const auto inv = hgen_cli(base + "--set invert.steps=5 --set invert.restarts=1 invert --index 0");
  ASSERT_EQ(inv.code, 0) << inv.out;
  int plys = 0, reports = 0;
  for (const auto& e : fs::directory_iterator(fast_run() / "outputs")) {
    plys += e.path().extension() == ".ply";
    reports += e.path().string().ends_with("_report.json");
  }
  EXPECT_GE(plys, 3 + 3 + 1);
  EXPECT_EQ(reports, 1);
  EXPECT_EQ(hgen_cli(base + "invert").code, 1);
}
