// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Drives the cvs binary as a subprocess.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "causalvid.h"
#include "causalvid/checkpoint.hpp"
#include "causalvid/hash.hpp"
#include "doctest.h"
#include "json.hpp"
#include "testing.hpp"

namespace fs = std::filesystem;
using cvs::testing::TempDir;

namespace {

const fs::path kFixtures = CVS_FIXTURES;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs cvs from `cwd` with the given arguments.
Result cvs_run(const fs::path& cwd, const std::vector<std::string>& args, const std::string& env = "") {
  std::string cmd = "cd " + quote(cwd.string()) + " && " + env + " " + quote(CVS_BIN);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >cli_stdout.txt 2>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(cwd / "cli_stdout.txt");
  r.err = slurp(cwd / "cli_stderr.txt");
  return r;
}

// Tiny dataset plus a 3-stage chain shared by the slower cases.
struct Trained {
  TempDir dir{"cli_chain"};
  bool ok = false;
  Trained() {
    const auto st = (kFixtures / "tiny_stage.json").string();
    ok = cvs_run(dir.path, {"gen-data", "--config", (kFixtures / "tiny_gen.json").string(), "--out", "data"}).code == 0 &&
         cvs_run(dir.path, {"train", "--config", st, "--stage", "0", "--manifest", "data/manifest.tsv", "--out", "s0",
                            "--quiet"})
                 .code == 0 &&
         cvs_run(dir.path, {"train", "--config", st, "--stage", "1", "--manifest", "data/manifest.tsv",
                            "--checkpoint-in", "s0/stage0.ckpt", "--out", "s1", "--quiet"})
                 .code == 0 &&
         cvs_run(dir.path, {"train", "--config", st, "--stage", "2", "--manifest", "data/manifest.tsv",
                            "--checkpoint-in", "s1/stage1.ckpt", "--out", "s2", "--quiet"})
                 .code == 0;
  }
  fs::path ckpt() const { return dir.path / "s2" / "stage2.ckpt"; }
};

Trained& trained() {
  static Trained t;
  REQUIRE(t.ok);
  return t;
}

}  // namespace

TEST_CASE("cli: usage errors and help") {
  TempDir tmp("cli_usage");
  CHECK(cvs_run(tmp.path, {"--help"}).code == 0);
  CHECK(cvs_run(tmp.path, {}).code == CVS_ERR_USAGE);
  CHECK(cvs_run(tmp.path, {"bogus"}).code == CVS_ERR_USAGE);
  CHECK(cvs_run(tmp.path, {"train", "--stage", "3"}).code == CVS_ERR_USAGE);
  CHECK(cvs_run(tmp.path, {"infer", "--checkpoint", "x", "--mode", "i2v", "--prompt", "p", "--out", "o"}).code ==
        CVS_ERR_USAGE);
  const auto r = cvs_run(tmp.path, {"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find(cvs_version()) != std::string::npos);
}

TEST_CASE("cli: gen-data with n = 0 and determinism") {
  TempDir tmp("cli_gen");
  auto r = cvs_run(tmp.path, {"gen-data", "--n", "0", "--out", "empty"});
  CHECK(r.code == 0);
  CHECK(fs::exists(tmp.path / "empty" / "manifest.tsv"));
  CHECK(fs::exists(tmp.path / "empty" / "config.json"));

  const auto cfg = (kFixtures / "tiny_gen.json").string();
  REQUIRE(cvs_run(tmp.path, {"gen-data", "--config", cfg, "--out", "a"}).code == 0);
  REQUIRE(cvs_run(tmp.path, {"gen-data", "--config", cfg, "--out", "b"}).code == 0);
  CHECK(cvs::hex_digest(slurp(tmp.path / "a" / "manifest.tsv")) ==
        cvs::hex_digest(slurp(tmp.path / "b" / "manifest.tsv")));
  CHECK(slurp(tmp.path / "a" / "clips" / "clip_00002" / "frames" / "00001.ppm") ==
        slurp(tmp.path / "b" / "clips" / "clip_00002" / "frames" / "00001.ppm"));
  // The resolved config reproduces the run.
  REQUIRE(cvs_run(tmp.path, {"gen-data", "--config", (tmp.path / "a" / "config.json").string(), "--out", "c"}).code == 0);
  CHECK(slurp(tmp.path / "a" / "manifest.tsv") == slurp(tmp.path / "c" / "manifest.tsv"));

  const auto bad = cvs_run(tmp.path, {"gen-data", "--n", "0", "--out", "/proc/cvs_not_writable"});
  CHECK(bad.code == CVS_ERR_IO);
}

TEST_CASE("cli: default output root from the environment") {
  TempDir tmp("cli_env");
  const auto r = cvs_run(tmp.path, {"gen-data", "--n", "0", "--seed", "9"}, "CVS_OUT_ROOT=" + quote((tmp.path / "root").string()));
  CHECK(r.code == 0);
  CHECK(fs::exists(tmp.path / "root" / "data_s9" / "manifest.tsv"));
}

TEST_CASE("cli: gen-data of 100 toy clips within a minute") {
  TempDir tmp("cli_gen100");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cvs_run(tmp.path, {"gen-data", "--n", "100", "--seed", "5", "--out", "d"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.code == 0);
  CHECK(secs < 60.0);
  MESSAGE("gen-data n=100 took " << secs << " s");
}

TEST_CASE("cli: stage chain guard") {
  TempDir tmp("cli_chainerr");
  REQUIRE(cvs_run(tmp.path, {"gen-data", "--config", (kFixtures / "tiny_gen.json").string(), "--out", "data"}).code == 0);
  const auto r = cvs_run(tmp.path, {"train", "--config", (kFixtures / "tiny_stage.json").string(), "--stage", "1",
                                    "--manifest", "data/manifest.tsv", "--out", "s1", "--quiet"});
  CHECK(r.code == CVS_ERR_CHAIN);
  CHECK(r.err.find("stage 0 checkpoint") != std::string::npos);
  // The resolved config is written before the failure.
  CHECK(fs::exists(tmp.path / "s1" / "config.json"));

  const auto bad_cfg = cvs_run(tmp.path, {"train", "--config", (kFixtures / "tiny_stage.json").string(), "--hooks",
                                          "nonsense", "--manifest", "data/manifest.tsv", "--out", "x"});
  CHECK(bad_cfg.code == CVS_ERR_CONFIG);
}

TEST_CASE("cli: hooks preset routing") {
  auto& t = trained();
  const auto r = cvs_run(t.dir.path, {"train", "--config", (kFixtures / "tiny_stage.json").string(), "--stage", "2",
                                      "--hooks", "no_gaze", "--manifest", "data/manifest.tsv", "--checkpoint-in",
                                      "s1/stage1.ckpt", "--out", "s2_nogaze", "--quiet"});
  REQUIRE(r.code == 0);
  const auto cfg = nlohmann::json::parse(slurp(t.dir.path / "s2_nogaze" / "config.json"));
  CHECK(cfg["hooks"] == "no_gaze");
  const auto ckpt = cvs::load_checkpoint(t.dir.path / "s2_nogaze" / "stage2.ckpt");
  CHECK(ckpt.meta["hooks"] == "no_gaze");
}

TEST_CASE("cli: infer mode guards") {
  auto& t = trained();
  const auto ck = t.ckpt().string();
  auto r = cvs_run(t.dir.path, {"infer", "--checkpoint", ck, "--prompt", "a car", "--source",
                                "data/clips/clip_00000", "--out", "bad1"});
  CHECK(r.code == CVS_ERR_USAGE);
  r = cvs_run(t.dir.path, {"infer", "--checkpoint", ck, "--mode", "v2v", "--out", "bad2"});
  CHECK(r.code == CVS_ERR_USAGE);
  r = cvs_run(t.dir.path, {"infer", "--checkpoint", ck, "--prompt", "a car", "--eta", "2", "--out", "bad3"});
  CHECK(r.code == CVS_ERR_CONFIG);
  r = cvs_run(t.dir.path, {"infer", "--checkpoint", "missing.ckpt", "--prompt", "a car", "--out", "bad4"});
  CHECK(r.code == CVS_ERR_IO);
}

TEST_CASE("cli: infer is deterministic and writes the run layout") {
  auto& t = trained();
  const std::vector<std::string> args{"infer", "--checkpoint", t.ckpt().string(), "--prompt",
                                      "a truck cuts in and the ego vehicle crashes into the truck",
                                      "--ddim-steps", "6", "--seed", "4", "--eta", "0"};
  auto a1 = args, a2 = args;
  a1.insert(a1.end(), {"--out", "r1"});
  a2.insert(a2.end(), {"--out", "r2"});
  REQUIRE(cvs_run(t.dir.path, a1).code == 0);
  REQUIRE(cvs_run(t.dir.path, a2).code == 0);
  for (const char* f : {"config.json", "grid.ppm", "metrics.txt", "frames/00000.ppm", "frames/00003.ppm"})
    CHECK(fs::exists(t.dir.path / "r1" / f));
  CHECK(slurp(t.dir.path / "r1" / "metrics.txt") == slurp(t.dir.path / "r2" / "metrics.txt"));
  CHECK(slurp(t.dir.path / "r1" / "grid.ppm") == slurp(t.dir.path / "r2" / "grid.ppm"));
}

TEST_CASE("cli: AEdit demo swaps the entity word and emits metrics") {
  auto& t = trained();
  const auto r = cvs_run(t.dir.path, {"infer", "--checkpoint", t.ckpt().string(), "--mode", "v2v", "--source",
                                      "data/clips/clip_00005", "--swap-entity", "truck", "--ddim-steps", "5", "--out",
                                      "edit"});
  REQUIRE(r.code == 0);
  const auto metrics = slurp(t.dir.path / "edit" / "metrics.txt");
  CHECK(metrics.find("crashes into the truck") != std::string::npos);
  for (const char* key : {"clip_s=", "temp_c=", "tube_change_inside=", "tube_change_outside=", "frame_hash="})
    CHECK(metrics.find(key) != std::string::npos);
}

TEST_CASE("cli: eval on identical sets and the afd fixture") {
  auto& t = trained();
  // Strength 0 returns each test clip unchanged.
  std::vector<std::string> eval_args{"eval", "--real", "data/manifest.tsv", "--real-split", "test", "--metrics",
                                     "frechet,clip_s", "--out", "ev"};
  for (int i : {4, 5}) {
    const std::string name = "copy" + std::to_string(i);
    REQUIRE(cvs_run(t.dir.path, {"infer", "--checkpoint", t.ckpt().string(), "--mode", "v2v", "--strength", "0",
                                 "--source", "data/clips/clip_0000" + std::to_string(i), "--out", name})
                .code == 0);
    eval_args.insert(eval_args.end(), {"--run", name});
  }
  auto r = cvs_run(t.dir.path, eval_args);
  REQUIRE(r.code == 0);
  const auto report = slurp(t.dir.path / "ev" / "metrics.txt");
  CHECK(report.find("frechet=0.000000\n") != std::string::npos);
  CHECK(report == r.out);

  r = cvs_run(t.dir.path, {"eval", "--afd-boxes", (kFixtures / "afd_golden.tsv").string(), "--out", "golden"});
  REQUIRE(r.code == 0);
  CHECK(slurp(t.dir.path / "golden" / "metrics.txt") == slurp(kFixtures / "afd_golden_report.txt"));

  // Per-metric input errors.
  r = cvs_run(t.dir.path, {"eval", "--run", "copy4", "--metrics", "afd", "--out", "e1"});
  CHECK(r.code == 0);  // a v2v run with a gazed source supplies afd checks
  r = cvs_run(t.dir.path, {"eval", "--run", "copy4", "--metrics", "frechet", "--out", "e2"});
  CHECK(r.code == CVS_ERR_CONFIG);
  CHECK(r.err.find("frechet") != std::string::npos);
  r = cvs_run(t.dir.path, {"eval", "--metrics", "nonsense", "--run", "copy4", "--out", "e3"});
  CHECK(r.code == CVS_ERR_USAGE);
}

TEST_CASE("cli: reruns from the resolved config are byte-identical") {
  auto& t = trained();
  REQUIRE(cvs_run(t.dir.path, {"infer", "--checkpoint", t.ckpt().string(), "--prompt", "a cyclist swerves",
                               "--ddim-steps", "4", "--seed", "11", "--out", "once"})
              .code == 0);
  REQUIRE(cvs_run(t.dir.path, {"infer", "--config", (t.dir.path / "once" / "config.json").string(), "--out", "twice"})
              .code == 0);
  CHECK(slurp(t.dir.path / "once" / "metrics.txt") == slurp(t.dir.path / "twice" / "metrics.txt"));
  CHECK(slurp(t.dir.path / "once" / "config.json") == slurp(t.dir.path / "twice" / "config.json"));
  for (int f = 0; f < 4; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frames/%05d.ppm", f);
    CHECK(slurp(t.dir.path / "once" / name) == slurp(t.dir.path / "twice" / name));
  }
}
