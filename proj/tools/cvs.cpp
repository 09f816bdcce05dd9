// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// cvs: data generation, stage training, inference and evaluation.
// Each run writes its resolved config.json into the output directory
// before the heavy work starts. Exit codes follow cvs_status.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "causalvid.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  cvs_status status;
  std::string message;
};

[[noreturn]] void fail(cvs_status s, const std::string& msg) {
  throw Failure{s, std::string(cvs_status_name(s)) + " error: " + msg};
}

// Library messages already carry their kind.
void check(cvs_status s) {
  if (s != CVS_OK) throw Failure{s, cvs_last_error()};
}

// Owned result text of a C API call.
class Text {
 public:
  Text() = default;
  ~Text() { cvs_text_free(t_); }
  Text(const Text&) = delete;
  Text& operator=(const Text&) = delete;
  cvs_text** out() { return &t_; }
  std::string str() const { return std::string(cvs_text_data(t_), cvs_text_size(t_)); }

 private:
  cvs_text* t_ = nullptr;
};

fs::path out_root() {
  const char* env = std::getenv("CVS_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) fail(CVS_ERR_IO, "cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(CVS_ERR_CONFIG, path + ": " + e.what());
  }
}

json resolve(const char* kind, const json& j) {
  Text t;
  check(cvs_resolve_config(kind, j.dump().c_str(), t.out()));
  return json::parse(t.str());
}

void write_config(const fs::path& dir, const json& j) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(CVS_ERR_IO, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "config.json", std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) fail(CVS_ERR_IO, "cannot write " + (dir / "config.json").string());
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory (default under $CVS_OUT_ROOT or ./runs)");
}

fs::path out_dir(const Common& c, const std::string& fallback) {
  return c.out.empty() ? out_root() / fallback : fs::path(c.out);
}

// ---- gen-data ----

struct GenArgs {
  Common common;
  std::optional<int> n;
  std::optional<double> test_fraction;
};

int cmd_gen_data(const GenArgs& a) {
  json cfg = load_config(a.common.config);
  for (const auto& [k, _] : cfg.items())
    if (k != "n" && k != "seed" && k != "test_fraction" && k != "scenario")
      fail(CVS_ERR_CONFIG, "gen-data config: unknown key '" + k + "'");
  json r;
  try {
    r["n"] = a.n ? *a.n : cfg.value("n", 64);
    r["seed"] = a.common.seed ? *a.common.seed : cfg.value("seed", std::uint64_t{0});
    r["test_fraction"] = a.test_fraction ? *a.test_fraction : cfg.value("test_fraction", 0.125);
  } catch (const json::exception& e) {
    fail(CVS_ERR_CONFIG, std::string("gen-data config: ") + e.what());
  }
  r["scenario"] = resolve("scenario", cfg.value("scenario", json::object()));
  const auto seed = r["seed"].get<std::uint64_t>();
  const auto dir = out_dir(a.common, "data_s" + std::to_string(seed));
  write_config(dir, r);
  Text manifest;
  check(cvs_generate_dataset(r["scenario"].dump().c_str(), r["n"].get<int>(), seed, r["test_fraction"].get<double>(),
                             dir.string().c_str(), manifest.out()));
  std::cout << manifest.str() << '\n';
  return 0;
}

// ---- train ----

struct TrainArgs {
  Common common;
  std::optional<int> stage;
  std::string hooks;
  std::optional<int> steps;
  std::string manifest;
  std::string checkpoint_in;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  json cfg = load_config(a.common.config);
  if (!cfg.is_object()) fail(CVS_ERR_CONFIG, "stage config must be a JSON object");
  if (a.stage) cfg["stage"] = *a.stage;
  if (a.common.seed) cfg["seed"] = *a.common.seed;
  if (!a.hooks.empty()) cfg["hooks"] = a.hooks;
  if (a.steps) cfg["steps"] = *a.steps;
  if (!a.manifest.empty()) cfg["manifest"] = a.manifest;
  if (!a.checkpoint_in.empty()) cfg["checkpoint_in"] = a.checkpoint_in;
  json r = resolve("stage", cfg);
  const int stage = r["stage"].get<int>();
  const auto dir = out_dir(a.common, "train_stage" + std::to_string(stage) + "_s" +
                                         std::to_string(r["seed"].get<std::uint64_t>()));
  if (!a.common.out.empty() || r["checkpoint_out"].get<std::string>().empty()) {
    r["checkpoint_out"] = (dir / ("stage" + std::to_string(stage) + ".ckpt")).string();
    r["loss_log"] = "";
  }
  write_config(dir, r);
  Text result;
  check(cvs_train_stage(r.dump().c_str(), a.quiet ? 0 : 1, result.out()));
  const auto res = json::parse(result.str());
  std::cout << res["checkpoint"].get<std::string>() << '\n';
  return 0;
}

// ---- infer ----

struct InferArgs {
  Common common;
  std::string checkpoint;
  std::string mode;
  std::string prompt;
  std::string source;
  std::string swap_entity;
  std::optional<double> strength;
  std::optional<int> ddim_steps;
  std::optional<double> eta;
};

int cmd_infer(const InferArgs& a) {
  json cfg = load_config(a.common.config);
  if (!cfg.is_object()) fail(CVS_ERR_CONFIG, "infer config must be a JSON object");
  if (!a.checkpoint.empty()) cfg["checkpoint"] = a.checkpoint;
  if (!a.mode.empty()) cfg["mode"] = a.mode;
  if (!a.prompt.empty()) cfg["prompt"] = a.prompt;
  if (!a.source.empty()) cfg["source"] = a.source;
  if (!a.swap_entity.empty()) cfg["swap_entity"] = a.swap_entity;
  if (a.strength) cfg["strength"] = *a.strength;
  if (a.ddim_steps) cfg["ddim_steps"] = *a.ddim_steps;
  if (a.eta) cfg["eta"] = *a.eta;
  if (a.common.seed) cfg["seed"] = *a.common.seed;
  const json r = resolve("infer", cfg);
  const auto dir = out_dir(a.common, "infer_" + r["mode"].get<std::string>() + "_s" +
                                         std::to_string(r["seed"].get<std::uint64_t>()));
  write_config(dir, r);
  Text result;
  check(cvs_infer(nullptr, r.dump().c_str(), dir.string().c_str(), result.out()));
  const auto res = json::parse(result.str());
  std::cout << dir.string() << '\n' << "frame_hash " << res["frame_hash"].get<std::string>() << '\n';
  return 0;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::vector<std::string> runs;
  std::string real;
  std::string real_split;
  std::string afd_boxes;
  std::vector<std::string> metrics;
};

int cmd_eval(const EvalArgs& a) {
  json cfg = load_config(a.common.config);
  if (!cfg.is_object()) fail(CVS_ERR_CONFIG, "eval config must be a JSON object");
  if (!a.runs.empty()) cfg["runs"] = a.runs;
  if (!a.real.empty()) cfg["real_manifest"] = a.real;
  if (!a.real_split.empty()) cfg["real_split"] = a.real_split;
  if (!a.afd_boxes.empty()) cfg["afd_boxes"] = a.afd_boxes;
  if (!a.metrics.empty()) cfg["metrics"] = a.metrics;
  const json r = resolve("eval", cfg);
  const auto dir = out_dir(a.common, "eval");
  write_config(dir, r);
  Text report;
  check(cvs_evaluate(r.dump().c_str(), (dir / "metrics.txt").string().c_str(), report.out()));
  std::cout << report.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causalvid: driving-accident video diffusion toolkit", "cvs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cvs_version()));

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic accident clips and a manifest");
  add_common(g, gen.common);
  g->add_option("--n", gen.n, "Number of clips")->check(CLI::NonNegativeNumber);
  g->add_option("--test-fraction", gen.test_fraction, "Fraction of clips in the test split")
      ->check(CLI::Range(0.0, 1.0));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run one training stage");
  add_common(t, tr.common);
  t->add_option("--stage", tr.stage, "Training stage")->check(CLI::IsMember({0, 1, 2}));
  t->add_option("--hooks", tr.hooks, "Causal block preset for stage 2");
  t->add_option("--steps", tr.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  t->add_option("--manifest", tr.manifest, "Training manifest");
  t->add_option("--checkpoint-in", tr.checkpoint_in, "Checkpoint of the previous stage, or of this stage to resume");
  t->add_flag("--quiet", tr.quiet, "No progress lines");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Generate (t2v) or edit (v2v) a clip");
  add_common(i, in.common);
  i->add_option("--checkpoint", in.checkpoint, "Trained checkpoint");
  i->add_option("--mode", in.mode, "t2v or v2v");
  i->add_option("--prompt", in.prompt, "Text prompt");
  i->add_option("--source", in.source, "Source clip directory (v2v)");
  i->add_option("--swap-entity", in.swap_entity, "Replace the source entity word in the prompt (v2v)");
  i->add_option("--strength", in.strength, "Edit strength s: noising to round(s*K)");
  i->add_option("--ddim-steps", in.ddim_steps, "DDIM sampler steps");
  i->add_option("--eta", in.eta, "DDIM eta");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute metrics over inference runs");
  add_common(e, ev.common);
  e->add_option("--run", ev.runs, "Inference run directory (repeatable)");
  e->add_option("--real", ev.real, "Reference manifest for the Frechet distance");
  e->add_option("--real-split", ev.real_split, "Only reference records of this split");
  e->add_option("--afd-boxes", ev.afd_boxes, "Detection/gazed-region box pairs for afd");
  e->add_option("--metrics", ev.metrics, "Subset of clip_s,temp_c,frechet,afd")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return CVS_ERR_USAGE;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (i->parsed()) return cmd_infer(in);
    if (e->parsed()) return cmd_eval(ev);
  } catch (const Failure& f) {
    std::cerr << "cvs: " << f.message << '\n';
    return f.status;
  } catch (const std::exception& ex) {
    std::cerr << "cvs: internal error: " << ex.what() << '\n';
    return CVS_ERR_INTERNAL;
  }
  return CVS_ERR_USAGE;
}
