// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <memory>
#include <new>
#include <string>

#include "causalvid.h"
#include "causalvid/checkpoint.hpp"
#include "causalvid/error.hpp"
#include "causalvid/pipeline.hpp"
#include "causalvid/scenario.hpp"
#include "causalvid/training.hpp"

struct cvs_text {
  std::string value;
};

struct cvs_model {
  cvs::training::ModelConfig config;
  std::unique_ptr<cvs::backbone::UNet3D> net;
};

namespace {

thread_local std::string g_last_error;

cvs_status status_of(cvs::ErrorKind k) {
  using cvs::ErrorKind;
  switch (k) {
    case ErrorKind::Usage: return CVS_ERR_USAGE;
    case ErrorKind::Config: return CVS_ERR_CONFIG;
    case ErrorKind::Chain: return CVS_ERR_CHAIN;
    case ErrorKind::Numeric: return CVS_ERR_NUMERIC;
    case ErrorKind::Io:
    case ErrorKind::MissingFile:
    case ErrorKind::Malformed:
    case ErrorKind::DanglingPath: return CVS_ERR_IO;
    case ErrorKind::Contract:
    case ErrorKind::Range:
    case ErrorKind::Degenerate: return CVS_ERR_CONTRACT;
  }
  return CVS_ERR_INTERNAL;
}

template <class F>
cvs_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return CVS_OK;
  } catch (const cvs::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("config: ") + e.what();
    return CVS_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = std::string("io: ") + e.what();
    return CVS_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CVS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal: ") + e.what();
    return CVS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal: unknown exception";
    return CVS_ERR_INTERNAL;
  }
}

void give(cvs_text** out, std::string value) {
  if (out) *out = new cvs_text{std::move(value)};
}

nlohmann::json parse_json(const char* json, const char* what) {
  if (!json || !*json) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    cvs::raise(cvs::ErrorKind::Config, std::string(what) + " is not valid JSON: " + e.what());
  }
}

void need(const void* p, const char* what) {
  cvs::require(p != nullptr, cvs::ErrorKind::Usage, std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* cvs_version(void) { return "0.1.0"; }

const char* cvs_status_name(cvs_status s) {
  switch (s) {
    case CVS_OK: return "ok";
    case CVS_ERR_INTERNAL: return "internal";
    case CVS_ERR_USAGE: return "usage";
    case CVS_ERR_CONFIG: return "config";
    case CVS_ERR_CHAIN: return "chain";
    case CVS_ERR_NUMERIC: return "numeric";
    case CVS_ERR_IO: return "io";
    case CVS_ERR_CONTRACT: return "contract";
  }
  return "unknown";
}

const char* cvs_last_error(void) { return g_last_error.c_str(); }

const char* cvs_text_data(const cvs_text* t) { return t ? t->value.c_str() : ""; }
size_t cvs_text_size(const cvs_text* t) { return t ? t->value.size() : 0; }
void cvs_text_free(cvs_text* t) { delete t; }

cvs_status cvs_resolve_config(const char* kind, const char* json, cvs_text** out) {
  return guarded([&] {
    need(kind, "config kind");
    const auto j = parse_json(json, "config");
    const std::string k = kind;
    nlohmann::json resolved;
    if (k == "scenario") {
      auto c = cvs::scenario::ScenarioConfig::from_json(j);
      c.validate();
      resolved = c.to_json();
    } else if (k == "stage") {
      resolved = cvs::training::StageConfig::from_json(j).to_json();
    } else if (k == "infer") {
      auto c = cvs::pipeline::InferConfig::from_json(j);
      c.validate();
      resolved = c.to_json();
    } else if (k == "eval") {
      auto c = cvs::pipeline::EvalConfig::from_json(j);
      c.validate();
      resolved = c.to_json();
    } else {
      cvs::raise(cvs::ErrorKind::Usage, "unknown config kind '" + k + "'");
    }
    give(out, resolved.dump(2));
  });
}

cvs_status cvs_generate_dataset(const char* scenario_json, int n, uint64_t seed, double test_fraction,
                                const char* out_dir, cvs_text** manifest_path) {
  return guarded([&] {
    need(out_dir, "output directory");
    cvs::require(n >= 0, cvs::ErrorKind::Usage, "clip count must be nonnegative");
    cvs::require(test_fraction >= 0.0 && test_fraction <= 1.0, cvs::ErrorKind::Config,
                 "test fraction must lie in [0, 1]");
    const auto cfg = cvs::scenario::ScenarioConfig::from_json(parse_json(scenario_json, "scenario config"));
    cfg.validate();
    give(manifest_path, cvs::scenario::generate_dataset(n, seed, cfg, out_dir, test_fraction).string());
  });
}

cvs_status cvs_train_stage(const char* stage_json, int verbose, cvs_text** result_json) {
  return guarded([&] {
    need(stage_json, "stage config");
    const auto cfg = cvs::training::StageConfig::from_json(parse_json(stage_json, "stage config"));
    const auto r = cvs::training::run_stage(cfg, verbose ? &std::cerr : nullptr);
    give(result_json, nlohmann::json{{"checkpoint", r.checkpoint.string()},
                                     {"loss_log", r.loss_log.string()},
                                     {"final_loss", r.final_loss}}
                          .dump());
  });
}

cvs_status cvs_model_load(const char* checkpoint_path, cvs_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint path");
    need(out, "model output");
    auto m = std::make_unique<cvs_model>();
    m->net = cvs::training::load_backbone(cvs::load_checkpoint(checkpoint_path), &m->config);
    *out = m.release();
  });
}

void cvs_model_free(cvs_model* model) { delete model; }

cvs_status cvs_model_config(const cvs_model* model, cvs_text** out) {
  return guarded([&] {
    need(model, "model");
    give(out, model->config.to_json().dump(2));
  });
}

cvs_status cvs_infer(const cvs_model* model, const char* infer_json, const char* out_dir, cvs_text** result_json) {
  return guarded([&] {
    need(out_dir, "output directory");
    const auto cfg = cvs::pipeline::InferConfig::from_json(parse_json(infer_json, "infer config"));
    const auto r = model ? cvs::pipeline::run_infer(cfg, out_dir, *model->net, model->config)
                         : cvs::pipeline::run_infer(cfg, out_dir);
    give(result_json,
         nlohmann::json{{"frame_hash", r.frame_hash}, {"prompt", r.prompt}, {"metrics", r.report.to_text()}}.dump());
  });
}

cvs_status cvs_evaluate(const char* eval_json, const char* report_path, cvs_text** report) {
  return guarded([&] {
    const auto cfg = cvs::pipeline::EvalConfig::from_json(parse_json(eval_json, "eval config"));
    const auto r = cvs::pipeline::run_eval(cfg);
    if (report_path) r.write(report_path);
    give(report, r.to_text());
  });
}

cvs_status cvs_frames_hash(const char* frames_dir, cvs_text** out) {
  return guarded([&] {
    need(frames_dir, "frames directory");
    give(out, cvs::inference::frame_hash(cvs::pipeline::load_frames(frames_dir)));
  });
}

}  // extern "C"
