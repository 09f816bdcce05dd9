// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "causalvid/checkpoint.hpp"
#include "causalvid/error.hpp"
#include "causalvid/image.hpp"
#include "causalvid/json_config.hpp"
#include "causalvid/scenario.hpp"

namespace cvs::pipeline {

namespace fs = std::filesystem;

// ---- json files ----

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  require(!ec, ErrorKind::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    require(out.good(), ErrorKind::Io, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  require(!ec, ErrorKind::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingFile, "missing file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Malformed, path.string() + ": " + e.what());
  }
}

// ---- infer ----

void InferConfig::validate() const {
  const auto m = inference::parse_mode(mode);
  require(!checkpoint.empty(), ErrorKind::Usage, "infer needs a checkpoint");
  if (m == inference::Mode::T2V) {
    require(source.empty(), ErrorKind::Usage, "t2v does not take a source clip");
    require(!prompt.empty(), ErrorKind::Usage, "t2v needs a prompt");
    require(swap_entity.empty(), ErrorKind::Usage, "entity swap needs a v2v source clip");
  } else {
    require(!source.empty(), ErrorKind::Usage, "v2v needs a source clip");
  }
  if (!swap_entity.empty())
    require(parse_entity(swap_entity).has_value(), ErrorKind::Config, "unknown entity '" + swap_entity + "'");
  require(prompt.find('\n') == std::string::npos, ErrorKind::Config, "prompt must be a single line");
  require(ddim_steps >= 1, ErrorKind::Config, "ddim steps must be positive");
  require(eta >= 0.0 && eta <= 1.0, ErrorKind::Config, "eta must lie in [0, 1]");
  require(strength >= 0.0 && strength <= 1.0, ErrorKind::Config, "edit strength must lie in [0, 1]");
}

nlohmann::json InferConfig::to_json() const {
  return {{"checkpoint", checkpoint}, {"mode", mode},     {"prompt", prompt},       {"source", source},
          {"swap_entity", swap_entity}, {"ddim_steps", ddim_steps}, {"eta", eta}, {"strength", strength},
          {"seed", seed}};
}

InferConfig InferConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"checkpoint", "mode", "prompt", "source", "swap_entity", "ddim_steps", "eta", "strength", "seed"},
                 "infer config");
  return as_config("infer config", [&] {
    InferConfig c;
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.mode = j.value("mode", c.mode);
    c.prompt = j.value("prompt", c.prompt);
    c.source = j.value("source", c.source);
    c.swap_entity = j.value("swap_entity", c.swap_entity);
    c.ddim_steps = j.value("ddim_steps", c.ddim_steps);
    c.eta = j.value("eta", c.eta);
    c.strength = j.value("strength", c.strength);
    c.seed = j.value("seed", c.seed);
    return c;
  });
}

std::optional<EntityClass> prompt_entity(const std::string& prompt) {
  std::optional<EntityClass> last;
  for (const auto& w : ToyEncoder::words(prompt))
    if (auto c = parse_entity(w)) last = c;
  return last;
}

namespace {

std::string resolve_prompt(const InferConfig& cfg, const scenario::ClipRecord* source) {
  std::string p = cfg.prompt;
  if (p.empty() && source) p = source->prompt();
  require(!p.empty(), ErrorKind::Usage, "no prompt given and the source clip has none");
  if (!cfg.swap_entity.empty() && source)
    p = scenario::swap_entity_word(p, source->meta.entity, *parse_entity(cfg.swap_entity));
  return p;
}

int gaze_kernel_for(int height) { return std::max(1, static_cast<int>(std::lround(height * 50.0 / 224.0))); }

scenario::ClipRecord read_source(const std::string& dir, int height) {
  return scenario::read_clip(dir, gaze_kernel_for(height), scenario::ClipInputs::FramesOnly);
}

}  // namespace

InferOutput run_infer(const InferConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  training::ModelConfig model_cfg;
  const auto net = training::load_backbone(load_checkpoint(cfg.checkpoint), &model_cfg);
  return run_infer(cfg, out_dir, *net, model_cfg);
}

InferOutput run_infer(const InferConfig& cfg, const fs::path& out_dir, const backbone::UNet3D& model,
                      const training::ModelConfig& model_cfg) {
  cfg.validate();
  write_json(cfg.to_json(), out_dir / "config.json");

  const auto& bb = model_cfg.backbone;
  std::optional<scenario::ClipRecord> source;
  if (!cfg.source.empty()) {
    source = read_source(cfg.source, bb.height);
    const auto& s = source->frames.shape();
    require(s == ag::Shape{bb.frames, 3, bb.height, bb.width}, ErrorKind::Config,
            "source clip geometry does not match the model");
  }

  InferOutput out;
  out.prompt = resolve_prompt(cfg, source ? &*source : nullptr);
  training::Conditioner cond(model_cfg);
  const diffusion::NoiseSchedule sched(model_cfg.schedule);

  inference::InferenceRequest req;
  req.mode = inference::parse_mode(cfg.mode);
  req.prompt = out.prompt;
  if (source) req.source = source->frames;
  req.ddim_steps = cfg.ddim_steps;
  req.eta = cfg.eta;
  req.strength = cfg.strength;
  req.seed = cfg.seed;
  const auto clip = inference::run(model, sched, cond.text(out.prompt), {bb.frames, 3, bb.height, bb.width}, req);

  out.frame_hash = inference::export_clip(clip, out_dir);
  auto& r = out.report;
  r.set_text("mode", cfg.mode);
  r.set_text("seed", std::to_string(cfg.seed));
  r.set_text("prompt", out.prompt);
  r.set_text("frame_hash", out.frame_hash);
  r.set("clip_s", eval::clip_score(clip, out.prompt, cond.encoder));
  if (clip.dim(0) >= 2) r.set("temp_c", eval::temp_c(clip, cond.encoder));
  if (source) {
    const auto tc = eval::tube_change(source->frames, clip, {source->boxes});
    r.set("tube_change_inside", tc.inside);
    r.set("tube_change_outside", tc.outside);
  }
  r.write(out_dir / "metrics.txt");
  return out;
}

// ---- eval ----

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"clip_s", "temp_c", "frechet", "afd"};
  return names;
}

void EvalConfig::validate() const {
  for (const auto& m : metrics)
    require(std::find(metric_names().begin(), metric_names().end(), m) != metric_names().end(), ErrorKind::Usage,
            "unknown metric '" + m + "' (expected clip_s, temp_c, frechet or afd)");
  require(gaze_threshold > 0.0 && gaze_threshold <= 1.0, ErrorKind::Config, "gaze threshold must lie in (0, 1]");
  require(!runs.empty() || !afd_boxes.empty(), ErrorKind::Usage, "eval needs run directories or a box-pair file");
}

nlohmann::json EvalConfig::to_json() const {
  return {{"runs", runs},           {"real_manifest", real_manifest}, {"real_split", real_split},
          {"afd_boxes", afd_boxes}, {"metrics", metrics},             {"gaze_threshold", gaze_threshold}};
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"runs", "real_manifest", "real_split", "afd_boxes", "metrics", "gaze_threshold"}, "eval config");
  return as_config("eval config", [&] {
    EvalConfig c;
    c.runs = j.value("runs", c.runs);
    c.real_manifest = j.value("real_manifest", c.real_manifest);
    c.real_split = j.value("real_split", c.real_split);
    c.afd_boxes = j.value("afd_boxes", c.afd_boxes);
    c.metrics = j.value("metrics", c.metrics);
    c.gaze_threshold = j.value("gaze_threshold", c.gaze_threshold);
    return c;
  });
}

ag::Tensor load_frames(const fs::path& dir) {
  std::vector<Image> imgs;
  char name[32];
  for (int i = 0;; ++i) {
    std::snprintf(name, sizeof name, "%05d.ppm", i);
    if (!fs::exists(dir / name)) break;
    imgs.push_back(read_image(dir / name));
  }
  require(!imgs.empty(), ErrorKind::MissingFile, "no frames under " + dir.string());
  const int H = imgs[0].height, W = imgs[0].width;
  std::vector<double> v(imgs.size() * 3 * H * W);
  for (std::size_t f = 0; f < imgs.size(); ++f) {
    const auto& im = imgs[f];
    require(im.channels == 3 && im.height == H && im.width == W, ErrorKind::Malformed,
            "frame " + std::to_string(f) + " under " + dir.string() + " has a different geometry");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          v[((f * 3 + c) * H + y) * W + x] = from_u8_signed(im.data[(static_cast<std::size_t>(y) * W + x) * 3 + c]);
  }
  return ag::Tensor::constant({static_cast<std::int64_t>(imgs.size()), 3, H, W}, std::move(v));
}

namespace {

std::optional<Box> parse_box(const std::string& s, const std::string& where) {
  if (s == "-") return std::nullopt;
  Box b;
  char tail = 0;
  require(std::sscanf(s.c_str(), "%d,%d,%d,%d%c", &b.x0, &b.y0, &b.x1, &b.y1, &tail) == 4, ErrorKind::Malformed,
          where + ": expected x0,y0,x1,y1 or '-', got '" + s + "'");
  return b;
}

}  // namespace

std::pair<std::vector<std::optional<Box>>, std::vector<std::optional<Box>>> read_box_pairs(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::MissingFile, "missing box-pair file " + path.string());
  std::pair<std::vector<std::optional<Box>>, std::vector<std::optional<Box>>> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    const std::string where = path.string() + " line " + std::to_string(n);
    require(tab != std::string::npos, ErrorKind::Malformed, where + ": expected two tab-separated boxes");
    out.first.push_back(parse_box(line.substr(0, tab), where));
    out.second.push_back(parse_box(line.substr(tab + 1), where));
  }
  return out;
}

eval::MetricReport run_eval(const EvalConfig& cfg) {
  cfg.validate();
  struct Run {
    std::string name;
    InferConfig cfg;
    ag::Tensor clip;
    std::string prompt;
    std::optional<scenario::ClipRecord> source;
  };
  std::vector<Run> runs;
  std::set<std::string> names;
  for (const auto& dir : cfg.runs) {
    Run r;
    r.name = fs::path(dir).lexically_normal().filename().string();
    if (r.name.empty()) r.name = fs::path(dir).lexically_normal().parent_path().filename().string();
    require(names.insert(r.name).second, ErrorKind::Config, "two runs share the directory name '" + r.name + "'");
    r.cfg = InferConfig::from_json(read_json(fs::path(dir) / "config.json"));
    r.clip = load_frames(fs::path(dir) / "frames");
    if (!r.cfg.source.empty()) r.source = read_source(r.cfg.source, static_cast<int>(r.clip.dim(2)));
    r.prompt = resolve_prompt(r.cfg, r.source ? &*r.source : nullptr);
    runs.push_back(std::move(r));
  }

  auto gazed = [](const Run& r) { return r.source.has_value() && r.source->gaze.defined(); };
  const bool any_source = std::any_of(runs.begin(), runs.end(), gazed);
  std::vector<std::string> wanted = cfg.metrics;
  const bool strict = !wanted.empty();
  if (!strict) {
    if (!runs.empty()) wanted = {"clip_s", "temp_c"};
    if (!cfg.real_manifest.empty() && runs.size() >= 2) wanted.push_back("frechet");
    if (!cfg.afd_boxes.empty() || any_source) wanted.push_back("afd");
  }
  auto wants = [&](const char* m) { return std::find(wanted.begin(), wanted.end(), m) != wanted.end(); };

  // Scores use the encoder the runs were generated with.
  std::optional<ToyEncoder> encoder;
  for (const auto& r : runs) {
    const auto ckpt = load_checkpoint(r.cfg.checkpoint);
    require(ckpt.meta.contains("model"), ErrorKind::Malformed, r.cfg.checkpoint + ": checkpoint has no model config");
    const auto m = training::ModelConfig::from_json(ckpt.meta.at("model"));
    if (!encoder)
      encoder.emplace(m.encoder);
    else
      require(training::encoder_to_json(m.encoder) == training::encoder_to_json(encoder->config()), ErrorKind::Config,
              "run '" + r.name + "' was generated with a different text/vision encoder");
  }
  const ToyEncoder enc = encoder.value_or(ToyEncoder());
  eval::MetricReport report;
  report.set_text("runs", std::to_string(runs.size()));

  if (wants("clip_s") || wants("temp_c")) {
    require(!runs.empty(), ErrorKind::Config, std::string(wants("clip_s") ? "clip_s" : "temp_c") +
                                                  ": needs at least one run directory");
    double cs = 0.0, tc = 0.0;
    int tc_n = 0;
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> per_clip;
    for (const auto& r : runs) {
      std::vector<std::pair<std::string, double>> vals;
      if (wants("clip_s")) {
        const double v = eval::clip_score(r.clip, r.prompt, enc);
        cs += v;
        vals.emplace_back("clip_s", v);
      }
      if (wants("temp_c")) {
        require(r.clip.dim(0) >= 2, ErrorKind::Config, "temp_c: run '" + r.name + "' has a single frame");
        const double v = eval::temp_c(r.clip, enc);
        tc += v;
        ++tc_n;
        vals.emplace_back("temp_c", v);
      }
      per_clip.emplace_back(r.name, std::move(vals));
    }
    if (wants("clip_s")) report.set("clip_s", cs / static_cast<double>(runs.size()));
    if (wants("temp_c")) report.set("temp_c", tc / tc_n);
    for (auto& [name, vals] : per_clip) report.add_clip(name, std::move(vals));
  }

  if (wants("frechet")) {
    require(!cfg.real_manifest.empty(), ErrorKind::Config, "frechet: needs a reference manifest");
    require(runs.size() >= 2, ErrorKind::Config, "frechet: needs at least two run directories");
    const fs::path manifest(cfg.real_manifest);
    std::vector<ag::Tensor> real, gen;
    for (const auto& rec : scenario::load_manifest(manifest)) {
      if (!cfg.real_split.empty() && rec.split != cfg.real_split) continue;
      real.push_back(scenario::read_clip(manifest.parent_path() / rec.clip_dir,
                                         gaze_kernel_for(static_cast<int>(runs[0].clip.dim(2))))
                         .frames);
    }
    require(real.size() >= 2, ErrorKind::Config, "frechet: the reference manifest has fewer than two clips");
    for (const auto& r : runs) gen.push_back(r.clip);
    report.set("frechet", eval::frechet_distance(real, gen, enc));
    report.set_text("frechet_real_clips", std::to_string(real.size()));
  }

  if (wants("afd")) {
    std::vector<std::optional<Box>> det, gz;
    if (!cfg.afd_boxes.empty()) {
      std::tie(det, gz) = read_box_pairs(cfg.afd_boxes);
    } else {
      require(any_source, ErrorKind::Config,
              "afd: needs a box-pair file or a v2v run whose source clip carries gaze maps");
      const eval::ColorDetector detector;
      for (const auto& r : runs) {
        if (!gazed(r)) continue;
        const auto cls = prompt_entity(r.prompt);
        require(cls.has_value(), ErrorKind::Config, "afd: run '" + r.name + "' prompt names no entity");
        const auto boxes = detector.detect(r.clip, entity_word(*cls));
        for (int f = 0; f < r.clip.dim(0); ++f) {
          det.push_back(boxes[static_cast<std::size_t>(f)]);
          gz.push_back(eval::gazed_region(r.source->gaze, f, cfg.gaze_threshold));
        }
      }
    }
    require(!det.empty(), ErrorKind::Config, "afd: no checks to score");
    report.set("afd", eval::afd(det, gz));
    report.set_text("afd_checks", std::to_string(det.size()));
  }
  return report;
}

}  // namespace cvs::pipeline
