// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include "causalvid/error.hpp"
#include "causalvid/hash.hpp"
#include "causalvid/json_config.hpp"

namespace cvs::training {

namespace {

double norm_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

// ---- configs ----

nlohmann::json schedule_to_json(const diffusion::ScheduleConfig& s) {
  return {{"steps", s.steps},
          {"beta_start", s.beta_start},
          {"beta_end", s.beta_end},
          {"kind", diffusion::to_string(s.kind)}};
}

diffusion::ScheduleConfig schedule_from_json(const nlohmann::json& j) {
  return as_config("schedule config", [&] {
    diffusion::ScheduleConfig s;
    s.steps = j.value("steps", s.steps);
    s.beta_start = j.value("beta_start", s.beta_start);
    s.beta_end = j.value("beta_end", s.beta_end);
    if (j.contains("kind")) s.kind = diffusion::parse_schedule_kind(j.at("kind").get<std::string>());
    return s;
  });
}

nlohmann::json encoder_to_json(const EncoderConfig& e) {
  return {{"text_dim", e.text_dim},
          {"vocab_buckets", e.vocab_buckets},
          {"vision_dim", e.vision_dim},
          {"seed", e.seed},
          {"entity_gain", e.entity_gain}};
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
  return as_config("encoder config", [&] {
    EncoderConfig e;
    e.text_dim = j.value("text_dim", e.text_dim);
    e.vocab_buckets = j.value("vocab_buckets", e.vocab_buckets);
    e.vision_dim = j.value("vision_dim", e.vision_dim);
    e.seed = j.value("seed", e.seed);
    e.entity_gain = j.value("entity_gain", e.entity_gain);
    return e;
  });
}

void ModelConfig::validate() const {
  backbone.validate();
  causal.validate();
  require(schedule.steps >= 1, ErrorKind::Config, "schedule needs at least one step");
  require(encoder.text_dim == backbone.text_dim, ErrorKind::Config,
          "encoder text_dim " + std::to_string(encoder.text_dim) + " differs from backbone text_dim " +
              std::to_string(backbone.text_dim));
  const int g = causal.grid();
  require(backbone.height % g == 0 && backbone.width % g == 0, ErrorKind::Config,
          "frame size must be divisible by the token grid " + std::to_string(g));
  require(backbone.height == backbone.width, ErrorKind::Config, "frames must be square");
}

int ModelConfig::gaze_patch() const { return backbone.height / causal.grid(); }

nlohmann::json ModelConfig::to_json() const {
  return {{"backbone", backbone.to_json()},
          {"schedule", schedule_to_json(schedule)},
          {"encoder", encoder_to_json(encoder)},
          {"causal", causal.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"backbone", "schedule", "encoder", "causal"}, "model config");
  ModelConfig m;
  if (j.contains("backbone")) m.backbone = backbone::BackboneConfig::from_json(j.at("backbone"));
  if (j.contains("schedule")) m.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("encoder")) m.encoder = encoder_from_json(j.at("encoder"));
  if (j.contains("causal")) m.causal = causal::CausalConfig::from_json(j.at("causal"));
  m.validate();
  return m;
}

std::string ModelConfig::hash() const { return hex_digest(to_json().dump()); }

void StageConfig::validate() const {
  auto bad = [](const std::string& m) { raise(ErrorKind::Config, "stage config: " + m); };
  if (stage < 0 || stage > 2) bad("stage must be 0, 1 or 2");
  if (steps < 0) bad("steps must be nonnegative");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) bad("betas must lie in [0, 1)");
  if (batch < 1) bad("batch must be positive");
  if (lambda < 0.0 || gamma < 0.0) bad("lambda and gamma must be nonnegative");
  if (checkpoint_every < 0) bad("checkpoint_every must be nonnegative");
  const auto& names = causal::preset_names();
  if (std::find(names.begin(), names.end(), hooks) == names.end()) bad("unknown hooks preset '" + hooks + "'");
  model.validate();
}

nlohmann::json StageConfig::to_json() const {
  return {{"stage", stage},
          {"steps", steps},
          {"lr", lr},
          {"betas", {beta1, beta2}},
          {"batch", batch},
          {"lambda", lambda},
          {"gamma", gamma},
          {"seed", seed},
          {"hooks", hooks},
          {"train_all", train_all},
          {"manifest", manifest},
          {"checkpoint_in", checkpoint_in},
          {"checkpoint_out", checkpoint_out},
          {"loss_log", loss_log},
          {"checkpoint_every", checkpoint_every},
          {"max_clips", max_clips},
          {"model", model.to_json()}};
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"stage", "steps", "lr", "betas", "batch", "lambda", "gamma", "seed", "hooks",
                  "train_all", "manifest", "checkpoint_in", "checkpoint_out", "loss_log",
                  "checkpoint_every", "max_clips", "model"},
                 "stage config");
  StageConfig c = as_config("stage config", [&] {
    StageConfig c;
    c.stage = j.value("stage", c.stage);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      require(b.size() == 2, ErrorKind::Config, "stage config: betas needs two values");
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    c.batch = j.value("batch", c.batch);
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.seed = j.value("seed", c.seed);
    c.hooks = j.value("hooks", c.hooks);
    c.train_all = j.value("train_all", c.train_all);
    c.manifest = j.value("manifest", c.manifest);
    c.checkpoint_in = j.value("checkpoint_in", c.checkpoint_in);
    c.checkpoint_out = j.value("checkpoint_out", c.checkpoint_out);
    c.loss_log = j.value("loss_log", c.loss_log);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.max_clips = j.value("max_clips", c.max_clips);
    return c;
  });
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.validate();
  return c;
}

std::filesystem::path StageConfig::loss_log_path() const {
  if (!loss_log.empty()) return loss_log;
  const std::filesystem::path out(checkpoint_out);
  return out.parent_path() / ("loss_stage" + std::to_string(stage) + ".tsv");
}

// ---- data ----

Conditioner::Conditioner(const ModelConfig& m)
    : encoder(m.encoder), gaze(m.gaze_patch(), m.causal.c_v, mix_seed(m.encoder.seed, 0x9a2e)), model(m) {}

Tensor Conditioner::text(const std::string& prompt) const {
  return encoder.encode_text(prompt, model.backbone.max_prompt_len);
}

Tensor Conditioner::gaze_tokens(const Tensor& maps) const { return gaze.tokenize(maps); }

TrainSample prepare_sample(const scenario::ClipRecord& rec, const Conditioner& cond) {
  const auto& b = cond.model.backbone;
  require(rec.frames.defined() && rec.frames.shape() == ag::Shape{b.frames, b.in_channels, b.height, b.width},
          ErrorKind::Config,
          "clip frames " + (rec.frames.defined() ? ag::shape_str(rec.frames.shape()) : std::string("[]")) +
              " do not match the backbone geometry");
  TrainSample s;
  const auto rev = scenario::reverse_clip(rec);
  s.v_f = rec.frames;
  s.v_r = rev.frames;
  s.p_f = cond.text(rec.prompt_f);
  s.p_r = cond.text(rec.prompt_r);
  if (rec.gaze.defined()) s.gaze_tokens = cond.gaze_tokens(rec.gaze);
  if (!rec.ara.question.empty())
    s.ara = causal::encode_ara(cond.encoder, rec.ara.question, rec.ara.answers, cond.model.causal, rec.ara.correct);
  s.entity = entity_word(rec.meta.entity);
  return s;
}

std::vector<TrainSample> load_training_set(const std::filesystem::path& manifest, const Conditioner& cond,
                                           int max_clips) {
  const auto records = scenario::load_manifest(manifest);
  std::vector<TrainSample> out;
  const int kernel = std::max(1, static_cast<int>(std::lround(cond.model.backbone.height * 50.0 / 224.0)));
  for (const auto& r : records) {
    if (r.split != "train") continue;
    if (max_clips > 0 && static_cast<int>(out.size()) >= max_clips) break;
    auto rec = scenario::read_clip(manifest.parent_path() / r.clip_dir, kernel);
    // The manifest is authoritative for the text fields.
    rec.prompt_f = r.prompt_f;
    rec.prompt_r = r.prompt_r;
    rec.ara = r.ara;
    out.push_back(prepare_sample(rec, cond));
  }
  require(!out.empty(), ErrorKind::Config, "manifest " + manifest.string() + " has no training clips");
  return out;
}

// ---- losses ----

LossParts stage0_loss(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                      const TrainSample& s, int k, const Tensor& e_f, const backbone::HookSet* hooks) {
  const auto z_k = diffusion::forward_noise(s.v_f, e_f, k, sched);
  const auto e_hat = model.predict_noise(z_k, k, {s.p_f}, hooks);
  auto mse = diffusion::loss_mse(e_f, e_hat);
  return {mse, {{"mse_f", mse}}};
}

LossParts stage1_loss(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                      const TrainSample& s, int k, const Tensor& e_f, const Tensor& e_r, double lambda) {
  const auto e_f_hat = model.predict_noise(diffusion::forward_noise(s.v_f, e_f, k, sched), k, {s.p_f});
  const auto e_r_hat = model.predict_noise(diffusion::forward_noise(s.v_r, e_r, k, sched), k, {s.p_r});
  auto p = diffusion::loss_st1_parts(e_f, e_f_hat, e_r, e_r_hat, lambda);
  return {p.total, {{"mse_f", p.mse_f}, {"mse_r", p.mse_r}, {"ns", p.ns}}};
}

LossParts stage2_loss(const backbone::UNet3D& model, causal::CausalBlocks& blocks,
                      const diffusion::NoiseSchedule& sched, const TrainSample& s, int k, const Tensor& e_f,
                      double gamma, bool zero_gaze, Rng& rng, causal::StepContext& ctx) {
  const auto& cc = blocks.config();
  const auto F = s.v_f.dim(0);
  ctx.ctg.reset();
  ctx.bundles.clear();
  ctx.rng = &rng;
  ctx.ara = s.ara ? &*s.ara : nullptr;
  if (zero_gaze || !s.gaze_tokens.defined())
    ctx.gaze_tokens = Tensor::zeros({cc.n_v, F, cc.c_v});
  else
    ctx.gaze_tokens = s.gaze_tokens;
  auto hooks = blocks.hooks(ctx);
  const auto z_k = diffusion::forward_noise(s.v_f, e_f, k, sched);
  const auto e_hat = model.predict_noise(z_k, k, {s.p_f}, &hooks);
  auto mse = diffusion::loss_mse(e_f, e_hat);
  if (!ctx.ctg) return {mse, {{"mse_f", mse}}};
  const auto& a = ctx.ctg->ara;
  return {causal::loss_st2(e_f, e_hat, a.total, gamma),
          {{"mse_f", mse}, {"ara", a.total}, {"xe_c", a.xe_causal}, {"xe_bg", a.xe_background}, {"kld", a.kld}}};
}

std::string format_log_line(const StepReport& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%d\t%.10g", r.step, r.loss);
  std::string line = buf;
  for (const auto& [name, v] : r.components) {
    std::snprintf(buf, sizeof buf, "\t%s=%.10g", name.c_str(), v);
    line += buf;
  }
  return line;
}

bool default_stage2_trainable(const std::string& name) {
  if (name.find(".ta.") != std::string::npos) return true;
  for (const auto& p : causal::block_prefixes())
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

// ---- trainer ----

Trainer::Trainer(StageConfig cfg) : Trainer(cfg, {}) {}

Trainer::Trainer(StageConfig cfg, std::vector<TrainSample> data)
    : cfg_(std::move(cfg)), sched_(cfg_.model.schedule), data_(std::move(data)) {
  cfg_.validate();
  if (cfg_.stage > 0 && cfg_.checkpoint_in.empty())
    raise(ErrorKind::Chain, "stage " + std::to_string(cfg_.stage) + " needs the stage " +
                                std::to_string(cfg_.stage - 1) + " checkpoint (checkpoint_in is empty)");
  cond_ = std::make_unique<Conditioner>(cfg_.model);
  if (data_.empty()) {
    require(!cfg_.manifest.empty(), ErrorKind::Config, "stage config names no manifest");
    data_ = load_training_set(cfg_.manifest, *cond_, cfg_.max_clips);
  } else if (cfg_.max_clips > 0 && static_cast<int>(data_.size()) > cfg_.max_clips) {
    data_.resize(static_cast<std::size_t>(cfg_.max_clips));
  }
  model_ = std::make_unique<backbone::UNet3D>(cfg_.model.backbone);
  if (cfg_.stage == 2) {
    preset_ = causal::make_preset(cfg_.hooks, cfg_.model.backbone.layers);
    blocks_ = std::make_unique<causal::CausalBlocks>(*model_, preset_.blocks, cfg_.model.causal,
                                                     cfg_.model.backbone.text_dim);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!preset_.blocks.empty() && !preset_.zero_gaze)
        require(data_[i].gaze_tokens.defined(), ErrorKind::Config,
                "training clip " + std::to_string(i) + " has no gaze maps");
      if (blocks_->has_ctg())
        require(data_[i].ara.has_value(), ErrorKind::Config, "training clip " + std::to_string(i) + " has no ArA item");
    }
  }
  init_from_checkpoint();
}

Trainer::~Trainer() = default;

Tensor Trainer::lookup(const std::string& name) const {
  if (model_->parameters().contains(name)) return model_->parameters().get(name);
  require(blocks_ != nullptr, ErrorKind::Range, "unknown parameter " + name);
  return blocks_->parameters().get(name);
}

void Trainer::build_optimizer() {
  trainable_names_.clear();
  trainable_.clear();
  for (const auto& [name, t] : model_->parameters().items())
    if (cfg_.stage < 2 || cfg_.train_all || default_stage2_trainable(name)) {
      trainable_names_.push_back(name);
      trainable_.push_back(t);
    }
  if (blocks_)
    for (const auto& [name, t] : blocks_->parameters().items()) {
      trainable_names_.push_back(name);
      trainable_.push_back(t);
    }
  adam_ = std::make_unique<optim::Adam>(trainable_, optim::AdamConfig{cfg_.lr, cfg_.beta1, cfg_.beta2});
}

void Trainer::init_from_checkpoint() {
  build_optimizer();
  if (cfg_.checkpoint_in.empty()) {
    require(cfg_.stage == 0, ErrorKind::Chain,
            "stage " + std::to_string(cfg_.stage) + " needs a stage " + std::to_string(cfg_.stage - 1) +
                " checkpoint (checkpoint_in is empty)");
    return;
  }
  auto ckpt = load_checkpoint(cfg_.checkpoint_in);
  const auto& meta = ckpt.meta;
  require(meta.value("format", std::string()) == "causalvid-train", ErrorKind::Chain,
          cfg_.checkpoint_in + " is not a training checkpoint");
  const std::string hash = meta.value("model_hash", std::string());
  require(hash == cfg_.model.hash(), ErrorKind::Chain,
          "checkpoint " + cfg_.checkpoint_in + " was trained with model config " + hash + ", this run uses " +
              cfg_.model.hash());
  const int from = meta.value("stage", -1);
  const bool complete = meta.value("complete", false);
  import_parameters(model_->parameters(), ckpt);
  if (from == cfg_.stage) {
    // Resume mid-stage: weights, causal blocks and optimizer state.
    completed_ = meta.value("step", 0);
    if (blocks_) import_parameters(blocks_->parameters(), ckpt);
    auto& m = adam_->first_moments();
    auto& v = adam_->second_moments();
    for (std::size_t i = 0; i < trainable_names_.size(); ++i) {
      const auto* am = ckpt.find("adam.m/" + trainable_names_[i]);
      const auto* av = ckpt.find("adam.v/" + trainable_names_[i]);
      require(am && av && am->data.size() == m[i].size() && av->data.size() == v[i].size(), ErrorKind::Chain,
              "checkpoint optimizer state does not match parameter " + trainable_names_[i]);
      m[i] = am->data;
      v[i] = av->data;
    }
    adam_->set_steps_taken(meta.value("adam_t", static_cast<std::int64_t>(0)));
    return;
  }
  require(from == cfg_.stage - 1 && complete, ErrorKind::Chain,
          "stage " + std::to_string(cfg_.stage) + " needs a completed stage " + std::to_string(cfg_.stage - 1) +
              " checkpoint, got stage " + std::to_string(from) + (complete ? "" : " (incomplete)"));
}

std::size_t Trainer::sample_index(int s, int b) {
  const std::int64_t n = static_cast<std::int64_t>(data_.size());
  const std::int64_t pos = static_cast<std::int64_t>(s) * cfg_.batch + b;
  const std::int64_t epoch = pos / n;
  if (epoch != epoch_) {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(mix_seed(mix_seed(cfg_.seed, 0xda7a), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order_.begin(), order_.end(), rng.engine());
    epoch_ = epoch;
  }
  return order_[static_cast<std::size_t>(pos % n)];
}

StepReport Trainer::step() {
  const int s = completed_;
  Rng rng(mix_seed(mix_seed(cfg_.seed, 0x5e9 + static_cast<std::uint64_t>(cfg_.stage)), static_cast<std::uint64_t>(s)));
  const int K = sched_.steps();
  StepReport report;
  report.step = s + 1;
  std::vector<std::pair<std::string, double>> sums;
  const double inv_b = 1.0 / cfg_.batch;
  for (int b = 0; b < cfg_.batch; ++b) {
    const auto& sample = data_[sample_index(s, b)];
    const int k = static_cast<int>(rng.uniform_int(1, K));
    const auto e_f = diffusion::sample_noise(sample.v_f.shape(), rng);
    LossParts parts;
    causal::StepContext ctx;
    if (cfg_.stage == 0) {
      parts = stage0_loss(*model_, sched_, sample, k, e_f);
    } else if (cfg_.stage == 1) {
      const auto e_r = diffusion::sample_noise(sample.v_r.shape(), rng);
      parts = stage1_loss(*model_, sched_, sample, k, e_f, e_r, cfg_.lambda);
    } else {
      parts = stage2_loss(*model_, *blocks_, sched_, sample, k, e_f, cfg_.gamma, preset_.zero_gaze, rng, ctx);
    }
    const double value = parts.total.item();
    if (!std::isfinite(value)) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "non-finite loss at stage %d step %d (batch slot %d, k=%d): |z0|=%.4g |e|=%.4g",
                    cfg_.stage, s + 1, b, k, norm_of(sample.v_f), norm_of(e_f));
      std::string msg = buf;
      for (const auto& [name, t] : parts.components) msg += " " + name + "=" + std::to_string(t.item());
      raise(ErrorKind::Numeric, msg);
    }
    ag::scale(parts.total, inv_b).backward();
    report.loss += value * inv_b;
    if (sums.empty())
      for (const auto& [name, t] : parts.components) sums.emplace_back(name, 0.0);
    for (std::size_t i = 0; i < parts.components.size(); ++i) sums[i].second += parts.components[i].second.item() * inv_b;
  }
  for (const auto& t : trainable_)
    for (double g : t.grad())
      require(std::isfinite(g), ErrorKind::Numeric,
              "non-finite gradient at stage " + std::to_string(cfg_.stage) + " step " + std::to_string(s + 1));
  adam_->step();
  model_->parameters().zero_grad();
  if (blocks_) blocks_->parameters().zero_grad();
  report.components = std::move(sums);
  ++completed_;
  return report;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint c;
  c.meta = {{"format", "causalvid-train"},
            {"stage", cfg_.stage},
            {"step", completed_},
            {"steps", cfg_.steps},
            {"complete", completed_ >= cfg_.steps},
            {"model_hash", cfg_.model.hash()},
            {"model", cfg_.model.to_json()},
            {"stage_config", cfg_.to_json()},
            {"hooks", cfg_.stage == 2 ? cfg_.hooks : std::string()},
            {"adam_t", adam_->steps_taken()}};
  export_parameters(model_->parameters(), c);
  if (blocks_) export_parameters(blocks_->parameters(), c);
  auto& adam = const_cast<optim::Adam&>(*adam_);
  for (std::size_t i = 0; i < trainable_names_.size(); ++i) {
    const auto shape = trainable_[i].shape();
    c.put({"adam.m/" + trainable_names_[i], shape, adam.first_moments()[i]});
    c.put({"adam.v/" + trainable_names_[i], shape, adam.second_moments()[i]});
  }
  return c;
}

std::filesystem::path Trainer::run(std::ostream* progress) {
  require(!cfg_.checkpoint_out.empty(), ErrorKind::Config, "stage config names no checkpoint_out");
  const auto log_path = cfg_.loss_log_path();
  // Keep the lines of steps already completed, drop anything after them.
  std::vector<std::string> kept;
  if (completed_ > 0) {
    std::ifstream in(log_path);
    std::string line;
    while (static_cast<int>(kept.size()) < completed_ && std::getline(in, line)) kept.push_back(line);
  }
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::trunc);
  require(log.good(), ErrorKind::Io, "cannot write loss log " + log_path.string());
  for (const auto& l : kept) log << l << '\n';

  while (completed_ < cfg_.steps) {
    const auto r = step();
    log << format_log_line(r) << '\n';
    log.flush();
    if (progress && (r.step == 1 || r.step % 50 == 0 || r.step == cfg_.steps))
      *progress << "stage " << cfg_.stage << " step " << r.step << "/" << cfg_.steps << " loss " << r.loss << '\n';
    if (cfg_.checkpoint_every > 0 && completed_ % cfg_.checkpoint_every == 0 && completed_ < cfg_.steps)
      save_checkpoint(snapshot(), cfg_.checkpoint_out);
  }
  require(log.good(), ErrorKind::Io, "failed writing loss log " + log_path.string());
  save_checkpoint(snapshot(), cfg_.checkpoint_out);
  return cfg_.checkpoint_out;
}

StageResult run_stage(const StageConfig& cfg, std::ostream* progress) {
  Trainer t(cfg);
  StageResult r;
  r.checkpoint = t.run(progress);
  r.loss_log = cfg.loss_log_path();
  std::ifstream in(r.loss_log);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (!last.empty()) r.final_loss = std::stod(last.substr(last.find('\t') + 1));
  return r;
}

std::unique_ptr<backbone::UNet3D> load_backbone(const Checkpoint& ckpt, ModelConfig* model) {
  require(ckpt.meta.contains("model"), ErrorKind::Malformed, "checkpoint has no model config");
  auto m = ModelConfig::from_json(ckpt.meta.at("model"));
  require(ckpt.meta.value("model_hash", m.hash()) == m.hash(), ErrorKind::Malformed,
          "checkpoint model hash does not match its model config");
  auto net = std::make_unique<backbone::UNet3D>(m.backbone);
  import_parameters(net->parameters(), ckpt);
  if (model) *model = m;
  return net;
}

}  // namespace cvs::training
