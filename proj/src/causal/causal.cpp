// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/causal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "causalvid/diffusion.hpp"
#include "causalvid/error.hpp"

namespace cvs::causal {

namespace ops = cvs::ag;

// ---- config ----

void CausalConfig::validate() const {
  auto bad = [](const std::string& m) { raise(ErrorKind::Config, "causal blocks: " + m); };
  if (n_v < 4) bad("n_v must be >= 4");
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_v))));
  if (g * g != n_v) bad("n_v = " + std::to_string(n_v) + " is not a perfect square");
  if (c_v < 1) bad("c_v must be positive");
  if (!(temperature > 0.0)) bad("temperature must be > 0");
  if (!(intervention_fraction > 0.0 && intervention_fraction < 1.0))
    bad("intervention fraction must lie in (0, 1)");
  if (scorer_hidden < 1) bad("scorer_hidden must be positive");
  if (max_question_len < 1 || max_answer_len < 1) bad("prompt lengths must be positive");
  if (heads < 1 || c_v % heads != 0) bad("heads must divide c_v");
}

int CausalConfig::grid() const {
  return static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_v))));
}

nlohmann::json CausalConfig::to_json() const {
  return {{"n_v", n_v},
          {"c_v", c_v},
          {"temperature", temperature},
          {"gumbel_noise", gumbel_noise},
          {"intervention_fraction", intervention_fraction},
          {"scorer_hidden", scorer_hidden},
          {"max_question_len", max_question_len},
          {"max_answer_len", max_answer_len},
          {"heads", heads},
          {"init_seed", init_seed}};
}

CausalConfig CausalConfig::from_json(const nlohmann::json& j) {
  CausalConfig c;
  try {
    c.n_v = j.value("n_v", c.n_v);
    c.c_v = j.value("c_v", c.c_v);
    c.temperature = j.value("temperature", c.temperature);
    c.gumbel_noise = j.value("gumbel_noise", c.gumbel_noise);
    c.intervention_fraction = j.value("intervention_fraction", c.intervention_fraction);
    c.scorer_hidden = j.value("scorer_hidden", c.scorer_hidden);
    c.max_question_len = j.value("max_question_len", c.max_question_len);
    c.max_answer_len = j.value("max_answer_len", c.max_answer_len);
    c.heads = j.value("heads", c.heads);
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string("causal config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- bundle bookkeeping ----

std::atomic<std::int64_t> TokenBundle::count_{0};

TokenBundle::TokenBundle() { ++count_; }
TokenBundle::TokenBundle(const TokenBundle& o)
    : adapted(o.adapted),
      fused(o.fused),
      scores(o.scores),
      causal(o.causal),
      background(o.background),
      causal_indices(o.causal_indices),
      background_indices(o.background_indices),
      d(o.d),
      n_v(o.n_v),
      frames(o.frames) {
  ++count_;
}
TokenBundle::TokenBundle(TokenBundle&& o) noexcept
    : adapted(std::move(o.adapted)),
      fused(std::move(o.fused)),
      scores(std::move(o.scores)),
      causal(std::move(o.causal)),
      background(std::move(o.background)),
      causal_indices(std::move(o.causal_indices)),
      background_indices(std::move(o.background_indices)),
      d(o.d),
      n_v(o.n_v),
      frames(o.frames) {
  ++count_;
}

std::int64_t TokenBundle::instances() { return count_.load(); }

EncodedAra encode_ara(const ToyEncoder& encoder, const std::string& question,
                      const std::array<std::string, kAnswerCount>& answers,
                      const CausalConfig& cfg, int correct) {
  require(correct >= 0 && correct < kAnswerCount, ErrorKind::Contract,
          "correct answer index out of range");
  EncodedAra e;
  e.question = encoder.encode_text(question, cfg.max_question_len);
  for (int i = 0; i < kAnswerCount; ++i)
    e.answers[i] = encoder.encode_text(answers[i], cfg.max_answer_len);
  e.correct = correct;
  return e;
}

// ---- adaptor ----

namespace {
void check_layer_tokens(const Tensor& t, const LayerGeometry& g, const char* op) {
  require(t.rank() == 3 && t.dim(0) == g.tokens() && t.dim(1) == g.frames && t.dim(2) == g.channels,
          ErrorKind::Contract,
          std::string(op) + ": tokens " + ag::shape_str(t.shape()) + " do not match layer " +
              std::to_string(g.layer) + " geometry");
}

int grid_of(int n_v) {
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_v))));
  require(g * g == n_v, ErrorKind::Config,
          "token count " + std::to_string(n_v) + " is not a perfect square");
  return g;
}
}  // namespace

Tensor sampling_adaptor(const Tensor& tokens, const LayerGeometry& g, int n_v,
                        const nn::Linear& proj) {
  const int grid = grid_of(n_v);
  check_layer_tokens(tokens, g, "sampling_adaptor");
  const std::int64_t F = g.frames, C = g.channels;
  auto x = ops::reshape(ops::permute(tokens, {1, 0, 2}), {F, g.height, g.width, C});
  x = ops::resize_bilinear(x, grid, grid);
  auto y = proj(ops::reshape(x, {F, n_v, C}));
  return ops::permute(y, {1, 0, 2});
}

Tensor inverse_adaptor(const Tensor& tokens, const LayerGeometry& g, const nn::Linear& proj) {
  require(tokens.rank() == 3 && tokens.dim(1) == g.frames, ErrorKind::Contract,
          "inverse_adaptor: bad token shape " + ag::shape_str(tokens.shape()));
  const auto n_v = tokens.dim(0);
  const int grid = grid_of(static_cast<int>(n_v));
  const std::int64_t F = g.frames;
  auto y = proj(ops::permute(tokens, {1, 0, 2}));  // [F, n_v, C_l]
  const auto C = y.dim(2);
  auto x = ops::resize_bilinear(ops::reshape(y, {F, grid, grid, C}), g.height, g.width);
  return ops::permute(ops::reshape(x, {F, g.tokens(), C}), {1, 0, 2});
}

// ---- gated fusion ----

Tensor gumbel_softmax_tokens(const Tensor& logits, double temperature, Rng* rng) {
  require(logits.rank() == 3, ErrorKind::Contract, "gumbel_softmax_tokens expects [n, F, C]");
  require(temperature > 0.0, ErrorKind::Config, "temperature must be > 0");
  auto y = logits;
  if (rng) {
    std::vector<double> g(static_cast<std::size_t>(logits.numel()));
    for (auto& v : g) {
      const double u = std::clamp(rng->uniform(), 1e-12, 1.0 - 1e-12);
      v = -std::log(-std::log(u));
    }
    y = ops::add(y, Tensor::constant(logits.shape(), std::move(g)));
  }
  if (temperature != 1.0) y = ops::scale(y, 1.0 / temperature);
  auto s = ops::softmax_last(ops::permute(y, {1, 2, 0}));  // [F, C, n]
  return ops::permute(s, {2, 0, 1});
}

GatedFusion::GatedFusion(nn::ParameterStore& store, const std::string& name, int c_v, int c_g,
                         Rng& rng)
    : conv1(store, name + ".conv1", c_v + c_g, c_v, rng),
      conv2(store, name + ".conv2", c_v, c_v, rng) {}

Tensor GatedFusion::logits(const Tensor& z_v, const Tensor& z_g) const {
  require(z_v.rank() == 3 && z_g.rank() == 3, ErrorKind::Contract,
          "gated fusion expects [n, F, C] tokens");
  require(z_v.dim(0) == z_g.dim(0), ErrorKind::Contract,
          "gated fusion: " + std::to_string(z_v.dim(0)) + " vision tokens vs " +
              std::to_string(z_g.dim(0)) + " gaze tokens");
  require(z_v.dim(1) == z_g.dim(1), ErrorKind::Contract, "gated fusion: frame count mismatch");
  return conv2(ops::relu(conv1(ops::concat_last(z_v, z_g))));
}

FusionResult GatedFusion::operator()(const Tensor& z_v, const Tensor& z_g, double temperature,
                                     Rng* rng) const {
  auto w = gumbel_softmax_tokens(logits(z_v, z_g), temperature, rng);
  return {ops::mul(z_v, w), {w, 0}};
}

// ---- selection ----

TokenScorer::TokenScorer(nn::ParameterStore& store, const std::string& name, int c_v, int hidden,
                         Rng& rng)
    : fc1(store, name + ".fc1", c_v, hidden, rng), fc2(store, name + ".fc2", hidden, 1, rng) {}

Tensor TokenScorer::operator()(const Tensor& tokens) const {
  require(tokens.rank() == 3, ErrorKind::Contract, "scorer expects [n, F, C]");
  const auto n = tokens.dim(0), F = tokens.dim(1);
  auto s = ops::reshape(fc2(ops::silu(fc1(tokens))), {n, F});
  return ops::softmax_last(ops::permute(s, {1, 0}));
}

std::vector<std::vector<std::int64_t>> top_d_indices(const Tensor& scores, int d) {
  require(scores.rank() == 2, ErrorKind::Contract, "scores must be [F, n]");
  const auto F = scores.dim(0), n = scores.dim(1);
  require(d >= 0 && d <= n, ErrorKind::Contract, "top-d count out of range");
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(F));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t f = 0; f < F; ++f) {
    const double* row = scores.values().data() + f * n;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [row](std::int64_t a, std::int64_t b) { return row[a] > row[b]; });
    auto& sel = out[static_cast<std::size_t>(f)];
    sel.assign(order.begin(), order.begin() + d);
    std::sort(sel.begin(), sel.end());
  }
  return out;
}

namespace {
std::vector<std::int64_t> complement(const std::vector<std::int64_t>& sel, std::int64_t n) {
  std::vector<std::int64_t> rest;
  rest.reserve(static_cast<std::size_t>(n) - sel.size());
  std::size_t j = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (j < sel.size() && sel[j] == i) {
      ++j;
      continue;
    }
    rest.push_back(i);
  }
  return rest;
}

// Frame-major global row ids f * n + i.
std::vector<std::int64_t> global_rows(const std::vector<std::vector<std::int64_t>>& per_frame,
                                      std::int64_t n) {
  std::vector<std::int64_t> out;
  for (std::size_t f = 0; f < per_frame.size(); ++f)
    for (auto i : per_frame[f]) out.push_back(static_cast<std::int64_t>(f) * n + i);
  return out;
}

Tensor frame_rows(const Tensor& t) {  // [n, F, C] -> [F * n, C]
  return ops::reshape(ops::permute(t, {1, 0, 2}), {t.dim(1) * t.dim(0), t.dim(2)});
}

Tensor token_major(const Tensor& rows, std::int64_t F, std::int64_t n) {  // [F * n, C] -> [n, F, C]
  return ops::permute(ops::reshape(rows, {F, n, rows.dim(1)}), {1, 0, 2});
}
}  // namespace

TokenBundle select_causal_tokens(const Tensor& adapted, const Tensor& fused,
                                 const Tensor& scores) {
  require(fused.rank() == 3, ErrorKind::Contract, "fused tokens must be [n, F, C]");
  const auto n = fused.dim(0), F = fused.dim(1);
  require(n >= 4, ErrorKind::Contract, "token selection needs at least 4 tokens per frame");
  require(scores.rank() == 2 && scores.dim(0) == F && scores.dim(1) == n, ErrorKind::Contract,
          "scores must be [F, n]");
  TokenBundle b;
  b.adapted = adapted;
  b.fused = fused;
  b.scores = scores;
  b.n_v = static_cast<int>(n);
  b.frames = static_cast<int>(F);
  b.d = static_cast<int>(n / 4);
  b.causal_indices = top_d_indices(scores, b.d);
  for (const auto& sel : b.causal_indices) b.background_indices.push_back(complement(sel, n));

  auto rows = ops::straight_through_rows(frame_rows(fused), ops::reshape(scores, {F * n}));
  const auto gc = global_rows(b.causal_indices, n);
  const auto gb = global_rows(b.background_indices, n);
  b.causal = token_major(ops::gather_rows(rows, gc), F, b.d);
  b.background = token_major(ops::gather_rows(rows, gb), F, n - b.d);
  return b;
}

Tensor recombine(const Tensor& causal, const Tensor& background, const TokenBundle& layout) {
  const std::int64_t n = layout.n_v, F = layout.frames;
  require(causal.rank() == 3 && causal.dim(0) == layout.d && causal.dim(1) == F,
          ErrorKind::Contract, "recombine: causal tokens do not match the bundle");
  require(background.rank() == 3 && background.dim(0) == n - layout.d && background.dim(1) == F,
          ErrorKind::Contract, "recombine: background tokens do not match the bundle");
  const auto gc = global_rows(layout.causal_indices, n);
  const auto gb = global_rows(layout.background_indices, n);
  auto rows = ops::merge_rows(frame_rows(causal), gc, frame_rows(background), gb, F * n);
  return token_major(rows, F, n);
}

Tensor recombine(const TokenBundle& bundle) {
  return recombine(bundle.causal, bundle.background, bundle);
}

// ---- intervention ----

Intervention token_intervention(const Tensor& background, double fraction, Rng& rng) {
  require(fraction > 0.0 && fraction < 1.0, ErrorKind::Config,
          "intervention fraction must lie in (0, 1)");
  require(background.rank() == 3 && background.dim(0) >= 1, ErrorKind::Contract,
          "intervention needs a nonempty [m, F, C] token set");
  const auto m = background.dim(0), F = background.dim(1), C = background.dim(2);
  const auto r = static_cast<std::int64_t>(std::floor(fraction * static_cast<double>(m)));
  Intervention out;
  out.replaced.resize(static_cast<std::size_t>(F));
  if (r == 0) {
    out.tokens = background;
    return out;
  }
  std::vector<std::int64_t> pool(static_cast<std::size_t>(m));
  std::vector<std::vector<std::int64_t>> kept(static_cast<std::size_t>(F));
  for (std::int64_t f = 0; f < F; ++f) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::int64_t i = 0; i < r; ++i) {
      const auto j = rng.uniform_int(i, m - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    auto& rep = out.replaced[static_cast<std::size_t>(f)];
    rep.assign(pool.begin(), pool.begin() + r);
    std::sort(rep.begin(), rep.end());
    kept[static_cast<std::size_t>(f)] = complement(rep, m);
  }
  auto noise = Tensor::constant({F * r, C}, rng.normal_vector(static_cast<std::size_t>(F * r * C)));
  const auto gk = global_rows(kept, m);
  const auto gr = global_rows(out.replaced, m);
  auto rows = frame_rows(background);
  out.tokens = token_major(ops::merge_rows(ops::gather_rows(rows, gk), gk, noise, gr, F * m), F, m);
  return out;
}

// ---- answer head ----

Tensor score_answers(const Tensor& pooled, const EncodedAra& ara) {
  const auto D = pooled.numel();
  std::vector<double> a(static_cast<std::size_t>(D * kAnswerCount), 0.0);  // [D, 5]
  for (int x = 0; x < kAnswerCount; ++x) {
    const auto& t = ara.answers[x];
    require(t.defined() && t.rank() == 2 && t.dim(1) == D && t.dim(0) >= 1, ErrorKind::Contract,
            "answer embedding " + std::to_string(x) + " does not match the pooled width");
    const auto L = t.dim(0);
    for (std::int64_t i = 0; i < L; ++i)
      for (std::int64_t c = 0; c < D; ++c) a[c * kAnswerCount + x] += t.at(i * D + c) / L;
  }
  auto logits = ops::matmul(ops::reshape(pooled, {1, D}),
                            Tensor::constant({D, kAnswerCount}, std::move(a)));
  return ops::scale(ops::reshape(logits, {kAnswerCount}), 1.0 / std::sqrt(static_cast<double>(D)));
}

Tensor answer_logits(const Tensor& tokens, const EncodedAra& ara, const nn::Attention& ca) {
  require(tokens.defined() && tokens.rank() >= 2 && tokens.numel() > 0, ErrorKind::Contract,
          "answer_logits: empty token set");
  require(ara.question.defined() && ara.question.rank() == 2, ErrorKind::Contract,
          "answer_logits: missing question embedding");
  const auto C = tokens.shape().back();
  auto ctx = ops::reshape(tokens, {tokens.numel() / C, C});
  const auto Lq = ara.question.dim(0), D = ara.question.dim(1);
  auto o = ca.cross_attend(ops::reshape(ara.question, {1, Lq, D}), ctx);
  return score_answers(ops::mean_rows(ops::reshape(o, {Lq, D})), ara);
}

AraParts loss_ara_parts(const Tensor& causal_logits, const Tensor& bg_logits,
                        const Tensor& bg_do_logits, int correct) {
  for (const auto* t : {&causal_logits, &bg_logits, &bg_do_logits})
    require(t->defined() && t->numel() == kAnswerCount, ErrorKind::Contract,
            "ArA logits must have 5 entries");
  require(correct >= 0 && correct < kAnswerCount, ErrorKind::Contract, "correct index out of range");
  auto flat = [](const Tensor& t) { return ops::reshape(t, {kAnswerCount}); };
  std::vector<double> onehot(kAnswerCount, 0.0), uniform(kAnswerCount, 0.25);
  onehot[correct] = 1.0;
  uniform[correct] = 0.0;
  auto lc = ops::log_softmax_last(flat(causal_logits));
  auto lb = ops::log_softmax_last(flat(bg_logits));
  auto ld = ops::log_softmax_last(flat(bg_do_logits));
  AraParts p;
  p.xe_causal = ops::scale(ops::dot(lc, Tensor::constant({kAnswerCount}, onehot)), -1.0);
  p.xe_background = ops::scale(ops::dot(lb, Tensor::constant({kAnswerCount}, uniform)), -1.0);
  p.kld = ops::dot(ops::exp(lb), ops::sub(lb, ld));
  p.total = ops::add(ops::add(p.xe_causal, p.xe_background), p.kld);
  return p;
}

Tensor loss_ara(const Tensor& causal_logits, const Tensor& bg_logits, const Tensor& bg_do_logits,
                int correct) {
  return loss_ara_parts(causal_logits, bg_logits, bg_do_logits, correct).total;
}

Tensor loss_st2(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& ara, double gamma) {
  return ops::add(diffusion::loss_mse(e_f, e_f_hat), ops::scale(ara, gamma));
}

// ---- blocks ----

CtsBlock::CtsBlock(nn::ParameterStore& store, const std::string& prefix, const LayerGeometry& g,
                   const CausalConfig& cfg, Rng& init)
    : cfg_(cfg),
      adaptor_(store, prefix + "adaptor", g.channels, cfg.c_v, init),
      inverse_(store, prefix + "inverse", cfg.c_v, g.channels, init, true),
      fusion_(store, prefix + "fuse", cfg.c_v, cfg.c_v, init),
      scorer_(store, prefix + "score", cfg.c_v, cfg.scorer_hidden, init) {
  cfg_.validate();
}

Tensor CtsBlock::reenter(const Tensor& z, const Tensor& recombined, const LayerGeometry& g) const {
  return ops::add(z, inverse_adaptor(recombined, g, inverse_));
}

CtsBlock::Output CtsBlock::forward(const Tensor& z, const LayerGeometry& g,
                                   const Tensor& gaze_tokens, Rng* rng) const {
  require(gaze_tokens.defined() && gaze_tokens.rank() == 3 && gaze_tokens.dim(0) == cfg_.n_v &&
              gaze_tokens.dim(1) == g.frames && gaze_tokens.dim(2) == cfg_.c_v,
          ErrorKind::Config,
          "CTS at layer " + std::to_string(g.layer) + " needs gaze tokens [" +
              std::to_string(cfg_.n_v) + ", " + std::to_string(g.frames) + ", " +
              std::to_string(cfg_.c_v) + "]");
  auto adapted = sampling_adaptor(z, g, cfg_.n_v, adaptor_);
  auto fusion = fusion_(adapted, gaze_tokens, cfg_.temperature, cfg_.gumbel_noise ? rng : nullptr);
  auto fused = ops::add(adapted, fusion.gated);
  auto bundle = select_causal_tokens(adapted, fused, scorer_(fused));
  auto tokens = reenter(z, recombine(bundle), g);
  return {tokens, std::move(bundle)};
}

CtgBlock::CtgBlock(nn::ParameterStore& store, const std::string& prefix, const LayerGeometry& g,
                   int text_dim, const CausalConfig& cfg, Rng& init)
    : cfg_(cfg),
      cts_(store, prefix + "cts.", g, cfg, init),
      ca_(store, prefix + "ca", text_dim, cfg.c_v, 1, init) {}

CtgBlock::Output CtgBlock::forward(const Tensor& z, const LayerGeometry& g,
                                   const Tensor& gaze_tokens, const EncodedAra& ara,
                                   Rng& rng) const {
  auto base = cts_.forward(z, g, gaze_tokens, &rng);
  Output out;
  out.tokens = base.tokens;
  out.intervention = token_intervention(base.bundle.background, cfg_.intervention_fraction, rng);
  out.causal_logits = answer_logits(base.bundle.causal, ara, ca_);
  out.bg_logits = answer_logits(base.bundle.background, ara, ca_);
  out.bg_do_logits = answer_logits(out.intervention.tokens, ara, ca_);
  out.ara = loss_ara_parts(out.causal_logits, out.bg_logits, out.bg_do_logits, ara.correct);
  out.bundle = std::move(base.bundle);
  return out;
}

// ---- attachment ----

const char* to_string(BlockKind kind) { return kind == BlockKind::Cts ? "cts" : "ctg"; }

BlockKind parse_block_kind(const std::string& name) {
  if (name == "cts") return BlockKind::Cts;
  if (name == "ctg") return BlockKind::Ctg;
  raise(ErrorKind::Config, "unknown block kind '" + name + "' (expected cts or ctg)");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"full",        "no_gaze",     "no_cts_ctg",
                                              "downscale_off", "upscale_off", "ctg_only"};
  return names;
}

Preset make_preset(const std::string& name, int L) {
  require(L >= 1, ErrorKind::Config, "preset needs at least one layer");
  const int last_down = (L - 1) / 2 + 1;  // 1-based
  Preset p;
  p.name = name;
  auto cts_if = [&](auto keep) {
    for (int l = 1; l < L; ++l)
      if (keep(l)) p.blocks.emplace_back(l, BlockKind::Cts);
    p.blocks.emplace_back(L, BlockKind::Ctg);
  };
  if (name == "full") {
    cts_if([](int) { return true; });
  } else if (name == "no_gaze") {
    cts_if([](int) { return true; });
    p.zero_gaze = true;
  } else if (name == "no_cts_ctg") {
  } else if (name == "downscale_off") {
    cts_if([&](int l) { return l > last_down; });
  } else if (name == "upscale_off") {
    cts_if([&](int l) { return l <= last_down; });
  } else if (name == "ctg_only") {
    cts_if([](int) { return false; });
  } else {
    std::string all;
    for (const auto& n : preset_names()) all += (all.empty() ? "" : ", ") + n;
    raise(ErrorKind::Config, "unknown hooks preset '" + name + "' (expected one of " + all + ")");
  }
  return p;
}

const std::vector<std::string>& block_prefixes() {
  static const std::vector<std::string> p{"cts.", "ctg."};
  return p;
}

class CausalBlocks::Hook : public backbone::LayerHook {
 public:
  Hook(CausalBlocks* owner, int layer) : owner_(owner), layer_(layer) {}
  StepContext* ctx = nullptr;

  Tensor apply(const Tensor& tokens, const LayerGeometry& g) override {
    require(ctx != nullptr && ctx->rng != nullptr, ErrorKind::Contract,
            "causal hook used without a step context");
    if (owner_->ctg_ && layer_ == owner_->ctg_layer_) {
      require(ctx->ara != nullptr, ErrorKind::Config,
              "CTG at layer " + std::to_string(layer_) + " needs an ArA item");
      auto out = owner_->ctg_->forward(tokens, g, ctx->gaze_tokens, *ctx->ara, *ctx->rng);
      ctx->bundles.emplace_back(layer_, out.bundle);
      auto t = out.tokens;
      ctx->ctg = std::move(out);
      return t;
    }
    auto out = owner_->cts_.at(layer_)->forward(tokens, g, ctx->gaze_tokens, ctx->rng);
    ctx->bundles.emplace_back(layer_, std::move(out.bundle));
    return out.tokens;
  }

 private:
  CausalBlocks* owner_;
  int layer_;
};

CausalBlocks::CausalBlocks(const backbone::UNet3D& model, const Attachment& blocks,
                           const CausalConfig& cfg, int text_dim)
    : cfg_(cfg), attachment_(blocks) {
  cfg_.validate();
  Rng init(mix_seed(cfg_.init_seed, 0xca5));
  const int L = model.config().layers;
  for (const auto& [layer, kind] : blocks) {
    require(layer >= 1 && layer <= L, ErrorKind::Config,
            "block layer " + std::to_string(layer) + " outside [1, " + std::to_string(L) + "]");
    require(!geometry_.count(layer), ErrorKind::Config,
            "more than one block at layer " + std::to_string(layer));
    const auto g = model.geometry(layer);
    geometry_[layer] = g;
    if (kind == BlockKind::Ctg) {
      require(!ctg_, ErrorKind::Config, "at most one CTG block");
      ctg_ = std::make_unique<CtgBlock>(store_, "ctg.", g, text_dim, cfg_, init);
      ctg_layer_ = layer;
    } else {
      cts_[layer] =
          std::make_unique<CtsBlock>(store_, "cts.l" + std::to_string(layer) + ".", g, cfg_, init);
    }
    hook_objects_.push_back(std::make_unique<Hook>(this, layer));
  }
}

CausalBlocks::~CausalBlocks() = default;

const CtsBlock* CausalBlocks::cts(int layer) const {
  auto it = cts_.find(layer);
  return it == cts_.end() ? nullptr : it->second.get();
}

backbone::HookSet CausalBlocks::hooks(StepContext& ctx) {
  backbone::HookSet set;
  std::size_t i = 0;
  for (const auto& [layer, kind] : attachment_) {
    (void)kind;
    auto* h = hook_objects_[i++].get();
    h->ctx = &ctx;
    set[layer] = h;
  }
  return set;
}

}  // namespace cvs::causal
