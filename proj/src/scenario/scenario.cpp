// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "causalvid/error.hpp"
#include "causalvid/json_config.hpp"
#include "causalvid/image.hpp"
#include "causalvid/rng.hpp"

namespace cvs::scenario {

namespace {

// Independent streams per aspect of a clip.
constexpr std::uint64_t kStreamBackground = 0xb6;
constexpr std::uint64_t kStreamTrajectory = 0x7a1;
constexpr std::uint64_t kStreamClass = 0xc1a;
constexpr std::uint64_t kStreamTiming = 0x71e;
constexpr std::uint64_t kStreamText = 0x7e4;
constexpr std::uint64_t kStreamGaze = 0x6a2e;

std::string numbered(const char* prefix, int i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%05d%s", prefix, i, suffix);
  return buf;
}

}  // namespace

// ---- config ----

void ScenarioConfig::validate() const {
  auto bad = [](const std::string& m) { raise(ErrorKind::Config, "scenario: " + m); };
  if (frames < 2) bad("need at least 2 frames");
  if (height < 8 || width < 8) bad("frames must be at least 8x8");
  double total = 0.0;
  for (double w : class_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) bad("class weights must be finite and nonnegative");
    total += w;
  }
  if (!(total > 0.0)) bad("class weights sum to zero");
  if (collision_frame != -1 && (collision_frame < 1 || collision_frame > frames - 1))
    bad("collision frame must lie in [1, F-1]");
  if (gaze_jitter < 0.0) bad("gaze jitter must be nonnegative");
  if (gaze_kernel < 1) bad("gaze kernel must be positive");
  if (gaze_hz < 1 || fps < 1) bad("rates must be positive");
}

nlohmann::json ScenarioConfig::to_json() const {
  return {{"frames", frames},         {"height", height},
          {"width", width},           {"class_weights", class_weights},
          {"collision_frame", collision_frame}, {"gaze_jitter", gaze_jitter},
          {"gaze_kernel", gaze_kernel}, {"gaze_hz", gaze_hz},
          {"fps", fps}};
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"frames", "height", "width", "class_weights", "collision_frame", "gaze_jitter", "gaze_kernel",
                  "gaze_hz", "fps"},
                 "scenario config");
  ScenarioConfig c;
  try {
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    if (j.contains("class_weights")) {
      const auto w = j.at("class_weights").get<std::vector<double>>();
      require(w.size() == kEntityClassCount, ErrorKind::Config,
              "scenario: class_weights needs 5 entries");
      std::copy(w.begin(), w.end(), c.class_weights.begin());
    }
    c.collision_frame = j.value("collision_frame", c.collision_frame);
    c.gaze_jitter = j.value("gaze_jitter", c.gaze_jitter);
    c.gaze_kernel = j.value("gaze_kernel", c.gaze_kernel);
    c.gaze_hz = j.value("gaze_hz", c.gaze_hz);
    c.fps = j.value("fps", c.fps);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string("scenario config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- text ----

const std::vector<std::string>& reason_templates(EntityClass c) {
  static const std::array<std::vector<std::string>, kEntityClassCount> t{{
      {"a pedestrian suddenly crosses the road in front of the ego vehicle",
       "a pedestrian steps out from the roadside without looking",
       "a pedestrian runs across the street against the signal",
       "a pedestrian walks out from behind a parked vehicle",
       "a distracted pedestrian wanders into the driving lane"},
      {"a cyclist swerves across the lane ahead of the ego vehicle",
       "a cyclist rides out from a side path into traffic",
       "a cyclist turns left across the road without signaling",
       "a cyclist loses balance and falls into the lane",
       "a cyclist runs the red light at the crossing"},
      {"a motorbike speeds toward the ego vehicle from ahead",
       "a motorbike overtakes and cuts in too closely",
       "a motorbike weaves between lanes at high speed",
       "a motorbike pulls out from a junction without stopping",
       "a motorbike drifts into the wrong lane on a bend"},
      {"a car merges into the ego lane without signaling",
       "a car changes lanes abruptly in front of the ego vehicle",
       "a car pulls out of a parking spot into traffic",
       "a car runs a stop sign at the intersection",
       "a car makes a sudden u turn across the road"},
      {"a truck brakes hard directly ahead of the ego vehicle",
       "a truck stops suddenly in the ego lane",
       "a truck reverses out of a loading bay into the road",
       "a truck swings wide while turning at the corner",
       "a truck drops its load onto the lane ahead"},
  }};
  return t[static_cast<int>(c)];
}

const std::vector<std::string>& avoidance_actions() {
  static const std::vector<std::string> a{
      "the ego vehicle brakes early", "the ego vehicle slows down and keeps distance",
      "the ego vehicle steers away in time", "the ego driver yields and stops"};
  return a;
}

std::string forward_prompt(EntityClass c, int reason) {
  const auto& r = reason_templates(c);
  require(reason >= 0 && reason < static_cast<int>(r.size()), ErrorKind::Range, "reason index");
  return r[static_cast<std::size_t>(reason)] + " and the ego vehicle crashes into the " +
         entity_word(c);
}

std::string backward_prompt(EntityClass c, int action) {
  const auto& a = avoidance_actions();
  require(action >= 0 && action < static_cast<int>(a.size()), ErrorKind::Range, "action index");
  return a[static_cast<std::size_t>(action)] + " to avoid hitting the " + entity_word(c);
}

std::string swap_entity_word(const std::string& text, EntityClass from, EntityClass to) {
  const std::string f = entity_word(from), t = entity_word(to);
  std::string out;
  std::size_t i = 0;
  auto is_word = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; };
  while (i < text.size()) {
    if (text.compare(i, f.size(), f) == 0 && (i == 0 || !is_word(text[i - 1])) &&
        (i + f.size() == text.size() || !is_word(text[i + f.size()]))) {
      out += t;
      i += f.size();
    } else {
      out += text[i++];
    }
  }
  return out;
}

// ---- geometry ----

Box ego_zone(int height, int width) {
  return {width * 3 / 8, height * 3 / 4, (width * 5 + 7) / 8, height};
}

namespace {

struct Shape {
  double cx, cy, w, h;
};

double lerp(double a, double b, double t) { return a + (b - a) * t; }
double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Class motion profiles, t in [0, 1] from clip start to the collision.
Shape entity_shape(EntityClass c, double t, double side, double off, double W, double H) {
  const double s = W / 32.0, mid = W / 2.0;
  switch (c) {
    case EntityClass::Pedestrian:  // lateral crossing
      return {lerp(mid + side * 0.45 * W, mid + off * 0.03 * W, t), lerp(0.70 * H, 0.80 * H, t),
              3.0 * s, lerp(5.0, 6.0, t) * s};
    case EntityClass::Cyclist:  // diagonal cut-in from the roadside
      return {lerp(mid + side * 0.45 * W, mid + side * 0.05 * W, t), lerp(0.55 * H, 0.82 * H, t),
              lerp(3.0, 4.0, t) * s, lerp(4.0, 5.0, t) * s};
    case EntityClass::Motorbike:  // fast head-on approach
      return {lerp(mid + side * 0.10 * W, mid + off * 0.03 * W, t * t),
              lerp(0.42 * H, 0.85 * H, t * t), lerp(1.5, 5.0, t * t) * s, lerp(2.0, 6.0, t * t) * s};
    case EntityClass::Car: {  // lane-merge arc
      const double u = smoothstep(t);
      return {lerp(mid + side * 0.28 * W, mid + off * 0.03 * W, u), lerp(0.45 * H, 0.82 * H, t),
              lerp(3.0, 9.0, t) * s, lerp(2.0, 6.0, t) * s};
    }
    case EntityClass::Truck: {  // braking ahead
      const double u = std::sqrt(t);
      return {mid + side * 0.05 * W, lerp(0.42 * H, 0.78 * H, u), lerp(4.0, 12.0, u) * s,
              lerp(4.0, 10.0, u) * s};
    }
  }
  return {mid, H / 2, s, s};
}

Box to_box(const Shape& sh, int W, int H) {
  const int w = std::max(1, static_cast<int>(std::lround(sh.w)));
  const int h = std::max(1, static_cast<int>(std::lround(sh.h)));
  const int x0 = static_cast<int>(std::lround(sh.cx - sh.w / 2.0));
  const int y0 = static_cast<int>(std::lround(sh.cy - sh.h / 2.0));
  Box b{x0, y0, x0 + w, y0 + h};
  return intersect(b, Box{0, 0, W, H});
}

struct RgbD {
  int r, g, b;
};

RgbD jitter(Rng& rng, RgbD base, int amount) {
  auto j = [&](int v) {
    return std::clamp(v + static_cast<int>(rng.uniform_int(-amount, amount)), 0, 255);
  };
  return {j(base.r), j(base.g), j(base.b)};
}

// Ego-forward background: sky, verges, a perspective road with a dashed
// center line scrolling toward the camera and roadside poles approaching.
std::vector<std::uint8_t> render_background(std::uint64_t seed, const ScenarioConfig& cfg) {
  const int F = cfg.frames, H = cfg.height, W = cfg.width;
  Rng rng(mix_seed(seed, kStreamBackground));
  const RgbD sky = jitter(rng, {150, 175, 200}, 10);
  const RgbD verge = jitter(rng, {75, 115, 70}, 8);
  const RgbD road = jitter(rng, {85, 85, 90}, 6);
  const RgbD paint{235, 235, 235};
  const RgbD pole = jitter(rng, {120, 90, 60}, 8);
  const int horizon = static_cast<int>(std::lround(0.375 * H)) + static_cast<int>(rng.uniform_int(-1, 1));
  const double phase = rng.uniform() * 2.0;
  const double speed = 0.25 + 0.15 * rng.uniform();
  struct Pole {
    double z0, side;
  };
  std::vector<Pole> poles;
  for (int i = 0; i < 4; ++i) poles.push_back({1.5 + 4.5 * rng.uniform(), i % 2 ? 1.0 : -1.0});

  std::vector<std::uint8_t> px(static_cast<std::size_t>(F) * H * W * 3);
  for (int f = 0; f < F; ++f) {
    auto put = [&](int x, int y, RgbD c) {
      if (x < 0 || x >= W || y < 0 || y >= H) return;
      auto* p = &px[((static_cast<std::size_t>(f) * H + y) * W + x) * 3];
      p[0] = static_cast<std::uint8_t>(c.r);
      p[1] = static_cast<std::uint8_t>(c.g);
      p[2] = static_cast<std::uint8_t>(c.b);
    };
    for (int y = 0; y < H; ++y) {
      const double depth = static_cast<double>(y - horizon + 1) / (H - horizon);
      const double half = W * (0.06 + 0.44 * std::max(0.0, depth));
      const double lane = std::max(0.5, 0.03 * W * depth);
      const bool dash =
          std::fmod(std::log(std::max(1, y - horizon + 1)) * 3.0 - f * speed + phase + 100.0, 2.0) < 1.0;
      for (int x = 0; x < W; ++x) {
        if (y < horizon) {
          put(x, y, sky);
          continue;
        }
        const double dx = std::abs(x + 0.5 - W / 2.0);
        if (dx > half)
          put(x, y, verge);
        else if (dash && dx < lane)
          put(x, y, paint);
        else
          put(x, y, road);
      }
    }
    for (const auto& p : poles) {
      double z = p.z0 - f * 0.2;
      while (z < 1.0) z += 5.0;
      const int base = horizon + static_cast<int>(std::lround(H * 0.55 / z));
      const int height = std::max(1, static_cast<int>(std::lround(H * 0.5 / z)));
      const int x = static_cast<int>(std::lround(W / 2.0 + p.side * W * 0.7 / z));
      const int w = std::max(1, static_cast<int>(std::lround(W * 0.05 / z)));
      for (int y = base - height; y < base; ++y)
        for (int xx = x; xx < x + w; ++xx) put(xx, y, pole);
    }
  }
  return px;
}

}  // namespace

EntityClass draw_entity_class(std::uint64_t seed, const ScenarioConfig& cfg) {
  Rng rng(mix_seed(seed, kStreamClass));
  double total = 0.0;
  for (double w : cfg.class_weights) total += w;
  double u = rng.uniform() * total;
  for (int k = 0; k < kEntityClassCount; ++k) {
    if (u < cfg.class_weights[k]) return kAllEntityClasses[k];
    u -= cfg.class_weights[k];
  }
  for (int k = kEntityClassCount - 1; k >= 0; --k)
    if (cfg.class_weights[k] > 0) return kAllEntityClasses[k];
  return EntityClass::Pedestrian;
}

std::vector<Box> entity_tube(std::uint64_t seed, const ScenarioConfig& cfg, EntityClass c,
                             int collision_frame) {
  Rng rng(mix_seed(seed, kStreamTrajectory));
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double off = 2.0 * rng.uniform() - 1.0;
  const double pace = 0.8 + 0.4 * rng.uniform();
  std::vector<Box> boxes;
  for (int f = 0; f < cfg.frames; ++f) {
    const double t = std::pow(std::min(1.0, static_cast<double>(f) / collision_frame), pace);
    boxes.push_back(to_box(entity_shape(c, t, side, off, cfg.width, cfg.height), cfg.width, cfg.height));
  }
  return boxes;
}

ClipRecord generate_scenario(std::uint64_t seed, const ScenarioConfig& cfg,
                             std::optional<EntityClass> force_class) {
  cfg.validate();
  const int F = cfg.frames, H = cfg.height, W = cfg.width;
  ClipRecord rec;
  rec.meta.seed = seed;
  rec.meta.entity = force_class ? *force_class : draw_entity_class(seed, cfg);
  {
    Rng rng(mix_seed(seed, kStreamTiming));
    rec.meta.collision_frame =
        cfg.collision_frame >= 1 ? cfg.collision_frame : static_cast<int>(rng.uniform_int(F / 2, F - 1));
    rec.meta.collision_frame = std::max(1, rec.meta.collision_frame);
  }
  const EntityClass cls = rec.meta.entity;
  rec.boxes = entity_tube(seed, cfg, cls, rec.meta.collision_frame);

  auto px = render_background(seed, cfg);
  const Rgb col = entity_color(cls);
  for (int f = 0; f < F; ++f) {
    const Box& b = rec.boxes[static_cast<std::size_t>(f)];
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        auto* p = &px[((static_cast<std::size_t>(f) * H + y) * W + x) * 3];
        p[0] = col.r;
        p[1] = col.g;
        p[2] = col.b;
      }
  }
  std::vector<double> frames(static_cast<std::size_t>(F) * 3 * H * W);
  for (int f = 0; f < F; ++f)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < H * W; ++p)
        frames[(static_cast<std::size_t>(f) * 3 + c) * H * W + p] =
            from_u8_signed(px[(static_cast<std::size_t>(f) * H * W + p) * 3 + c]);
  rec.frames = ag::Tensor::constant({F, 3, H, W}, std::move(frames));

  // Text: one correct reason plus one distractor from each other class.
  {
    Rng rng(mix_seed(seed, kStreamText));
    const auto& mine = reason_templates(cls);
    rec.meta.reason = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(mine.size()) - 1));
    const int action =
        static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(avoidance_actions().size()) - 1));
    std::vector<std::string> distractors;
    for (auto other : kAllEntityClasses) {
      if (other == cls) continue;
      const auto& r = reason_templates(other);
      distractors.push_back(r[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(r.size()) - 1))]);
    }
    for (std::size_t i = distractors.size(); i > 1; --i)
      std::swap(distractors[i - 1],
                distractors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    rec.prompt_f = forward_prompt(cls, rec.meta.reason);
    rec.prompt_r = backward_prompt(cls, action);
    rec.ara.question = kQuestion;
    rec.ara.correct = 0;
    rec.ara.answers[0] = mine[static_cast<std::size_t>(rec.meta.reason)];
    for (int i = 0; i < 4; ++i) rec.ara.answers[i + 1] = distractors[static_cast<std::size_t>(i)];
  }

  // Gaze: a fixation stream on the entity center, accumulated and rendered.
  {
    Rng rng(mix_seed(seed, kStreamGaze));
    auto& log = rec.fixations;
    log.source_width = W;
    log.source_height = H;
    for (std::int64_t i = 0;; ++i) {
      const std::int64_t t = i * 1000 / cfg.gaze_hz;
      const std::int64_t f = t * cfg.fps / 1000;
      if (f >= F) break;
      const Box& b = rec.boxes[static_cast<std::size_t>(f)];
      const double cx = 0.5 * (b.x0 + b.x1) - 0.5 + cfg.gaze_jitter * rng.normal();
      const double cy = 0.5 * (b.y0 + b.y1) - 0.5 + cfg.gaze_jitter * rng.normal();
      log.records.push_back({t, std::clamp(static_cast<int>(std::lround(cx)), 0, W - 1),
                             std::clamp(static_cast<int>(std::lround(cy)), 0, H - 1), "synthetic"});
    }
    auto acc = gaze::accumulate_fixations(log, cfg.fps, F);
    auto maps = gaze::render_sequence(acc, H, W, cfg.gaze_kernel);
    std::vector<double> q(maps.values().begin(), maps.values().end());
    for (auto& v : q) v = from_u8_unit(to_u8_unit(v));
    rec.gaze = ag::Tensor::constant({F, H, W}, std::move(q));
  }
  return rec;
}

ClipRecord reverse_clip(const ClipRecord& rec) {
  require(rec.frames.defined() && rec.frames.rank() == 4, ErrorKind::Contract,
          "reverse_clip: record has no frames");
  const auto F = rec.frames.dim(0);
  auto flip = [F](const ag::Tensor& t) {
    const std::int64_t per = t.numel() / F;
    std::vector<double> v(t.values().size());
    for (std::int64_t f = 0; f < F; ++f)
      std::copy_n(t.values().begin() + f * per, per, v.begin() + (F - 1 - f) * per);
    return ag::Tensor::constant(t.shape(), std::move(v));
  };
  ClipRecord r = rec;
  r.frames = flip(rec.frames);
  if (rec.gaze.defined()) r.gaze = flip(rec.gaze);
  std::reverse(r.boxes.begin(), r.boxes.end());
  r.meta.collision_frame = static_cast<int>(F) - 1 - rec.meta.collision_frame;
  r.meta.reversed = !rec.meta.reversed;
  return r;
}

// ---- clip directories ----

namespace {

std::string boxes_to_string(const std::vector<Box>& boxes) {
  std::ostringstream os;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    os << (i ? ";" : "") << boxes[i].x0 << ',' << boxes[i].y0 << ',' << boxes[i].x1 << ','
       << boxes[i].y1;
  return os.str();
}

std::vector<Box> boxes_from_string(const std::string& s, const std::string& where) {
  std::vector<Box> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    Box b;
    char c1, c2, c3;
    std::istringstream is(item);
    require(static_cast<bool>(is >> b.x0 >> c1 >> b.y0 >> c2 >> b.x1 >> c3 >> b.y1) && c1 == ',' &&
                c2 == ',' && c3 == ',',
            ErrorKind::Malformed, where + ": bad box '" + item + "'");
    out.push_back(b);
  }
  return out;
}

void check_field(const std::string& v, const std::string& key) {
  require(v.find_first_of("\t\n\r") == std::string::npos, ErrorKind::Contract,
          key + " must not contain tabs or line breaks");
}

}  // namespace

void write_clip(const ClipRecord& rec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(rec.frames.defined() && rec.frames.rank() == 4 && rec.frames.dim(1) == 3,
          ErrorKind::Contract, "write_clip: frames must be [F, 3, H, W]");
  std::error_code ec;
  fs::create_directories(dir / "frames", ec);
  fs::create_directories(dir / "gaze", ec);
  require(!ec, ErrorKind::Io, "cannot create clip directory " + dir.string() + ": " + ec.message());
  const int F = rec.frame_count();
  for (int f = 0; f < F; ++f) write_image(frame_image(rec.frames, f), dir / "frames" / numbered("", f, ".ppm"));
  if (rec.gaze.defined())
    for (int f = 0; f < F; ++f)
      write_image(map_image(rec.gaze, f), dir / "gaze" / numbered("gaze_", f, ".pgm"));
  if (!rec.fixations.records.empty()) gaze::write_fixation_log(rec.fixations, dir / "fixations.csv");

  std::ofstream out(dir / "meta");
  require(out.good(), ErrorKind::Io, "cannot write " + (dir / "meta").string());
  auto kv = [&](const std::string& k, const std::string& v) {
    check_field(v, k);
    out << k << '=' << v << '\n';
  };
  kv("format", "causalvid-clip-v1");
  kv("frames", std::to_string(F));
  kv("height", std::to_string(rec.frames.dim(2)));
  kv("width", std::to_string(rec.frames.dim(3)));
  kv("entity", entity_word(rec.meta.entity));
  kv("seed", std::to_string(rec.meta.seed));
  kv("collision_frame", std::to_string(rec.meta.collision_frame));
  kv("reason", std::to_string(rec.meta.reason));
  kv("reversed", rec.meta.reversed ? "1" : "0");
  kv("prompt_f", rec.prompt_f);
  kv("prompt_r", rec.prompt_r);
  kv("question", rec.ara.question);
  for (int i = 0; i < kAnswers; ++i) kv("answer" + std::to_string(i + 1), rec.ara.answers[i]);
  kv("correct", std::to_string(rec.ara.correct));
  kv("boxes", boxes_to_string(rec.boxes));
  require(out.good(), ErrorKind::Io, "failed writing clip meta");
}

ClipRecord read_clip(const std::filesystem::path& dir, int gaze_kernel, ClipInputs need) {
  namespace fs = std::filesystem;
  const auto meta_path = dir / "meta";
  std::ifstream in(meta_path);
  require(in.good(), ErrorKind::MissingFile, "missing clip meta " + meta_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Malformed,
            meta_path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    require(it != kv.end(), ErrorKind::Malformed, meta_path.string() + ": missing key '" + k + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& k) {
    try {
      return std::stoll(get(k));
    } catch (const std::logic_error&) {
      raise(ErrorKind::Malformed, meta_path.string() + ": key '" + k + "' is not an integer");
    }
  };
  ClipRecord rec;
  const int F = static_cast<int>(get_int("frames"));
  const int H = static_cast<int>(get_int("height"));
  const int W = static_cast<int>(get_int("width"));
  require(F >= 1 && H >= 1 && W >= 1, ErrorKind::Malformed, meta_path.string() + ": bad dimensions");
  auto cls = parse_entity(get("entity"));
  require(cls.has_value(), ErrorKind::Malformed, meta_path.string() + ": unknown entity '" + get("entity") + "'");
  rec.meta.entity = *cls;
  rec.meta.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
  rec.meta.collision_frame = static_cast<int>(get_int("collision_frame"));
  rec.meta.reason = kv.count("reason") ? static_cast<int>(get_int("reason")) : 0;
  rec.meta.reversed = kv.count("reversed") && kv["reversed"] == "1";
  rec.prompt_f = get("prompt_f");
  rec.prompt_r = get("prompt_r");
  const bool frames_only = need == ClipInputs::FramesOnly;
  if (!frames_only || kv.count("question")) {
    rec.ara.question = get("question");
    for (int i = 0; i < kAnswers; ++i) rec.ara.answers[i] = get("answer" + std::to_string(i + 1));
    rec.ara.correct = static_cast<int>(get_int("correct"));
    require(rec.ara.correct >= 0 && rec.ara.correct < kAnswers, ErrorKind::Malformed,
            meta_path.string() + ": correct index out of range");
  }
  rec.boxes = boxes_from_string(kv.count("boxes") ? kv["boxes"] : "", meta_path.string());
  require(rec.boxes.empty() || static_cast<int>(rec.boxes.size()) == F, ErrorKind::Malformed,
          meta_path.string() + ": box count does not match the frame count");

  std::vector<double> frames(static_cast<std::size_t>(F) * 3 * H * W);
  for (int f = 0; f < F; ++f) {
    const auto img = read_image(dir / "frames" / numbered("", f, ".ppm"));
    require(img.width == W && img.height == H && img.channels == 3, ErrorKind::Malformed,
            "frame " + std::to_string(f) + " of " + dir.string() + " has the wrong size");
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < H * W; ++p)
        frames[(static_cast<std::size_t>(f) * 3 + c) * H * W + p] = from_u8_signed(img.data[p * 3 + c]);
  }
  rec.frames = ag::Tensor::constant({F, 3, H, W}, std::move(frames));

  if (fs::exists(dir / "fixations.csv")) rec.fixations = gaze::read_fixation_log(dir / "fixations.csv", W, H);
  if (fs::exists(dir / "gaze" / numbered("gaze_", 0, ".pgm"))) {
    std::vector<double> maps(static_cast<std::size_t>(F) * H * W);
    for (int f = 0; f < F; ++f) {
      const auto img = read_image(dir / "gaze" / numbered("gaze_", f, ".pgm"));
      require(img.width == W && img.height == H && img.channels == 1, ErrorKind::Malformed,
              "gaze map " + std::to_string(f) + " of " + dir.string() + " has the wrong size");
      for (int p = 0; p < H * W; ++p) maps[static_cast<std::size_t>(f) * H * W + p] = from_u8_unit(img.data[p]);
    }
    rec.gaze = ag::Tensor::constant({F, H, W}, std::move(maps));
  } else if (!rec.fixations.records.empty()) {
    auto acc = gaze::accumulate_fixations(rec.fixations, 30, F);
    rec.gaze = gaze::render_sequence(acc, H, W, gaze_kernel);
  } else if (!frames_only) {
    raise(ErrorKind::DanglingPath, dir.string() + ": no gaze maps or fixation log");
  }
  return rec;
}

// ---- manifests ----

bool ManifestRecord::operator==(const ManifestRecord& o) const {
  return clip_dir == o.clip_dir && gaze_dir == o.gaze_dir && split == o.split && entity == o.entity &&
         prompt_f == o.prompt_f && prompt_r == o.prompt_r && ara.question == o.ara.question &&
         ara.answers == o.ara.answers && ara.correct == o.ara.correct;
}

namespace {
const char* const kColumns =
    "clip_dir\tgaze_dir\tsplit\tentity\tprompt_f\tprompt_r\tquestion\tanswer1\tanswer2\tanswer3\t"
    "answer4\tanswer5\tcorrect";
constexpr std::size_t kFieldCount = 13;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto t = line.find('\t', start);
    out.push_back(line.substr(start, t == std::string::npos ? std::string::npos : t - start));
    if (t == std::string::npos) break;
    start = t + 1;
  }
  return out;
}
}  // namespace

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ostringstream os;
  os << kManifestMagic << "\tv1\tcount=" << records.size() << '\n' << kColumns << '\n';
  for (const auto& r : records) {
    const std::vector<std::string> fields{r.clip_dir, r.gaze_dir, r.split, r.entity, r.prompt_f,
                                          r.prompt_r, r.ara.question};
    for (const auto& f : fields) check_field(f, "manifest field");
    for (const auto& a : r.ara.answers) check_field(a, "manifest answer");
    for (const auto& f : fields) os << f << '\t';
    for (const auto& a : r.ara.answers) os << a << '\t';
    os << r.ara.correct << '\n';
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot write manifest " + path.string());
    out << os.str();
    require(out.good(), ErrorKind::Io, "failed writing manifest " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::Io, "cannot move manifest into place: " + ec.message());
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, bool check_paths) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingFile, "manifest not found: " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Malformed, path.string() + ": empty manifest");
  auto head = split_tabs(line);
  require(head.size() == 3 && head[0] == kManifestMagic && head[1] == "v1" && head[2].rfind("count=", 0) == 0,
          ErrorKind::Malformed, path.string() + ": bad manifest header");
  std::size_t declared = 0;
  try {
    declared = std::stoul(head[2].substr(6));
  } catch (const std::logic_error&) {
    raise(ErrorKind::Malformed, path.string() + ": bad record count in header");
  }
  require(static_cast<bool>(std::getline(in, line)) && line == kColumns, ErrorKind::Malformed,
          path.string() + ": bad column header");
  std::vector<ManifestRecord> out;
  out.reserve(declared);
  const auto base = path.parent_path();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t idx = out.size();
    const std::string where = path.string() + ": record " + std::to_string(idx);
    auto f = split_tabs(line);
    require(f.size() == kFieldCount, ErrorKind::Malformed,
            where + " has " + std::to_string(f.size()) + " fields, expected " + std::to_string(kFieldCount));
    ManifestRecord r;
    r.clip_dir = f[0];
    r.gaze_dir = f[1];
    r.split = f[2];
    r.entity = f[3];
    r.prompt_f = f[4];
    r.prompt_r = f[5];
    r.ara.question = f[6];
    for (int i = 0; i < kAnswers; ++i) r.ara.answers[i] = f[7 + i];
    try {
      std::size_t used = 0;
      r.ara.correct = std::stoi(f[12], &used);
      require(used == f[12].size(), ErrorKind::Malformed, where + ": bad correct index");
    } catch (const std::logic_error&) {
      raise(ErrorKind::Malformed, where + ": bad correct index");
    }
    require(r.ara.correct >= 0 && r.ara.correct < kAnswers, ErrorKind::Malformed,
            where + ": correct index out of range");
    require(parse_entity(r.entity).has_value(), ErrorKind::Malformed, where + ": unknown entity '" + r.entity + "'");
    if (check_paths) {
      require(std::filesystem::is_directory(base / r.clip_dir), ErrorKind::DanglingPath,
              where + ": clip directory '" + r.clip_dir + "' does not exist");
      require(std::filesystem::is_directory(base / r.gaze_dir), ErrorKind::DanglingPath,
              where + ": gaze directory '" + r.gaze_dir + "' does not exist");
    }
    out.push_back(std::move(r));
  }
  require(out.size() == declared, ErrorKind::Malformed,
          path.string() + ": header declares " + std::to_string(declared) + " records, found " +
              std::to_string(out.size()));
  return out;
}

std::filesystem::path generate_dataset(int n, std::uint64_t seed, const ScenarioConfig& cfg,
                                       const std::filesystem::path& out_dir, double test_fraction) {
  require(n >= 0, ErrorKind::Config, "clip count must be nonnegative");
  require(test_fraction >= 0.0 && test_fraction <= 1.0, ErrorKind::Config, "test fraction outside [0, 1]");
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "clips", ec);
  require(!ec, ErrorKind::Io, "cannot create " + (out_dir / "clips").string() + ": " + ec.message());
  const int n_test = static_cast<int>(std::lround(n * test_fraction));
  std::vector<ManifestRecord> records;
  for (int i = 0; i < n; ++i) {
    const auto rec = generate_scenario(mix_seed(seed, static_cast<std::uint64_t>(i)), cfg);
    const std::string rel = "clips/" + numbered("clip_", i, "");
    write_clip(rec, out_dir / rel);
    ManifestRecord m;
    m.clip_dir = rel;
    m.gaze_dir = rel + "/gaze";
    m.split = i >= n - n_test ? "test" : "train";
    m.entity = entity_word(rec.meta.entity);
    m.prompt_f = rec.prompt_f;
    m.prompt_r = rec.prompt_r;
    m.ara = rec.ara;
    records.push_back(std::move(m));
  }
  const auto path = out_dir / "manifest.tsv";
  write_manifest(records, path);
  return path;
}

}  // namespace cvs::scenario
