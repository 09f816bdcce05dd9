// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "causalvid/image.hpp"
#include "causalvid/rng.hpp"
#include "causalvid/scenario.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace cvs;
using namespace cvs::scenario;
using cvs::testing::expect_kind;
using cvs::testing::TempDir;

namespace {

bool same_values(const ag::Tensor& a, const ag::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto va = a.values(), vb = b.values();
  return std::equal(va.begin(), va.end(), vb.begin());
}

double px(const ag::Tensor& t, int f, int c, int y, int x) {
  return t.at(((static_cast<std::int64_t>(f) * t.dim(1) + c) * t.dim(2) + y) * t.dim(3) + x);
}

bool inside(const Box& b, int x, int y) { return x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1; }

ManifestRecord sample_record(int i) {
  ManifestRecord r;
  r.clip_dir = "clips/c" + std::to_string(i);
  r.gaze_dir = r.clip_dir + "/gaze";
  r.split = i % 8 == 7 ? "test" : "train";
  r.entity = entity_word(kAllEntityClasses[i % kEntityClassCount]);
  r.prompt_f = "a car merges into the ego lane and the ego car crashes into the car";
  r.prompt_r = "the ego car brakes early to avoid hitting the car";
  r.ara.question = kQuestion;
  for (int a = 0; a < kAnswers; ++a) r.ara.answers[a] = "answer " + std::to_string(a) + " of " + std::to_string(i);
  return r;
}

}  // namespace

TEST_CASE("scenario config validation and json") {
  ScenarioConfig c;
  c.validate();
  auto bad = c;
  bad.frames = 1;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = c;
  bad.collision_frame = c.frames;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = c;
  bad.class_weights = {0, 0, 0, 0, 0};
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = c;
  bad.class_weights[2] = -1;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });

  c.frames = 8;
  c.class_weights = {1, 2, 3, 4, 5};
  auto back = ScenarioConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  expect_kind(ErrorKind::Config, [] { ScenarioConfig::from_json({{"class_weights", {1, 2}}}); });
  expect_kind(ErrorKind::Config, [] { ScenarioConfig::from_json({{"frames", "many"}}); });
}

TEST_CASE("generation is deterministic per seed") {
  ScenarioConfig cfg;
  auto a = generate_scenario(42, cfg), b = generate_scenario(42, cfg);
  CHECK(same_values(a.frames, b.frames));
  CHECK(same_values(a.gaze, b.gaze));
  CHECK(a.prompt_f == b.prompt_f);
  CHECK(a.prompt_r == b.prompt_r);
  CHECK(a.ara.answers == b.ara.answers);
  CHECK(a.boxes == b.boxes);
  CHECK(a.meta.collision_frame == b.meta.collision_frame);
  auto c = generate_scenario(43, cfg);
  CHECK_FALSE(same_values(a.frames, c.frames));
}

TEST_CASE("record invariants hold across seeds") {
  ScenarioConfig cfg;
  cfg.frames = 12;
  const Box ego = ego_zone(cfg.height, cfg.width);
  std::set<int> classes;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto r = generate_scenario(seed, cfg);
    CAPTURE(seed);
    classes.insert(static_cast<int>(r.meta.entity));
    REQUIRE(r.frames.shape() == ag::Shape{12, 3, 32, 32});
    REQUIRE(r.gaze.shape() == ag::Shape{12, 32, 32});
    REQUIRE(r.boxes.size() == 12u);
    CHECK(r.meta.collision_frame >= 1);
    CHECK(r.meta.collision_frame <= 11);
    CHECK(iou(r.boxes[static_cast<std::size_t>(r.meta.collision_frame)], ego) > 0.0);
    for (double v : r.frames.values()) CHECK((v >= -1.0 && v <= 1.0));
    for (double v : r.gaze.values()) CHECK((v >= 0.0 && v <= 1.0));

    // Prompts name the class; exactly one answer is the generating reason.
    const std::string word = entity_word(r.meta.entity);
    CHECK(r.prompt_f.find(word) != std::string::npos);
    CHECK(r.prompt_r.find(word) != std::string::npos);
    bool has_action = false;
    for (const auto& a : avoidance_actions()) has_action |= r.prompt_r.rfind(a, 0) == 0;
    CHECK(has_action);
    for (auto other : kAllEntityClasses)
      if (other != r.meta.entity) CHECK(r.prompt_f.find(entity_word(other)) == std::string::npos);
    const auto& reason = reason_templates(r.meta.entity)[static_cast<std::size_t>(r.meta.reason)];
    CHECK(r.prompt_f.rfind(reason, 0) == 0);
    int matches = 0;
    for (const auto& a : r.ara.answers) matches += a == reason;
    CHECK(matches == 1);
    CHECK(r.ara.answers[static_cast<std::size_t>(r.ara.correct)] == reason);
    std::set<std::string> distinct(r.ara.answers.begin(), r.ara.answers.end());
    CHECK(distinct.size() == 5u);
    CHECK(r.ara.question == kQuestion);

    // The gaze of each frame peaks on the entity box, up to jitter.
    for (int f = 0; f < 12; ++f) {
      const auto vals = r.gaze.values();
      std::size_t best = 0;
      for (std::size_t p = 0; p < 32 * 32; ++p)
        if (vals[f * 1024 + p] > vals[f * 1024 + best]) best = p;
      Box grown = r.boxes[static_cast<std::size_t>(f)];
      grown.x0 -= 5, grown.y0 -= 5, grown.x1 += 5, grown.y1 += 5;
      CHECK(inside(grown, static_cast<int>(best % 32), static_cast<int>(best / 32)));
    }
  }
  CHECK(classes.size() == 5u);
}

TEST_CASE("fixed collision frame and fixation stream") {
  ScenarioConfig cfg;
  cfg.collision_frame = 5;
  auto r = generate_scenario(3, cfg);
  CHECK(r.meta.collision_frame == 5);
  // 16 frames at 30 fps span 533 ms: samples every 4 ms at 250 Hz.
  CHECK(r.fixations.records.size() == 134u);
  CHECK(r.fixations.records.back().timestamp_ms == 532);
  // Entities stop advancing after the collision.
  CHECK(r.boxes[5] == r.boxes[15]);
}

TEST_CASE("class frequencies follow the configured weights") {
  ScenarioConfig cfg;
  cfg.class_weights = {1, 2, 3, 0, 4};
  const int n = 10000;
  std::array<int, kEntityClassCount> counts{};
  for (int s = 0; s < n; ++s) counts[static_cast<int>(draw_entity_class(mix_seed(99, s), cfg))]++;
  for (int k = 0; k < kEntityClassCount; ++k) {
    const double p = cfg.class_weights[k] / 10.0;
    const double sigma = std::sqrt(n * p * (1 - p));
    CAPTURE(k);
    CHECK(std::abs(counts[k] - n * p) <= 3.0 * sigma);
  }
  CHECK(counts[3] == 0);
  // The full generator uses the same draw.
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(generate_scenario(s, cfg).meta.entity == draw_entity_class(s, cfg));
}

TEST_CASE("swapping the entity class changes pixels only inside the two tubes") {
  ScenarioConfig cfg;
  for (std::uint64_t seed : {1u, 7u, 123u}) {
    auto a = generate_scenario(seed, cfg, EntityClass::Pedestrian);
    for (auto other : {EntityClass::Car, EntityClass::Truck, EntityClass::Cyclist}) {
      auto b = generate_scenario(seed, cfg, other);
      CHECK(a.meta.collision_frame == b.meta.collision_frame);
      std::int64_t changed = 0, outside = 0;
      for (int f = 0; f < cfg.frames; ++f)
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
              const auto i = ((f * 3 + c) * 32 + y) * 32 + x;
              if (a.frames.values()[i] == b.frames.values()[i]) continue;
              ++changed;
              if (!inside(a.boxes[f], x, y) && !inside(b.boxes[f], x, y)) ++outside;
            }
      CHECK(changed > 0);
      CHECK(outside == 0);
      CHECK(b.prompt_f.find(entity_word(other)) != std::string::npos);
    }
  }
}

TEST_CASE("entity pixels use the class colour") {
  ScenarioConfig cfg;
  for (auto cls : kAllEntityClasses) {
    auto r = generate_scenario(11, cfg, cls);
    const Rgb col = entity_color(cls);
    const Box& b = r.boxes[static_cast<std::size_t>(r.meta.collision_frame)];
    const int f = r.meta.collision_frame, x = b.x0, y = b.y0;
    CHECK(to_u8_signed(px(r.frames, f, 0, y, x)) == col.r);
    CHECK(to_u8_signed(px(r.frames, f, 1, y, x)) == col.g);
    CHECK(to_u8_signed(px(r.frames, f, 2, y, x)) == col.b);
  }
}

TEST_CASE("reverse_clip is an involution with index algebra") {
  ScenarioConfig cfg;
  auto r = generate_scenario(5, cfg);
  auto v = reverse_clip(r);
  const int F = cfg.frames;
  CHECK(v.meta.collision_frame == F - 1 - r.meta.collision_frame);
  CHECK(v.meta.reversed);
  CHECK(v.prompt() == r.prompt_r);
  CHECK(r.prompt() == r.prompt_f);
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 32; ++p) CHECK(px(v.frames, 0, c, p, p) == px(r.frames, F - 1, c, p, p));
  CHECK(v.gaze.at(3 * 32 + 4) == r.gaze.at((F - 1) * 1024 + 3 * 32 + 4));
  CHECK(v.boxes.front() == r.boxes.back());
  auto back = reverse_clip(v);
  CHECK(same_values(back.frames, r.frames));
  CHECK(same_values(back.gaze, r.gaze));
  CHECK(back.boxes == r.boxes);
  CHECK(back.meta.collision_frame == r.meta.collision_frame);
  CHECK_FALSE(back.meta.reversed);
}

TEST_CASE("entity word swap is whole-word") {
  CHECK(swap_entity_word("the car hits a carpet car", EntityClass::Car, EntityClass::Truck) ==
        "the truck hits a carpet truck");
  CHECK(swap_entity_word("car", EntityClass::Car, EntityClass::Cyclist) == "cyclist");
  CHECK(swap_entity_word("no match", EntityClass::Car, EntityClass::Truck) == "no match");
  for (auto c : kAllEntityClasses)
    for (const auto& t : reason_templates(c)) CHECK(t.find(entity_word(c)) != std::string::npos);
  CHECK(reason_templates(EntityClass::Car).size() == 5u);
  expect_kind(ErrorKind::Range, [] { forward_prompt(EntityClass::Car, 5); });
  expect_kind(ErrorKind::Range, [] { backward_prompt(EntityClass::Car, -1); });
}

TEST_CASE("image files round-trip and reject bad input") {
  TempDir tmp("img");
  Image rgb{3, 2, 3, {}};
  for (int i = 0; i < 18; ++i) rgb.data.push_back(static_cast<std::uint8_t>(i * 13));
  write_image(rgb, tmp.path / "a.ppm");
  auto back = read_image(tmp.path / "a.ppm");
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.channels == 3);
  CHECK(back.data == rgb.data);
  Image gray{2, 2, 1, {0, 64, 128, 255}};
  write_image(gray, tmp.path / "g.pgm");
  CHECK(read_image(tmp.path / "g.pgm").data == gray.data);

  expect_kind(ErrorKind::MissingFile, [&] { read_image(tmp.path / "nope.ppm"); });
  std::ofstream(tmp.path / "junk.ppm") << "P9 nonsense";
  expect_kind(ErrorKind::Malformed, [&] { read_image(tmp.path / "junk.ppm"); });
  std::ofstream(tmp.path / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  expect_kind(ErrorKind::Malformed, [&] { read_image(tmp.path / "short.pgm"); });
  std::ofstream(tmp.path / "comment.pgm", std::ios::binary) << "P5\n# note\n1 1\n255\n" << char(7);
  CHECK(read_image(tmp.path / "comment.pgm").data == std::vector<std::uint8_t>{7});

  for (int v = 0; v < 256; ++v) {
    CHECK(to_u8_signed(from_u8_signed(static_cast<std::uint8_t>(v))) == v);
    CHECK(to_u8_unit(from_u8_unit(static_cast<std::uint8_t>(v))) == v);
  }
  CHECK(from_u8_signed(0) == -1.0);
  CHECK(from_u8_signed(255) == 1.0);
}

TEST_CASE("clip directories round-trip") {
  TempDir tmp("clip");
  ScenarioConfig cfg;
  cfg.frames = 6;
  auto r = generate_scenario(17, cfg);
  write_clip(r, tmp.path / "c");
  CHECK(std::filesystem::exists(tmp.path / "c" / "frames" / "00005.ppm"));
  CHECK(std::filesystem::exists(tmp.path / "c" / "gaze" / "gaze_00005.pgm"));
  auto back = read_clip(tmp.path / "c");
  CHECK(same_values(back.frames, r.frames));
  CHECK(same_values(back.gaze, r.gaze));
  CHECK(back.boxes == r.boxes);
  CHECK(back.prompt_f == r.prompt_f);
  CHECK(back.prompt_r == r.prompt_r);
  CHECK(back.ara.answers == r.ara.answers);
  CHECK(back.meta.entity == r.meta.entity);
  CHECK(back.meta.seed == r.meta.seed);
  CHECK(back.meta.collision_frame == r.meta.collision_frame);
  CHECK(back.fixations.records.size() == r.fixations.records.size());

  // Without gaze images the maps are rebuilt from the fixation log.
  std::filesystem::remove_all(tmp.path / "c" / "gaze");
  auto rebuilt = read_clip(tmp.path / "c", cfg.gaze_kernel);
  REQUIRE(rebuilt.gaze.shape() == r.gaze.shape());
  double worst = 0;
  for (std::size_t i = 0; i < r.gaze.values().size(); ++i)
    worst = std::max(worst, std::abs(rebuilt.gaze.values()[i] - r.gaze.values()[i]));
  CHECK(worst <= 0.5 / 255 + 1e-12);

  std::filesystem::remove(tmp.path / "c" / "fixations.csv");
  expect_kind(ErrorKind::DanglingPath, [&] { read_clip(tmp.path / "c"); });
  expect_kind(ErrorKind::MissingFile, [&] { read_clip(tmp.path / "absent"); });
  std::ofstream(tmp.path / "c" / "meta") << "frames=6\n";
  expect_kind(ErrorKind::Malformed, [&] { read_clip(tmp.path / "c"); });
}

TEST_CASE("manifests round-trip and report the first bad record") {
  TempDir tmp("manifest");
  std::vector<ManifestRecord> recs;
  for (int i = 0; i < 5; ++i) {
    recs.push_back(sample_record(i));
    std::filesystem::create_directories(tmp.path / recs.back().gaze_dir);
  }
  const auto path = tmp.path / "manifest.tsv";
  write_manifest(recs, path);
  CHECK(load_manifest(path) == recs);

  std::filesystem::remove_all(tmp.path / recs[3].gaze_dir);
  try {
    load_manifest(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DanglingPath);
    CHECK(std::string(e.what()).find("record 3") != std::string::npos);
  }
  CHECK(load_manifest(path, false).size() == 5u);

  expect_kind(ErrorKind::MissingFile, [&] { load_manifest(tmp.path / "none.tsv"); });
  std::ofstream(tmp.path / "bad_header.tsv") << "hello\n";
  expect_kind(ErrorKind::Malformed, [&] { load_manifest(tmp.path / "bad_header.tsv"); });

  // Count mismatch and a short record.
  {
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    auto fewer = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    std::ofstream(tmp.path / "fewer.tsv") << fewer;
    expect_kind(ErrorKind::Malformed, [&] { load_manifest(tmp.path / "fewer.tsv", false); });
    std::ofstream(tmp.path / "short.tsv") << text << "a\tb\n";
    try {
      load_manifest(tmp.path / "short.tsv", false);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Malformed);
      CHECK(std::string(e.what()).find("record 5") != std::string::npos);
    }
  }
  auto tabbed = recs;
  tabbed[0].prompt_f = "has\ttab";
  expect_kind(ErrorKind::Contract, [&] { write_manifest(tabbed, tmp.path / "x.tsv"); });

  write_manifest({}, tmp.path / "empty.tsv");
  CHECK(load_manifest(tmp.path / "empty.tsv").empty());
}

TEST_CASE("a 10k-record manifest loads within a second") {
  TempDir tmp("bigmanifest");
  std::vector<ManifestRecord> recs;
  for (int i = 0; i < 10000; ++i) recs.push_back(sample_record(i));
  const auto path = tmp.path / "m.tsv";
  write_manifest(recs, path);
  // Every record shares one real directory so path checks run too.
  for (auto& r : recs) r.clip_dir = r.gaze_dir = ".";
  write_manifest(recs, path);
  const auto t0 = std::chrono::steady_clock::now();
  auto loaded = load_manifest(path);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(loaded.size() == 10000u);
  CHECK(secs < 1.0);
}

TEST_CASE("dataset generation is reproducible") {
  TempDir a("ds_a"), b("ds_b");
  ScenarioConfig cfg;
  cfg.frames = 4;
  auto ma = generate_dataset(8, 5, cfg, a.path);
  auto mb = generate_dataset(8, 5, cfg, b.path);
  auto read = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  CHECK(read(ma) == read(mb));
  auto recs = load_manifest(ma);
  REQUIRE(recs.size() == 8u);
  CHECK(recs.back().split == "test");
  CHECK(recs.front().split == "train");
  auto clip = read_clip(a.path / recs[2].clip_dir);
  CHECK(clip.prompt_f == recs[2].prompt_f);
  CHECK(read(a.path / recs[2].clip_dir / "frames" / "00001.ppm") ==
        read(b.path / recs[2].clip_dir / "frames" / "00001.ppm"));
  // Regenerating in place leaves the manifest unchanged.
  generate_dataset(8, 5, cfg, a.path);
  CHECK(read(ma) == read(mb));

  TempDir e("ds_empty");
  CHECK(load_manifest(generate_dataset(0, 5, cfg, e.path)).empty());
}
