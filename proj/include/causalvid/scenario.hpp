// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic egocentric accident clips, clip directories and manifests.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/entity.hpp"
#include "causalvid/gaze.hpp"
#include "json.hpp"

namespace cvs::scenario {

inline constexpr int kAnswers = 5;

struct ArAItem {
  std::string question;
  std::array<std::string, kAnswers> answers;  // answers[correct] is the generating reason
  int correct = 0;
};

struct ScenarioConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  /// Relative class frequencies, indexed by EntityClass.
  std::array<double, kEntityClassCount> class_weights{1, 1, 1, 1, 1};
  /// Collision frame; -1 draws it uniformly from [F/2, F-1].
  int collision_frame = -1;
  /// Standard deviation of the synthetic fixations around the entity, pixels.
  double gaze_jitter = 1.5;
  int gaze_kernel = 7;
  int gaze_hz = 250;
  int fps = 30;

  void validate() const;
  nlohmann::json to_json() const;
  static ScenarioConfig from_json(const nlohmann::json& j);
};

struct ScenarioMeta {
  EntityClass entity = EntityClass::Pedestrian;
  std::uint64_t seed = 0;
  int collision_frame = 1;
  int reason = 0;  // template index within the class
  bool reversed = false;
};

struct ClipRecord {
  ag::Tensor frames;  // [F, 3, H, W] in [-1, 1]
  ag::Tensor gaze;    // [F, H, W] in [0, 1]
  std::string prompt_f;
  std::string prompt_r;
  ArAItem ara;
  std::vector<Box> boxes;  // causal entity per frame
  ScenarioMeta meta;
  gaze::FixationLog fixations;

  int frame_count() const { return frames.defined() ? static_cast<int>(frames.dim(0)) : 0; }
  /// prompt_r for a reversed record, prompt_f otherwise.
  const std::string& prompt() const { return meta.reversed ? prompt_r : prompt_f; }
};

/// Region the ego vehicle occupies: bottom-center quarter-width strip.
Box ego_zone(int height, int width);

/// Deterministic in (seed, config). Background, trajectory, class and gaze
/// draw from separate streams so `force_class` changes only entity pixels.
ClipRecord generate_scenario(std::uint64_t seed, const ScenarioConfig& cfg,
                             std::optional<EntityClass> force_class = std::nullopt);

/// The class a seed draws under `cfg.class_weights`.
EntityClass draw_entity_class(std::uint64_t seed, const ScenarioConfig& cfg);

/// Per-frame entity box of class `c` for a trajectory seed.
std::vector<Box> entity_tube(std::uint64_t seed, const ScenarioConfig& cfg, EntityClass c,
                             int collision_frame);

/// Frames, gaze and boxes in reverse order; the collision frame maps to
/// F - 1 - index. An involution.
ClipRecord reverse_clip(const ClipRecord& rec);

/// Reason templates of a class (each names the class).
const std::vector<std::string>& reason_templates(EntityClass c);
std::string forward_prompt(EntityClass c, int reason);
std::string backward_prompt(EntityClass c, int action);
const std::vector<std::string>& avoidance_actions();
inline constexpr const char* kQuestion = "what is the reason for the accident";

/// Replaces whole-word occurrences of one entity word by another.
std::string swap_entity_word(const std::string& text, EntityClass from, EntityClass to);

// ---- clip directories ----

/// Writes frames/{i:05d}.ppm, gaze/gaze_{i:05d}.pgm, meta and fixations.csv.
void write_clip(const ClipRecord& rec, const std::filesystem::path& dir);
/// What a reader insists on. Inference needs frames, prompts and boxes
/// only; gaze and the ArA item may be absent.
enum class ClipInputs { Training, FramesOnly };

/// Reads a clip directory. Gaze comes from the gaze images when present,
/// otherwise from fixations.csv rendered with `gaze_kernel`.
ClipRecord read_clip(const std::filesystem::path& dir, int gaze_kernel = 7,
                     ClipInputs need = ClipInputs::Training);

// ---- manifests ----

struct ManifestRecord {
  std::string clip_dir;  // relative to the manifest's directory
  std::string gaze_dir;
  std::string split;
  std::string entity;
  std::string prompt_f;
  std::string prompt_r;
  ArAItem ara;

  bool operator==(const ManifestRecord&) const;
};

inline constexpr const char* kManifestMagic = "#causalvid-manifest";

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
/// MissingFile when absent, Malformed on a bad header, field count or
/// record count, DanglingPath when a referenced directory is missing.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path,
                                          bool check_paths = true);

/// Generates n clips under out_dir/clips/ and writes out_dir/manifest.tsv.
/// The last round(n * test_fraction) records are tagged "test".
std::filesystem::path generate_dataset(int n, std::uint64_t seed, const ScenarioConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       double test_fraction = 0.125);

}  // namespace cvs::scenario
