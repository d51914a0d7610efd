/* Copyright 2026 The semcache Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Experiment configuration. The file format is line-oriented UTF-8:
//
//   # comment
//   schedule.kind = adaptive
//   schedule.t_max = 12
//
// Every key has a default and unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semcache/cache_engine.hpp"
#include "semcache/dit.hpp"
#include "semcache/profiler.hpp"

namespace semcache {

struct Rect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
};

struct SceneSpec {
  double background = 1.0;  // per-channel RMS of the background signature
  double texture = 0.2;     // amplitude of the background texture noise
  double magnitude = 3.0;   // per-channel RMS of the foreground signature
  Rect rect{2, 2, 3, 3};    // foreground rectangle in frame 0
  int motion_x = 1;         // rectangle offset added per frame
  int motion_y = 0;
  std::uint64_t seed = 7;

  Rect rect_at(int frame) const {
    return {rect.x + motion_x * frame, rect.y + motion_y * frame, rect.w, rect.h};
  }
};

// One step-level schedule without warm-up or length, which come from the
// enclosing config. Text form: `stepwise:12/9/6/3`, `step_inverse:3/6/9`,
// `step_average:4`, `adaptive:12/3`.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::stepwise;
  std::vector<int> intervals{12, 9, 6, 3};
  int fixed = 3;
  int t_max = 12;
  int t_min = 3;

  StepSchedule build(int warmup, int total) const;
  std::string describe() const;
};

ScheduleSpec parse_schedule_spec(const std::string& text);

struct PatternSpec {
  PatternKind kind = PatternKind::background_only;
  std::optional<int> split_step;  // default: middle of the post-warm-up steps
  int alternate_length = 1;

  ReusePattern build(int warmup, int total) const;
};

PatternKind parse_pattern_kind(const std::string& text);
std::string pattern_name(PatternKind kind);

enum class MaskChoice { pca, truth };

struct ExperimentConfig {
  ModelConfig model;

  int steps = 50;
  double beta_min = 0.005;
  double beta_max = 0.05;
  ScheduleSpec schedule;
  int warmup = 2;

  PatternSpec pattern;
  DeltaMode delta_mode = DeltaMode::latest;

  double tau = 0.5;
  double high_percentile = 90.0;
  int profile_begin = 0;
  std::optional<int> profile_end;  // default: all steps
  MaskChoice mask = MaskChoice::pca;
  AggregateAxis axis = AggregateAxis::column;

  SceneSpec scene;

  std::filesystem::path output_dir = "out";
  bool reference_run = true;

  std::vector<PatternKind> ablate_patterns{PatternKind::background_only,
                                           PatternKind::foreground_only, PatternKind::split,
                                           PatternKind::alternate};
  std::vector<ScheduleSpec> ablate_schedules;

  ExperimentConfig();

  StepRange profile_range() const;
  // Throws ConfigError on inconsistent values.
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace semcache
