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

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "semcache/config.hpp"
#include "semcache/errors.hpp"

namespace semcache {
namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyTextYieldsDefaults) {
  const ExperimentConfig c = parse_config("");
  EXPECT_EQ(c.steps, 50);
  EXPECT_EQ(c.warmup, 2);
  EXPECT_EQ(c.tau, 0.5);
  EXPECT_EQ(c.high_percentile, 90.0);
  EXPECT_EQ(c.axis, AggregateAxis::column);
  EXPECT_EQ(c.delta_mode, DeltaMode::latest);
  EXPECT_EQ(c.pattern.kind, PatternKind::background_only);
  EXPECT_EQ(c.model.shaping.foreground_blocks, default_foreground_blocks(c.model.layers));
  EXPECT_EQ(c.ablate_schedules.size(), 4u);
  EXPECT_TRUE(c.reference_run);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const ExperimentConfig c = parse_config(
      "# header\n"
      "model.layers = 6   # trailing comment\n"
      "  model.channels=8\n"
      "\n"
      "schedule.steps = 30\n"
      "schedule.kind = adaptive\n"
      "schedule.t_max = 10\n"
      "schedule.t_min = 2\n"
      "cache.pattern = alternate\n"
      "cache.alternate_length = 3\n"
      "cache.delta_mode = accumulated\n"
      "profile.axis = row\n"
      "profile.mask = truth\n"
      "scene.rect = 1,2,3,2\n"
      "scene.motion = 0,1\n"
      "run.reference = false\n"
      "ablate.patterns = split,foreground_only\n"
      "ablate.schedules = step_average:5, stepwise:8/4\n");
  EXPECT_EQ(c.model.layers, 6);
  EXPECT_EQ(c.model.channels, 8);
  EXPECT_EQ(c.model.shaping.foreground_blocks, default_foreground_blocks(6));
  EXPECT_EQ(c.steps, 30);
  EXPECT_EQ(c.schedule.kind, ScheduleKind::adaptive);
  EXPECT_EQ(c.schedule.t_max, 10);
  EXPECT_EQ(c.schedule.t_min, 2);
  EXPECT_EQ(c.pattern.kind, PatternKind::alternate);
  EXPECT_EQ(c.pattern.alternate_length, 3);
  EXPECT_EQ(c.delta_mode, DeltaMode::accumulated);
  EXPECT_EQ(c.axis, AggregateAxis::row);
  EXPECT_EQ(c.mask, MaskChoice::truth);
  EXPECT_EQ(c.scene.rect.y, 2);
  EXPECT_EQ(c.scene.motion_y, 1);
  EXPECT_FALSE(c.reference_run);
  ASSERT_EQ(c.ablate_patterns.size(), 2u);
  EXPECT_EQ(c.ablate_patterns[0], PatternKind::split);
  ASSERT_EQ(c.ablate_schedules.size(), 2u);
  EXPECT_EQ(c.ablate_schedules[0].fixed, 5);
  EXPECT_EQ(c.ablate_schedules[1].intervals, (std::vector<int>{8, 4}));
}

TEST(Config, UnknownKeyReportsLine) {
  const std::string e = error_of("schedule.steps = 10\n\nschedule.stpes = 3\n");
  EXPECT_NE(e.find("line 3"), std::string::npos) << e;
  EXPECT_NE(e.find("schedule.stpes"), std::string::npos) << e;
}

TEST(Config, MalformedValuesReportLine) {
  EXPECT_NE(error_of("model.layers = eight\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("profile.tau = 0.5x\n").find("expected a number"), std::string::npos);
  EXPECT_NE(error_of("run.reference = maybe\n").find("boolean"), std::string::npos);
  EXPECT_NE(error_of("just text\n").find("key = value"), std::string::npos);
}

TEST(Config, RejectsInconsistentValues) {
  EXPECT_FALSE(error_of("schedule.steps = 0\n").empty());
  EXPECT_FALSE(error_of("schedule.steps = 10\nschedule.warmup = 10\n").empty());
  EXPECT_FALSE(error_of("profile.tau = 1.5\n").empty());
  EXPECT_FALSE(error_of("profile.high_percentile = 101\n").empty());
  EXPECT_FALSE(error_of("profile.step_end = 60\n").empty());
  EXPECT_FALSE(error_of("cache.alternate_length = 0\n").empty());
  EXPECT_FALSE(error_of("cache.split_step = 1\n").empty());
}

TEST(Config, RectangleLeavingGridIsRejected) {
  // Width 8, motion 1 per frame over 2 frames: x=6,w=2 fits frame 0 but not frame 1.
  const std::string e = error_of("scene.rect = 6,0,2,2\n");
  EXPECT_NE(e.find("frame 1"), std::string::npos) << e;
  EXPECT_NO_THROW(parse_config("scene.rect = 5,0,2,2\n"));
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_THROW(load_config(std::filesystem::path("/nonexistent/semcache.cfg")), IoError);
}

TEST(ScheduleSpec, ParsesEveryKind) {
  const ScheduleSpec a = parse_schedule_spec("stepwise:12/9/6/3");
  EXPECT_EQ(a.kind, ScheduleKind::stepwise);
  EXPECT_EQ(a.intervals, (std::vector<int>{12, 9, 6, 3}));
  const ScheduleSpec b = parse_schedule_spec(" step_inverse:3/6 ");
  EXPECT_EQ(b.kind, ScheduleKind::step_inverse);
  EXPECT_EQ(b.intervals, (std::vector<int>{3, 6}));
  const ScheduleSpec c = parse_schedule_spec("step_average:4");
  EXPECT_EQ(c.kind, ScheduleKind::step_average);
  EXPECT_EQ(c.fixed, 4);
  const ScheduleSpec d = parse_schedule_spec("adaptive:12/3");
  EXPECT_EQ(d.kind, ScheduleKind::adaptive);
  EXPECT_EQ(d.t_max, 12);
  EXPECT_EQ(d.t_min, 3);
}

TEST(ScheduleSpec, DescribeRoundTrips) {
  for (const char* text : {"stepwise:12/9/6/3", "step_inverse:3/6/9", "step_average:4", "adaptive:12/3"}) {
    EXPECT_EQ(parse_schedule_spec(text).describe(), text);
  }
}

TEST(ScheduleSpec, RejectsMalformedText) {
  EXPECT_THROW(parse_schedule_spec("stepwise"), ConfigError);
  EXPECT_THROW(parse_schedule_spec("step_average:3/4"), ConfigError);
  EXPECT_THROW(parse_schedule_spec("adaptive:12"), ConfigError);
  EXPECT_THROW(parse_schedule_spec("weekly:3"), ConfigError);
  EXPECT_THROW(parse_schedule_spec("stepwise:a/b"), ConfigError);
}

TEST(PatternSpec, NamesRoundTripAndDefaultSplitIsMidpoint) {
  for (PatternKind k : {PatternKind::background_only, PatternKind::foreground_only, PatternKind::split,
                        PatternKind::alternate}) {
    EXPECT_EQ(parse_pattern_kind(pattern_name(k)), k);
  }
  EXPECT_THROW(parse_pattern_kind("both"), ConfigError);
  PatternSpec p;
  p.kind = PatternKind::split;
  const ReusePattern r = p.build(2, 50);
  EXPECT_EQ(r.split_step, 26);
}

}  // namespace
}  // namespace semcache
