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

#include "semcache/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace semcache {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  return static_cast<int>(to_integer(key, v));
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v, char sep = ',') {
  std::vector<int> out;
  for (const std::string& item : split(v, sep)) out.push_back(to_int(key, item));
  return out;
}

}  // namespace

StepSchedule ScheduleSpec::build(int warmup, int total) const {
  switch (kind) {
    case ScheduleKind::stepwise:
      return StepSchedule::stepwise(intervals, warmup, total);
    case ScheduleKind::step_inverse:
      return StepSchedule::step_inverse(intervals, warmup, total);
    case ScheduleKind::step_average:
      return StepSchedule::step_average(fixed, warmup, total);
    case ScheduleKind::adaptive:
      return StepSchedule::adaptive(t_max, t_min, warmup, total);
  }
  throw ConfigError("unknown schedule kind");
}

std::string ScheduleSpec::describe() const {
  StepSchedule s;
  s.kind = kind;
  s.intervals = intervals;
  s.fixed = fixed;
  s.t_max = t_max;
  s.t_min = t_min;
  return s.describe();
}

ScheduleSpec parse_schedule_spec(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  const std::string kind = trim(t.substr(0, colon));
  const std::string args = colon == std::string::npos ? "" : t.substr(colon + 1);
  const std::vector<int> values = to_int_list("schedule '" + t + "'", args, '/');
  ScheduleSpec spec;
  if (kind == "stepwise" || kind == "step_inverse") {
    spec.kind = kind == "stepwise" ? ScheduleKind::stepwise : ScheduleKind::step_inverse;
    if (values.empty()) throw ConfigError("schedule '" + t + "' needs intervals");
    spec.intervals = values;
  } else if (kind == "step_average") {
    spec.kind = ScheduleKind::step_average;
    if (values.size() != 1) throw ConfigError("schedule '" + t + "' needs one interval");
    spec.fixed = values[0];
  } else if (kind == "adaptive") {
    spec.kind = ScheduleKind::adaptive;
    if (values.size() != 2) throw ConfigError("schedule '" + t + "' needs t_max/t_min");
    spec.t_max = values[0];
    spec.t_min = values[1];
  } else {
    throw ConfigError("unknown schedule kind '" + kind + "'");
  }
  return spec;
}

PatternKind parse_pattern_kind(const std::string& text) {
  if (text == "background_only") return PatternKind::background_only;
  if (text == "foreground_only") return PatternKind::foreground_only;
  if (text == "split") return PatternKind::split;
  if (text == "alternate") return PatternKind::alternate;
  throw ConfigError("unknown reuse pattern '" + text + "'");
}

std::string pattern_name(PatternKind kind) {
  switch (kind) {
    case PatternKind::background_only:
      return "background_only";
    case PatternKind::foreground_only:
      return "foreground_only";
    case PatternKind::split:
      return "split";
    case PatternKind::alternate:
      return "alternate";
  }
  return "unknown";
}

ReusePattern PatternSpec::build(int warmup, int total) const {
  switch (kind) {
    case PatternKind::background_only:
      return ReusePattern::background_only();
    case PatternKind::foreground_only:
      return ReusePattern::foreground_only();
    case PatternKind::split:
      return ReusePattern::split(split_step.value_or(warmup + (total - warmup + 1) / 2));
    case PatternKind::alternate:
      return ReusePattern::alternate(alternate_length);
  }
  throw ConfigError("unknown reuse pattern");
}

ExperimentConfig::ExperimentConfig() {
  model.shaping.foreground_blocks = default_foreground_blocks(model.layers);
  ablate_schedules = {parse_schedule_spec("stepwise:12/9/6/3"),
                      parse_schedule_spec("step_inverse:3/6/9/12"),
                      parse_schedule_spec("step_average:6"), parse_schedule_spec("adaptive:12/3")};
}

StepRange ExperimentConfig::profile_range() const {
  return {profile_begin, profile_end.value_or(steps)};
}

void ExperimentConfig::validate() const {
  if (steps < 1) throw ConfigError("schedule.steps must be >= 1");
  if (warmup < 0 || warmup >= steps) throw ConfigError("schedule.warmup must lie in [0, steps)");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("profile.tau must lie in [0, 1]");
  if (!(high_percentile >= 0.0 && high_percentile <= 100.0)) {
    throw ConfigError("profile.high_percentile must lie in [0, 100]");
  }
  const StepRange r = profile_range();
  if (r.begin < 0 || r.end > steps || r.begin >= r.end) {
    throw ConfigError("profile step range must lie within [0, steps)");
  }
  for (int f = 0; f < model.grid.frames; ++f) {
    const Rect rc = scene.rect_at(f);
    if (rc.w < 1 || rc.h < 1 || rc.x < 0 || rc.y < 0 || rc.x + rc.w > model.grid.width ||
        rc.y + rc.h > model.grid.height) {
      throw ConfigError("scene rectangle leaves the token grid in frame " + std::to_string(f));
    }
  }
  schedule.build(warmup, steps);
  if (pattern.split_step && (*pattern.split_step <= warmup || *pattern.split_step >= steps)) {
    throw ConfigError("cache.split_step must lie in (warmup, steps)");
  }
  if (pattern.alternate_length < 1) throw ConfigError("cache.alternate_length must be >= 1");
  pattern.build(warmup, steps);
  for (const ScheduleSpec& s : ablate_schedules) s.build(warmup, steps);
  NoiseSchedule::linear(steps, beta_min, beta_max);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  bool foreground_blocks_set = false;

  using Setter = std::function<void(const std::string& key, const std::string& value)>;
  const std::map<std::string, Setter> setters = {
      {"model.seed", [&](auto& k, auto& v) { cfg.model.seed = static_cast<std::uint64_t>(to_integer(k, v)); }},
      {"model.layers", [&](auto& k, auto& v) { cfg.model.layers = to_int(k, v); }},
      {"model.channels", [&](auto& k, auto& v) { cfg.model.channels = to_int(k, v); }},
      {"model.frames", [&](auto& k, auto& v) { cfg.model.grid.frames = to_int(k, v); }},
      {"model.height", [&](auto& k, auto& v) { cfg.model.grid.height = to_int(k, v); }},
      {"model.width", [&](auto& k, auto& v) { cfg.model.grid.width = to_int(k, v); }},
      {"model.shaping", [&](auto& k, auto& v) { cfg.model.shaping.enabled = to_bool(k, v); }},
      {"model.shaping_gain", [&](auto& k, auto& v) { cfg.model.shaping.gain = to_real(k, v); }},
      {"model.foreground_branch_gain",
       [&](auto& k, auto& v) { cfg.model.shaping.foreground_branch_gain = to_real(k, v); }},
      {"model.foreground_blocks",
       [&](auto& k, auto& v) {
         cfg.model.shaping.foreground_blocks = to_int_list(k, v);
         foreground_blocks_set = true;
       }},
      {"schedule.steps", [&](auto& k, auto& v) { cfg.steps = to_int(k, v); }},
      {"schedule.beta_min", [&](auto& k, auto& v) { cfg.beta_min = to_real(k, v); }},
      {"schedule.beta_max", [&](auto& k, auto& v) { cfg.beta_max = to_real(k, v); }},
      {"schedule.warmup", [&](auto& k, auto& v) { cfg.warmup = to_int(k, v); }},
      {"schedule.kind",
       [&](auto& k, auto& v) {
         if (v == "stepwise") {
           cfg.schedule.kind = ScheduleKind::stepwise;
         } else if (v == "step_inverse") {
           cfg.schedule.kind = ScheduleKind::step_inverse;
         } else if (v == "step_average") {
           cfg.schedule.kind = ScheduleKind::step_average;
         } else if (v == "adaptive") {
           cfg.schedule.kind = ScheduleKind::adaptive;
         } else {
           throw ConfigError(k + ": unknown schedule kind '" + v + "'");
         }
       }},
      {"schedule.intervals", [&](auto& k, auto& v) { cfg.schedule.intervals = to_int_list(k, v); }},
      {"schedule.t", [&](auto& k, auto& v) { cfg.schedule.fixed = to_int(k, v); }},
      {"schedule.t_max", [&](auto& k, auto& v) { cfg.schedule.t_max = to_int(k, v); }},
      {"schedule.t_min", [&](auto& k, auto& v) { cfg.schedule.t_min = to_int(k, v); }},
      {"cache.pattern", [&](auto&, auto& v) { cfg.pattern.kind = parse_pattern_kind(v); }},
      {"cache.split_step", [&](auto& k, auto& v) { cfg.pattern.split_step = to_int(k, v); }},
      {"cache.alternate_length", [&](auto& k, auto& v) { cfg.pattern.alternate_length = to_int(k, v); }},
      {"cache.delta_mode",
       [&](auto& k, auto& v) {
         if (v == "latest") {
           cfg.delta_mode = DeltaMode::latest;
         } else if (v == "accumulated") {
           cfg.delta_mode = DeltaMode::accumulated;
         } else {
           throw ConfigError(k + ": expected latest or accumulated");
         }
       }},
      {"profile.tau", [&](auto& k, auto& v) { cfg.tau = to_real(k, v); }},
      {"profile.high_percentile", [&](auto& k, auto& v) { cfg.high_percentile = to_real(k, v); }},
      {"profile.step_begin", [&](auto& k, auto& v) { cfg.profile_begin = to_int(k, v); }},
      {"profile.step_end", [&](auto& k, auto& v) { cfg.profile_end = to_int(k, v); }},
      {"profile.mask",
       [&](auto& k, auto& v) {
         if (v == "pca") {
           cfg.mask = MaskChoice::pca;
         } else if (v == "truth") {
           cfg.mask = MaskChoice::truth;
         } else {
           throw ConfigError(k + ": expected pca or truth");
         }
       }},
      {"profile.axis",
       [&](auto& k, auto& v) {
         if (v == "column") {
           cfg.axis = AggregateAxis::column;
         } else if (v == "row") {
           cfg.axis = AggregateAxis::row;
         } else {
           throw ConfigError(k + ": expected column or row");
         }
       }},
      {"scene.background", [&](auto& k, auto& v) { cfg.scene.background = to_real(k, v); }},
      {"scene.texture", [&](auto& k, auto& v) { cfg.scene.texture = to_real(k, v); }},
      {"scene.magnitude", [&](auto& k, auto& v) { cfg.scene.magnitude = to_real(k, v); }},
      {"scene.rect",
       [&](auto& k, auto& v) {
         const auto r = to_int_list(k, v);
         if (r.size() != 4) throw ConfigError(k + ": expected x,y,w,h");
         cfg.scene.rect = {r[0], r[1], r[2], r[3]};
       }},
      {"scene.motion",
       [&](auto& k, auto& v) {
         const auto m = to_int_list(k, v);
         if (m.size() != 2) throw ConfigError(k + ": expected dx,dy");
         cfg.scene.motion_x = m[0];
         cfg.scene.motion_y = m[1];
       }},
      {"scene.seed", [&](auto& k, auto& v) { cfg.scene.seed = static_cast<std::uint64_t>(to_integer(k, v)); }},
      {"output.dir", [&](auto&, auto& v) { cfg.output_dir = v; }},
      {"run.reference", [&](auto& k, auto& v) { cfg.reference_run = to_bool(k, v); }},
      {"ablate.patterns",
       [&](auto&, auto& v) {
         cfg.ablate_patterns.clear();
         for (const std::string& p : split(v, ',')) cfg.ablate_patterns.push_back(parse_pattern_kind(p));
       }},
      {"ablate.schedules",
       [&](auto&, auto& v) {
         cfg.ablate_schedules.clear();
         for (const std::string& s : split(v, ',')) cfg.ablate_schedules.push_back(parse_schedule_spec(s));
       }},
  };

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!foreground_blocks_set) {
    cfg.model.shaping.foreground_blocks = default_foreground_blocks(cfg.model.layers);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace semcache
