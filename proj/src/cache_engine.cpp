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

#include "semcache/cache_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "semcache/serialize.hpp"

namespace semcache {
namespace {

std::string join_intervals(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += '/';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::vector<DeltaEntry> build_delta_list(std::span<const int> blocks) {
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    if (blocks[i] <= blocks[i - 1]) {
      throw ContractError("delta list blocks must be strictly ascending");
    }
  }
  std::vector<DeltaEntry> entries;
  for (std::size_t i = 0; i < blocks.size();) {
    std::size_t j = i;
    while (j + 1 < blocks.size() && blocks[j + 1] == blocks[j] + 1) ++j;
    DeltaEntry e;
    e.first = blocks[i];
    e.last = blocks[j];
    entries.push_back(std::move(e));
    i = j + 1;
  }
  return entries;
}

std::vector<DeltaEntry> build_delta_list(const BlockPartition& partition) {
  return build_delta_list(partition.background);
}

StepSchedule StepSchedule::stepwise(std::vector<int> intervals, int warmup, int total) {
  StepSchedule s;
  s.kind = ScheduleKind::stepwise;
  s.intervals = std::move(intervals);
  s.warmup = warmup;
  s.total = total;
  s.validate();
  return s;
}

StepSchedule StepSchedule::step_inverse(std::vector<int> intervals, int warmup, int total) {
  StepSchedule s;
  s.kind = ScheduleKind::step_inverse;
  s.intervals = std::move(intervals);
  s.warmup = warmup;
  s.total = total;
  s.validate();
  return s;
}

StepSchedule StepSchedule::step_average(int interval, int warmup, int total) {
  StepSchedule s;
  s.kind = ScheduleKind::step_average;
  s.fixed = interval;
  s.warmup = warmup;
  s.total = total;
  s.validate();
  return s;
}

StepSchedule StepSchedule::adaptive(int t_max, int t_min, int warmup, int total) {
  StepSchedule s;
  s.kind = ScheduleKind::adaptive;
  s.t_max = t_max;
  s.t_min = t_min;
  s.warmup = warmup;
  s.total = total;
  s.validate();
  return s;
}

void StepSchedule::validate() const {
  if (total < 1) throw ConfigError("schedule needs at least one step");
  if (warmup < 0 || warmup >= total) {
    throw ConfigError("warm-up " + std::to_string(warmup) + " outside [0, " +
                      std::to_string(total) + ")");
  }
  switch (kind) {
    case ScheduleKind::stepwise:
    case ScheduleKind::step_inverse: {
      if (intervals.empty()) throw ConfigError("listed schedule needs at least one interval");
      for (int t : intervals) {
        if (t < 1) throw ConfigError("caching interval must be >= 1");
      }
      for (std::size_t i = 1; i < intervals.size(); ++i) {
        if (kind == ScheduleKind::stepwise && intervals[i] > intervals[i - 1]) {
          throw ConfigError("stepwise intervals must be non-increasing");
        }
        if (kind == ScheduleKind::step_inverse && intervals[i] < intervals[i - 1]) {
          throw ConfigError("step_inverse intervals must be non-decreasing");
        }
      }
      break;
    }
    case ScheduleKind::step_average:
      if (fixed < 1) throw ConfigError("caching interval must be >= 1");
      break;
    case ScheduleKind::adaptive:
      if (t_max < 1 || t_min < 1) throw ConfigError("adaptive interval bounds must be >= 1");
      break;
  }
}

std::string StepSchedule::describe() const {
  switch (kind) {
    case ScheduleKind::stepwise:
      return "stepwise:" + join_intervals(intervals);
    case ScheduleKind::step_inverse:
      return "step_inverse:" + join_intervals(intervals);
    case ScheduleKind::step_average:
      return "step_average:" + std::to_string(fixed);
    case ScheduleKind::adaptive:
      return "adaptive:" + std::to_string(t_max) + "/" + std::to_string(t_min);
  }
  return {};
}

double adaptive_interval_exact(const StepSchedule& schedule, int s) {
  const double progress = static_cast<double>(s - schedule.warmup) /
                          static_cast<double>(schedule.total - schedule.warmup);
  return schedule.t_max - (schedule.t_max - schedule.t_min) * progress;
}

int phase_at(const StepSchedule& schedule, int s) {
  const int phases = static_cast<int>(schedule.intervals.size());
  const int segment = std::max(1, (schedule.total - schedule.warmup) / phases);
  return std::min((s - schedule.warmup) / segment, phases - 1);
}

int interval_at(const StepSchedule& schedule, int s) {
  if (s < schedule.warmup || s > schedule.total) {
    throw ContractError("interval_at: step " + std::to_string(s) + " outside [" +
                        std::to_string(schedule.warmup) + ", " +
                        std::to_string(schedule.total) + "]");
  }
  switch (schedule.kind) {
    case ScheduleKind::stepwise:
    case ScheduleKind::step_inverse:
      return schedule.intervals[static_cast<std::size_t>(phase_at(schedule, s))];
    case ScheduleKind::step_average:
      return schedule.fixed;
    case ScheduleKind::adaptive:
      return std::max(1, static_cast<int>(std::floor(adaptive_interval_exact(schedule, s) + 0.5)));
  }
  return 1;
}

bool ReusePattern::uses_foreground() const { return kind != PatternKind::background_only; }

bool ReusePattern::uses_background() const { return kind != PatternKind::foreground_only; }

std::string ReusePattern::describe() const {
  switch (kind) {
    case PatternKind::background_only:
      return "background_only";
    case PatternKind::foreground_only:
      return "foreground_only";
    case PatternKind::split:
      return "split:" + std::to_string(split_step);
    case PatternKind::alternate:
      return "alternate:" + std::to_string(segment_length);
  }
  return {};
}

CacheEngine::CacheEngine(BlockPartition partition, StepSchedule schedule, ReusePattern pattern,
                         DeltaMode mode)
    : partition_(std::move(partition)),
      schedule_(std::move(schedule)),
      pattern_(pattern),
      mode_(mode) {
  partition_.validate(partition_.layers());
  schedule_.validate();
  if (pattern_.kind == PatternKind::split &&
      (pattern_.split_step <= schedule_.warmup || pattern_.split_step >= schedule_.total)) {
    throw ConfigError("split boundary " + std::to_string(pattern_.split_step) +
                      " must lie in (warm-up, total steps)");
  }
  if (pattern_.kind == PatternKind::alternate && pattern_.segment_length < 1) {
    throw ConfigError("alternate segment length must be >= 1");
  }
  background_ = build_delta_list(partition_.background);
  if (pattern_.uses_foreground()) foreground_ = build_delta_list(partition_.foreground);
}

bool CacheEngine::is_compute_step(int s) const {
  if (s <= schedule_.warmup) return true;
  const int interval = interval_at(schedule_, std::min(s, schedule_.total));
  return (s - schedule_.warmup) % interval == 0;
}

bool CacheEngine::reuses_background(int s) const {
  switch (pattern_.kind) {
    case PatternKind::background_only:
      return true;
    case PatternKind::foreground_only:
      return false;
    case PatternKind::split:
      return s >= pattern_.split_step;
    case PatternKind::alternate:
      return ((s - schedule_.warmup - 1) / pattern_.segment_length) % 2 == 0;
  }
  return true;
}

std::vector<int> CacheEngine::reusable_blocks(int s) const {
  if (s <= schedule_.warmup) return {};
  return reuses_background(s) ? partition_.background : partition_.foreground;
}

Matrix CacheEngine::apply_step(std::span<const DiTBlock> blocks, Matrix h, int s,
                               const TraceFlags& flags, std::vector<BlockTrace>* trace) {
  const int layers = static_cast<int>(blocks.size());
  if (layers != partition_.layers()) {
    throw ContractError("cache engine partition covers " + std::to_string(partition_.layers()) +
                        " blocks, model has " + std::to_string(layers));
  }
  if (!h.allFinite()) {
    throw ContractError("non-finite hidden state entering step " + std::to_string(s));
  }
  auto trace_at = [&](int i) -> BlockTrace* {
    return trace ? &(*trace)[static_cast<std::size_t>(i)] : nullptr;
  };

  StepLog entry_log;
  entry_log.step = s;
  entry_log.compute = is_compute_step(s);

  if (entry_log.compute) {
    std::vector<DeltaEntry*> starts(static_cast<std::size_t>(layers), nullptr);
    std::vector<DeltaEntry*> ends(static_cast<std::size_t>(layers), nullptr);
    for (auto* list : {&background_, &foreground_}) {
      for (DeltaEntry& e : *list) {
        starts[static_cast<std::size_t>(e.first)] = &e;
        ends[static_cast<std::size_t>(e.last)] = &e;
      }
    }
    Matrix run_input;
    for (int i = 0; i < layers; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      if (starts[idx] != nullptr) run_input = h;
      h = execute_block(blocks[idx], h, s, flags, trace_at(i));
      if (DeltaEntry* e = ends[idx]) {
        Matrix delta = h - run_input;
        if (mode_ == DeltaMode::accumulated) {
          if (!e->accumulated) e->accumulated = Matrix::Zero(delta.rows(), delta.cols());
          *e->accumulated += delta;
        }
        e->delta = std::move(delta);
        e->computed_step = s;
      }
    }
    ledger_.executed += layers;
  } else {
    std::vector<DeltaEntry>& entries = reuses_background(s) ? background_ : foreground_;
    std::vector<bool> reusable(static_cast<std::size_t>(layers), false);
    for (int b : reusable_blocks(s)) reusable[static_cast<std::size_t>(b)] = true;
    std::vector<DeltaEntry*> starts(static_cast<std::size_t>(layers), nullptr);
    for (DeltaEntry& e : entries) starts[static_cast<std::size_t>(e.first)] = &e;

    for (int i = 0; i < layers;) {
      DeltaEntry* e = starts[static_cast<std::size_t>(i)];
      bool whole = e != nullptr;
      if (e != nullptr) {
        for (int b = e->first; b <= e->last; ++b) whole = whole && reusable[static_cast<std::size_t>(b)];
      }
      if (whole) {
        if (!e->delta) {
          throw StaleCacheError("cache entry [" + std::to_string(e->first) + ".." +
                                std::to_string(e->last) + "] has no delta at step " +
                                std::to_string(s));
        }
        h += (mode_ == DeltaMode::accumulated) ? *e->accumulated : *e->delta;
        for (int b = e->first; b <= e->last; ++b) entry_log.skipped.push_back(b);
        entry_log.reused_entries.push_back(e->first);
        i = e->last + 1;
      } else {
        h = execute_block(blocks[static_cast<std::size_t>(i)], h, s, flags, trace_at(i));
        ++i;
      }
    }
    const auto skipped = static_cast<std::int64_t>(entry_log.skipped.size());
    ledger_.skipped += skipped;
    ledger_.executed += layers - skipped;
  }
  ++ledger_.steps;
  log_.push_back(std::move(entry_log));
  return h;
}

void CacheEngine::reset() {
  for (auto* list : {&background_, &foreground_}) {
    for (DeltaEntry& e : *list) {
      e.delta.reset();
      e.accumulated.reset();
      e.computed_step = -1;
    }
  }
  ledger_ = {};
  log_.clear();
}

std::string CacheEngine::dump_state() const {
  std::ostringstream out;
  auto dump = [&](char list, const std::vector<DeltaEntry>& entries) {
    for (const DeltaEntry& e : entries) {
      out << list << ' ' << (e.is_run() ? "run" : "single") << ' ' << e.first << ' ' << e.last
          << ' ';
      if (e.delta) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(checksum(*e.delta)));
        out << buf;
      } else {
        out << '-';
      }
      out << '\n';
    }
  };
  dump('B', background_);
  dump('F', foreground_);
  return out.str();
}

}  // namespace semcache
