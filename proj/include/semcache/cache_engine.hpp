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

// Block-level delta caching driven by a step-level schedule.
//
// On a compute step every block runs and each cache entry stores
//   delta = h_out(last block of entry) - h_in(first block of entry).
// On a utilization step every entry whose blocks are all reusable is
// replaced by a single `h += delta`; all other blocks run normally.
//
// Steps s <= warmup always compute. Past warm-up a step computes when
// (s - warmup) mod T_s == 0, where T_s comes from the schedule.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semcache/dit.hpp"
#include "semcache/profiler.hpp"

namespace semcache {

struct DeltaEntry {
  int first = 0;
  int last = 0;  // inclusive; last > first for a run
  std::optional<Matrix> delta;
  std::optional<Matrix> accumulated;
  int computed_step = -1;

  bool is_run() const { return last > first; }
  int length() const { return last - first + 1; }
  bool covers(int block) const { return block >= first && block <= last; }

  friend bool operator==(const DeltaEntry& a, const DeltaEntry& b) {
    return a.first == b.first && a.last == b.last;
  }
};

// Maximal runs of consecutive indices become run entries, isolated indices
// single entries. `blocks` must be sorted ascending without duplicates.
std::vector<DeltaEntry> build_delta_list(std::span<const int> blocks);
std::vector<DeltaEntry> build_delta_list(const BlockPartition& partition);

enum class ScheduleKind { stepwise, step_inverse, step_average, adaptive };

struct StepSchedule {
  ScheduleKind kind = ScheduleKind::step_average;
  std::vector<int> intervals;  // stepwise / step_inverse
  int fixed = 1;               // step_average
  int t_max = 12;              // adaptive
  int t_min = 3;               // adaptive
  int warmup = 0;              // s_0
  int total = 1;               // S

  static StepSchedule stepwise(std::vector<int> intervals, int warmup, int total);
  static StepSchedule step_inverse(std::vector<int> intervals, int warmup, int total);
  static StepSchedule step_average(int interval, int warmup, int total);
  static StepSchedule adaptive(int t_max, int t_min, int warmup, int total);

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
  std::string describe() const;
};

// Adaptive interval before rounding:
//   T_max - (T_max - T_min) * (s - s_0) / (S - s_0)
double adaptive_interval_exact(const StepSchedule& schedule, int s);

// Caching interval at step s, for s_0 <= s <= S. Listed intervals split
// [s_0, S) into equal contiguous phases, the remainder going to the last
// phase; adaptive intervals are rounded half-up and clamped to >= 1.
int interval_at(const StepSchedule& schedule, int s);

// Index of the listed-interval phase containing s.
int phase_at(const StepSchedule& schedule, int s);

enum class PatternKind { background_only, foreground_only, split, alternate };

struct ReusePattern {
  PatternKind kind = PatternKind::background_only;
  int split_step = 0;      // split: F reused before, B from this step on
  int segment_length = 1;  // alternate: B on even segments, F on odd

  static ReusePattern background_only() { return {}; }
  static ReusePattern foreground_only() { return {PatternKind::foreground_only, 0, 1}; }
  static ReusePattern split(int boundary) { return {PatternKind::split, boundary, 1}; }
  static ReusePattern alternate(int length) { return {PatternKind::alternate, 0, length}; }

  bool uses_foreground() const;
  bool uses_background() const;
  std::string describe() const;
};

// latest reuses the most recent delta; accumulated reuses the running sum of
// every delta computed since the last reset.
enum class DeltaMode { latest, accumulated };

struct FlopLedger {
  std::int64_t executed = 0;  // block evaluations
  std::int64_t skipped = 0;
  int steps = 0;
};

struct StepLog {
  int step = 0;
  bool compute = false;
  std::vector<int> skipped;
  std::vector<int> reused_entries;  // first block of each reused entry
};

class CacheEngine {
 public:
  CacheEngine(BlockPartition partition, StepSchedule schedule, ReusePattern pattern,
              DeltaMode mode = DeltaMode::latest);

  bool is_compute_step(int s) const;

  // Block set eligible for reuse at a utilization step.
  std::vector<int> reusable_blocks(int s) const;

  // Runs all blocks for step s, reusing cached deltas where allowed.
  Matrix apply_step(std::span<const DiTBlock> blocks, Matrix h, int s,
                    const TraceFlags& flags = {}, std::vector<BlockTrace>* trace = nullptr);

  void reset();

  const BlockPartition& partition() const { return partition_; }
  const StepSchedule& schedule() const { return schedule_; }
  const ReusePattern& pattern() const { return pattern_; }
  DeltaMode mode() const { return mode_; }
  const FlopLedger& ledger() const { return ledger_; }
  const std::vector<StepLog>& log() const { return log_; }

  const std::vector<DeltaEntry>& background_entries() const { return background_; }
  const std::vector<DeltaEntry>& foreground_entries() const { return foreground_; }

  // One line per entry: list, kind, indices, FNV-1a of the stored delta.
  std::string dump_state() const;

 private:
  bool reuses_background(int s) const;

  BlockPartition partition_;
  StepSchedule schedule_;
  ReusePattern pattern_;
  DeltaMode mode_;
  std::vector<DeltaEntry> background_;
  std::vector<DeltaEntry> foreground_;
  FlopLedger ledger_;
  std::vector<StepLog> log_;
};

}  // namespace semcache
