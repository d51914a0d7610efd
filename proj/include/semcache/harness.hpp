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

// Experiment driver: synthetic scenes, the profile -> partition -> cached
// run -> report pipeline, and the file-emitting commands behind the CLI.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semcache/cache_engine.hpp"
#include "semcache/config.hpp"
#include "semcache/metrics.hpp"
#include "semcache/pgm.hpp"
#include "semcache/profiler.hpp"

namespace semcache {

struct Scene {
  LatentVideo x0;
  ForegroundMask truth;
};

// Foreground tokens carry `magnitude` along the foreground signature, the
// rest `background` along the background signature plus uniform texture
// noise of amplitude `texture`. Values are per-channel RMS.
Scene generate_scene(const SceneSpec& spec, TokenGrid grid, int channels);

// Everything a run needs, derived deterministically from a config.
struct Experiment {
  ExperimentConfig config;
  DiTModel model;
  NoiseSchedule schedule;
  Scene scene;
  LatentVideo x_T;
  RunProvenance provenance;
};

Experiment prepare_experiment(const ExperimentConfig& config);

struct ProfileResult {
  BlockProfile profile;
  BlockPartition partition;
};

// Traced uncached run followed by profiling and partitioning.
ProfileResult profile_experiment(const Experiment& experiment);

struct RunOutput {
  RunArtifacts artifacts;
  DenoiseResult result;
};

RunOutput run_reference(const Experiment& experiment, const DenoiseOptions& options = {});
RunOutput run_cached(const Experiment& experiment, CacheEngine& engine,
                     const DenoiseOptions& options = {});

CacheEngine make_engine(const Experiment& experiment, const BlockPartition& partition,
                        const ScheduleSpec& schedule, const ReusePattern& pattern);

struct CommandOptions {
  std::filesystem::path out_dir;
  bool frames = false;
  bool trace = false;
  bool timing = false;
  std::optional<std::filesystem::path> partition_file;
};

// Each command writes its outputs under options.out_dir and returns the list
// of files written, relative to it.
std::vector<std::string> cmd_profile(const ExperimentConfig& config, const CommandOptions& options);
std::vector<std::string> cmd_run(const ExperimentConfig& config, const CommandOptions& options);
std::vector<std::string> cmd_ablate(const ExperimentConfig& config, const CommandOptions& options);
std::vector<std::string> cmd_l1curve(const ExperimentConfig& config, const CommandOptions& options);
std::vector<std::string> cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b,
                                     const CommandOptions& options);

// Per-token L2 norm of each frame, scaled to 0..255 over the whole latent.
std::vector<GrayImage> render_frames(const LatentVideo& latent);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace semcache
