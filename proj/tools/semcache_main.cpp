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

// Command-line driver: semcache {profile,run,ablate,l1curve,compare}.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "semcache/errors.hpp"
#include "semcache/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitContract = 3;
constexpr int kExitIo = 4;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool frames = false;
  bool trace = false;
  bool timing = false;
  std::string partition;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Experiment config file");
  cmd->add_option("--out", flags.out, "Output directory (overrides output.dir)");
  cmd->add_option("--seed", flags.seed, "Model seed (overrides model.seed)");
  cmd->add_flag("--frames", flags.frames, "Write per-step PGM frames");
  cmd->add_flag("--trace", flags.trace, "Write attention and block boundary tensors");
  cmd->add_flag("--timing", flags.timing, "Record wall-clock fields in reports");
}

semcache::ExperimentConfig resolve_config(const CommonFlags& flags) {
  semcache::ExperimentConfig config =
      flags.config.empty() ? semcache::ExperimentConfig() : semcache::load_config(flags.config);
  if (flags.seed) config.model.seed = *flags.seed;
  if (!flags.out.empty()) config.output_dir = flags.out;
  config.validate();
  return config;
}

semcache::CommandOptions command_options(const CommonFlags& flags,
                                         const semcache::ExperimentConfig& config) {
  semcache::CommandOptions options;
  options.out_dir = config.output_dir;
  options.frames = flags.frames;
  options.trace = flags.trace;
  options.timing = flags.timing;
  if (!flags.partition.empty()) options.partition_file = flags.partition;
  return options;
}

void report_written(const std::filesystem::path& dir, const std::vector<std::string>& files) {
  for (const std::string& f : files) std::cout << (dir / f).string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-level feature caching for a toy video diffusion transformer"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string compare_a;
  std::string compare_b;

  CLI::App* profile = app.add_subcommand("profile", "Profile blocks and write a partition");
  add_common(profile, flags);

  CLI::App* run = app.add_subcommand("run", "Reference and cached runs with a report");
  add_common(run, flags);
  run->add_option("--partition", flags.partition, "Partition file (default: profile first)");

  CLI::App* ablate = app.add_subcommand("ablate", "Pattern x schedule grid against one reference");
  add_common(ablate, flags);
  ablate->add_option("--partition", flags.partition, "Partition file (default: profile first)");

  CLI::App* l1curve = app.add_subcommand("l1curve", "Per-step L1 distance of noise predictions");
  add_common(l1curve, flags);

  CLI::App* compare = app.add_subcommand("compare", "Compare two saved final latents");
  add_common(compare, flags);
  compare->add_option("--a", compare_a, "Test latent (.pdit)")->required();
  compare->add_option("--b", compare_b, "Reference latent (.pdit)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const semcache::ExperimentConfig config = resolve_config(flags);
    const semcache::CommandOptions options = command_options(flags, config);
    std::vector<std::string> written;
    if (profile->parsed()) {
      written = semcache::cmd_profile(config, options);
    } else if (run->parsed()) {
      written = semcache::cmd_run(config, options);
    } else if (ablate->parsed()) {
      written = semcache::cmd_ablate(config, options);
    } else if (l1curve->parsed()) {
      written = semcache::cmd_l1curve(config, options);
    } else {
      written = semcache::cmd_compare(compare_a, compare_b, options);
    }
    report_written(options.out_dir, written);
  } catch (const semcache::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const semcache::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const semcache::Error& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  return 0;
}
