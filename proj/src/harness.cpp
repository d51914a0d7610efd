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

#include "semcache/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "semcache/rng.hpp"
#include "semcache/serialize.hpp"

namespace semcache {
namespace {

constexpr std::uint64_t kInputNoiseLabel = 0x6e6f697365;  // "noise"

std::string numbered(const char* pattern, int a, int b) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), pattern, a, b);
  return buf;
}

std::string csv_field(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return out;
}

std::string psnr_field(double v) { return std::isinf(v) ? "inf" : format_real(v); }

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

BlockPartition partition_for(const Experiment& exp, const CommandOptions& options) {
  if (options.partition_file) {
    BlockPartition p = parse_partition(read_text(*options.partition_file));
    if (p.layers() != exp.model.layers()) {
      throw IoError(options.partition_file->string() + ": partition covers " +
                    std::to_string(p.layers()) + " blocks, model has " +
                    std::to_string(exp.model.layers()));
    }
    return p;
  }
  return profile_experiment(exp).partition;
}

std::string report_text(const RunReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Scene generate_scene(const SceneSpec& spec, TokenGrid grid, int channels) {
  for (int f = 0; f < grid.frames; ++f) {
    const Rect r = spec.rect_at(f);
    if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > grid.width ||
        r.y + r.h > grid.height) {
      throw ConfigError("scene rectangle leaves the token grid in frame " + std::to_string(f));
    }
  }
  const double root_c = std::sqrt(static_cast<double>(channels));
  const Vector fg = spec.magnitude * root_c * signature_direction(channels, Signature::foreground);
  const Vector bg = spec.background * root_c * signature_direction(channels, Signature::background);
  const double texture = spec.texture * std::sqrt(3.0);

  Rng rng(derive_seed(spec.seed, {0}));
  Scene scene{LatentVideo::zeros(grid, channels), ForegroundMask::empty(grid, MaskSource::external)};
  for (int f = 0; f < grid.frames; ++f) {
    const Rect r = spec.rect_at(f);
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        const int tok = grid.index(f, y, x);
        Vector noise(channels);
        for (int c = 0; c < channels; ++c) noise[c] = rng.uniform(-texture, texture);
        const bool inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
        if (inside) {
          scene.x0.tokens.row(tok) = fg.transpose();
          scene.truth.bits[static_cast<std::size_t>(tok)] = 1;
        } else {
          scene.x0.tokens.row(tok) = (bg + noise).transpose();
        }
      }
    }
  }
  return scene;
}

Experiment prepare_experiment(const ExperimentConfig& config) {
  config.validate();
  DiTModel model = init_model(config.model);
  NoiseSchedule schedule = NoiseSchedule::linear(config.steps, config.beta_min, config.beta_max);
  Scene scene = generate_scene(config.scene, config.model.grid, config.model.channels);
  Rng rng(derive_seed(config.model.seed, {config.scene.seed, kInputNoiseLabel}));
  const LatentVideo z(config.model.grid,
                      rng.normal_matrix(config.model.grid.tokens(), config.model.channels));
  LatentVideo x_T = forward_diffuse(scene.x0, schedule.steps(), z, schedule);
  RunProvenance provenance{config.model.seed, config.model.layers, config.model.channels,
                           config.model.grid,  config.steps,        config.scene.seed};
  return Experiment{config, std::move(model), std::move(schedule), std::move(scene),
                    std::move(x_T), provenance};
}

ProfileResult profile_experiment(const Experiment& exp) {
  DenoiseOptions options;
  options.trace.attention = true;
  const DenoiseResult run = denoise_loop(exp.model, exp.x_T, exp.schedule, nullptr, options);
  ProfileOptions profile_options;
  profile_options.high_percentile = exp.config.high_percentile;
  profile_options.axis = exp.config.axis;
  if (exp.config.mask == MaskChoice::truth) profile_options.external_mask = exp.scene.truth;
  ProfileResult out;
  out.profile = profile_trace(run.trace, exp.model.layers(), profile_options);
  out.profile.tau = exp.config.tau;
  out.partition = partition_blocks(out.profile, exp.config.tau, exp.config.profile_range());
  return out;
}

RunOutput run_reference(const Experiment& exp, const DenoiseOptions& options) {
  RunOutput out;
  out.result = denoise_loop(exp.model, exp.x_T, exp.schedule, nullptr, options);
  out.artifacts = {"reference", exp.provenance, out.result.x0_hat, out.result.stats.executed_blocks,
                   out.result.stats.skipped_blocks, out.result.stats.wall_ms};
  return out;
}

RunOutput run_cached(const Experiment& exp, CacheEngine& engine, const DenoiseOptions& options) {
  RunOutput out;
  out.result = denoise_loop(exp.model, exp.x_T, exp.schedule, &engine, options);
  out.artifacts = {engine.pattern().describe() + " " + engine.schedule().describe(),
                   exp.provenance,
                   out.result.x0_hat,
                   out.result.stats.executed_blocks,
                   out.result.stats.skipped_blocks,
                   out.result.stats.wall_ms};
  return out;
}

CacheEngine make_engine(const Experiment& exp, const BlockPartition& partition,
                        const ScheduleSpec& schedule, const ReusePattern& pattern) {
  return CacheEngine(partition, schedule.build(exp.config.warmup, exp.config.steps), pattern,
                     exp.config.delta_mode);
}

std::vector<GrayImage> render_frames(const LatentVideo& latent) {
  const TokenGrid& g = latent.grid;
  const Vector norms = latent.tokens.rowwise().norm();
  const double lo = norms.minCoeff();
  const double hi = norms.maxCoeff();
  std::vector<GrayImage> frames;
  for (int f = 0; f < g.frames; ++f) {
    GrayImage img{g.width, g.height, std::vector<std::uint8_t>(static_cast<std::size_t>(g.tokens_per_frame()))};
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const double v = hi > lo ? (norms[g.index(f, y, x)] - lo) / (hi - lo) : 0.0;
        img.pixels[static_cast<std::size_t>(y * g.width + x)] =
            static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

std::vector<std::string> cmd_profile(const ExperimentConfig& config, const CommandOptions& options) {
  ensure_dir(options.out_dir);
  const Experiment exp = prepare_experiment(config);
  const ProfileResult result = profile_experiment(exp);
  write_text(options.out_dir / "heatmap.csv", heatmap_csv(export_heatmap(result.profile)));
  write_text(options.out_dir / "partition.txt", format_partition(result.partition));
  return {"heatmap.csv", "partition.txt"};
}

std::vector<std::string> cmd_run(const ExperimentConfig& config, const CommandOptions& options) {
  ensure_dir(options.out_dir);
  const Experiment exp = prepare_experiment(config);
  const BlockPartition partition = partition_for(exp, options);
  std::vector<std::string> written;

  std::optional<RunOutput> reference;
  RunArtifacts reference_artifacts;
  if (config.reference_run) {
    reference = run_reference(exp);
    reference_artifacts = reference->artifacts;
    save_latent(options.out_dir / "final_reference.pdit", reference_artifacts.final_latent);
    written.push_back("final_reference.pdit");
  } else {
    reference_artifacts = {"reference", exp.provenance,
                           load_latent(options.out_dir / "final_reference.pdit"), 0, 0, 0.0};
  }

  CacheEngine engine =
      make_engine(exp, partition, config.schedule, config.pattern.build(config.warmup, config.steps));
  DenoiseOptions run_options;
  run_options.keep_latents = options.frames;
  run_options.trace.attention = options.trace;
  run_options.trace.boundaries = options.trace;
  const RunOutput cached = run_cached(exp, engine, run_options);

  CompareOptions compare;
  compare.timing = options.timing;
  const RunReport report = compare_runs(cached.artifacts, reference_artifacts, compare);
  write_text(options.out_dir / "report.json", report_text(report));
  written.push_back("report.json");

  std::vector<double> executed;
  for (int v : cached.result.stats.executed_per_step) executed.push_back(v);
  write_text(options.out_dir / "executed_blocks.csv", series_csv("step,value", executed));
  written.push_back("executed_blocks.csv");

  if (reference) {
    std::vector<double> step_l1;
    for (std::size_t s = 0; s < cached.result.trace.size(); ++s) {
      step_l1.push_back(mean_l1(cached.result.trace[s].noise_pred,
                                reference->result.trace[s].noise_pred));
    }
    write_text(options.out_dir / "step_l1.csv", series_csv("step,value", step_l1));
    written.push_back("step_l1.csv");
  }

  save_latent(options.out_dir / "final_cached.pdit", cached.result.x0_hat);
  written.push_back("final_cached.pdit");
  write_text(options.out_dir / "partition_used.txt", format_partition(partition));
  written.push_back("partition_used.txt");
  write_text(options.out_dir / "cache_state.txt", engine.dump_state());
  written.push_back("cache_state.txt");

  if (options.frames) {
    ensure_dir(options.out_dir / "frames");
    for (std::size_t s = 0; s < cached.result.latents.size(); ++s) {
      const auto images = render_frames(cached.result.latents[s]);
      for (std::size_t f = 0; f < images.size(); ++f) {
        const std::string name =
            numbered("frames/step_%04d_frame_%03d.pgm", static_cast<int>(s), static_cast<int>(f));
        write_pgm(options.out_dir / name, images[f]);
        written.push_back(name);
      }
    }
  }
  if (options.trace) {
    ensure_dir(options.out_dir / "trace");
    for (const StepRecord& rec : cached.result.trace) {
      for (std::size_t b = 0; b < rec.blocks.size(); ++b) {
        const BlockTrace& t = rec.blocks[b];
        const std::string stem =
            numbered("trace/step_%04d_block_%03d", rec.step, static_cast<int>(b));
        const std::pair<const std::optional<Matrix>*, const char*> parts[] = {
            {&t.attention, "_attn.pdit"}, {&t.h_in, "_hin.pdit"}, {&t.h_out, "_hout.pdit"}};
        for (const auto& [m, suffix] : parts) {
          if (!*m) continue;
          save_tensor(options.out_dir / (stem + suffix), matrix_to_tensor(**m));
          written.push_back(stem + suffix);
        }
      }
    }
  }
  return written;
}

std::vector<std::string> cmd_ablate(const ExperimentConfig& config, const CommandOptions& options) {
  ensure_dir(options.out_dir);
  const Experiment exp = prepare_experiment(config);
  const BlockPartition partition = partition_for(exp, options);
  const RunOutput reference = run_reference(exp);

  std::string csv =
      "pattern,schedule,latent_psnr_db,latent_ssim,mean_l1,speedup_flops,skipped_fraction,wall_ms,"
      "status\n";
  auto wall = [&](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };

  CompareOptions compare;
  compare.timing = options.timing;
  const RunReport self = compare_runs(reference.artifacts, reference.artifacts, compare);
  csv += "reference,none," + psnr_field(self.psnr) + "," + format_real(self.ssim) + "," +
         format_real(self.mean_l1) + "," + format_real(self.speedup_flops) + "," +
         format_real(self.skipped_fraction()) + "," + wall(self.wall_ms) + ",ok\n";

  for (PatternKind kind : config.ablate_patterns) {
    for (const ScheduleSpec& schedule : config.ablate_schedules) {
      PatternSpec pattern_spec = config.pattern;
      pattern_spec.kind = kind;
      const std::string prefix = pattern_name(kind) + "," + schedule.describe() + ",";
      try {
        CacheEngine engine =
            make_engine(exp, partition, schedule, pattern_spec.build(config.warmup, config.steps));
        const RunOutput cached = run_cached(exp, engine);
        const RunReport r = compare_runs(cached.artifacts, reference.artifacts, compare);
        csv += prefix + psnr_field(r.psnr) + "," + format_real(r.ssim) + "," +
               format_real(r.mean_l1) + "," + format_real(r.speedup_flops) + "," +
               format_real(r.skipped_fraction()) + "," + wall(r.wall_ms) + ",ok\n";
      } catch (const Error& e) {
        csv += prefix + ",,,,,," + csv_field(std::string("error: ") + e.what()) + "\n";
      }
    }
  }
  write_text(options.out_dir / "ablation.csv", csv);
  return {"ablation.csv"};
}

std::vector<std::string> cmd_l1curve(const ExperimentConfig& config, const CommandOptions& options) {
  ensure_dir(options.out_dir);
  const Experiment exp = prepare_experiment(config);
  const RunOutput reference = run_reference(exp);
  std::vector<LatentVideo> predictions;
  for (const StepRecord& rec : reference.result.trace) predictions.push_back(rec.noise_pred);
  const std::vector<double> l1 = l1_step_distance(predictions);
  write_text(options.out_dir / "l1.csv", series_csv("step,l1", l1));
  return {"l1.csv"};
}

std::vector<std::string> cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b,
                                     const CommandOptions& options) {
  ensure_dir(options.out_dir);
  const LatentVideo test = load_latent(a);
  const LatentVideo reference = load_latent(b);
  const double peak = dynamic_range(reference);
  const TokenGrid& g = reference.grid;
  const int window = std::min({kSsimWindow, g.height, g.width});
  const double p = psnr(test, reference, peak);

  nlohmann::ordered_json j;
  j["test"] = a.filename().string();
  j["reference"] = b.filename().string();
  j["metric_space"] = "latent";
  if (std::isinf(p)) {
    j["latent_psnr_db"] = "inf";
  } else {
    j["latent_psnr_db"] = p;
  }
  j["latent_ssim"] = ssim(test, reference, peak, window);
  j["mean_l1"] = mean_l1(test, reference);
  j["peak"] = peak;
  write_text(options.out_dir / "compare.json", j.dump(2) + "\n");
  return {"compare.json"};
}

}  // namespace semcache
