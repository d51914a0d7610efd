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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "semcache/cache_engine.hpp"
#include "semcache/harness.hpp"
#include "semcache/metrics.hpp"
#include "semcache/profiler.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace semcache;
using semcache::testing::Gen;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void check(const std::string& name, const std::function<Outcome()>& body) {
  Outcome r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  if (!r.pass) ++failures;
  std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", name.c_str(), r.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

// L=8, C=16, one 8x8 frame (N=64), S=20.
struct Fixture {
  DiTModel model;
  NoiseSchedule schedule;
  LatentVideo x_T;
};

Fixture make_fixture(std::uint64_t seed, int steps = 20) {
  const TokenGrid grid{1, 8, 8};
  Fixture f{init_model(testing::small_model(seed, 8, 16, grid)),
            NoiseSchedule::linear(steps, 0.005, 0.05), LatentVideo{}};
  Gen g(seed);
  f.x_T = testing::random_latent(g, grid, 16, 1.5);
  return f;
}

double max_abs_diff(const LatentVideo& a, const LatentVideo& b) {
  return (a.tokens - b.tokens).cwiseAbs().maxCoeff();
}

Outcome cache_off_equivalence() {
  const Fixture f = make_fixture(42);
  const auto start = std::chrono::steady_clock::now();
  const DenoiseResult plain = denoise_loop(f.model, f.x_T, f.schedule, nullptr);
  CacheEngine engine(BlockPartition::all_foreground(8), StepSchedule::stepwise({12, 9, 6, 3}, 2, 20),
                     ReusePattern::background_only());
  const DenoiseResult cached = denoise_loop(f.model, f.x_T, f.schedule, &engine);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool same = plain.x0_hat == cached.x0_hat;
  return {same && seconds < 5.0,
          std::string(same ? "bitwise identical" : "latents differ") +
              fmt(", both runs %.3f s (limit 5 s)", seconds)};
}

Outcome interval_one_equivalence() {
  Gen g(101);
  double worst = 0.0;
  const Fixture f = make_fixture(7);
  const DenoiseResult plain = denoise_loop(f.model, f.x_T, f.schedule, nullptr);
  const ReusePattern patterns[] = {ReusePattern::background_only(), ReusePattern::foreground_only(),
                                   ReusePattern::split(10), ReusePattern::alternate(2)};
  int runs = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const BlockPartition p = testing::random_partition(g, 8);
    for (const ReusePattern& pattern : patterns) {
      CacheEngine engine(p, StepSchedule::step_average(1, testing::uniform_int(g, 0, 5), 20), pattern);
      const DenoiseResult cached = denoise_loop(f.model, f.x_T, f.schedule, &engine);
      worst = std::max(worst, max_abs_diff(plain.x0_hat, cached.x0_hat));
      ++runs;
    }
  }
  return {worst <= 1e-10, fmt("%.0f runs, max |diff| = %.3g (tol 1e-10)", runs, worst)};
}

Outcome warmup_equivalence() {
  const Fixture f = make_fixture(9);
  DenoiseOptions opts;
  opts.keep_latents = true;
  const DenoiseResult plain = denoise_loop(f.model, f.x_T, f.schedule, nullptr, opts);
  Gen g(3);
  bool same = true;
  for (int trial = 0; trial < 5; ++trial) {
    CacheEngine engine(testing::random_partition(g, 8), StepSchedule::step_average(2, 19, 20),
                       ReusePattern::background_only());
    const DenoiseResult cached = denoise_loop(f.model, f.x_T, f.schedule, &engine, opts);
    same = same && cached.latents.size() == plain.latents.size();
    for (std::size_t s = 0; same && s < plain.latents.size(); ++s) {
      same = cached.latents[s] == plain.latents[s];
    }
    same = same && engine.ledger().skipped == 0;
  }
  return {same, same ? "5 partitions, s0=S-1: every step bitwise identical, nothing skipped"
                     : "latents diverged"};
}

Outcome delta_list_oracle() {
  Gen g(2024);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int layers = testing::uniform_int(g, 1, 16);
    const BlockPartition p = testing::random_partition(g, layers, testing::uniform_real(g, 0, 1));
    const auto entries = build_delta_list(p);
    const auto runs = testing::brute_force_runs(p.background, layers);
    bool ok = entries.size() == runs.size();
    std::vector<int> covered;
    for (std::size_t i = 0; ok && i < entries.size(); ++i) {
      ok = entries[i].first == runs[i].first && entries[i].last == runs[i].second;
      for (int b = entries[i].first; b <= entries[i].last; ++b) covered.push_back(b);
    }
    ok = ok && covered == p.background;
    if (!ok) ++bad;
  }
  return {bad == 0, fmt("1000 random partitions, %.0f mismatches", bad)};
}

Outcome r_attn_oracle() {
  Gen g(77);
  int bad = 0;
  int undefined = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int frames = testing::uniform_int(g, 1, 4);
    const int per = testing::uniform_int(g, 1, 32 / frames);
    const int h = testing::uniform_int(g, 1, per);
    const TokenGrid grid{frames, 1, per};
    const int n = grid.tokens();
    const Matrix a = testing::random_stochastic(g, n);
    const Vector scores = aggregate_attention(a);
    ForegroundMask mask = ForegroundMask::empty(grid, MaskSource::external);
    const double density = trial % 10 == 0 ? 0.0 : testing::uniform_real(g, 0, 1);
    std::vector<int> bits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      bits[static_cast<std::size_t>(i)] = testing::uniform_real(g, 0, 1) < density ? 1 : 0;
      mask.bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(bits[static_cast<std::size_t>(i)]);
    }
    std::vector<double> sv(scores.data(), scores.data() + n);
    const double threshold = trial % 3 == 0 ? sv[static_cast<std::size_t>(testing::uniform_int(g, 0, n - 1))]
                                            : testing::uniform_real(g, 0.0, 2.0 / n);
    (void)h;
    const auto got = compute_r_attn(scores, mask, threshold);
    const auto want = testing::counting_r_attn(sv, bits, frames, threshold);
    const bool no_fg = std::count(bits.begin(), bits.end(), 1) == 0;
    if (!got) ++undefined;
    bool ok = got.has_value() == want.has_value() && got.has_value() == !no_fg;
    if (ok && got) ok = *got == *want && *got >= 0.0 && *got <= 1.0;
    if (!ok) ++bad;
  }
  return {bad == 0, fmt("200 triples (%.0f undefined), %.0f mismatches", undefined, bad)};
}

Outcome schedule_formulas() {
  Gen g(5);
  std::string problems;
  const StepSchedule defaults = StepSchedule::adaptive(12, 3, 10, 50);
  if (interval_at(defaults, 10) != 12) problems += " T(s0)!=Tmax";
  if (interval_at(defaults, 50) != 3) problems += " T(S)!=Tmin";
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int total = testing::uniform_int(g, 3, 200);
    const int warmup = testing::uniform_int(g, 0, total - 2);
    const int t_min = testing::uniform_int(g, 1, 10);
    const int t_max = testing::uniform_int(g, t_min, 30);
    const StepSchedule sch = StepSchedule::adaptive(t_max, t_min, warmup, total);
    if (interval_at(sch, warmup) != t_max || interval_at(sch, total) != t_min) {
      problems += " endpoint";
    }
    const int s = testing::uniform_int(g, warmup + 1, total - 1);
    const double frac = static_cast<double>(s - warmup) / static_cast<double>(total - warmup);
    const double expect = static_cast<double>(t_max) - static_cast<double>(t_max - t_min) * frac;
    worst = std::max(worst, std::abs(adaptive_interval_exact(sch, s) - expect));
    const int rounded = std::max(1, static_cast<int>(std::floor(expect + 0.5)));
    if (std::abs(expect - std::floor(expect) - 0.5) > 1e-9 && interval_at(sch, s) != rounded) {
      problems += " rounding";
    }
  }
  if (worst > 1e-12) problems += " pre-rounding error";

  auto monotone = [](const StepSchedule& sch) {
    for (int s = sch.warmup + 1; s <= sch.total; ++s) {
      if (interval_at(sch, s) > interval_at(sch, s - 1)) return false;
    }
    return true;
  };
  int lists = 0;
  if (!monotone(StepSchedule::stepwise({12, 9, 6, 3}, 2, 50))) problems += " {12,9,6,3}";
  for (int i = 0; i < 200; ++i) {
    std::vector<int> iv(static_cast<std::size_t>(testing::uniform_int(g, 1, 6)));
    for (int& t : iv) t = testing::uniform_int(g, 1, 20);
    std::sort(iv.rbegin(), iv.rend());
    const int total = testing::uniform_int(g, 2, 120);
    const int warmup = testing::uniform_int(g, 0, total - 1);
    if (!monotone(StepSchedule::stepwise(iv, warmup, total))) problems += " stepwise";
    ++lists;
  }
  return {problems.empty(),
          fmt("endpoints exact, 100 interior points max err %.3g (tol 1e-12), %.0f stepwise lists "
              "monotone",
              worst, lists + 1) +
              problems};
}

Outcome flop_conservation() {
  Gen g(11);
  std::string problems;
  for (int trial = 0; trial < 50; ++trial) {
    const int layers = testing::uniform_int(g, 2, 6);
    const int channels = 4 * testing::uniform_int(g, 1, 3);
    const TokenGrid grid{testing::uniform_int(g, 1, 2), testing::uniform_int(g, 2, 4),
                         testing::uniform_int(g, 2, 4)};
    const int steps = testing::uniform_int(g, 2, 12);
    const DiTModel model = init_model(testing::small_model(g(), layers, channels, grid));
    const NoiseSchedule schedule = NoiseSchedule::linear(steps, 0.005, 0.05);
    const LatentVideo x = testing::random_latent(g, grid, channels);
    const int warmup = testing::uniform_int(g, 0, steps - 1);
    StepSchedule sch = StepSchedule::step_average(testing::uniform_int(g, 1, 4), warmup, steps);
    if (trial % 2 == 1) sch = StepSchedule::stepwise({5, 3, 2}, warmup, steps);
    const ReusePattern patterns[] = {ReusePattern::background_only(),
                                     ReusePattern::foreground_only(), ReusePattern::alternate(1)};
    CacheEngine engine(testing::random_partition(g, layers), sch, patterns[trial % 3]);
    const DenoiseResult run = denoise_loop(model, x, schedule, &engine);
    const RunProvenance prov{model.config.seed, layers, channels, grid, steps, 0};
    const RunReport r = compare_runs({"test", prov, run.x0_hat, run.stats.executed_blocks,
                                      run.stats.skipped_blocks, 0.0},
                                     {"ref", prov, run.x0_hat, 0, 0, 0.0}, {});
    if (r.flops_executed + r.flops_skipped != flops_full_run(model, steps)) problems += " sum";
    if (run.stats.executed_blocks + run.stats.skipped_blocks !=
        static_cast<std::int64_t>(layers) * steps) {
      problems += " count";
    }
  }

  // Half of the blocks in B, T=2 from s0=0: every odd step reuses B.
  const int steps = 20;
  const Fixture f = make_fixture(13, steps);
  const BlockPartition half = BlockPartition::from_background({1, 2, 5, 6}, 8);
  CacheEngine engine(half, StepSchedule::step_average(2, 0, steps), ReusePattern::background_only());
  const DenoiseResult run = denoise_loop(f.model, f.x_T, f.schedule, &engine);
  RunProvenance prov{f.model.config.seed, 8, 16, f.model.grid(), steps, 0};
  const RunReport r = compare_runs(
      {"test", prov, run.x0_hat, run.stats.executed_blocks, run.stats.skipped_blocks, 0.0},
      {"ref", prov, run.x0_hat, 0, 0, 0.0}, {});
  const std::int64_t n = 64;
  const std::int64_t block = FlopModel::block(n, 16);
  const std::int64_t full = FlopModel::full_run(8, n, 16, steps);
  const std::int64_t skipped = 4 * (steps / 2) * block;
  const double predicted = static_cast<double>(full) / static_cast<double>(full - skipped);
  if (r.flops_skipped != skipped) problems += " half-B skipped";
  if (r.speedup_flops != predicted) problems += " half-B speedup";
  return {problems.empty(),
          fmt("50 configs conserve exactly; half-B T=2 s0=0 speedup %.15g vs predicted %.15g",
              r.speedup_flops, predicted) +
              problems};
}

Outcome metric_references() {
  std::string problems;
  const TokenGrid grid{1, 8, 8};
  LatentVideo a = LatentVideo::zeros(grid, 2);
  LatentVideo b = a;
  for (Eigen::Index i = 0; i < b.tokens.size(); i += 2) b.tokens.data()[i] = 1.0;
  const double p = psnr(a, b, 1.0);
  if (std::abs(p - 10.0 * std::log10(2.0)) > 1e-9) problems += " psnr";

  Gen g(99);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const TokenGrid gg{testing::uniform_int(g, 1, 2), testing::uniform_int(g, 8, 12),
                       testing::uniform_int(g, 8, 12)};
    const int c = testing::uniform_int(g, 1, 3);
    const LatentVideo x = testing::random_latent(g, gg, c, 2.0);
    LatentVideo y = x;
    for (Eigen::Index k = 0; k < y.tokens.size(); ++k) {
      y.tokens.data()[k] += testing::uniform_real(g, -0.5, 0.5);
    }
    if (ssim(x, x, 4.0) != 1.0) problems += " ssim(a,a)";
    worst = std::max(worst, std::abs(ssim(x, y, 4.0) - testing::brute_force_ssim(x, y, 4.0, 8)));
  }
  if (worst > 1e-12) problems += " ssim oracle";
  return {problems.empty(),
          fmt("psnr %.12f dB vs 10log10(2); ssim(a,a)=1 on 20 frames; 20 pairs max err %.3g "
              "(tol 1e-12)",
              p, worst) +
              problems};
}

Outcome segmentation_recovery() {
  Gen g(31);
  double worst = 1.0;
  for (int i = 0; i < 20; ++i) {
    SceneSpec spec;
    spec.seed = g();
    spec.rect = {testing::uniform_int(g, 0, 3), testing::uniform_int(g, 0, 4), 3, 3};
    spec.motion_x = testing::uniform_int(g, 0, 1);
    spec.motion_y = spec.rect.y <= 3 ? testing::uniform_int(g, 0, 1) : 0;
    const Scene scene = generate_scene(spec, TokenGrid{2, 8, 8}, 16);
    worst = std::min(worst, mask_iou(segment_foreground(scene.x0), scene.truth));
  }
  return {worst >= 0.9, fmt("20 scenes, min IoU %.4f (need >= 0.9)", worst)};
}

Outcome end_to_end_direction() {
  double l1_background = 0.0;
  double l1_random = 0.0;
  double min_skipped = 1.0;
  std::string problems;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ExperimentConfig config;
    config.model.seed = seed;
    config.scene.seed = 100 + seed;
    const Experiment exp = prepare_experiment(config);
    const BlockPartition partition = profile_experiment(exp).partition;
    if (partition.background.empty()) problems += " empty-B";
    const RunOutput reference = run_reference(exp);
    const ReusePattern bg = ReusePattern::background_only();

    CacheEngine semantic = make_engine(exp, partition, config.schedule, bg);
    const RunOutput a = run_cached(exp, semantic);
    const RunReport ra = compare_runs(a.artifacts, reference.artifacts);

    Gen g(seed * 7919);
    const BlockPartition random = testing::random_background(
        g, exp.model.layers(), static_cast<int>(partition.background.size()));
    CacheEngine blind = make_engine(exp, random, config.schedule, bg);
    const RunOutput b = run_cached(exp, blind);
    const RunReport rb = compare_runs(b.artifacts, reference.artifacts);

    l1_background += ra.mean_l1 / 10.0;
    l1_random += rb.mean_l1 / 10.0;
    min_skipped = std::min(min_skipped, ra.skipped_fraction());
  }
  const bool pass = problems.empty() && min_skipped > 0.3 && l1_background < l1_random;
  return {pass, fmt("10 seeds: mean L1 background %.5f vs random %.5f, min skipped %.3f (need > 0.3)",
                    l1_background, l1_random, min_skipped) +
                    problems};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return read_text(a) == read_text(b);
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "semcache_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  write_text(root / "exp.cfg",
             "schedule.steps = 20\n"
             "schedule.warmup = 2\n"
             "ablate.schedules = stepwise:4/3/2/1, adaptive:4/1\n");
  const std::string cli = SEMCACHE_CLI_PATH;
  const std::string cfg = (root / "exp.cfg").string();
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"profile", ""},
      {"run", " --frames --trace"},
      {"ablate", ""},
      {"l1curve", ""},
  };
  int files = 0;
  std::string problems;
  for (const auto& [name, extra] : commands) {
    for (const char* rep : {"a", "b"}) {
      const fs::path out = root / (name + "_" + rep);
      const std::string line = "\"" + cli + "\" " + name + " --config \"" + cfg + "\" --out \"" +
                               out.string() + "\"" + extra + " > \"" + (root / "log.txt").string() +
                               "\" 2>&1";
      if (std::system(line.c_str()) != 0) problems += " " + name + " failed";
    }
  }
  const fs::path run_a = root / "run_a";
  for (const char* rep : {"a", "b"}) {
    const std::string line = "\"" + cli + "\" compare --a \"" + (run_a / "final_cached.pdit").string() +
                             "\" --b \"" + (run_a / "final_reference.pdit").string() + "\" --out \"" +
                             (root / (std::string("compare_") + rep)).string() + "\" > \"" +
                             (root / "log.txt").string() + "\" 2>&1";
    if (std::system(line.c_str()) != 0) problems += " compare failed";
  }
  for (const char* name : {"profile", "run", "ablate", "l1curve", "compare"}) {
    const fs::path a = root / (std::string(name) + "_a");
    const fs::path b = root / (std::string(name) + "_b");
    if (!fs::exists(a)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), a);
      if (!fs::exists(b / rel) || !same_bytes(entry.path(), b / rel)) {
        problems += " " + std::string(name) + "/" + rel.string();
      }
      ++files;
    }
  }
  return {problems.empty() && files > 0,
          fmt("5 commands, %.0f files byte-identical across reruns", files) + problems};
}

}  // namespace

int main() {
  check("cache-off equivalence", cache_off_equivalence);
  check("interval-1 equivalence", interval_one_equivalence);
  check("warm-up equivalence", warmup_equivalence);
  check("delta-list oracle", delta_list_oracle);
  check("R_attn oracle", r_attn_oracle);
  check("schedule formulas", schedule_formulas);
  check("FLOP conservation", flop_conservation);
  check("metric references", metric_references);
  check("segmentation recovery", segmentation_recovery);
  check("end-to-end direction", end_to_end_direction);
  check("CLI determinism", cli_determinism);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
