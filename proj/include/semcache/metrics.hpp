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

// Quality and cost measurement for denoising runs. Quality metrics are taken
// on latents (no decoder exists at this scale), hence the "latent_" labels
// in serialized reports.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semcache/dit.hpp"

namespace semcache {

// +infinity when the inputs are identical.
double psnr(const LatentVideo& a, const LatentVideo& b, double peak);

inline constexpr int kSsimWindow = 8;

// Mean SSIM over every channel, frame and window position (uniform
// window, stride 1, population moments, C1 = (0.01 peak)^2,
// C2 = (0.03 peak)^2).
double ssim(const LatentVideo& a, const LatentVideo& b, double peak, int window = kSsimWindow);

double mean_l1(const LatentVideo& a, const LatentVideo& b);

// max - min over all values; 1 for a constant latent.
double dynamic_range(const LatentVideo& reference);

// Analytic operation counts, multiply-accumulate = 2 operations. Softmax,
// normalization, activation and residual additions are not counted.
struct FlopModel {
  // 2(4NC^2) projections + 2(2N^2 C) scores and weighted values
  // + 2(8NC^2) MLP.
  static std::int64_t block(std::int64_t tokens, std::int64_t channels);
  // Input and output projections, 2(NC^2) each, once per step.
  static std::int64_t embed_per_step(std::int64_t tokens, std::int64_t channels);
  static std::int64_t full_run(std::int64_t layers, std::int64_t tokens, std::int64_t channels,
                               std::int64_t steps);
};

std::int64_t flops_full_run(const DiTModel& model, int steps);

struct RunProvenance {
  std::uint64_t model_seed = 0;
  int layers = 0;
  int channels = 0;
  TokenGrid grid;
  int steps = 0;
  std::uint64_t input_seed = 0;

  friend bool operator==(const RunProvenance&, const RunProvenance&) = default;
};

struct RunArtifacts {
  std::string label;
  RunProvenance provenance;
  LatentVideo final_latent;
  std::int64_t executed_blocks = 0;
  std::int64_t skipped_blocks = 0;
  double wall_ms = 0.0;
};

struct RunReport {
  std::string test;
  std::string reference;
  double psnr = 0.0;  // +inf when identical
  double ssim = 0.0;
  double mean_l1 = 0.0;
  double peak = 0.0;
  std::int64_t flops_total = 0;
  std::int64_t flops_executed = 0;
  std::int64_t flops_skipped = 0;
  std::int64_t blocks_executed = 0;
  std::int64_t blocks_skipped = 0;
  double speedup_flops = 1.0;
  // Wall-clock fields are only filled when timing is requested, so that
  // reports stay byte-reproducible by default.
  std::optional<double> wall_ms;
  std::optional<double> reference_wall_ms;
  std::optional<double> speedup_wall;

  double skipped_fraction() const;
};

struct CompareOptions {
  bool timing = false;
  std::optional<double> peak;  // defaults to the reference's dynamic range
};

RunReport compare_runs(const RunArtifacts& test, const RunArtifacts& reference,
                       const CompareOptions& options = {});

// Fixed key order; infinite PSNR is written as the string "inf".
nlohmann::ordered_json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::ordered_json& j);

// `header` line then one `index,value` row per entry.
std::string series_csv(const std::string& header, std::span<const double> values);

}  // namespace semcache
