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

// Toy diffusion transformer: single-head pre-norm blocks over a video token
// grid, a variance-preserving noise schedule and a deterministic implicit
// (eta = 0) sampler with an optional block-cache hook.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "semcache/tensor.hpp"

namespace semcache {

class CacheEngine;

struct TokenGrid {
  int frames = 1;
  int height = 1;
  int width = 1;

  int tokens_per_frame() const { return height * width; }
  int tokens() const { return frames * height * width; }
  int index(int frame, int y, int x) const { return (frame * height + y) * width + x; }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

// Latent of shape C x frames x H x W, stored token-major as an N x C matrix
// with token n = (frame * H + y) * W + x.
struct LatentVideo {
  TokenGrid grid;
  Matrix tokens;

  LatentVideo() = default;
  LatentVideo(TokenGrid g, Matrix t);

  static LatentVideo zeros(TokenGrid grid, int channels);

  int channels() const { return static_cast<int>(tokens.cols()); }
  int token_count() const { return static_cast<int>(tokens.rows()); }
  bool all_finite() const { return tokens.allFinite(); }

  // Channel-first C x frames x H x W view, as used by the file format.
  Tensor<double> to_tensor() const;
  static LatentVideo from_tensor(const Tensor<double>& t);

  friend bool operator==(const LatentVideo& a, const LatentVideo& b) {
    return a.grid == b.grid && a.tokens == b.tokens;
  }
};

void save_latent(const std::filesystem::path& path, const LatentVideo& latent);
LatentVideo load_latent(const std::filesystem::path& path);

// alpha_t for t = 1..S and the cumulative products alpha_bar_t, with
// alpha_bar_0 = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> alphas);

  // beta_t linear in t from beta_min to beta_max; alpha_t = 1 - beta_t.
  static NoiseSchedule linear(int steps, double beta_min, double beta_max);

  int steps() const { return static_cast<int>(alphas_.size()); }
  double alpha(int t) const;
  double alpha_bar(int t) const;

 private:
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

struct LayerNormParams {
  Vector gamma;
  Vector beta;
};

struct DiTBlock {
  int index = 0;
  Matrix w_q, w_k, w_v, w_o;  // C x C
  Matrix w_mlp_in;            // C x 4C
  Vector b_mlp_in;            // 4C
  Matrix w_mlp_out;           // 4C x C
  Vector b_mlp_out;           // C
  LayerNormParams norm_attn;
  LayerNormParams norm_mlp;

  int channels() const { return static_cast<int>(w_q.rows()); }

  // All weights and biases zero, unit layer-norm gain.
  static DiTBlock zeros(int index, int channels);
};

enum class Signature { foreground, background };

// Weight shaping gives selected blocks a preference for tokens carrying the
// foreground signature and the remaining blocks a preference for tokens
// carrying the background signature. Each shaped block gets rank-one terms
// gain * d e^T added to W_q and W_k, with d the signature direction in the
// residual stream and e a per-block unit vector, so tokens aligned with d
// produce large mutually attending queries and keys. Foreground-shaped
// blocks also have both residual branches scaled by foreground_branch_gain,
// so they make the larger, step-dependent updates and background-shaped
// blocks the smaller, slowly varying ones.
struct ShapingOptions {
  bool enabled = true;
  std::vector<int> foreground_blocks;  // others are background-shaped
  double gain = 1.5;
  double foreground_branch_gain = 1.5;
};

// Random query/key weights are drawn at this fraction of the other
// projections' range.
inline constexpr double kQueryKeyScale = 0.3;

struct ModelConfig {
  std::uint64_t seed = 42;
  int layers = 8;
  int channels = 16;
  TokenGrid grid{2, 8, 8};
  ShapingOptions shaping;
};

struct DiTModel {
  ModelConfig config;
  std::vector<DiTBlock> blocks;
  Matrix w_in;   // C x C
  Vector b_in;   // C
  Matrix w_out;  // C x C
  Vector b_out;  // C

  int layers() const { return static_cast<int>(blocks.size()); }
  int channels() const { return config.channels; }
  const TokenGrid& grid() const { return config.grid; }
};

// Unit, zero-mean latent-space direction for a signature. The two
// directions are orthogonal; scene generators paint with them.
Vector signature_direction(int channels, Signature which);

// Default foreground-shaped blocks for a depth: every third block.
std::vector<int> default_foreground_blocks(int layers);

DiTModel init_model(const ModelConfig& config);

void save_model(const std::filesystem::path& path, const DiTModel& model);
DiTModel load_model(const std::filesystem::path& path);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z, for 1 <= t <= S.
LatentVideo forward_diffuse(const LatentVideo& x0, int t, const LatentVideo& z,
                            const NoiseSchedule& schedule);

struct AttentionOutput {
  Matrix weights;  // N x N, row-stochastic
  Matrix out;      // N x C
};

AttentionOutput block_attention(const DiTBlock& block, const Matrix& x);

struct BlockTrace {
  std::optional<Matrix> attention;
  std::optional<Matrix> h_in;
  std::optional<Matrix> h_out;

  bool empty() const { return !attention && !h_in && !h_out; }
};

struct TraceFlags {
  bool attention = false;
  bool boundaries = false;

  bool any() const { return attention || boundaries; }
};

// h + Attn(LN(h)), then h + MLP(LN(h)).
Matrix block_forward(const DiTBlock& block, const Matrix& h_in);

// block_forward with optional tracing and a finiteness check that names the
// step and block on failure.
Matrix execute_block(const DiTBlock& block, const Matrix& h_in, int step,
                     const TraceFlags& flags, BlockTrace* trace);

Vector timestep_embedding(int timestep, int channels);
Matrix embed(const DiTModel& model, const LatentVideo& x, int timestep);
LatentVideo unembed(const DiTModel& model, const Matrix& h);

struct ForwardOutput {
  LatentVideo noise_pred;
  std::vector<BlockTrace> blocks;  // empty unless tracing is on
};

// One network evaluation. `step` is the forward iteration index used by the
// cache engine, `timestep` the diffusion time used for conditioning.
ForwardOutput model_forward(const DiTModel& model, const LatentVideo& x, int step,
                            int timestep, CacheEngine* engine, const TraceFlags& flags);

struct StepRecord {
  int step = 0;
  int timestep = 0;
  LatentVideo noise_pred;
  std::vector<BlockTrace> blocks;
};

using StepTrace = std::vector<StepRecord>;

struct RunStats {
  std::int64_t executed_blocks = 0;
  std::int64_t skipped_blocks = 0;
  std::vector<int> executed_per_step;
  double wall_ms = 0.0;
};

struct DenoiseResult {
  LatentVideo x0_hat;
  StepTrace trace;
  RunStats stats;
  std::vector<LatentVideo> latents;  // x after each step, when requested
};

struct DenoiseOptions {
  TraceFlags trace;
  bool keep_latents = false;
};

// Predicts the noise in x at (step, timestep). Lets the sampler be driven by
// something other than a DiTModel.
using NoisePredictor =
    std::function<ForwardOutput(const LatentVideo& x, int step, int timestep)>;

// Deterministic implicit sampler over t = S..1 (steps s = 0..S-1):
//   x0_hat  = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
//   x_{t-1} = sqrt(abar_{t-1}) x0_hat + sqrt(1 - abar_{t-1}) eps
DenoiseResult denoise_with(const NoisePredictor& predict, const LatentVideo& x_T,
                           const NoiseSchedule& schedule, const DenoiseOptions& options);

DenoiseResult denoise_loop(const DiTModel& model, const LatentVideo& x_T,
                           const NoiseSchedule& schedule, CacheEngine* engine,
                           const DenoiseOptions& options = {});

}  // namespace semcache
