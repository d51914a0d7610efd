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

// Attention profiling: which blocks look at the foreground.
//
// For every traced (block, step) the per-token attention scores are reduced
// to a foreground attention ratio
//
//   R = |{tokens with score > high threshold} ∩ mask| / |mask|
//
// computed per frame and averaged over frames with a non-empty mask. Blocks
// whose mean ratio over the profiling steps reaches tau are foreground
// blocks; the rest are background blocks and become cache candidates.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semcache/dit.hpp"

namespace semcache {

enum class MaskSource { pca_threshold, external };

struct ForegroundMask {
  TokenGrid grid;
  std::vector<std::uint8_t> bits;  // one per token, nonzero = foreground
  MaskSource source = MaskSource::pca_threshold;
  bool degenerate = false;

  static ForegroundMask empty(TokenGrid grid, MaskSource source);

  int count() const;
  int count_in_frame(int frame) const;
  bool contains(int token) const { return bits[static_cast<std::size_t>(token)] != 0; }
};

double mask_iou(const ForegroundMask& a, const ForegroundMask& b);

// Per-frame PGM (P5, maxval 255, nonzero = foreground) import of a mask.
ForegroundMask load_mask_frames(std::span<const std::filesystem::path> frames, TokenGrid grid);

// Which attention axis is averaged. `column` scores attention received by a
// token (mean over the queries attending to it); `row` averages a token's
// own row, which is 1/N for every token of a row-stochastic matrix.
enum class AggregateAxis { column, row };

// Mean attention score per token. A must be row-stochastic within 1e-9.
Vector aggregate_attention(const Matrix& attention, AggregateAxis axis = AggregateAxis::column);

// Otsu split of a 1-D sample: returns the threshold t maximizing
// between-class variance for the classes {x <= t} and {x > t}, or nullopt
// when all values are equal.
std::optional<double> otsu_threshold(std::span<const double> values);

// Linear-interpolated percentile, p in [0, 100].
double percentile(std::span<const double> values, double p);

// PCA foreground estimate of a latent: tokens are projected onto the top
// three principal components, the first component score is split with
// Otsu, and the mask is inverted if it covers more than half the tokens.
ForegroundMask segment_foreground(const LatentVideo& latent);

// Frame-averaged foreground attention ratio, or nullopt when the mask is
// empty in every frame.
std::optional<double> compute_r_attn(const Vector& scores, const ForegroundMask& mask,
                                     double high_threshold);

struct BlockProfile {
  int blocks = 0;
  int steps = 0;
  std::vector<std::optional<double>> r_attn;  // blocks x steps, row-major
  double high_percentile = 90.0;
  double tau = 0.5;

  BlockProfile() = default;
  BlockProfile(int blocks, int steps);

  std::optional<double>& at(int block, int step);
  const std::optional<double>& at(int block, int step) const;
};

struct BlockPartition {
  std::vector<int> foreground;
  std::vector<int> background;

  int layers() const { return static_cast<int>(foreground.size() + background.size()); }
  // Throws ContractError unless F and B are sorted, disjoint and cover 0..L-1.
  void validate(int layers) const;

  static BlockPartition from_background(std::vector<int> background, int layers);
  static BlockPartition all_foreground(int layers);

  friend bool operator==(const BlockPartition&, const BlockPartition&) = default;
};

struct StepRange {
  int begin = 0;
  int end = 0;  // exclusive
};

BlockPartition partition_blocks(const BlockProfile& profile, double tau, StepRange range);

// Mean absolute difference between consecutive predictions.
std::vector<double> l1_step_distance(std::span<const LatentVideo> predictions);

struct HeatmapRow {
  int block = 0;
  int step = 0;
  double r_attn = 0.0;

  friend bool operator==(const HeatmapRow&, const HeatmapRow&) = default;
};

std::vector<HeatmapRow> export_heatmap(const BlockProfile& profile);
std::string heatmap_csv(std::span<const HeatmapRow> rows);
std::vector<HeatmapRow> parse_heatmap_csv(const std::string& text);

// `F: i,i,...\nB: i,i,...\n`
std::string format_partition(const BlockPartition& partition);
BlockPartition parse_partition(const std::string& text);

struct ProfileOptions {
  double high_percentile = 90.0;
  AggregateAxis axis = AggregateAxis::column;
  // Used for every step instead of the PCA estimate when set.
  std::optional<ForegroundMask> external_mask;
};

// Builds the block x step ratio table from a trace that recorded attention.
BlockProfile profile_trace(const StepTrace& trace, int blocks, const ProfileOptions& options);

// Formats a real so that parsing it back yields the same double.
std::string format_real(double v);

}  // namespace semcache
