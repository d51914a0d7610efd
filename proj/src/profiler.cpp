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

#include "semcache/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "semcache/pgm.hpp"

namespace semcache {
namespace {

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<int> parse_index_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t\r");
    const std::string trimmed = item.substr(b, e - b + 1);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(trimmed, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != trimmed.size()) throw IoError("bad block index '" + trimmed + "'");
    out.push_back(value);
  }
  return out;
}

}  // namespace

ForegroundMask ForegroundMask::empty(TokenGrid grid, MaskSource source) {
  ForegroundMask m;
  m.grid = grid;
  m.bits.assign(static_cast<std::size_t>(grid.tokens()), 0);
  m.source = source;
  return m;
}

int ForegroundMask::count() const {
  return static_cast<int>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

int ForegroundMask::count_in_frame(int frame) const {
  const int per = grid.tokens_per_frame();
  int n = 0;
  for (int i = frame * per; i < (frame + 1) * per; ++i) n += contains(i) ? 1 : 0;
  return n;
}

double mask_iou(const ForegroundMask& a, const ForegroundMask& b) {
  if (a.bits.size() != b.bits.size()) throw DimensionError("mask_iou: masks differ in size");
  int inter = 0;
  int uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0;
    const bool y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

ForegroundMask load_mask_frames(std::span<const std::filesystem::path> frames, TokenGrid grid) {
  if (static_cast<int>(frames.size()) != grid.frames) {
    throw IoError("expected " + std::to_string(grid.frames) + " mask frames, got " +
                  std::to_string(frames.size()));
  }
  ForegroundMask mask = ForegroundMask::empty(grid, MaskSource::external);
  for (int f = 0; f < grid.frames; ++f) {
    const GrayImage img = read_pgm(frames[static_cast<std::size_t>(f)]);
    if (img.width != grid.width || img.height != grid.height) {
      throw IoError(frames[static_cast<std::size_t>(f)].string() + ": mask is " +
                    std::to_string(img.width) + "x" + std::to_string(img.height) +
                    ", token grid is " + std::to_string(grid.width) + "x" +
                    std::to_string(grid.height));
    }
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        mask.bits[static_cast<std::size_t>(grid.index(f, y, x))] = img.at(x, y) != 0 ? 1 : 0;
      }
    }
  }
  return mask;
}

Vector aggregate_attention(const Matrix& attention, AggregateAxis axis) {
  const Eigen::Index n = attention.rows();
  if (attention.cols() != n || n == 0) {
    throw DimensionError("aggregate_attention: attention must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) sum += attention(i, j);
    if (!(std::abs(sum - 1.0) <= 1e-9)) {
      throw ContractError("aggregate_attention: row " + std::to_string(i) + " sums to " +
                          format_real(sum));
    }
  }
  Vector scores = Vector::Zero(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (axis == AggregateAxis::column) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) sum += attention(i, j);
      scores[j] = sum * inv_n;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) sum += attention(i, j);
      scores[i] = sum * inv_n;
    }
  }
  return scores;
}

std::optional<double> otsu_threshold(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n < 2 || sorted.front() == sorted.back()) return std::nullopt;

  double total = 0.0;
  for (double v : sorted) total += v;
  double below = 0.0;
  double best_score = -1.0;
  std::optional<double> best;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    below += sorted[i];
    if (sorted[i] == sorted[i + 1]) continue;
    const double n0 = static_cast<double>(i + 1);
    const double n1 = static_cast<double>(n) - n0;
    const double mean0 = below / n0;
    const double mean1 = (total - below) / n1;
    const double diff = mean0 - mean1;
    const double between = n0 * n1 * diff * diff;
    if (between > best_score) {
      best_score = between;
      best = sorted[i];
    }
  }
  return best;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw ContractError("percentile of an empty sample");
  if (p < 0.0 || p > 100.0) throw ContractError("percentile outside [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

ForegroundMask segment_foreground(const LatentVideo& latent) {
  const int n = latent.token_count();
  const int c = latent.channels();
  if (n < 2) throw ContractError("segment_foreground needs at least 2 tokens");
  ForegroundMask mask = ForegroundMask::empty(latent.grid, MaskSource::pca_threshold);

  const Eigen::RowVectorXd mean = latent.tokens.colwise().mean();
  const Matrix centered = latent.tokens.rowwise() - mean;
  const Matrix cov = matmul(centered.transpose(), centered) / static_cast<double>(n);
  const double total_var = cov.trace();
  const double mean_sq = latent.tokens.squaredNorm() / static_cast<double>(latent.tokens.size());
  if (!(total_var > 1e-24 * mean_sq * c) || !(total_var > 0.0)) {
    mask.degenerate = true;
    return mask;
  }

  const Matrix components = top_eigvecs(cov, std::min(3, c));
  const Matrix projected = matmul(centered, components);
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = projected(i, 0);

  const std::optional<double> threshold = otsu_threshold(scores);
  if (!threshold) {
    mask.degenerate = true;
    return mask;
  }
  for (int i = 0; i < n; ++i) {
    mask.bits[static_cast<std::size_t>(i)] = scores[static_cast<std::size_t>(i)] > *threshold;
  }
  if (2 * mask.count() > n) {
    for (auto& b : mask.bits) b = b ? 0 : 1;
  }
  return mask;
}

std::optional<double> compute_r_attn(const Vector& scores, const ForegroundMask& mask,
                                     double high_threshold) {
  if (static_cast<std::size_t>(scores.size()) != mask.bits.size()) {
    throw DimensionError("compute_r_attn: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(mask.bits.size()) + " mask tokens");
  }
  const int per = mask.grid.tokens_per_frame();
  double sum = 0.0;
  int defined = 0;
  for (int f = 0; f < mask.grid.frames; ++f) {
    int fg = 0;
    int high = 0;
    for (int i = f * per; i < (f + 1) * per; ++i) {
      if (!mask.contains(i)) continue;
      ++fg;
      if (scores[i] > high_threshold) ++high;
    }
    if (fg == 0) continue;
    sum += static_cast<double>(high) / static_cast<double>(fg);
    ++defined;
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

BlockProfile::BlockProfile(int b, int s)
    : blocks(b), steps(s), r_attn(static_cast<std::size_t>(b) * static_cast<std::size_t>(s)) {}

std::optional<double>& BlockProfile::at(int block, int step) {
  return r_attn[static_cast<std::size_t>(block) * static_cast<std::size_t>(steps) +
                static_cast<std::size_t>(step)];
}

const std::optional<double>& BlockProfile::at(int block, int step) const {
  return r_attn[static_cast<std::size_t>(block) * static_cast<std::size_t>(steps) +
                static_cast<std::size_t>(step)];
}

void BlockPartition::validate(int layers) const {
  std::vector<int> seen(static_cast<std::size_t>(std::max(layers, 0)), 0);
  for (const auto* list : {&foreground, &background}) {
    if (!std::is_sorted(list->begin(), list->end())) {
      throw ContractError("block partition lists must be sorted ascending");
    }
    for (int b : *list) {
      if (b < 0 || b >= layers) {
        throw ContractError("block index " + std::to_string(b) + " outside [0, " +
                            std::to_string(layers) + ")");
      }
      if (seen[static_cast<std::size_t>(b)]++) {
        throw ContractError("block " + std::to_string(b) + " listed twice in partition");
      }
    }
  }
  if (static_cast<int>(foreground.size() + background.size()) != layers) {
    throw ContractError("block partition does not cover every block");
  }
}

BlockPartition BlockPartition::from_background(std::vector<int> background, int layers) {
  std::sort(background.begin(), background.end());
  BlockPartition p;
  for (int i = 0; i < layers; ++i) {
    if (!std::binary_search(background.begin(), background.end(), i)) p.foreground.push_back(i);
  }
  p.background = std::move(background);
  p.validate(layers);
  return p;
}

BlockPartition BlockPartition::all_foreground(int layers) { return from_background({}, layers); }

BlockPartition partition_blocks(const BlockProfile& profile, double tau, StepRange range) {
  if (range.begin < 0 || range.end > profile.steps || range.begin >= range.end) {
    throw ContractError("profiling step range [" + std::to_string(range.begin) + ", " +
                        std::to_string(range.end) + ") not within [0, " +
                        std::to_string(profile.steps) + ")");
  }
  BlockPartition out;
  for (int b = 0; b < profile.blocks; ++b) {
    double sum = 0.0;
    int defined = 0;
    for (int s = range.begin; s < range.end; ++s) {
      if (const auto& v = profile.at(b, s)) {
        sum += *v;
        ++defined;
      }
    }
    // Unprofiled blocks are never cached.
    if (defined == 0 || sum / defined >= tau) {
      out.foreground.push_back(b);
    } else {
      out.background.push_back(b);
    }
  }
  return out;
}

std::vector<double> l1_step_distance(std::span<const LatentVideo> predictions) {
  if (predictions.size() < 2) throw ContractError("l1_step_distance needs at least 2 steps");
  std::vector<double> out;
  out.reserve(predictions.size() - 1);
  for (std::size_t s = 0; s + 1 < predictions.size(); ++s) {
    const Matrix& a = predictions[s].tokens;
    const Matrix& b = predictions[s + 1].tokens;
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw DimensionError("l1_step_distance: prediction shapes differ at step " +
                           std::to_string(s));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) sum += std::abs(a.data()[i] - b.data()[i]);
    out.push_back(sum / static_cast<double>(a.size()));
  }
  return out;
}

std::vector<HeatmapRow> export_heatmap(const BlockProfile& profile) {
  std::vector<HeatmapRow> rows;
  for (int b = 0; b < profile.blocks; ++b) {
    for (int s = 0; s < profile.steps; ++s) {
      if (const auto& v = profile.at(b, s)) rows.push_back({b, s, *v});
    }
  }
  return rows;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string heatmap_csv(std::span<const HeatmapRow> rows) {
  std::string out = "block,step,r_attn\n";
  for (const HeatmapRow& r : rows) {
    out += std::to_string(r.block) + ',' + std::to_string(r.step) + ',' + format_real(r.r_attn) +
           '\n';
  }
  return out;
}

std::vector<HeatmapRow> parse_heatmap_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "block,step,r_attn") {
    throw IoError("heatmap CSV: missing header");
  }
  std::vector<HeatmapRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    HeatmapRow r;
    char* end = nullptr;
    r.block = static_cast<int>(std::strtol(line.c_str(), &end, 10));
    if (*end != ',') throw IoError("heatmap CSV: bad row '" + line + "'");
    r.step = static_cast<int>(std::strtol(end + 1, &end, 10));
    if (*end != ',') throw IoError("heatmap CSV: bad row '" + line + "'");
    r.r_attn = std::strtod(end + 1, &end);
    if (*end != '\0') throw IoError("heatmap CSV: bad row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

std::string format_partition(const BlockPartition& partition) {
  auto line = [](const char* tag, const std::vector<int>& v) {
    return std::string(tag) + (v.empty() ? "" : " " + join(v)) + "\n";
  };
  return line("F:", partition.foreground) + line("B:", partition.background);
}

BlockPartition parse_partition(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  BlockPartition p;
  bool have_f = false;
  bool have_b = false;
  while (std::getline(in, line)) {
    if (line.rfind("F:", 0) == 0) {
      p.foreground = parse_index_list(line.substr(2));
      have_f = true;
    } else if (line.rfind("B:", 0) == 0) {
      p.background = parse_index_list(line.substr(2));
      have_b = true;
    } else if (!line.empty()) {
      throw IoError("partition file: unexpected line '" + line + "'");
    }
  }
  if (!have_f || !have_b) throw IoError("partition file needs both F: and B: lines");
  try {
    p.validate(p.layers());
  } catch (const ContractError& e) {
    throw IoError(std::string("partition file: ") + e.what());
  }
  return p;
}

BlockProfile profile_trace(const StepTrace& trace, int blocks, const ProfileOptions& options) {
  BlockProfile profile(blocks, static_cast<int>(trace.size()));
  profile.high_percentile = options.high_percentile;
  for (const StepRecord& record : trace) {
    const ForegroundMask mask =
        options.external_mask ? *options.external_mask : segment_foreground(record.noise_pred);
    for (int b = 0; b < blocks && b < static_cast<int>(record.blocks.size()); ++b) {
      const auto& attention = record.blocks[static_cast<std::size_t>(b)].attention;
      if (!attention) continue;
      const Vector scores = aggregate_attention(*attention, options.axis);
      const double threshold = percentile(
          std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
          options.high_percentile);
      profile.at(b, record.step) = compute_r_attn(scores, mask, threshold);
    }
  }
  return profile;
}

}  // namespace semcache
