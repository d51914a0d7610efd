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

#include "semcache/metrics.hpp"

#include <cmath>
#include <limits>

#include "semcache/profiler.hpp"

namespace semcache {
namespace {

void require_same_shape(const LatentVideo& a, const LatentVideo& b, const char* what) {
  if (!(a.grid == b.grid) || a.channels() != b.channels()) {
    throw DimensionError(std::string(what) + ": latent shapes differ");
  }
}

std::string describe(const RunProvenance& p) {
  return "seed=" + std::to_string(p.model_seed) + " L=" + std::to_string(p.layers) +
         " C=" + std::to_string(p.channels) + " grid=" + std::to_string(p.grid.frames) + "x" +
         std::to_string(p.grid.height) + "x" + std::to_string(p.grid.width) +
         " S=" + std::to_string(p.steps) + " input_seed=" + std::to_string(p.input_seed);
}

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> read_optional(const nlohmann::ordered_json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

double psnr(const LatentVideo& a, const LatentVideo& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw ContractError("psnr: peak must be positive");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.tokens.size(); ++i) {
    const double d = a.tokens.data()[i] - b.tokens.data()[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.tokens.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const LatentVideo& a, const LatentVideo& b, double peak, int window) {
  require_same_shape(a, b, "ssim");
  const TokenGrid& g = a.grid;
  if (window < 1 || g.height < window || g.width < window) {
    throw DimensionError("ssim: " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                         " frame smaller than " + std::to_string(window) + "x" +
                         std::to_string(window) + " window");
  }
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const double count = static_cast<double>(window) * window;

  double total = 0.0;
  std::int64_t windows = 0;
  for (int ch = 0; ch < a.channels(); ++ch) {
    for (int f = 0; f < g.frames; ++f) {
      for (int y0 = 0; y0 + window <= g.height; ++y0) {
        for (int x0 = 0; x0 + window <= g.width; ++x0) {
          double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
          for (int y = y0; y < y0 + window; ++y) {
            for (int x = x0; x < x0 + window; ++x) {
              const int tok = g.index(f, y, x);
              const double va = a.tokens(tok, ch);
              const double vb = b.tokens(tok, ch);
              sa += va;
              sb += vb;
              saa += va * va;
              sbb += vb * vb;
              sab += va * vb;
            }
          }
          const double mu_a = sa / count;
          const double mu_b = sb / count;
          const double var_a = saa / count - mu_a * mu_a;
          const double var_b = sbb / count - mu_b * mu_b;
          const double cov = sab / count - mu_a * mu_b;
          const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
          const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
          total += num / den;
          ++windows;
        }
      }
    }
  }
  return total / static_cast<double>(windows);
}

double mean_l1(const LatentVideo& a, const LatentVideo& b) {
  require_same_shape(a, b, "mean_l1");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.tokens.size(); ++i) {
    sum += std::abs(a.tokens.data()[i] - b.tokens.data()[i]);
  }
  return sum / static_cast<double>(a.tokens.size());
}

double dynamic_range(const LatentVideo& reference) {
  const double range = reference.tokens.maxCoeff() - reference.tokens.minCoeff();
  return range > 0.0 ? range : 1.0;
}

std::int64_t FlopModel::block(std::int64_t n, std::int64_t c) {
  const std::int64_t projections = 2 * (4 * n * c * c);
  const std::int64_t attention = 2 * (2 * n * n * c);
  const std::int64_t mlp = 2 * (8 * n * c * c);
  return projections + attention + mlp;
}

std::int64_t FlopModel::embed_per_step(std::int64_t n, std::int64_t c) {
  return 2 * (n * c * c) + 2 * (n * c * c);
}

std::int64_t FlopModel::full_run(std::int64_t layers, std::int64_t n, std::int64_t c,
                                 std::int64_t steps) {
  return steps * (layers * block(n, c) + embed_per_step(n, c));
}

std::int64_t flops_full_run(const DiTModel& model, int steps) {
  return FlopModel::full_run(model.layers(), model.grid().tokens(), model.channels(), steps);
}

double RunReport::skipped_fraction() const {
  const std::int64_t total = blocks_executed + blocks_skipped;
  return total == 0 ? 0.0 : static_cast<double>(blocks_skipped) / static_cast<double>(total);
}

RunReport compare_runs(const RunArtifacts& test, const RunArtifacts& reference,
                       const CompareOptions& options) {
  if (!(test.provenance == reference.provenance)) {
    throw ContractError("refusing to compare runs of different provenance: test {" +
                        describe(test.provenance) + "} vs reference {" +
                        describe(reference.provenance) + "}");
  }
  const RunProvenance& p = test.provenance;
  const std::int64_t n = p.grid.tokens();
  const std::int64_t block = FlopModel::block(n, p.channels);

  RunReport r;
  r.test = test.label;
  r.reference = reference.label;
  r.peak = options.peak.value_or(dynamic_range(reference.final_latent));
  r.psnr = psnr(test.final_latent, reference.final_latent, r.peak);
  const int window = std::min({kSsimWindow, p.grid.height, p.grid.width});
  r.ssim = ssim(test.final_latent, reference.final_latent, r.peak, window);
  r.mean_l1 = mean_l1(test.final_latent, reference.final_latent);
  r.flops_total = FlopModel::full_run(p.layers, n, p.channels, p.steps);
  r.blocks_executed = test.executed_blocks;
  r.blocks_skipped = test.skipped_blocks;
  r.flops_skipped = test.skipped_blocks * block;
  r.flops_executed = test.executed_blocks * block + p.steps * FlopModel::embed_per_step(n, p.channels);
  r.speedup_flops = r.flops_executed == 0 ? 1.0
                                          : static_cast<double>(r.flops_total) /
                                                static_cast<double>(r.flops_executed);
  if (options.timing) {
    r.wall_ms = test.wall_ms;
    r.reference_wall_ms = reference.wall_ms;
    r.speedup_wall = test.wall_ms > 0.0 ? reference.wall_ms / test.wall_ms : 0.0;
  }
  return r;
}

nlohmann::ordered_json report_to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["test"] = r.test;
  j["reference"] = r.reference;
  j["metric_space"] = "latent";
  if (std::isinf(r.psnr)) {
    j["latent_psnr_db"] = "inf";
  } else {
    j["latent_psnr_db"] = r.psnr;
  }
  j["latent_ssim"] = r.ssim;
  j["mean_l1"] = r.mean_l1;
  j["peak"] = r.peak;
  j["flops_total"] = r.flops_total;
  j["flops_executed"] = r.flops_executed;
  j["flops_skipped"] = r.flops_skipped;
  j["blocks_executed"] = r.blocks_executed;
  j["blocks_skipped"] = r.blocks_skipped;
  j["skipped_fraction"] = r.skipped_fraction();
  j["speedup_flops"] = r.speedup_flops;
  j["wall_ms"] = optional_number(r.wall_ms);
  j["reference_wall_ms"] = optional_number(r.reference_wall_ms);
  j["speedup_wall"] = optional_number(r.speedup_wall);
  return j;
}

RunReport report_from_json(const nlohmann::ordered_json& j) {
  RunReport r;
  try {
    r.test = j.at("test").get<std::string>();
    r.reference = j.at("reference").get<std::string>();
    const auto& p = j.at("latent_psnr_db");
    r.psnr = p.is_string() ? std::numeric_limits<double>::infinity() : p.get<double>();
    r.ssim = j.at("latent_ssim").get<double>();
    r.mean_l1 = j.at("mean_l1").get<double>();
    r.peak = j.at("peak").get<double>();
    r.flops_total = j.at("flops_total").get<std::int64_t>();
    r.flops_executed = j.at("flops_executed").get<std::int64_t>();
    r.flops_skipped = j.at("flops_skipped").get<std::int64_t>();
    r.blocks_executed = j.at("blocks_executed").get<std::int64_t>();
    r.blocks_skipped = j.at("blocks_skipped").get<std::int64_t>();
    r.speedup_flops = j.at("speedup_flops").get<double>();
    r.wall_ms = read_optional(j, "wall_ms");
    r.reference_wall_ms = read_optional(j, "reference_wall_ms");
    r.speedup_wall = read_optional(j, "speedup_wall");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed run report: ") + e.what());
  }
  return r;
}

std::string series_csv(const std::string& header, std::span<const double> values) {
  std::string out = header + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += std::to_string(i) + ',' + format_real(values[i]) + '\n';
  }
  return out;
}

}  // namespace semcache
