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

#include "semcache/dit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include "semcache/cache_engine.hpp"
#include "semcache/rng.hpp"
#include "semcache/serialize.hpp"

namespace semcache {
namespace {

constexpr double kNormEps = 1e-5;
constexpr double kTimestepScale = 0.1;

enum Role : std::uint64_t {
  kRoleQuery = 0,
  kRoleKey = 1,
  kRoleValue = 2,
  kRoleOutput = 3,
  kRoleMlpIn = 4,
  kRoleMlpOut = 5,
  kRoleShaping = 6,
  kRoleEmbedIn = 100,
  kRoleEmbedOut = 101,
};

double gelu(double x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kAlpha * (x + 0.044715 * x * x * x)));
}

Vector unit_row(const Vector& v) {
  Vector out = v.array() - v.mean();
  const double norm = out.norm();
  if (norm > 0.0) out /= norm;
  return out;
}

Matrix block_forward_impl(const DiTBlock& block, const Matrix& h_in, Matrix* attention) {
  const Matrix normed = layer_norm(h_in, block.norm_attn.gamma, block.norm_attn.beta, kNormEps);
  AttentionOutput attn = block_attention(block, normed);
  Matrix h = h_in + attn.out;
  if (attention != nullptr) *attention = std::move(attn.weights);

  const Matrix normed2 = layer_norm(h, block.norm_mlp.gamma, block.norm_mlp.beta, kNormEps);
  Matrix hidden = matmul(normed2, block.w_mlp_in);
  hidden.rowwise() += block.b_mlp_in.transpose();
  hidden = hidden.unaryExpr([](double v) { return gelu(v); });
  Matrix mlp = matmul(hidden, block.w_mlp_out);
  mlp.rowwise() += block.b_mlp_out.transpose();
  return h + mlp;
}

void require_valid(const ModelConfig& config) {
  if (config.layers < 2) {
    throw ConfigError("model needs at least 2 blocks, got " + std::to_string(config.layers));
  }
  if (config.grid.frames < 1 || config.grid.height < 1 || config.grid.width < 1 ||
      config.grid.tokens() < 4) {
    throw ConfigError("token grid must have at least 4 tokens");
  }
  const int min_channels = config.shaping.enabled ? 4 : 1;
  if (config.channels < min_channels) {
    throw ConfigError("model needs at least " + std::to_string(min_channels) +
                      " channels, got " + std::to_string(config.channels));
  }
  for (int b : config.shaping.foreground_blocks) {
    if (b < 0 || b >= config.layers) {
      throw ConfigError("shaped block index " + std::to_string(b) + " out of range");
    }
  }
  if (!std::isfinite(config.shaping.gain) || !(config.shaping.foreground_branch_gain > 0.0) ||
      !std::isfinite(config.shaping.foreground_branch_gain)) {
    throw ConfigError("shaping gains must be finite, branch gain positive");
  }
}

}  // namespace

LatentVideo::LatentVideo(TokenGrid g, Matrix t) : grid(g), tokens(std::move(t)) {
  if (tokens.rows() != grid.tokens()) {
    throw DimensionError("latent has " + std::to_string(tokens.rows()) +
                         " tokens, grid expects " + std::to_string(grid.tokens()));
  }
}

LatentVideo LatentVideo::zeros(TokenGrid grid, int channels) {
  return LatentVideo(grid, Matrix::Zero(grid.tokens(), channels));
}

Tensor<double> LatentVideo::to_tensor() const {
  const auto n = static_cast<Eigen::Index>(token_count());
  const auto c = static_cast<Eigen::Index>(channels());
  Vector data(n * c);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index tok = 0; tok < n; ++tok) data[ch * n + tok] = tokens(tok, ch);
  }
  return Tensor<double>({static_cast<std::size_t>(c), static_cast<std::size_t>(grid.frames),
                         static_cast<std::size_t>(grid.height),
                         static_cast<std::size_t>(grid.width)},
                        std::move(data));
}

LatentVideo LatentVideo::from_tensor(const Tensor<double>& t) {
  if (t.rank() != 4) throw DimensionError("latent tensor must be C x T x H x W");
  const auto& s = t.shape();
  TokenGrid grid{static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3])};
  const auto n = static_cast<Eigen::Index>(grid.tokens());
  const auto c = static_cast<Eigen::Index>(s[0]);
  Matrix tokens(n, c);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    for (Eigen::Index tok = 0; tok < n; ++tok) tokens(tok, ch) = t.data()[ch * n + tok];
  }
  return LatentVideo(grid, std::move(tokens));
}

void save_latent(const std::filesystem::path& path, const LatentVideo& latent) {
  save_tensor(path, latent.to_tensor());
}

LatentVideo load_latent(const std::filesystem::path& path) {
  return LatentVideo::from_tensor(load_tensor(path));
}

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw ConfigError("noise schedule needs at least one step");
  alpha_bars_.reserve(alphas_.size() + 1);
  alpha_bars_.push_back(1.0);
  for (std::size_t i = 0; i < alphas_.size(); ++i) {
    const double a = alphas_[i];
    if (!(a > 0.0 && a <= 1.0)) {
      throw ConfigError("alpha_" + std::to_string(i + 1) + " = " + std::to_string(a) +
                        " outside (0, 1]");
    }
    const double bar = alpha_bars_.back() * a;
    if (i > 0 && !(bar < alpha_bars_.back())) {
      throw ConfigError("cumulative alpha must strictly decrease (step " +
                        std::to_string(i + 1) + ")");
    }
    alpha_bars_.push_back(bar);
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("noise schedule needs at least one step");
  std::vector<double> alphas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 1.0 : static_cast<double>(i) / (steps - 1);
    alphas[static_cast<std::size_t>(i)] = 1.0 - (beta_min + (beta_max - beta_min) * frac);
  }
  return NoiseSchedule(std::move(alphas));
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > steps()) throw ContractError("timestep " + std::to_string(t) + " out of range");
  return alphas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw ContractError("timestep " + std::to_string(t) + " out of range");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

DiTBlock DiTBlock::zeros(int index, int channels) {
  DiTBlock b;
  b.index = index;
  const Matrix zc = Matrix::Zero(channels, channels);
  b.w_q = b.w_k = b.w_v = b.w_o = zc;
  b.w_mlp_in = Matrix::Zero(channels, 4 * channels);
  b.b_mlp_in = Vector::Zero(4 * channels);
  b.w_mlp_out = Matrix::Zero(4 * channels, channels);
  b.b_mlp_out = Vector::Zero(channels);
  b.norm_attn = {Vector::Ones(channels), Vector::Zero(channels)};
  b.norm_mlp = b.norm_attn;
  return b;
}

Vector signature_direction(int channels, Signature which) {
  Vector fg(channels);
  Vector bg(channels);
  for (int c = 0; c < channels; ++c) {
    fg[c] = (c % 2 == 0) ? 1.0 : -1.0;
    bg[c] = (c % 4 < 2) ? 1.0 : -1.0;
  }
  fg = unit_row(fg);
  if (which == Signature::foreground) return fg;
  bg = bg.array() - bg.mean();
  bg -= bg.dot(fg) * fg;
  const double norm = bg.norm();
  return norm > 0.0 ? Vector(bg / norm) : bg;
}

std::vector<int> default_foreground_blocks(int layers) {
  std::vector<int> out;
  for (int i = 0; i < layers; i += 3) out.push_back(i);
  return out;
}

DiTModel init_model(const ModelConfig& config) {
  require_valid(config);
  const int c = config.channels;
  const int layers = config.layers;
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  const double proj = std::sqrt(3.0) * inv_sqrt_c;
  const double residual = 1.0 / std::sqrt(static_cast<double>(layers));
  // Small random query/key parts keep background tokens from forming
  // attention hubs that compete with the shaped terms.
  const double query_key = kQueryKeyScale * proj;

  auto draw = [&](std::uint64_t block, Role role, int rows, int cols, double scale) {
    Rng rng(derive_seed(config.seed, {block, static_cast<std::uint64_t>(role)}));
    return rng.uniform_matrix(rows, cols, scale);
  };

  DiTModel model;
  model.config = config;
  const auto embed_key = static_cast<std::uint64_t>(layers);
  model.w_in = Matrix::Identity(c, c) + draw(embed_key, kRoleEmbedIn, c, c, 0.1 * inv_sqrt_c);
  model.b_in = Vector::Zero(c);
  model.w_out = Matrix::Identity(c, c) + draw(embed_key, kRoleEmbedOut, c, c, 0.1 * inv_sqrt_c);
  model.b_out = Vector::Zero(c);

  Vector fg_dir;
  Vector bg_dir;
  if (config.shaping.enabled) {
    // Signature directions as they appear in the residual stream.
    fg_dir = unit_row(matmul(signature_direction(c, Signature::foreground).transpose(),
                             model.w_in).transpose().col(0));
    bg_dir = unit_row(matmul(signature_direction(c, Signature::background).transpose(),
                             model.w_in).transpose().col(0));
  }

  model.blocks.reserve(static_cast<std::size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    const auto key = static_cast<std::uint64_t>(i);
    DiTBlock b = DiTBlock::zeros(i, c);
    b.w_q = draw(key, kRoleQuery, c, c, query_key);
    b.w_k = draw(key, kRoleKey, c, c, query_key);
    b.w_v = draw(key, kRoleValue, c, c, proj);
    b.w_o = draw(key, kRoleOutput, c, c, proj * residual);
    b.w_mlp_in = draw(key, kRoleMlpIn, c, 4 * c, proj);
    b.w_mlp_out = draw(key, kRoleMlpOut, 4 * c, c, 0.5 * proj * residual);

    if (config.shaping.enabled) {
      const bool foreground =
          std::find(config.shaping.foreground_blocks.begin(),
                    config.shaping.foreground_blocks.end(), i) !=
          config.shaping.foreground_blocks.end();
      const Vector& d = foreground ? fg_dir : bg_dir;
      Vector e = draw(key, kRoleShaping, c, 1, 1.0).col(0);
      e /= e.norm();
      const Matrix rank_one = config.shaping.gain * d * e.transpose();
      b.w_q += rank_one;
      b.w_k += rank_one;
      if (foreground) {
        b.w_o *= config.shaping.foreground_branch_gain;
        b.w_mlp_out *= config.shaping.foreground_branch_gain;
      }
    }
    model.blocks.push_back(std::move(b));
  }
  return model;
}

void save_model(const std::filesystem::path& path, const DiTModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto& cfg = model.config;
  std::vector<double> meta = {
      static_cast<double>(cfg.seed >> 32), static_cast<double>(cfg.seed & 0xffffffffULL),
      static_cast<double>(cfg.layers),     static_cast<double>(cfg.channels),
      static_cast<double>(cfg.grid.frames), static_cast<double>(cfg.grid.height),
      static_cast<double>(cfg.grid.width),  cfg.shaping.enabled ? 1.0 : 0.0,
      cfg.shaping.gain,                    cfg.shaping.foreground_branch_gain};
  for (int b : cfg.shaping.foreground_blocks) meta.push_back(b);
  write_tensor(out, Tensor<double>({meta.size()}, Eigen::Map<Vector>(meta.data(),
                                                                     static_cast<Eigen::Index>(meta.size()))));
  auto put_vec = [&](const Vector& v) {
    write_tensor(out, Tensor<double>({static_cast<std::size_t>(v.size())}, v));
  };
  write_tensor(out, matrix_to_tensor(model.w_in));
  put_vec(model.b_in);
  write_tensor(out, matrix_to_tensor(model.w_out));
  put_vec(model.b_out);
  for (const DiTBlock& b : model.blocks) {
    for (const Matrix* m : {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_mlp_in, &b.w_mlp_out}) {
      write_tensor(out, matrix_to_tensor(*m));
    }
    for (const Vector* v : {&b.b_mlp_in, &b.b_mlp_out, &b.norm_attn.gamma, &b.norm_attn.beta,
                            &b.norm_mlp.gamma, &b.norm_mlp.beta}) {
      put_vec(*v);
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DiTModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const Tensor<double> meta = read_tensor(in);
  if (meta.size() < 10) throw IoError(path.string() + ": truncated model header");
  DiTModel model;
  auto& cfg = model.config;
  cfg.seed = (static_cast<std::uint64_t>(meta[0]) << 32) | static_cast<std::uint64_t>(meta[1]);
  cfg.layers = static_cast<int>(meta[2]);
  cfg.channels = static_cast<int>(meta[3]);
  cfg.grid = {static_cast<int>(meta[4]), static_cast<int>(meta[5]), static_cast<int>(meta[6])};
  cfg.shaping.enabled = meta[7] != 0.0;
  cfg.shaping.gain = meta[8];
  cfg.shaping.foreground_branch_gain = meta[9];
  for (std::size_t i = 10; i < meta.size(); ++i) cfg.shaping.foreground_blocks.push_back(static_cast<int>(meta[i]));

  auto get_mat = [&] { return tensor_to_matrix(read_tensor(in)); };
  auto get_vec = [&] { return Vector(read_tensor(in).data()); };
  model.w_in = get_mat();
  model.b_in = get_vec();
  model.w_out = get_mat();
  model.b_out = get_vec();
  for (int i = 0; i < cfg.layers; ++i) {
    DiTBlock b;
    b.index = i;
    b.w_q = get_mat();
    b.w_k = get_mat();
    b.w_v = get_mat();
    b.w_o = get_mat();
    b.w_mlp_in = get_mat();
    b.w_mlp_out = get_mat();
    b.b_mlp_in = get_vec();
    b.b_mlp_out = get_vec();
    b.norm_attn.gamma = get_vec();
    b.norm_attn.beta = get_vec();
    b.norm_mlp.gamma = get_vec();
    b.norm_mlp.beta = get_vec();
    model.blocks.push_back(std::move(b));
  }
  return model;
}

LatentVideo forward_diffuse(const LatentVideo& x0, int t, const LatentVideo& z,
                            const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw ContractError("forward_diffuse: t=" + std::to_string(t) + " outside [1, " +
                        std::to_string(schedule.steps()) + "]");
  }
  if (!(x0.grid == z.grid) || x0.channels() != z.channels()) {
    throw DimensionError("forward_diffuse: x0 and z shapes differ");
  }
  const double abar = schedule.alpha_bar(t);
  return LatentVideo(x0.grid, std::sqrt(abar) * x0.tokens + std::sqrt(1.0 - abar) * z.tokens);
}

AttentionOutput block_attention(const DiTBlock& block, const Matrix& x) {
  const Matrix q = matmul(x, block.w_q);
  const Matrix k = matmul(x, block.w_k);
  const Matrix v = matmul(x, block.w_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(block.channels()));
  Matrix logits = matmul(q, k.transpose());
  logits *= scale;
  AttentionOutput out;
  out.weights = softmax_rows(logits);
  out.out = matmul(matmul(out.weights, v), block.w_o);
  return out;
}

Matrix block_forward(const DiTBlock& block, const Matrix& h_in) {
  return block_forward_impl(block, h_in, nullptr);
}

Matrix execute_block(const DiTBlock& block, const Matrix& h_in, int step,
                     const TraceFlags& flags, BlockTrace* trace) {
  Matrix attention;
  const bool want_attention = flags.attention && trace != nullptr;
  Matrix h_out = block_forward_impl(block, h_in, want_attention ? &attention : nullptr);
  if (!h_out.allFinite()) {
    throw ContractError("non-finite hidden state at step " + std::to_string(step) +
                        ", block " + std::to_string(block.index));
  }
  if (trace != nullptr) {
    if (want_attention) trace->attention = std::move(attention);
    if (flags.boundaries) {
      trace->h_in = h_in;
      trace->h_out = h_out;
    }
  }
  return h_out;
}

Vector timestep_embedding(int timestep, int channels) {
  Vector emb = Vector::Zero(channels);
  const int half = channels / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
    emb[i] = std::sin(timestep * freq);
    emb[i + half] = std::cos(timestep * freq);
  }
  return kTimestepScale * emb;
}

Matrix embed(const DiTModel& model, const LatentVideo& x, int timestep) {
  Matrix h = matmul(x.tokens, model.w_in);
  const Vector shift = model.b_in + timestep_embedding(timestep, model.channels());
  h.rowwise() += shift.transpose();
  return h;
}

LatentVideo unembed(const DiTModel& model, const Matrix& h) {
  Matrix out = matmul(h, model.w_out);
  out.rowwise() += model.b_out.transpose();
  return LatentVideo(model.grid(), std::move(out));
}

ForwardOutput model_forward(const DiTModel& model, const LatentVideo& x, int step,
                            int timestep, CacheEngine* engine, const TraceFlags& flags) {
  if (!x.all_finite()) {
    throw ContractError("non-finite model input at step " + std::to_string(step));
  }
  ForwardOutput result;
  if (flags.any()) result.blocks.resize(model.blocks.size());
  std::vector<BlockTrace>* traces = flags.any() ? &result.blocks : nullptr;

  Matrix h = embed(model, x, timestep);
  if (engine != nullptr) {
    h = engine->apply_step(model.blocks, std::move(h), step, flags, traces);
  } else {
    for (const DiTBlock& block : model.blocks) {
      BlockTrace* t = traces ? &(*traces)[static_cast<std::size_t>(block.index)] : nullptr;
      h = execute_block(block, h, step, flags, t);
    }
  }
  result.noise_pred = unembed(model, h);
  return result;
}

DenoiseResult denoise_with(const NoisePredictor& predict, const LatentVideo& x_T,
                           const NoiseSchedule& schedule, const DenoiseOptions& options) {
  const int total = schedule.steps();
  DenoiseResult result;
  result.trace.reserve(static_cast<std::size_t>(total));
  LatentVideo x = x_T;
  for (int step = 0; step < total; ++step) {
    const int t = total - step;
    ForwardOutput out = predict(x, step, t);
    if (!out.noise_pred.all_finite()) {
      throw ContractError("non-finite noise prediction at step " + std::to_string(step));
    }
    const double abar = schedule.alpha_bar(t);
    const double abar_prev = schedule.alpha_bar(t - 1);
    const Matrix& eps = out.noise_pred.tokens;
    const Matrix x0_hat = (x.tokens - std::sqrt(1.0 - abar) * eps) / std::sqrt(abar);
    Matrix next = std::sqrt(abar_prev) * x0_hat + std::sqrt(1.0 - abar_prev) * eps;
    if (!next.allFinite()) {
      throw ContractError("non-finite latent after step " + std::to_string(step));
    }
    x = LatentVideo(x.grid, std::move(next));
    result.trace.push_back({step, t, std::move(out.noise_pred), std::move(out.blocks)});
    if (options.keep_latents) result.latents.push_back(x);
  }
  result.x0_hat = std::move(x);
  return result;
}

DenoiseResult denoise_loop(const DiTModel& model, const LatentVideo& x_T,
                           const NoiseSchedule& schedule, CacheEngine* engine,
                           const DenoiseOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t log_offset = engine ? engine->log().size() : 0;
  const FlopLedger before = engine ? engine->ledger() : FlopLedger{};

  DenoiseResult result = denoise_with(
      [&](const LatentVideo& x, int step, int t) {
        return model_forward(model, x, step, t, engine, options.trace);
      },
      x_T, schedule, options);

  RunStats& stats = result.stats;
  const int total = schedule.steps();
  if (engine != nullptr) {
    stats.executed_blocks = engine->ledger().executed - before.executed;
    stats.skipped_blocks = engine->ledger().skipped - before.skipped;
    for (std::size_t i = log_offset; i < engine->log().size(); ++i) {
      stats.executed_per_step.push_back(model.layers() -
                                        static_cast<int>(engine->log()[i].skipped.size()));
    }
  } else {
    stats.executed_blocks = static_cast<std::int64_t>(model.layers()) * total;
    stats.executed_per_step.assign(static_cast<std::size_t>(total), model.layers());
  }
  stats.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace semcache
