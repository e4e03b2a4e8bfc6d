// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#include "geoforge/flow_sampler.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "geoforge/error.hpp"
#include "geoforge/io.hpp"
#include "geoforge/rng.hpp"

namespace geoforge {

namespace {

constexpr std::uint32_t kGftmVersion = 1;
constexpr int kTaps = 27;

void powers(double t, int count, std::span<double> out) {
  double p = 1.0;
  for (int j = 0; j < count; ++j) {
    out[j] = p;
    p *= t;
  }
}

void check_finite(const LatentGrid& x, const char* what) {
  for (double v : x.values) {
    if (!std::isfinite(v)) throw Error(Errc::kNonFiniteState, fmt::format("{} contains a non-finite value", what));
  }
}

}  // namespace

void FlowConfig::validate() const {
  if (steps < 1) throw Error(Errc::kInvalidArgument, fmt::format("steps must be >= 1, got {}", steps));
  if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale)) {
    throw Error(Errc::kInvalidArgument, fmt::format("cfg scale must be a finite value >= 0, got {}", cfg_scale));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(Errc::kLambdaOutOfRange, fmt::format("lambda {} outside [0, 1]", lambda));
  }
}

LatentGrid euler_sample(const VelocityModel& model, const LatentGrid& start, const ConditionVector* cond,
                        const FlowConfig& config) {
  config.validate();
  if (start.values.size() != start.positions() * static_cast<std::size_t>(start.c)) {
    throw Error(Errc::kShapeMismatch, "start latent has inconsistent storage");
  }
  if (cond != nullptr) {
    for (double v : *cond) {
      if (!std::isfinite(v)) throw Error(Errc::kInvalidArgument, "condition vector contains a non-finite value");
    }
  }
  const double dt = 1.0 / config.steps;
  LatentGrid x = start;
  for (int i = 0; i < config.steps; ++i) {
    const double t = i * dt;
    LatentGrid v;
    if (cond == nullptr || config.cfg_scale == 0.0) {
      v = model.evaluate(x, t, nullptr);
    } else if (config.cfg_scale == 1.0) {
      v = model.evaluate(x, t, cond);
    } else {
      LatentGrid vc = model.evaluate(x, t, cond);
      v = model.evaluate(x, t, nullptr);
      if (!vc.same_shape(v) || vc.values.size() != v.values.size()) {
        throw Error(Errc::kShapeMismatch, "conditional and unconditional velocities disagree in shape");
      }
      for (std::size_t k = 0; k < v.values.size(); ++k) v.values[k] += config.cfg_scale * (vc.values[k] - v.values[k]);
    }
    if (!v.same_shape(x) || v.values.size() != x.values.size()) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("velocity shape {}^3x{} does not match state {}^3x{}", v.d, v.c, x.d, x.c));
    }
    for (std::size_t k = 0; k < x.values.size(); ++k) {
      if (v.values[k] != 0.0) x.values[k] += dt * v.values[k];
    }
    for (double value : x.values) {
      if (!std::isfinite(value)) {
        throw Error(Errc::kNonFiniteState, fmt::format("state became non-finite at step {} (t={})", i, t));
      }
    }
  }
  return x;
}

ConditionVector silhouette_condition(const VoxelGrid& grid, int cells) {
  const int n = grid.n();
  if (cells <= 0 || n % cells != 0) {
    throw Error(Errc::kInvalidArgument, fmt::format("{} cells do not tile a {}-voxel grid", cells, n));
  }
  const int size = n / cells;
  ConditionVector out(static_cast<std::size_t>(cells) * cells, 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bool any = false;
      for (int z = 0; z < n && !any; ++z) any = grid.at(x, y, z);
      if (any) out[(x / size) + cells * (y / size)] += 1.0;
    }
  for (double& v : out) v /= static_cast<double>(size) * size;
  return out;
}

nlohmann::json to_json(const ToyArchitecture& arch) {
  return {{"d", arch.d},
          {"c", arch.c},
          {"cond_dim", arch.cond_dim},
          {"time_basis", arch.time_basis},
          {"cond_time_basis", arch.cond_time_basis},
          {"positional_mixing", arch.positional_mixing},
          {"pooled_context", arch.pooled_context},
          {"kernel", 3}};
}

ToyArchitecture toy_architecture_from_json(const nlohmann::json& j) {
  ToyArchitecture a;
  a.d = j.at("d").get<int>();
  a.c = j.at("c").get<int>();
  a.cond_dim = j.at("cond_dim").get<int>();
  a.time_basis = j.at("time_basis").get<int>();
  a.cond_time_basis = j.at("cond_time_basis").get<int>();
  a.positional_mixing = j.at("positional_mixing").get<bool>();
  a.pooled_context = j.at("pooled_context").get<bool>();
  return a;
}

ToyVelocityModel::ToyVelocityModel(ToyArchitecture arch) : arch_(arch) {
  if (arch.d <= 0 || arch.c <= 0 || arch.cond_dim < 0 || arch.time_basis < 1 || arch.cond_time_basis < 0 ||
      (arch.pooled_context && !arch.positional_mixing)) {
    throw Error(Errc::kInvalidArgument, fmt::format("invalid toy architecture {}", to_json(arch).dump()));
  }
  params_.assign(cond_offset(arch.cond_time_basis), 0.0);
}

std::size_t ToyVelocityModel::conv_offset(int j) const noexcept {
  return static_cast<std::size_t>(j) * kTaps * arch_.c * arch_.c;
}

std::size_t ToyVelocityModel::mix_width() const noexcept {
  return static_cast<std::size_t>(arch_.c) * (arch_.pooled_context ? 3 : 1);
}

std::size_t ToyVelocityModel::mix_offset(int j) const noexcept {
  const std::size_t positions = static_cast<std::size_t>(arch_.d) * arch_.d * arch_.d;
  const int blocks = arch_.positional_mixing ? j : 0;
  return conv_offset(arch_.time_basis) + static_cast<std::size_t>(blocks) * positions * arch_.c * mix_width();
}

std::size_t ToyVelocityModel::bias_offset(int j) const noexcept {
  const std::size_t positions = static_cast<std::size_t>(arch_.d) * arch_.d * arch_.d;
  return mix_offset(arch_.time_basis) + static_cast<std::size_t>(j) * positions * arch_.c;
}

std::size_t ToyVelocityModel::cond_offset(int j) const noexcept {
  const std::size_t plane = static_cast<std::size_t>(arch_.d) * arch_.d * arch_.d * arch_.c;
  return bias_offset(arch_.time_basis) + static_cast<std::size_t>(j) * arch_.cond_dim * plane;
}

void ToyVelocityModel::check_inputs(const LatentGrid& state, double t, const ConditionVector* cond) const {
  if (state.d != arch_.d || state.c != arch_.c || state.values.size() != state.positions() * state.c) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("model expects {}^3x{} latents, got {}^3x{}", arch_.d, arch_.c, state.d, state.c));
  }
  if (!std::isfinite(t)) throw Error(Errc::kInvalidArgument, "time must be finite");
  if (cond != nullptr && cond->size() != static_cast<std::size_t>(arch_.cond_dim)) {
    throw Error(Errc::kShapeMismatch,
                fmt::format("model expects {}-dim conditions, got {}", arch_.cond_dim, cond->size()));
  }
}

namespace {

struct NeighbourTable {
  // For every position, the 27 neighbour indices; -1 outside the grid.
  std::vector<std::int32_t> index;
};

NeighbourTable neighbours(int d) {
  const std::size_t positions = static_cast<std::size_t>(d) * d * d;
  NeighbourTable table;
  table.index.assign(positions * kTaps, -1);
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < d; ++y)
      for (int x = 0; x < d; ++x) {
        const std::size_t p = x + static_cast<std::size_t>(d) * (y + static_cast<std::size_t>(d) * z);
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int qx = x + dx, qy = y + dy, qz = z + dz;
              if (qx < 0 || qy < 0 || qz < 0 || qx >= d || qy >= d || qz >= d) continue;
              const int tap = (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1);
              table.index[p * kTaps + tap] = qx + d * (qy + d * qz);
            }
      }
  return table;
}

/// Horizontal-plane and vertical-column means of a latent, per channel.
struct PooledContext {
  std::vector<double> plane;   // [z][ch]
  std::vector<double> column;  // [x + d*y][ch]
};

PooledContext pool_context(const LatentGrid& x) {
  const int d = x.d, c = x.c;
  PooledContext pooled{std::vector<double>(static_cast<std::size_t>(d) * c, 0.0),
                       std::vector<double>(static_cast<std::size_t>(d) * d * c, 0.0)};
  for (int z = 0; z < d; ++z)
    for (int xy = 0; xy < d * d; ++xy) {
      const double* v = &x.values[(static_cast<std::size_t>(z) * d * d + xy) * c];
      for (int ch = 0; ch < c; ++ch) {
        pooled.plane[static_cast<std::size_t>(z) * c + ch] += v[ch];
        pooled.column[static_cast<std::size_t>(xy) * c + ch] += v[ch];
      }
    }
  for (double& v : pooled.plane) v /= static_cast<double>(d) * d;
  for (double& v : pooled.column) v /= d;
  return pooled;
}

/// Input of the per-position mixing matrix: x[p], then, with pooled context,
/// the plane mean at p's height and the column mean at p's footprint cell.
void mixing_input(const LatentGrid& x, const PooledContext* pooled, std::size_t p, std::span<double> out) {
  const int c = x.c;
  std::copy_n(&x.values[p * c], c, out.begin());
  if (pooled == nullptr) return;
  const std::size_t dd = static_cast<std::size_t>(x.d) * x.d;
  std::copy_n(&pooled->plane[(p / dd) * c], c, out.begin() + c);
  std::copy_n(&pooled->column[(p % dd) * c], c, out.begin() + 2 * c);
}

const NeighbourTable& cached_neighbours(int d) {
  static const NeighbourTable d16 = neighbours(16);
  if (d == 16) return d16;
  thread_local int last_d = -1;
  thread_local NeighbourTable last;
  if (last_d != d) {
    last = neighbours(d);
    last_d = d;
  }
  return last;
}

}  // namespace

LatentGrid ToyVelocityModel::evaluate(const LatentGrid& state, double t, const ConditionVector* cond) const {
  check_inputs(state, t, cond);
  const int c = arch_.c;
  const std::size_t positions = state.positions();
  const std::size_t cc = static_cast<std::size_t>(c) * c;
  std::vector<double> phi(arch_.time_basis);
  powers(t, arch_.time_basis, phi);

  std::vector<double> weights(kTaps * cc, 0.0);
  for (int j = 0; j < arch_.time_basis; ++j) {
    const double* w = &params_[conv_offset(j)];
    for (std::size_t k = 0; k < weights.size(); ++k) weights[k] += phi[j] * w[k];
  }
  LatentGrid out(state.d, c);
  for (int j = 0; j < arch_.time_basis; ++j) {
    const double* b = &params_[bias_offset(j)];
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += phi[j] * b[k];
  }
  if (cond != nullptr && arch_.cond_time_basis > 0) {
    std::vector<double> psi(arch_.cond_time_basis);
    powers(t, arch_.cond_time_basis, psi);
    const std::size_t plane = positions * c;
    for (int j = 0; j < arch_.cond_time_basis; ++j)
      for (int k = 0; k < arch_.cond_dim; ++k) {
        const double a = psi[j] * (*cond)[k];
        if (a == 0.0) continue;
        const double* u = &params_[cond_offset(j) + k * plane];
        for (std::size_t e = 0; e < plane; ++e) out.values[e] += a * u[e];
      }
  }
  const auto& table = cached_neighbours(state.d);
  const std::size_t mw = mix_width();
  std::vector<double> mix(c * mw), input(mw);
  PooledContext pooled;
  if (arch_.pooled_context) pooled = pool_context(state);
  for (std::size_t p = 0; p < positions; ++p) {
    double* o_row = &out.values[p * c];
    if (arch_.positional_mixing) {
      std::fill(mix.begin(), mix.end(), 0.0);
      for (int j = 0; j < arch_.time_basis; ++j) {
        const double* a = &params_[mix_offset(j) + p * c * mw];
        for (std::size_t k = 0; k < mix.size(); ++k) mix[k] += phi[j] * a[k];
      }
      mixing_input(state, arch_.pooled_context ? &pooled : nullptr, p, input);
      for (int o = 0; o < c; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < mw; ++i) acc += mix[o * mw + i] * input[i];
        o_row[o] += acc;
      }
    }
    for (int tap = 0; tap < kTaps; ++tap) {
      const std::int32_t q = table.index[p * kTaps + tap];
      if (q < 0) continue;
      const double* xin = &state.values[static_cast<std::size_t>(q) * c];
      const double* w = &weights[tap * cc];
      for (int o = 0; o < c; ++o) {
        double acc = 0.0;
        for (int i = 0; i < c; ++i) acc += w[o * c + i] * xin[i];
        o_row[o] += acc;
      }
    }
  }
  return out;
}

double ToyVelocityModel::loss_and_grad(std::span<const ToyExample> batch, std::vector<double>* grad) const {
  if (batch.empty()) throw Error(Errc::kInvalidArgument, "loss over an empty batch");
  const int c = arch_.c;
  const std::size_t cc = static_cast<std::size_t>(c) * c;
  std::size_t total = 0;
  for (const auto& e : batch) {
    check_inputs(e.x_t, e.t, e.has_cond ? &e.cond : nullptr);
    if (!e.target.same_shape(e.x_t)) throw Error(Errc::kShapeMismatch, "target shape differs from state");
    total += (e.positions.empty() ? e.x_t.positions() : e.positions.size()) * c;
  }
  if (grad != nullptr) grad->assign(params_.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(total);
  const auto& table = cached_neighbours(arch_.d);
  std::vector<double> phi(arch_.time_basis), psi(std::max(arch_.cond_time_basis, 1));
  std::vector<double> weights(kTaps * cc), gw(kTaps * cc);
  std::vector<double> v(c), g(c);
  const std::size_t mw = mix_width();
  std::vector<double> input(mw);
  PooledContext pooled;
  std::vector<std::uint32_t> all_positions;
  double loss = 0.0;

  for (const auto& e : batch) {
    powers(e.t, arch_.time_basis, phi);
    powers(e.t, arch_.cond_time_basis, psi);
    std::fill(weights.begin(), weights.end(), 0.0);
    for (int j = 0; j < arch_.time_basis; ++j) {
      const double* w = &params_[conv_offset(j)];
      for (std::size_t k = 0; k < weights.size(); ++k) weights[k] += phi[j] * w[k];
    }
    std::fill(gw.begin(), gw.end(), 0.0);
    if (arch_.pooled_context) pooled = pool_context(e.x_t);
    const bool use_cond = e.has_cond && arch_.cond_time_basis > 0;
    const std::size_t plane = e.x_t.positions() * c;
    std::span<const std::uint32_t> pos = e.positions;
    if (pos.empty()) {
      all_positions.resize(e.x_t.positions());
      std::iota(all_positions.begin(), all_positions.end(), 0u);
      pos = all_positions;
    }
    for (std::uint32_t p : pos) {
      for (int o = 0; o < c; ++o) {
        double acc = 0.0;
        for (int j = 0; j < arch_.time_basis; ++j) acc += phi[j] * params_[bias_offset(j) + p * c + o];
        if (use_cond) {
          for (int j = 0; j < arch_.cond_time_basis; ++j)
            for (int k = 0; k < arch_.cond_dim; ++k)
              acc += psi[j] * e.cond[k] * params_[cond_offset(j) + k * plane + p * c + o];
        }
        v[o] = acc;
      }
      if (arch_.positional_mixing) {
        mixing_input(e.x_t, arch_.pooled_context ? &pooled : nullptr, p, input);
        for (int j = 0; j < arch_.time_basis; ++j) {
          const double* a = &params_[mix_offset(j) + p * c * mw];
          for (int o = 0; o < c; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < mw; ++i) acc += a[o * mw + i] * input[i];
            v[o] += phi[j] * acc;
          }
        }
      }
      for (int tap = 0; tap < kTaps; ++tap) {
        const std::int32_t q = table.index[static_cast<std::size_t>(p) * kTaps + tap];
        if (q < 0) continue;
        const double* xin = &e.x_t.values[static_cast<std::size_t>(q) * c];
        const double* w = &weights[tap * cc];
        for (int o = 0; o < c; ++o) {
          double acc = 0.0;
          for (int i = 0; i < c; ++i) acc += w[o * c + i] * xin[i];
          v[o] += acc;
        }
      }
      for (int o = 0; o < c; ++o) {
        const double r = v[o] - e.target.at(p, o);
        loss += r * r;
        g[o] = 2.0 * r * scale;
      }
      if (grad == nullptr) continue;
      auto& G = *grad;
      for (int tap = 0; tap < kTaps; ++tap) {
        const std::int32_t q = table.index[static_cast<std::size_t>(p) * kTaps + tap];
        if (q < 0) continue;
        const double* xin = &e.x_t.values[static_cast<std::size_t>(q) * c];
        double* gwt = &gw[tap * cc];
        for (int o = 0; o < c; ++o)
          for (int i = 0; i < c; ++i) gwt[o * c + i] += g[o] * xin[i];
      }
      if (arch_.positional_mixing) {
        for (int j = 0; j < arch_.time_basis; ++j) {
          double* ga = &G[mix_offset(j) + p * c * mw];
          for (int o = 0; o < c; ++o) {
            const double go = phi[j] * g[o];
            for (std::size_t i = 0; i < mw; ++i) ga[o * mw + i] += go * input[i];
          }
        }
      }
      for (int j = 0; j < arch_.time_basis; ++j) {
        double* gb = &G[bias_offset(j) + p * c];
        for (int o = 0; o < c; ++o) gb[o] += phi[j] * g[o];
      }
      if (use_cond) {
        for (int j = 0; j < arch_.cond_time_basis; ++j)
          for (int k = 0; k < arch_.cond_dim; ++k) {
            const double a = psi[j] * e.cond[k];
            if (a == 0.0) continue;
            double* gu = &G[cond_offset(j) + k * plane + p * c];
            for (int o = 0; o < c; ++o) gu[o] += a * g[o];
          }
      }
    }
    if (grad != nullptr) {
      for (int j = 0; j < arch_.time_basis; ++j) {
        double* gc = &(*grad)[conv_offset(j)];
        for (std::size_t k = 0; k < gw.size(); ++k) gc[k] += phi[j] * gw[k];
      }
    }
  }
  return loss * scale;
}

nlohmann::json to_json(const ToyTrainConfig& config) {
  return {{"epochs", config.epochs},
          {"batch_size", config.batch_size},
          {"positions_per_sample", config.positions_per_sample},
          {"learning_rate", config.learning_rate},
          {"cond_drop", config.cond_drop},
          {"eval_samples", config.eval_samples},
          {"lambda_mu", config.lambda.mu},
          {"lambda_sigma", config.lambda.sigma},
          {"inference_lambda", config.lambda.inference_lambda},
          {"seed", config.seed}};
}

ToyTrainConfig toy_train_config_from_json(const nlohmann::json& j) {
  ToyTrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.positions_per_sample = j.at("positions_per_sample").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.cond_drop = j.at("cond_drop").get<double>();
  c.eval_samples = j.at("eval_samples").get<int>();
  c.lambda.mu = j.at("lambda_mu").get<double>();
  c.lambda.sigma = j.at("lambda_sigma").get<double>();
  c.lambda.inference_lambda = j.at("inference_lambda").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

/// Normalized latents of one corpus entry, stored as float32 to bound memory.
struct CachedShape {
  std::vector<float> gt;
  std::array<std::vector<float>, 3> lods;
};

std::vector<float> to_float(const LatentGrid& latent) {
  return std::vector<float>(latent.values.begin(), latent.values.end());
}

LatentGrid from_float(const std::vector<float>& values, int d, int c) {
  LatentGrid out(d, c);
  std::copy(values.begin(), values.end(), out.values.begin());
  return out;
}

ToyExample make_example(const TrainingShape& shape, const CachedShape& cached, std::uint64_t sample_seed,
                        const ToyTrainConfig& config, const ToyArchitecture& arch, bool all_positions) {
  const TrainingPrior prior = sample_training_prior(shape.gt, sample_seed);
  LatentGrid x0;
  if (prior == TrainingPrior::kPureNoise) {
    x0 = noise_latent(arch.d, arch.c, sample_seed);
  } else {
    const double lambda = sample_lambda(config.lambda, sample_seed);
    x0 = cosine_interpolate(from_float(cached.lods[static_cast<int>(prior)], arch.d, arch.c), lambda, sample_seed);
  }
  CounterRng rng(sample_seed, streams::kTraining);
  ToyExample e;
  e.t = rng.next_uniform();
  e.has_cond = rng.next_uniform() >= config.cond_drop;
  if (e.has_cond) e.cond = shape.cond;
  const LatentGrid x1 = from_float(cached.gt, arch.d, arch.c);
  e.x_t = LatentGrid(arch.d, arch.c);
  e.target = LatentGrid(arch.d, arch.c);
  for (std::size_t k = 0; k < x1.values.size(); ++k) {
    e.x_t.values[k] = (1.0 - e.t) * x0.values[k] + e.t * x1.values[k];
    e.target.values[k] = x1.values[k] - x0.values[k];
  }
  if (!all_positions) {
    const std::uint64_t positions = x1.positions();
    e.positions.resize(config.positions_per_sample);
    for (auto& p : e.positions) p = static_cast<std::uint32_t>(rng.next_below(positions));
  }
  return e;
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t counter, std::uint64_t domain) {
  return mix64(seed ^ mix64(domain * 0x9e3779b97f4a7c15ULL + counter));
}

}  // namespace

ToyModel train_toy(std::span<const TrainingShape> corpus, const ToyTrainConfig& config, ToyArchitecture arch,
                   const SurrogateCodec& codec) {
  if (corpus.empty()) throw Error(Errc::kEmptyCorpus, "toy training needs at least one shape");
  if (config.epochs < 0 || config.batch_size < 1 || config.positions_per_sample < 1 || config.eval_samples < 1) {
    throw Error(Errc::kInvalidArgument, fmt::format("invalid training config {}", to_json(config).dump()));
  }
  config.lambda.validate();
  if (codec.d() != arch.d || codec.c() != arch.c) {
    throw Error(Errc::kShapeMismatch, "codec latent shape differs from the model architecture");
  }
  for (const auto& s : corpus) {
    if (s.cond.size() != static_cast<std::size_t>(arch.cond_dim)) {
      throw Error(Errc::kShapeMismatch,
                  fmt::format("training condition has {} values, model expects {}", s.cond.size(), arch.cond_dim));
    }
  }

  StatsAccumulator acc;
  std::vector<CachedShape> cache(corpus.size());
  std::vector<LatentGrid> gt_raw(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const VoxelGrid& gt = corpus[i].gt;
    if (gt.empty()) throw Error(Errc::kEmptyGrid, fmt::format("training shape {} is empty", i));
    for (int k = 0; k < 3; ++k) {
      const LatentGrid raw = codec.encode(lod_prior(gt, static_cast<LodLevel>(k)));
      acc.add(raw);
      cache[i].lods[k] = to_float(raw);
    }
  }
  const NormStats stats = acc.finish().stats;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    cache[i].gt = to_float(normalize_latent(codec.encode(corpus[i].gt), stats));
    for (auto& lod : cache[i].lods) lod = to_float(normalize_latent(from_float(lod, arch.d, arch.c), stats));
  }

  ToyModel model{ToyVelocityModel(arch), stats, codec, config, 0.0, 0.0, {}};
  std::vector<ToyExample> eval_batch;
  const std::size_t eval_count = std::min<std::size_t>(config.eval_samples, corpus.size());
  for (std::size_t k = 0; k < eval_count; ++k) {
    const std::size_t i = k * corpus.size() / eval_count;
    eval_batch.push_back(make_example(corpus[i], cache[i], sample_seed(config.seed, k, 2), config, arch, true));
  }
  model.initial_loss = model.velocity.loss_and_grad(eval_batch, nullptr);

  auto params = model.velocity.params();
  std::vector<double> grad, m(params.size(), 0.0), v(params.size(), 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<std::size_t> order(corpus.size());
  std::vector<ToyExample> batch;
  std::uint64_t sample_counter = 0;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle(sample_seed(config.seed, epoch, 3), streams::kTraining);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.next_below(i)]);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t i = order[b];
        batch.push_back(make_example(corpus[i], cache[i], sample_seed(config.seed, sample_counter++, 1), config, arch,
                                     false));
      }
      epoch_loss += model.velocity.loss_and_grad(batch, &grad);
      ++batches;
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t k = 0; k < params.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * grad[k];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * grad[k] * grad[k];
        params[k] -= config.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
      }
    }
    model.epoch_losses.push_back(epoch_loss / batches);
    spdlog::debug("toy epoch {}/{}: mean batch loss {:.5f}", epoch + 1, config.epochs, model.epoch_losses.back());
  }
  for (double& p : params) p = static_cast<double>(static_cast<float>(p));
  model.final_loss = model.velocity.loss_and_grad(eval_batch, nullptr);
  spdlog::info("toy training: {} shapes, {} steps, eval loss {:.5f} -> {:.5f}", corpus.size(), step,
               model.initial_loss, model.final_loss);
  return model;
}

GenerationTrace generate_traced(const VelocityModel& model, const VoxelGrid* prior, const ConditionVector* cond,
                                const FlowConfig& config, const SurrogateCodec& codec, const NormStats& stats) {
  config.validate();
  GenerationTrace trace;
  if (prior == nullptr) {
    trace.start = noise_latent(codec.d(), codec.c(), config.seed);
  } else {
    if (prior->empty()) throw Error(Errc::kEmptyGrid, "generation prior is empty");
    const LatentGrid z = normalize_latent(codec.encode(*prior), stats);
    trace.start = cosine_interpolate(z, config.lambda, config.seed);
  }
  check_finite(trace.start, "start latent");
  trace.final_state = euler_sample(model, trace.start, cond, config);
  trace.grid = codec.decode(denormalize_latent(trace.final_state, stats));
  return trace;
}

VoxelGrid generate(const VelocityModel& model, const VoxelGrid* prior, const ConditionVector* cond,
                   const FlowConfig& config, const SurrogateCodec& codec, const NormStats& stats) {
  return generate_traced(model, prior, cond, config, codec, stats).grid;
}

std::vector<std::uint8_t> encode_gftm(std::span<const double> params) {
  ByteWriter w;
  w.raw(std::string_view("GFTM"));
  w.u32(kGftmVersion);
  w.u64(params.size());
  for (double p : params) w.f32(static_cast<float>(p));
  return std::move(w.bytes());
}

std::vector<double> decode_gftm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw Error(Errc::kFormatError, "GFTM: truncated header");
  ByteReader r(bytes);
  if (r.raw(4) != "GFTM") throw Error(Errc::kFormatError, "GFTM: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kGftmVersion) throw Error(Errc::kFormatError, fmt::format("GFTM: unsupported version {}", version));
  const std::uint64_t count = r.u64();
  if (count > r.remaining() / 4 || r.remaining() != count * 4) {
    throw Error(Errc::kFormatError, fmt::format("GFTM: {} params declared, {} payload bytes", count, r.remaining()));
  }
  std::vector<double> params(count);
  for (double& p : params) p = r.f32();
  return params;
}

void save_toy_model(const ToyModel& model, const std::filesystem::path& path) {
  write_bytes(path, encode_gftm(model.velocity.params()));
  const nlohmann::json sidecar = {
      {"format", "GFTM"},
      {"version", kGftmVersion},
      {"param_count", model.velocity.param_count()},
      {"architecture", to_json(model.velocity.arch())},
      {"codec",
       {{"n", model.codec.n()},
        {"d", model.codec.d()},
        {"c", model.codec.c()},
        {"seed", model.codec.seed()},
        {"scale", SurrogateCodec::kScale}}},
      {"norm_stats", to_json(model.stats)},
      {"train_config", to_json(model.train)},
      {"initial_loss", model.initial_loss},
      {"final_loss", model.final_loss},
      {"epoch_losses", model.epoch_losses},
  };
  write_text(std::filesystem::path(path.string() + ".json"), sidecar.dump(2) + "\n");
}

ToyModel load_toy_model(const std::filesystem::path& path) {
  const std::filesystem::path sidecar_path(path.string() + ".json");
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(read_text(sidecar_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("{}: {}", sidecar_path.string(), e.what()));
  }
  try {
    const auto& codec = sidecar.at("codec");
    ToyModel model{ToyVelocityModel(toy_architecture_from_json(sidecar.at("architecture"))),
                   norm_stats_from_json(sidecar.at("norm_stats")),
                   SurrogateCodec(codec.at("n").get<int>(), codec.at("d").get<int>(), codec.at("c").get<int>(),
                                  codec.at("seed").get<std::uint64_t>()),
                   toy_train_config_from_json(sidecar.at("train_config")),
                   sidecar.at("initial_loss").get<double>(),
                   sidecar.at("final_loss").get<double>(),
                   sidecar.at("epoch_losses").get<std::vector<double>>()};
    const std::vector<double> params = decode_gftm(read_bytes(path));
    if (params.size() != model.velocity.param_count()) {
      throw Error(Errc::kFormatError, fmt::format("{}: {} params, architecture needs {}", path.string(), params.size(),
                                                  model.velocity.param_count()));
    }
    std::copy(params.begin(), params.end(), model.velocity.params().begin());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormatError, fmt::format("{}: {}", sidecar_path.string(), e.what()));
  }
}

}  // namespace geoforge
