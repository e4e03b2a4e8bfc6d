// Copyright 2026 The GeoForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "geoforge/latent_ops.hpp"
#include "geoforge/voxel_prior.hpp"

namespace geoforge {

/// Fixed-length conditioning signal. Values must be finite.
using ConditionVector = std::vector<double>;

struct FlowConfig {
  int steps = 50;
  double cfg_scale = 7.5;
  double lambda = 0.5;
  std::uint64_t seed = 0;

  /// Throws kInvalidArgument for steps < 1 or cfg_scale < 0, and
  /// kLambdaOutOfRange for lambda outside [0, 1].
  void validate() const;
};

/// A velocity field v(x, t | cond). Implementations must be reentrant and
/// deterministic in (parameters, state, t, cond).
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  /// `cond == nullptr` selects the unconditional branch.
  virtual LatentGrid evaluate(const LatentGrid& state, double t, const ConditionVector* cond) const = 0;
};

/// Forward Euler from t = 0 (start) to t = 1 with steps uniform increments.
/// With cond present the field is v_u + s (v_c - v_u); s == 1 evaluates only
/// the conditional branch and s == 0 only the unconditional one. Components
/// with zero velocity are left untouched, so a zero field returns start
/// bit-exactly.
LatentGrid euler_sample(const VelocityModel& model, const LatentGrid& start, const ConditionVector* cond,
                        const FlowConfig& config);

/// Top-down occupancy coverage of a cells x cells partition of the grid's
/// columns, row-major with x fastest. Each value lies in [0, 1].
ConditionVector silhouette_condition(const VoxelGrid& grid, int cells = 4);

struct ToyArchitecture {
  int d = 16;
  int c = 8;
  int cond_dim = 16;
  /// Number of polynomial time features 1, t, t^2, ... for the convolution
  /// and the positional bias.
  int time_basis = 3;
  /// Number of polynomial time features for the conditional term.
  int cond_time_basis = 1;
  /// Adds a per-position mixing matrix A_j[p] applied to m(x, p).
  bool positional_mixing = true;
  /// Extends m(x, p) from x[p] to x[p] plus the means of x over p's
  /// horizontal plane and over p's vertical column. Needs positional_mixing.
  bool pooled_context = true;

  friend bool operator==(const ToyArchitecture&, const ToyArchitecture&) = default;
};

nlohmann::json to_json(const ToyArchitecture& arch);
ToyArchitecture toy_architecture_from_json(const nlohmann::json& j);

/// One supervised flow-matching sample. An empty `positions` means every
/// latent position contributes to the loss.
struct ToyExample {
  LatentGrid x_t;
  double t = 0.0;
  LatentGrid target;
  bool has_cond = false;
  ConditionVector cond;
  std::vector<std::uint32_t> positions;
};

/// Small parametric field, linear in its parameters:
///
///   v(x, t | c)[p, o] = sum_j phi_j(t) (sum_{q in N(p)} sum_i W_j[q - p, o, i] x[q, i]
///                                        + sum_i A_j[p, o, i] m(x, p)[i] + B_j[p, o])
///                     + sum_j psi_j(t) sum_k c_k U_j[k, p, o]
///
/// N(p) is the 3x3x3 neighbourhood with zero padding, phi_j(t) = t^j for
/// j < time_basis and psi_j(t) = t^j for j < cond_time_basis. The U term is
/// absent on the unconditional branch. Parameters start at zero.
class ToyVelocityModel final : public VelocityModel {
 public:
  explicit ToyVelocityModel(ToyArchitecture arch = {});

  const ToyArchitecture& arch() const noexcept { return arch_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  LatentGrid evaluate(const LatentGrid& state, double t, const ConditionVector* cond) const override;

  /// Mean squared error of evaluate() against the targets, averaged over
  /// (sample, position, channel). When grad is non-null it is resized to
  /// param_count() and receives d(loss)/d(params).
  double loss_and_grad(std::span<const ToyExample> batch, std::vector<double>* grad) const;

 private:
  std::size_t conv_offset(int j) const noexcept;
  std::size_t mix_width() const noexcept;
  std::size_t mix_offset(int j) const noexcept;
  std::size_t bias_offset(int j) const noexcept;
  std::size_t cond_offset(int j) const noexcept;
  void check_inputs(const LatentGrid& state, double t, const ConditionVector* cond) const;

  ToyArchitecture arch_;
  std::vector<double> params_;
};

struct TrainingShape {
  VoxelGrid gt;
  ConditionVector cond;
};

struct ToyTrainConfig {
  int epochs = 40;
  int batch_size = 16;
  int positions_per_sample = 1024;
  double learning_rate = 3e-3;
  double cond_drop = 0.1;
  int eval_samples = 16;
  LambdaParams lambda;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ToyTrainConfig& config);
ToyTrainConfig toy_train_config_from_json(const nlohmann::json& j);

/// A trained field together with everything inference needs to reproduce
/// the training-time latent space.
struct ToyModel {
  ToyVelocityModel velocity;
  NormStats stats;
  SurrogateCodec codec;
  ToyTrainConfig train;
  /// Loss of the fixed evaluation batch at initialization and after training.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

/// Flow-matching training. Normalization statistics are computed over the
/// LOD priors of the corpus. Parameters are rounded to float32 on return so
/// the in-memory model equals its serialized form. Throws kEmptyCorpus.
ToyModel train_toy(std::span<const TrainingShape> corpus, const ToyTrainConfig& config, ToyArchitecture arch = {},
                   const SurrogateCodec& codec = SurrogateCodec());

/// Intermediate latents of one generation run.
struct GenerationTrace {
  LatentGrid start;
  LatentGrid final_state;
  VoxelGrid grid;
};

/// encode -> normalize -> cosine_interpolate(lambda) -> euler_sample ->
/// denormalize -> decode. A null prior selects pure-noise mode, which equals
/// lambda = 1 for any prior. Throws kEmptyGrid for an empty prior.
GenerationTrace generate_traced(const VelocityModel& model, const VoxelGrid* prior, const ConditionVector* cond,
                                const FlowConfig& config, const SurrogateCodec& codec, const NormStats& stats);
VoxelGrid generate(const VelocityModel& model, const VoxelGrid* prior, const ConditionVector* cond,
                   const FlowConfig& config, const SurrogateCodec& codec, const NormStats& stats);

/// GFTM: "GFTM" | u32 version=1 | u64 param_count | float32 params.
std::vector<std::uint8_t> encode_gftm(std::span<const double> params);
std::vector<double> decode_gftm(std::span<const std::uint8_t> bytes);

/// Writes the GFTM file and a sidecar `<path>.json` with the architecture,
/// codec, normalization statistics and training configuration.
void save_toy_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_toy_model(const std::filesystem::path& path);

}  // namespace geoforge
