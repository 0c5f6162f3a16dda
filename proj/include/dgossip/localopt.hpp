#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dgossip/model.hpp"
#include "dgossip/rng.hpp"

namespace dgossip {

enum class LocalMethod { Sgd, Sam, SgdMomentum };

struct OptimizerConfig {
  LocalMethod method = LocalMethod::Sgd;
  double eta0 = 0.1;
  double decay = 0.998;
  double lambda = 0.1;  // SAM perturbation radius
  double mu = 0.9;  // heavy-ball coefficient
  double grad_floor = 1e-12;  // below this gradient norm SAM skips the perturbation
  std::size_t batch_size = 32;

  bool operator==(const OptimizerConfig&) const = default;
  void validate() const;
};

struct OptState {
  ParamVec momentum;

  /// Zero buffer of length p; called at the start of every round.
  void reset(std::size_t p) { momentum = ParamVec::Zero(static_cast<Eigen::Index>(p)); }
};

/// eta0 * decay^t, held constant across the local steps of round t.
double lr_at_round(const OptimizerConfig& cfg, std::size_t t);

ParamVec sgd_step(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                  std::span<const std::size_t> batch, double eta);

/// One sharpness-aware step: gradient at x + lambda * g/|g| on the same batch. lambda == 0
/// evaluates a single gradient.
ParamVec sam_step(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                  std::span<const std::size_t> batch, double eta, double lambda, double grad_floor);

/// v <- mu v + g; x <- x - eta v.
ParamVec momentum_step(const ModelSpec& spec, const ParamVec& x, OptState& state, const ShardView& shard,
                       std::span<const std::size_t> batch, double eta, double mu);

/// Uniform with-replacement minibatch of min-size 1 from a shard of `shard_size` rows.
std::vector<std::size_t> sample_batch(std::size_t shard_size, std::size_t batch_size, Rng& rng);

/// Called after each minibatch draw with (step k, drawn shard-row positions).
using BatchObserver = std::function<void(std::size_t, std::span<const std::size_t>)>;

/// Optional per-step iterate sink: receives x_{i,k} before step k is applied.
using IterateObserver = std::function<void(std::size_t, const ParamVec&)>;

/// K local steps from x0. Returns x_{i,K}.
ParamVec local_train(const ModelSpec& spec, const ParamVec& x0, const ShardView& shard, std::size_t steps,
                     const OptimizerConfig& cfg, double eta, OptState& state, Rng& rng,
                     const BatchObserver& on_batch = {}, const IterateObserver& on_iterate = {});

}  // namespace dgossip
