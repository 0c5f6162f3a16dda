#include "dgossip/localopt.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dgossip/errors.hpp"

namespace dgossip {

namespace {

void require_finite(const ParamVec& v, const char* what) {
  if (!v.allFinite()) throw NumericalError(fmt::format("non-finite {}", what));
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(eta0 > 0.0)) throw ConfigError(fmt::format("optimizer.eta0 must be > 0, got {}", eta0));
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError(fmt::format("optimizer.decay must be in (0, 1], got {}", decay));
  if (!(lambda >= 0.0)) throw ConfigError(fmt::format("optimizer.lambda must be >= 0, got {}", lambda));
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError(fmt::format("optimizer.mu must be in [0, 1), got {}", mu));
  if (!(grad_floor >= 0.0)) throw ConfigError(fmt::format("optimizer.grad_floor must be >= 0, got {}", grad_floor));
  if (batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
}

double lr_at_round(const OptimizerConfig& cfg, std::size_t t) {
  return cfg.eta0 * std::pow(cfg.decay, static_cast<double>(t));
}

ParamVec sgd_step(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                  std::span<const std::size_t> batch, double eta) {
  const LossGrad lg = loss_and_grad(spec, x, shard, batch);
  require_finite(lg.grad, "gradient");
  ParamVec next = x - eta * lg.grad;
  require_finite(next, "parameters");
  return next;
}

ParamVec sam_step(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                  std::span<const std::size_t> batch, double eta, double lambda, double grad_floor) {
  if (lambda == 0.0) return sgd_step(spec, x, shard, batch, eta);
  const LossGrad first = loss_and_grad(spec, x, shard, batch);
  require_finite(first.grad, "gradient");
  const double norm = first.grad.norm();
  if (norm <= grad_floor) {
    ParamVec next = x - eta * first.grad;
    require_finite(next, "parameters");
    return next;
  }
  const ParamVec perturbed = x + (lambda / norm) * first.grad;
  const LossGrad second = loss_and_grad(spec, perturbed, shard, batch);
  require_finite(second.grad, "perturbed gradient");
  ParamVec next = x - eta * second.grad;
  require_finite(next, "parameters");
  return next;
}

ParamVec momentum_step(const ModelSpec& spec, const ParamVec& x, OptState& state, const ShardView& shard,
                       std::span<const std::size_t> batch, double eta, double mu) {
  const LossGrad lg = loss_and_grad(spec, x, shard, batch);
  require_finite(lg.grad, "gradient");
  if (state.momentum.size() != x.size()) state.reset(static_cast<std::size_t>(x.size()));
  state.momentum = mu * state.momentum + lg.grad;
  ParamVec next = x - eta * state.momentum;
  require_finite(next, "parameters");
  return next;
}

std::vector<std::size_t> sample_batch(std::size_t shard_size, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> batch;
  if (shard_size == 0) return batch;
  batch.resize(batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, shard_size - 1);
  for (auto& b : batch) b = pick(rng);
  return batch;
}

ParamVec local_train(const ModelSpec& spec, const ParamVec& x0, const ShardView& shard, std::size_t steps,
                     const OptimizerConfig& cfg, double eta, OptState& state, Rng& rng,
                     const BatchObserver& on_batch, const IterateObserver& on_iterate) {
  if (steps < 1) throw ConfigError("local training needs at least one step");
  ParamVec x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    if (on_iterate) on_iterate(k, x);
    const auto batch = sample_batch(shard.size(), cfg.batch_size, rng);
    if (on_batch) on_batch(k, batch);
    switch (cfg.method) {
      case LocalMethod::Sgd: x = sgd_step(spec, x, shard, batch, eta); break;
      case LocalMethod::Sam: x = sam_step(spec, x, shard, batch, eta, cfg.lambda, cfg.grad_floor); break;
      case LocalMethod::SgdMomentum: x = momentum_step(spec, x, state, shard, batch, eta, cfg.mu); break;
    }
  }
  return x;
}

}  // namespace dgossip
