#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dgossip/engine.hpp"

namespace dgossip {

/// Which training sample differs between the two coupled datasets: position `sample` in
/// client `client`'s shard.
struct SwapSpec {
  std::size_t client = 0;
  std::size_t sample = 0;
};

struct Sample {
  Eigen::RowVectorXd features;
  int label = 0;
};

struct StepIndex {
  std::size_t round = 0;
  std::size_t step = 0;
};

struct StabilityRow {
  std::size_t t = 0;
  bool first_draw = false;  // the swapped sample was first drawn during this round
  std::vector<double> client_distance;  // |x_i - x~_i| after mixing
  double mean_param_distance = 0.0;
  double heldout_loss_gap = 0.0;  // |test loss(x_bar) - test loss(x~_bar)|
};

struct StabilityTrace {
  SwapSpec swap;
  std::size_t dataset_row = 0;
  std::optional<StepIndex> first_draw;
  std::vector<StabilityRow> rows;
};

/// Runs cfg twice in lockstep with identical seeds; the second run's training set has the
/// swapped sample replaced. Minibatch draws coincide, so parameters agree exactly until the
/// swapped sample is first drawn.
StabilityTrace stability_probe(ExperimentConfig cfg, const SwapSpec& swap, const Sample& replacement,
                               std::size_t workers = 1);

/// The training sample currently at `swap` in the problem cfg builds.
Sample original_sample(const ExperimentConfig& cfg, const SwapSpec& swap);

}  // namespace dgossip
