#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dgossip/data.hpp"
#include "dgossip/model.hpp"

namespace dgossip {

/// Marks a metric that was not computed (diagnostics off, or no classification head).
inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

/// Metrics for round t, describing the state after that round's mixing step.
struct RoundRecord {
  std::size_t t = 0;
  double train_loss = 0.0;
  double test_acc = kAbsent;
  double grad_norm_sq = 0.0;  // |grad f(x_bar)|^2 on the full training objective
  double consensus = 0.0;  // (1/m) sum_i |x_i - x_bar|^2
  double delta_t = 0.0;  // (1/m) sum_i |z_i - x_i|^2 right after mixing
  double v1 = kAbsent;  // (1/m) sum_i sum_{k<K} |x_{i,k} - x_i|^2
  double v2 = kAbsent;  // |x_bar^{t+1} - x_bar^t|^2
  double lr = 0.0;
  double test_loss = kAbsent;  // not part of metrics.csv
};

ParamVec mean_params(std::span<const ParamVec> xs);

double consensus_distance(std::span<const ParamVec> xs);

/// Mean squared distance between each client's pre-mix local output and its post-mix model.
double consistency_delta(std::span<const ParamVec> locals, std::span<const ParamVec> mixed);

struct UpdateEnergies {
  double v1 = 0.0;
  double v2 = 0.0;
};

/// iterates[i][k] = x_{i,k} for k < K; start[i] = x_i^t (post-mix, before Ole).
UpdateEnergies update_energies(std::span<const std::vector<ParamVec>> iterates, std::span<const ParamVec> start,
                               const ParamVec& mean_before, const ParamVec& mean_after);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and top-1 accuracy of x on `test`; argmax ties go to the lowest class.
EvalResult eval_model(const ModelSpec& spec, const ParamVec& x, const LabeledDataset& test);

struct TargetHit {
  double target = 0.0;
  std::optional<std::size_t> round;
};

/// First round whose test accuracy reaches each target.
std::vector<TargetHit> rounds_to_target(std::span<const RoundRecord> series, std::span<const double> targets);

}  // namespace dgossip
