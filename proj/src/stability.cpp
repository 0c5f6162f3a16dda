#include "dgossip/stability.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "dgossip/errors.hpp"

namespace dgossip {

namespace {

std::size_t resolve_row(const Problem& problem, const SwapSpec& swap) {
  if (!problem.has_data()) throw ConfigError("stability probe needs a dataset-backed model");
  if (swap.client >= problem.plan.clients())
    throw ConfigError(fmt::format("swap client {} out of range (clients: {})", swap.client, problem.plan.clients()));
  const auto& rows = problem.plan.assignments[swap.client];
  if (swap.sample >= rows.size())
    throw ConfigError(fmt::format("swap sample {} out of range (client {} holds {})", swap.sample, swap.client,
                                  rows.size()));
  return rows[swap.sample];
}

}  // namespace

Sample original_sample(const ExperimentConfig& cfg, const SwapSpec& swap) {
  ExperimentConfig c = cfg;
  c.validate();
  const auto problem = build_problem(c);
  const std::size_t row = resolve_row(*problem, swap);
  return Sample{problem->train.row(row), problem->train.labels[row]};
}

StabilityTrace stability_probe(ExperimentConfig cfg, const SwapSpec& swap, const Sample& replacement,
                               std::size_t workers) {
  cfg.validate();
  auto original = build_problem(cfg);
  StabilityTrace trace;
  trace.swap = swap;
  trace.dataset_row = resolve_row(*original, swap);
  if (static_cast<std::size_t>(replacement.features.size()) != original->train.dim())
    throw ConfigError("replacement sample has the wrong feature count");
  if (replacement.label < 0 || replacement.label >= original->train.num_classes)
    throw ConfigError(fmt::format("replacement label {} outside [0, {})", replacement.label,
                                  original->train.num_classes));

  // Same partition plan and test set; only one training row differs.
  auto twin = std::make_shared<Problem>(*original);
  twin->train.features.row(static_cast<Eigen::Index>(trace.dataset_row)) = replacement.features;
  twin->train.labels[trace.dataset_row] = replacement.label;

  Simulation run(cfg, original, workers);
  Simulation coupled(cfg, twin, workers);

  std::mutex mu;
  std::optional<StepIndex> first;
  run.set_batch_observer([&](std::size_t client, std::size_t t, std::size_t k, std::span<const std::size_t> rows) {
    if (client != swap.client) return;
    if (std::find(rows.begin(), rows.end(), swap.sample) == rows.end()) return;
    std::lock_guard lock(mu);
    if (!first) first = StepIndex{t, k};
  });

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    run.step(false);
    coupled.step(false);
    StabilityRow row;
    row.t = t;
    row.first_draw = first && first->round == t;
    const auto& a = run.clients();
    const auto& b = coupled.clients();
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      row.client_distance.push_back((a[i].x_mixed - b[i].x_mixed).norm());
      total += row.client_distance.back();
    }
    row.mean_param_distance = total / static_cast<double>(a.size());
    const double loss_a = eval_model(original->model, run.average(), original->test).loss;
    const double loss_b = eval_model(twin->model, coupled.average(), twin->test).loss;
    row.heldout_loss_gap = std::abs(loss_a - loss_b);
    trace.rows.push_back(std::move(row));
  }
  trace.first_draw = first;
  return trace;
}

}  // namespace dgossip
