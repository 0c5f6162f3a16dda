#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dgossip/data.hpp"

namespace dgossip {

using ParamVec = Eigen::VectorXd;

enum class ModelKind { Quadratic, Logistic, Mlp };

/// f_i(x) = 1/2 x'Ax - b'x for one client.
struct QuadraticObjective {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};

struct ModelSpec {
  ModelKind kind = ModelKind::Logistic;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden;  // Mlp only

  // Quadratic only: one objective per client and the minimizer of their average.
  std::vector<QuadraticObjective> quadratic;
  Eigen::VectorXd optimum;

  std::size_t param_count() const;
  /// Layer widths from input to output, e.g. {d, h1, ..., C}. Logistic has no hidden layer.
  std::vector<std::size_t> layer_sizes() const;
};

/// A client's slice of a dataset. For quadratic objectives only `client` matters.
struct ShardView {
  const LabeledDataset* data = nullptr;
  std::span<const std::size_t> rows;
  std::size_t client = 0;

  std::size_t size() const { return rows.size(); }
};

struct LossGrad {
  double loss = 0.0;
  ParamVec grad;
};

ParamVec init_params(const ModelSpec& spec, std::uint64_t seed);

/// Batch-mean loss and exact gradient. `batch` indexes into shard.rows. Quadratic ignores it.
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                       std::span<const std::size_t> batch);

/// Full-shard loss and gradient for one client.
LossGrad shard_objective(const ModelSpec& spec, const ParamVec& x, const ShardView& shard);

/// (1/m) sum_i f_i(x) over full shards, with its gradient.
LossGrad full_objective(const ModelSpec& spec, const ParamVec& x, std::span<const ShardView> shards);

/// Output-layer scores (logits) for one feature row. Not defined for Quadratic.
Eigen::VectorXd predict_scores(const ModelSpec& spec, const ParamVec& x,
                               const Eigen::Ref<const Eigen::RowVectorXd>& features);

/// Per-client strongly convex quadratics with curvature in [0.5, 2] and linear terms
/// b_i = b_mean + heterogeneity * delta_i, sum_i delta_i = 0. With shared_curvature every
/// client uses the same A.
ModelSpec quadratic_testbed(std::size_t m, std::size_t p, double heterogeneity, std::uint64_t seed,
                            bool shared_curvature = false);

}  // namespace dgossip
