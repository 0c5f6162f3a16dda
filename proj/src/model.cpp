#include "dgossip/model.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "dgossip/errors.hpp"
#include "dgossip/rng.hpp"

namespace dgossip {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeightMap = Eigen::Map<const RowMatrix>;
using WeightMap = Eigen::Map<RowMatrix>;

constexpr double kQuadMinCurvature = 0.5;
constexpr double kQuadMaxCurvature = 2.0;

/// Offsets of each layer's weight block and bias block in the flat parameter vector.
struct LayerLayout {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> weight_offset;
  std::vector<std::size_t> bias_offset;
  std::size_t total = 0;

  explicit LayerLayout(std::vector<std::size_t> layer_sizes) : sizes(std::move(layer_sizes)) {
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      weight_offset.push_back(total);
      total += sizes[l] * sizes[l + 1];
      bias_offset.push_back(total);
      total += sizes[l + 1];
    }
  }
  std::size_t layers() const { return weight_offset.size(); }
};

ConstWeightMap weights(const LayerLayout& lay, const ParamVec& x, std::size_t l) {
  return {x.data() + lay.weight_offset[l], static_cast<Eigen::Index>(lay.sizes[l + 1]),
          static_cast<Eigen::Index>(lay.sizes[l])};
}

Eigen::Map<const Eigen::VectorXd> biases(const LayerLayout& lay, const ParamVec& x, std::size_t l) {
  return {x.data() + lay.bias_offset[l], static_cast<Eigen::Index>(lay.sizes[l + 1])};
}

/// Forward pass storing each layer's activation; the last entry holds raw logits.
std::vector<Eigen::VectorXd> forward(const LayerLayout& lay, const ParamVec& x,
                                     const Eigen::Ref<const Eigen::RowVectorXd>& features) {
  std::vector<Eigen::VectorXd> acts;
  acts.reserve(lay.sizes.size());
  acts.emplace_back(features.transpose());
  for (std::size_t l = 0; l < lay.layers(); ++l) {
    Eigen::VectorXd z = weights(lay, x, l) * acts.back() + biases(lay, x, l);
    if (l + 1 < lay.layers()) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  return acts;
}

/// Cross-entropy of softmax(logits) against `label`; writes softmax - onehot into `delta`.
double softmax_xent(const Eigen::VectorXd& logits, int label, Eigen::VectorXd& delta) {
  const double top = logits.maxCoeff();
  delta = (logits.array() - top).exp();
  const double norm = delta.sum();
  delta /= norm;
  const double loss = std::log(norm) + top - logits[label];
  delta[label] -= 1.0;
  return loss;
}

LossGrad network_loss_and_grad(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                               std::span<const std::size_t> batch) {
  const LayerLayout lay(spec.layer_sizes());
  LossGrad out{0.0, ParamVec::Zero(static_cast<Eigen::Index>(lay.total))};
  if (batch.empty()) return out;
  Eigen::VectorXd delta;
  for (std::size_t b : batch) {
    const std::size_t row = shard.rows[b];
    const auto acts = forward(lay, x, shard.data->row(row));
    out.loss += softmax_xent(acts.back(), shard.data->labels[row], delta);
    for (std::size_t l = lay.layers(); l-- > 0;) {
      WeightMap gw(out.grad.data() + lay.weight_offset[l], static_cast<Eigen::Index>(lay.sizes[l + 1]),
                   static_cast<Eigen::Index>(lay.sizes[l]));
      gw.noalias() += delta * acts[l].transpose();
      out.grad.segment(static_cast<Eigen::Index>(lay.bias_offset[l]), delta.size()) += delta;
      if (l > 0) {
        Eigen::VectorXd back = weights(lay, x, l).transpose() * delta;
        delta = back.array() * (1.0 - acts[l].array().square());
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.grad *= inv;
  return out;
}

LossGrad quadratic_loss_and_grad(const ModelSpec& spec, const ParamVec& x, std::size_t client) {
  if (client >= spec.quadratic.size())
    throw ConfigError(fmt::format("no quadratic objective for client {}", client));
  const auto& q = spec.quadratic[client];
  LossGrad out;
  const Eigen::VectorXd ax = q.a * x;
  out.loss = 0.5 * x.dot(ax) - q.b.dot(x);
  out.grad = ax - q.b;
  return out;
}

Eigen::MatrixXd random_orthogonal(std::size_t p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(p, p);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
}

Eigen::MatrixXd random_curvature(std::size_t p, Rng& rng) {
  std::uniform_real_distribution<double> eig(kQuadMinCurvature, kQuadMaxCurvature);
  const Eigen::MatrixXd q = random_orthogonal(p, rng);
  Eigen::VectorXd d(p);
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = eig(rng);
  Eigen::MatrixXd a = q * d.asDiagonal() * q.transpose();
  // Exact symmetry.
  return 0.5 * (a + a.transpose());
}

}  // namespace

std::vector<std::size_t> ModelSpec::layer_sizes() const {
  std::vector<std::size_t> sizes{input_dim};
  if (kind == ModelKind::Mlp) sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_classes);
  return sizes;
}

std::size_t ModelSpec::param_count() const {
  if (kind == ModelKind::Quadratic) return input_dim;
  return LayerLayout(layer_sizes()).total;
}

ParamVec init_params(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == ModelKind::Quadratic) return ParamVec::Zero(static_cast<Eigen::Index>(spec.input_dim));
  const LayerLayout lay(spec.layer_sizes());
  ParamVec x = ParamVec::Zero(static_cast<Eigen::Index>(lay.total));
  Rng rng = make_rng(seed, {tag(Stream::Init)});
  for (std::size_t l = 0; l < lay.layers(); ++l) {
    const double a = std::sqrt(6.0 / static_cast<double>(lay.sizes[l] + lay.sizes[l + 1]));
    std::uniform_real_distribution<double> u(-a, a);
    const std::size_t count = lay.sizes[l] * lay.sizes[l + 1];
    for (std::size_t i = 0; i < count; ++i) x[static_cast<Eigen::Index>(lay.weight_offset[l] + i)] = u(rng);
  }
  return x;
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVec& x, const ShardView& shard,
                       std::span<const std::size_t> batch) {
  if (static_cast<std::size_t>(x.size()) != spec.param_count())
    throw ConfigError(fmt::format("parameter vector has {} entries, model expects {}", x.size(), spec.param_count()));
  if (spec.kind == ModelKind::Quadratic) return quadratic_loss_and_grad(spec, x, shard.client);
  if (shard.data == nullptr) throw ConfigError("model needs a dataset shard");
  return network_loss_and_grad(spec, x, shard, batch);
}

LossGrad shard_objective(const ModelSpec& spec, const ParamVec& x, const ShardView& shard) {
  std::vector<std::size_t> all(shard.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return loss_and_grad(spec, x, shard, all);
}

LossGrad full_objective(const ModelSpec& spec, const ParamVec& x, std::span<const ShardView> shards) {
  LossGrad out{0.0, ParamVec::Zero(x.size())};
  if (shards.empty()) throw ConfigError("full objective needs at least one shard");
  for (const auto& shard : shards) {
    const LossGrad part = shard_objective(spec, x, shard);
    out.loss += part.loss;
    out.grad += part.grad;
  }
  const double inv = 1.0 / static_cast<double>(shards.size());
  out.loss *= inv;
  out.grad *= inv;
  return out;
}

Eigen::VectorXd predict_scores(const ModelSpec& spec, const ParamVec& x,
                               const Eigen::Ref<const Eigen::RowVectorXd>& features) {
  if (spec.kind == ModelKind::Quadratic) throw ConfigError("quadratic objectives have no class scores");
  const LayerLayout lay(spec.layer_sizes());
  return forward(lay, x, features).back();
}

ModelSpec quadratic_testbed(std::size_t m, std::size_t p, double heterogeneity, std::uint64_t seed,
                            bool shared_curvature) {
  if (p < 1 || m < 1) throw ConfigError("quadratic testbed needs m >= 1 and p >= 1");
  Rng rng = make_rng(seed, {tag(Stream::Model)});
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelSpec spec;
  spec.kind = ModelKind::Quadratic;
  spec.input_dim = p;

  const auto pi = static_cast<Eigen::Index>(p);
  Eigen::VectorXd b_mean(pi);
  for (Eigen::Index j = 0; j < pi; ++j) b_mean[j] = normal(rng);
  std::vector<Eigen::VectorXd> deltas(m, Eigen::VectorXd(pi));
  Eigen::VectorXd delta_mean = Eigen::VectorXd::Zero(pi);
  for (auto& d : deltas) {
    for (Eigen::Index j = 0; j < pi; ++j) d[j] = normal(rng);
    delta_mean += d;
  }
  delta_mean /= static_cast<double>(m);

  const Eigen::MatrixXd shared = random_curvature(p, rng);
  Eigen::MatrixXd a_mean = Eigen::MatrixXd::Zero(pi, pi);
  Eigen::VectorXd b_avg = Eigen::VectorXd::Zero(pi);
  for (std::size_t i = 0; i < m; ++i) {
    QuadraticObjective q;
    q.a = shared_curvature ? shared : random_curvature(p, rng);
    q.b = b_mean + heterogeneity * (deltas[i] - delta_mean);
    a_mean += q.a;
    b_avg += q.b;
    spec.quadratic.push_back(std::move(q));
  }
  a_mean /= static_cast<double>(m);
  b_avg /= static_cast<double>(m);
  spec.optimum = a_mean.ldlt().solve(b_avg);
  return spec;
}

}  // namespace dgossip
