#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dgossip/data.hpp"
#include "dgossip/errors.hpp"
#include "dgossip/model.hpp"
#include "dgossip/rng.hpp"
#include "oracles.hpp"

using namespace dgossip;

namespace {

ModelSpec identity_quadratic(std::size_t p, std::vector<Eigen::VectorXd> bs) {
  ModelSpec spec;
  spec.kind = ModelKind::Quadratic;
  spec.input_dim = p;
  for (auto& b : bs) spec.quadratic.push_back({Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)), b});
  return spec;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

double gradient_check(const ModelSpec& spec, const LabeledDataset* data, std::uint64_t seed) {
  Rng rng = make_rng(seed, {77});
  std::normal_distribution<double> normal(0.0, 0.5);
  double worst = 0.0;
  const auto rows = data ? iota_rows(data->size()) : std::vector<std::size_t>{};
  for (int draw = 0; draw < 20; ++draw) {
    ParamVec x(static_cast<Eigen::Index>(spec.param_count()));
    for (auto& v : x) v = normal(rng);
    const ShardView shard{data, rows, static_cast<std::size_t>(draw) % std::max<std::size_t>(1, spec.quadratic.size())};
    std::vector<std::size_t> batch;
    if (data) {
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      for (int b = 0; b < 8; ++b) batch.push_back(pick(rng));
    }
    const auto analytic = loss_and_grad(spec, x, shard, batch).grad;
    const auto numeric = oracle::finite_difference_grad(spec, x, shard, batch);
    worst = std::max(worst, oracle::max_relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace

TEST_CASE("init_params shapes") {
  ModelSpec quad;
  quad.kind = ModelKind::Quadratic;
  quad.input_dim = 3;
  CHECK(init_params(quad, 1) == ParamVec::Zero(3));

  ModelSpec logistic;
  logistic.input_dim = 2;
  logistic.num_classes = 2;
  CHECK(logistic.param_count() == 6);
  CHECK(init_params(logistic, 5) == init_params(logistic, 5));
  CHECK(init_params(logistic, 5) != init_params(logistic, 6));

  ModelSpec mlp;
  mlp.kind = ModelKind::Mlp;
  mlp.input_dim = 4;
  mlp.hidden = {5, 3};
  mlp.num_classes = 2;
  CHECK(mlp.param_count() == 4 * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2);
  const auto x = init_params(mlp, 1);
  // Biases are zero; weights respect the Glorot bound.
  CHECK(x.segment(20, 5).isZero());
  CHECK(x.head(20).cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 9.0));
}

TEST_CASE("quadratic loss and gradient") {
  const auto spec = identity_quadratic(2, {Eigen::VectorXd::Zero(2)});
  const ShardView shard{nullptr, {}, 0};
  const auto lg = loss_and_grad(spec, Eigen::Vector2d(1, 2), shard, {});
  CHECK(lg.loss == 2.5);
  CHECK(lg.grad == Eigen::Vector2d(1, 2));
}

TEST_CASE("logistic at zero parameters on a balanced binary batch") {
  const auto ds = generate_synthetic(2, 3, 10, 1.0, 2);
  ModelSpec spec;
  spec.input_dim = 3;
  spec.num_classes = 2;
  const auto rows = iota_rows(ds.size());
  const ShardView shard{&ds, rows, 0};
  const auto lg = shard_objective(spec, ParamVec::Zero(8), shard);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  const auto ds = generate_synthetic(3, 4, 20, 1.0, 8);
  SUBCASE("quadratic") {
    const auto spec = quadratic_testbed(4, 6, 1.0, 3);
    CHECK(gradient_check(spec, nullptr, 1) < 1e-5);
  }
  SUBCASE("logistic") {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.num_classes = 3;
    CHECK(gradient_check(spec, &ds, 2) < 1e-5);
  }
  SUBCASE("mlp") {
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_dim = 4;
    spec.hidden = {6, 5};
    spec.num_classes = 3;
    CHECK(gradient_check(spec, &ds, 3) < 1e-5);
  }
}

TEST_CASE("cross-entropy is non-negative") {
  const auto ds = generate_synthetic(3, 4, 20, 1.0, 8);
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.input_dim = 4;
  spec.hidden = {6};
  spec.num_classes = 3;
  const auto rows = iota_rows(ds.size());
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(shard_objective(spec, init_params(spec, s), {&ds, rows, 0}).loss >= 0.0);
}

TEST_CASE("full objective") {
  SUBCASE("opposite linear terms cancel") {
    const auto spec = identity_quadratic(2, {Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0)});
    std::vector<ShardView> shards{{nullptr, {}, 0}, {nullptr, {}, 1}};
    CHECK(full_objective(spec, Eigen::Vector2d::Zero(), shards).grad.isZero(0.0));
  }
  SUBCASE("single client equals its shard objective") {
    const auto ds = generate_synthetic(2, 3, 10, 1.0, 2);
    ModelSpec spec;
    spec.input_dim = 3;
    spec.num_classes = 2;
    const auto rows = iota_rows(ds.size());
    const std::vector<ShardView> shards{{&ds, rows, 0}};
    const auto x = init_params(spec, 4);
    const auto whole = full_objective(spec, x, shards);
    const auto one = shard_objective(spec, x, shards[0]);
    CHECK(whole.loss == one.loss);
    CHECK(whole.grad == one.grad);
  }
  SUBCASE("mean of per-client losses") {
    const auto ds = generate_synthetic(3, 3, 30, 1.0, 2);
    const auto plan = partition_dirichlet(ds, 5, 0.5, 1);
    ModelSpec spec;
    spec.input_dim = 3;
    spec.num_classes = 3;
    std::vector<ShardView> shards;
    for (std::size_t i = 0; i < 5; ++i) shards.push_back({&ds, plan.assignments[i], i});
    const auto x = init_params(spec, 3);
    double mean = 0.0;
    for (const auto& s : shards) mean += shard_objective(spec, x, s).loss / 5.0;
    CHECK(std::abs(full_objective(spec, x, shards).loss - mean) < 1e-12);
  }
  SUBCASE("testbed optimum is stationary") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto spec = quadratic_testbed(4, 8, 1.0, seed);
      // Independent oracle: solve the averaged system directly.
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(8, 8);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(8);
      for (const auto& q : spec.quadratic) {
        a += q.a / 4.0;
        b += q.b / 4.0;
      }
      const Eigen::VectorXd solved = a.fullPivLu().solve(b);
      CHECK((solved - spec.optimum).norm() < 1e-10);
      std::vector<ShardView> shards;
      for (std::size_t i = 0; i < 4; ++i) shards.push_back({nullptr, {}, i});
      CHECK(full_objective(spec, spec.optimum, shards).grad.norm() < 1e-10);
    }
  }
}

TEST_CASE("quadratic testbed construction") {
  const auto spec = quadratic_testbed(6, 5, 1.0, 11);
  for (const auto& q : spec.quadratic) {
    CHECK((q.a - q.a.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.a);
    CHECK(es.eigenvalues().minCoeff() >= 0.5 - 1e-9);
    CHECK(es.eigenvalues().maxCoeff() <= 2.0 + 1e-9);
  }
  SUBCASE("no heterogeneity with shared curvature puts every optimum at x*") {
    const auto homo = quadratic_testbed(5, 4, 0.0, 2, true);
    for (std::size_t i = 0; i < 5; ++i) CHECK(loss_and_grad(homo, homo.optimum, {nullptr, {}, i}, {}).grad.norm() < 1e-10);
  }
  SUBCASE("deterministic") {
    const auto again = quadratic_testbed(6, 5, 1.0, 11);
    CHECK(again.optimum == spec.optimum);
    CHECK(again.quadratic[3].a == spec.quadratic[3].a);
  }
  CHECK_THROWS_AS(quadratic_testbed(2, 0, 1.0, 1), ConfigError);
}

TEST_CASE("shape mismatch is rejected") {
  const auto spec = identity_quadratic(2, {Eigen::VectorXd::Zero(2)});
  CHECK_THROWS_AS(loss_and_grad(spec, Eigen::VectorXd::Zero(3), {nullptr, {}, 0}, {}), ConfigError);
}
