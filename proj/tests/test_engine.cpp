#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dgossip/engine.hpp"
#include "dgossip/errors.hpp"
#include "oracles.hpp"

using namespace dgossip;

namespace {

bool bitwise_equal(const ParamVec& a, const ParamVec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

bool same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.t != y.t || !same_bits(x.train_loss, y.train_loss) || !same_bits(x.test_acc, y.test_acc) ||
        !same_bits(x.grad_norm_sq, y.grad_norm_sq) || !same_bits(x.consensus, y.consensus) ||
        !same_bits(x.delta_t, y.delta_t) || !same_bits(x.v1, y.v1) || !same_bits(x.v2, y.v2) ||
        !same_bits(x.lr, y.lr))
      return false;
  }
  return true;
}

ExperimentConfig small_logistic(AlgorithmKind algo, std::size_t rounds = 10) {
  ExperimentConfig cfg;
  cfg.algorithm = algo;
  cfg.clients = 8;
  cfg.rounds = rounds;
  cfg.topology = {TopologyKind::Ring, 8};
  cfg.data.classes = 3;
  cfg.data.dim = 5;
  cfg.data.per_class = 40;
  cfg.data.test_per_class = 20;
  cfg.participation = 0.5;
  return cfg;
}

ExperimentConfig quadratic_ring(AlgorithmKind algo, double beta, double heterogeneity, std::size_t rounds) {
  ExperimentConfig cfg;
  cfg.algorithm = algo;
  cfg.beta = beta;
  cfg.clients = 16;
  cfg.rounds = rounds;
  cfg.topology = {TopologyKind::Ring, 16};
  cfg.model.kind = ModelKind::Quadratic;
  cfg.model.dim = 10;
  cfg.model.heterogeneity = heterogeneity;
  cfg.optimizer.eta0 = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("ole_init") {
  const Eigen::Vector2d x(1, 2), z(0.5, 3);
  CHECK(ole_init(x, z, 0.0) == x);
  CHECK(ole_init(x, z, 0.5) == Eigen::Vector2d(1.25, 1.5));
  CHECK(ole_init(x, x, 0.7) == x);
  CHECK_THROWS_AS(ole_init(x, Eigen::Vector3d::Zero(), 0.1), ConfigError);
}

TEST_CASE("gossip_mix") {
  const auto full = build_mixing({TopologyKind::FullyConnected, 2});
  const std::vector<ParamVec> two{Eigen::Vector2d(2, 0), Eigen::Vector2d(0, 4)};
  const auto avg = gossip_mix(two, full);
  CHECK(avg[0] == Eigen::Vector2d(1, 2));
  CHECK(avg[1] == Eigen::Vector2d(1, 2));

  const auto ring = build_mixing({TopologyKind::Ring, 9});
  const std::vector<ParamVec> same(9, Eigen::Vector3d(0.25, -1, 8));
  for (const auto& v : gossip_mix(same, ring)) CHECK((v - same[0]).cwiseAbs().maxCoeff() < 1e-15);

  Rng rng = make_rng(4, {1});
  std::normal_distribution<double> normal;
  std::vector<ParamVec> random(9, ParamVec(4));
  for (auto& v : random)
    for (auto& c : v) c = normal(rng);
  const auto mixed = gossip_mix(random, ring);
  CHECK((mean_params(mixed) - mean_params(random)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("config validation") {
  ExperimentConfig cfg;
  cfg.beta = 1.0;
  try {
    cfg.validate();
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("beta must be < 1") != std::string::npos);
  }
  ExperimentConfig dfed;
  dfed.algorithm = AlgorithmKind::DFedAvg;
  dfed.validate();
  CHECK(dfed.beta == 0.0);
  ExperimentConfig dpsgd;
  dpsgd.algorithm = AlgorithmKind::DPsgd;
  dpsgd.validate();
  CHECK(dpsgd.local_steps == 1);
  ExperimentConfig sam;
  sam.algorithm = AlgorithmKind::OledSam;
  sam.validate();
  CHECK(sam.optimizer.method == LocalMethod::Sam);
  ExperimentConfig grid;
  grid.clients = 15;
  grid.topology.kind = TopologyKind::Grid;
  CHECK_THROWS_AS(grid.validate(), ConfigError);
  CHECK(parse_algorithm("dfedsam") == AlgorithmKind::DFedSam);
  CHECK_THROWS_AS(parse_algorithm("nope"), ConfigError);
}

TEST_CASE("beta zero reproduces DFedAvg bit for bit") {
  auto oled = small_logistic(AlgorithmKind::OledSgd, 20);
  oled.beta = 0.0;
  oled.init_jitter = 0.1;
  auto dfed = oled;
  dfed.algorithm = AlgorithmKind::DFedAvg;
  CHECK(same_records(run_experiment(oled).series, run_experiment(dfed).series));
}

TEST_CASE("single client round equals plain local steps") {
  ExperimentConfig cfg = quadratic_ring(AlgorithmKind::OledSgd, 0.3, 1.0, 1);
  cfg.clients = 1;
  cfg.validate();
  auto problem = build_problem(cfg);
  Simulation sim(cfg, problem);
  const auto rec = sim.step();
  CHECK(rec.delta_t == 0.0);
  OptState state;
  Rng rng = make_rng(cfg.seed, {tag(Stream::Client), 0, 0});
  const auto expected = local_train(problem->model, ParamVec::Zero(10), problem->shards()[0], cfg.local_steps,
                                    cfg.optimizer, lr_at_round(cfg.optimizer, 0), state, rng);
  CHECK(bitwise_equal(sim.clients()[0].x_mixed, expected));
}

TEST_CASE("Ole points equal the modified mixing matrix applied to the previous locals") {
  for (TopologyKind kind : {TopologyKind::Ring, TopologyKind::RandomK}) {
    ExperimentConfig cfg = small_logistic(AlgorithmKind::OledSgd, 6);
    cfg.topology = {kind, 8, 3, 5};
    cfg.beta = 0.35;
    cfg.init_jitter = 0.2;
    cfg.validate();
    Simulation sim(cfg, build_problem(cfg));
    TopologySpec spec = cfg.topology;
    spec.seed = derive_seed(cfg.seed, {tag(Stream::Topology), cfg.topology.seed});
    TopologySchedule schedule(spec);
    sim.step(false);
    for (std::size_t t = 1; t < cfg.rounds; ++t) {
      const auto prev = sim.last_trace().locals;
      const auto mod = chebyshev_modified(schedule.at_round(t - 1), cfg.beta);
      sim.step(false);
      const auto& starts = sim.last_trace().start_points;
      for (std::size_t i = 0; i < 8; ++i) {
        ParamVec expected = ParamVec::Zero(prev[i].size());
        for (std::size_t j = 0; j < 8; ++j) expected += mod.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * prev[j];
        CHECK((starts[i] - expected).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
}

TEST_CASE("mixing preserves the average and Ole preserves it too") {
  ExperimentConfig cfg = small_logistic(AlgorithmKind::OledSgd, 30);
  cfg.topology = {TopologyKind::RandomK, 8, 2, 1};
  cfg.init_jitter = 0.3;
  cfg.validate();
  Simulation sim(cfg, build_problem(cfg));
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const ParamVec before = sim.average();
    sim.step(false);
    const auto& trace = sim.last_trace();
    CHECK((sim.average() - mean_params(trace.locals)).cwiseAbs().maxCoeff() < 1e-12);
    if (t >= 1) CHECK((mean_params(trace.start_points) - before).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("zero rounds reports only the initial state") {
  auto cfg = small_logistic(AlgorithmKind::OledSgd, 0);
  const auto summary = run_experiment(cfg);
  CHECK(summary.series.empty());
  CHECK(summary.initial.test_acc >= 0.0);
  CHECK(summary.best_acc == summary.initial.test_acc);
}

TEST_CASE("runs are deterministic and independent of the worker count") {
  for (AlgorithmKind algo : {AlgorithmKind::OledSam, AlgorithmKind::DFedAvgM, AlgorithmKind::FedAvgCentral,
                             AlgorithmKind::DPsgd}) {
    CAPTURE(to_string(algo));
    auto cfg = small_logistic(algo, 8);
    cfg.diagnostics = true;
    cfg.topology = {TopologyKind::RandomK, 8, 2, 3};
    const auto a = run_experiment(cfg, {1});
    CHECK(same_records(a.series, run_experiment(cfg, {1}).series));
    CHECK(same_records(a.series, run_experiment(cfg, {4}).series));
  }
}

TEST_CASE("eval_every thins the series but always keeps the last round") {
  auto cfg = small_logistic(AlgorithmKind::DFedAvg, 10);
  cfg.eval_every = 4;
  const auto s = run_experiment(cfg);
  REQUIRE(s.series.size() == 3);
  CHECK(s.series[0].t == 3);
  CHECK(s.series[1].t == 7);
  CHECK(s.series[2].t == 9);
}

TEST_CASE("central rounds sample the participation fraction") {
  auto cfg = small_logistic(AlgorithmKind::FedSamCentral, 3);
  cfg.participation = 0.3;
  cfg.validate();
  Simulation sim(cfg, build_problem(cfg));
  sim.step(false);
  const auto& p = sim.last_trace().participants;
  CHECK(p.size() == 3);  // ceil(0.3 * 8)
  CHECK(std::is_sorted(p.begin(), p.end()));
  for (const auto& c : sim.clients()) CHECK(bitwise_equal(c.x_mixed, sim.clients()[0].x_mixed));
}

TEST_CASE("divergence names the round and client") {
  auto cfg = quadratic_ring(AlgorithmKind::DFedAvg, 0.0, 1.0, 50);
  cfg.optimizer.eta0 = 50.0;
  cfg.optimizer.decay = 1.0;
  try {
    run_experiment(cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("divergence at round") != std::string::npos);
  }
}

TEST_CASE("consensus is non-increasing on homogeneous quadratics") {
  auto cfg = quadratic_ring(AlgorithmKind::DFedAvg, 0.0, 0.0, 60);
  cfg.model.shared_curvature = true;
  cfg.init_jitter = 1.0;
  const auto s = run_experiment(cfg);
  double prev = s.initial.consensus;
  for (const auto& r : s.series) {
    CHECK(r.consensus <= prev);
    prev = r.consensus;
  }
}

TEST_CASE("gradient norm trends down on heterogeneous quadratics") {
  for (AlgorithmKind algo : {AlgorithmKind::OledSgd, AlgorithmKind::OledSam, AlgorithmKind::DFedAvg,
                             AlgorithmKind::DFedAvgM, AlgorithmKind::DFedSam, AlgorithmKind::DPsgd}) {
    CAPTURE(to_string(algo));
    auto cfg = quadratic_ring(algo, 0.2, 1.0, 300);
    cfg.eval_every = 10;
    cfg.init_jitter = 0.0;
    const auto s = run_experiment(cfg);
    std::vector<double> ts, gs;
    for (const auto& r : s.series) {
      ts.push_back(static_cast<double>(r.t));
      gs.push_back(r.grad_norm_sq);
    }
    CHECK(oracle::ls_slope(ts, gs) < 0.0);
  }
}
