#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dgossip/data.hpp"
#include "dgossip/localopt.hpp"
#include "dgossip/metrics.hpp"
#include "dgossip/model.hpp"
#include "dgossip/topology.hpp"

namespace dgossip {

enum class AlgorithmKind { OledSgd, OledSam, DFedAvg, DFedAvgM, DFedSam, DPsgd, FedAvgCentral, FedSamCentral };

std::string_view to_string(AlgorithmKind kind);
AlgorithmKind parse_algorithm(std::string_view name);
bool is_central(AlgorithmKind kind);
bool uses_ole(AlgorithmKind kind);
LocalMethod local_method(AlgorithmKind kind);

enum class DataSource { Synthetic, Csv };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  int classes = 4;
  std::size_t dim = 10;
  std::size_t per_class = 200;
  std::size_t test_per_class = 100;
  double spread = 1.0;
  std::string path;
  std::string test_path;

  bool operator==(const DataConfig&) const = default;
};

struct PartitionConfig {
  PartitionScheme scheme = PartitionScheme::Dirichlet;
  double alpha = 0.3;
  std::size_t classes_per_client = 2;

  bool operator==(const PartitionConfig&) const = default;
};

struct ModelConfig {
  ModelKind kind = ModelKind::Logistic;
  std::vector<std::size_t> hidden{16};  // Mlp
  std::size_t dim = 10;  // Quadratic parameter count
  double heterogeneity = 1.0;  // Quadratic
  bool shared_curvature = false;  // Quadratic

  bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
  AlgorithmKind algorithm = AlgorithmKind::OledSgd;
  double beta = 0.2;
  std::size_t clients = 100;
  std::size_t rounds = 500;
  std::size_t local_steps = 5;
  double participation = 0.1;  // central kinds
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  bool diagnostics = false;
  /// Std-dev of per-client Gaussian offsets added to the shared x^0; 0 keeps all clients equal.
  double init_jitter = 0.0;
  std::vector<double> targets{0.5, 0.7};

  TopologySpec topology{TopologyKind::RandomK, 100, 10, 0};
  ModelConfig model;
  DataConfig data;
  PartitionConfig partition;
  OptimizerConfig optimizer;

  bool operator==(const ExperimentConfig&) const = default;

  /// Check every field and apply the algorithm's forced settings: local method, beta = 0 for
  /// kinds without Ole, one local step for D-PSGD, topology size = clients.
  /// Throws ConfigError naming the offending key.
  void validate();
};

/// Everything the rounds need that does not change during a run.
struct Problem {
  ModelSpec model;
  LabeledDataset train;
  LabeledDataset test;
  PartitionPlan plan;

  bool has_data() const { return model.kind != ModelKind::Quadratic; }
  std::vector<ShardView> shards() const;
};

std::shared_ptr<Problem> build_problem(const ExperimentConfig& cfg);

struct ClientState {
  ParamVec x_mixed;  // x_i^t
  ParamVec z_prev;  // x_{i,K}^{t-1}
  OptState opt;
};

/// Ole initialization: x + beta (x - z_prev).
ParamVec ole_init(const ParamVec& x_mixed, const ParamVec& z_prev, double beta);

/// out_i = sum_j w_ij z_j, accumulated in ascending j.
std::vector<ParamVec> gossip_mix(std::span<const ParamVec> locals, const MixingMatrix& w);

/// Receives (client, round, local step, drawn shard positions). Called from worker threads,
/// at most one thread per client.
using ClientBatchObserver =
    std::function<void(std::size_t, std::size_t, std::size_t, std::span<const std::size_t>)>;

struct RoundContext {
  const ExperimentConfig* cfg = nullptr;
  const Problem* problem = nullptr;
  std::span<const ShardView> shards;
  std::size_t workers = 1;
  ClientBatchObserver on_batch;
};

/// What happened inside one round, for diagnostics and tests.
struct RoundTrace {
  std::vector<std::size_t> participants;  // ascending
  std::vector<ParamVec> start_points;  // x_{i,0}, after Ole
  std::vector<ParamVec> locals;  // z_i = x_{i,K}
  double delta = 0.0;
  double v1 = kAbsent;
  double lr = 0.0;
};

/// Executes round t in place. Decentralized kinds train every client from its Ole point and
/// gossip with w; central kinds train a sampled subset from the shared model and average.
/// Throws DivergenceError on any non-finite parameter.
RoundTrace run_round(std::vector<ClientState>& states, std::size_t t, const RoundContext& ctx,
                     const MixingMatrix& w);

void check_finite(const ParamVec& x, std::size_t round, std::size_t client);

class Simulation {
 public:
  Simulation(ExperimentConfig cfg, std::shared_ptr<const Problem> problem, std::size_t workers = 1);

  /// Runs the next round; the record is fully evaluated when `evaluate` is true, otherwise
  /// only the cheap fields are filled.
  RoundRecord step(bool evaluate = true);

  RoundRecord initial_record() const;
  std::size_t round() const { return round_; }
  const std::vector<ClientState>& clients() const { return states_; }
  ParamVec average() const;
  const RoundTrace& last_trace() const { return trace_; }
  const ExperimentConfig& config() const { return cfg_; }
  const Problem& problem() const { return *problem_; }

  void set_batch_observer(ClientBatchObserver obs) { on_batch_ = std::move(obs); }

 private:
  void evaluate_into(RoundRecord& rec, const ParamVec& mean) const;

  ExperimentConfig cfg_;
  std::shared_ptr<const Problem> problem_;
  std::vector<ShardView> shards_;
  std::size_t workers_;
  TopologySchedule topology_;
  std::vector<ClientState> states_;
  std::size_t round_ = 0;
  RoundTrace trace_;
  ClientBatchObserver on_batch_;
};

struct RunOptions {
  std::size_t workers = 1;
};

struct RunSummary {
  RoundRecord initial;
  std::vector<RoundRecord> series;
  double best_acc = kAbsent;
  std::vector<TargetHit> targets;
  double wall_time_seconds = 0.0;
};

/// Validates cfg, builds the problem, runs every round and evaluates each eval_every rounds
/// (and always the last one).
RunSummary run_experiment(ExperimentConfig cfg, const RunOptions& opts = {});

}  // namespace dgossip
