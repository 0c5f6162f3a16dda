#include "dgossip/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dgossip/errors.hpp"
#include "dgossip/parallel.hpp"
#include "dgossip/rng.hpp"

namespace dgossip {

namespace {

struct AlgorithmInfo {
  AlgorithmKind kind;
  std::string_view name;
  LocalMethod method;
  bool central;
  bool ole;
};

constexpr AlgorithmInfo kAlgorithms[] = {
    {AlgorithmKind::OledSgd, "oled_sgd", LocalMethod::Sgd, false, true},
    {AlgorithmKind::OledSam, "oled_sam", LocalMethod::Sam, false, true},
    {AlgorithmKind::DFedAvg, "dfedavg", LocalMethod::Sgd, false, false},
    {AlgorithmKind::DFedAvgM, "dfedavgm", LocalMethod::SgdMomentum, false, false},
    {AlgorithmKind::DFedSam, "dfedsam", LocalMethod::Sam, false, false},
    {AlgorithmKind::DPsgd, "dpsgd", LocalMethod::Sgd, false, false},
    {AlgorithmKind::FedAvgCentral, "fedavg", LocalMethod::Sgd, true, false},
    {AlgorithmKind::FedSamCentral, "fedsam", LocalMethod::Sam, true, false},
};

const AlgorithmInfo& info(AlgorithmKind kind) {
  for (const auto& a : kAlgorithms)
    if (a.kind == kind) return a;
  throw ConfigError("unknown algorithm");
}

MixingMatrix single_node_matrix() { return MixingMatrix(Eigen::MatrixXd::Ones(1, 1), 0.0); }

std::vector<ParamVec> mixed_params(const std::vector<ClientState>& states) {
  std::vector<ParamVec> xs;
  xs.reserve(states.size());
  for (const auto& s : states) xs.push_back(s.x_mixed);
  return xs;
}

/// Trains one client, converting non-finite failures into a divergence report.
ParamVec train_client(const RoundContext& ctx, ClientState& state, std::size_t client, std::size_t t,
                      const ParamVec& start, double eta, std::vector<ParamVec>* iterates) {
  const ExperimentConfig& cfg = *ctx.cfg;
  Rng rng = make_rng(cfg.seed, {tag(Stream::Client), client, t});
  state.opt.reset(static_cast<std::size_t>(start.size()));
  BatchObserver on_batch;
  if (ctx.on_batch)
    on_batch = [&](std::size_t k, std::span<const std::size_t> rows) { ctx.on_batch(client, t, k, rows); };
  IterateObserver on_iterate;
  if (iterates) on_iterate = [iterates](std::size_t, const ParamVec& x) { iterates->push_back(x); };
  try {
    ParamVec z = local_train(ctx.problem->model, start, ctx.shards[client], cfg.local_steps, cfg.optimizer, eta,
                             state.opt, rng, on_batch, on_iterate);
    check_finite(z, t, client);
    return z;
  } catch (const NumericalError& e) {
    throw DivergenceError(t, client, e.what());
  }
}

double mean_energy(std::span<const std::vector<ParamVec>> iterates, std::span<const ParamVec> anchors) {
  double acc = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (const auto& xk : iterates[i]) acc += (xk - anchors[i]).squaredNorm();
  return acc / static_cast<double>(anchors.size());
}

RoundTrace run_decentralized(std::vector<ClientState>& states, std::size_t t, const RoundContext& ctx,
                             const MixingMatrix& w) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const std::size_t m = states.size();
  if (w.size() != m) throw ConfigError(fmt::format("mixing matrix is {}x{} but there are {} clients", w.size(), w.size(), m));
  RoundTrace trace;
  trace.lr = lr_at_round(cfg.optimizer, t);
  trace.participants.resize(m);
  std::iota(trace.participants.begin(), trace.participants.end(), std::size_t{0});
  trace.start_points.resize(m);
  trace.locals.resize(m);
  std::vector<std::vector<ParamVec>> iterates(cfg.diagnostics ? m : 0);

  parallel_for(m, ctx.workers, [&](std::size_t i) {
    trace.start_points[i] = ole_init(states[i].x_mixed, states[i].z_prev, cfg.beta);
    trace.locals[i] = train_client(ctx, states[i], i, t, trace.start_points[i], trace.lr,
                                   cfg.diagnostics ? &iterates[i] : nullptr);
  });

  std::vector<ParamVec> mixed = gossip_mix(trace.locals, w);
  trace.delta = consistency_delta(trace.locals, mixed);
  if (cfg.diagnostics) trace.v1 = mean_energy(iterates, mixed_params(states));
  for (std::size_t i = 0; i < m; ++i) {
    states[i].x_mixed = std::move(mixed[i]);
    states[i].z_prev = trace.locals[i];
  }
  return trace;
}

RoundTrace run_central(std::vector<ClientState>& states, std::size_t t, const RoundContext& ctx) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const std::size_t m = states.size();
  const auto wanted = static_cast<std::size_t>(std::ceil(cfg.participation * static_cast<double>(m) - 1e-9));
  const std::size_t count = std::clamp<std::size_t>(wanted, 1, m);

  RoundTrace trace;
  trace.lr = lr_at_round(cfg.optimizer, t);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng coordinator = make_rng(cfg.seed, {tag(Stream::Coordinator), t});
  std::shuffle(order.begin(), order.end(), coordinator);
  trace.participants.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(trace.participants.begin(), trace.participants.end());

  const ParamVec global = states.front().x_mixed;
  trace.start_points.assign(count, global);
  trace.locals.resize(count);
  std::vector<std::vector<ParamVec>> iterates(cfg.diagnostics ? count : 0);
  parallel_for(count, ctx.workers, [&](std::size_t s) {
    const std::size_t i = trace.participants[s];
    trace.locals[s] = train_client(ctx, states[i], i, t, global, trace.lr, cfg.diagnostics ? &iterates[s] : nullptr);
  });

  const ParamVec next = mean_params(trace.locals);
  trace.delta = consistency_delta(trace.locals, std::vector<ParamVec>(count, next));
  if (cfg.diagnostics) trace.v1 = mean_energy(iterates, trace.start_points);
  for (auto& s : states) s.x_mixed = next;
  for (std::size_t s = 0; s < count; ++s) states[trace.participants[s]].z_prev = trace.locals[s];
  return trace;
}

}  // namespace

std::string_view to_string(AlgorithmKind kind) { return info(kind).name; }

AlgorithmKind parse_algorithm(std::string_view name) {
  for (const auto& a : kAlgorithms)
    if (a.name == name) return a.kind;
  throw ConfigError(fmt::format("algorithm: unknown kind '{}'", name));
}

bool is_central(AlgorithmKind kind) { return info(kind).central; }
bool uses_ole(AlgorithmKind kind) { return info(kind).ole; }
LocalMethod local_method(AlgorithmKind kind) { return info(kind).method; }

void ExperimentConfig::validate() {
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError(fmt::format("beta must be >= 0, got {}", beta));
  if (beta >= 1.0) throw ConfigError(fmt::format("beta must be < 1, got {}", beta));
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0))
    throw ConfigError(fmt::format("participation must be in (0, 1], got {}", participation));
  if (!(init_jitter >= 0.0)) throw ConfigError(fmt::format("init_jitter must be >= 0, got {}", init_jitter));
  optimizer.validate();

  switch (model.kind) {
    case ModelKind::Quadratic:
      if (model.dim < 1) throw ConfigError("model.dim must be >= 1");
      if (!(model.heterogeneity >= 0.0)) throw ConfigError("model.heterogeneity must be >= 0");
      break;
    case ModelKind::Mlp:
      if (model.hidden.empty() || std::find(model.hidden.begin(), model.hidden.end(), 0u) != model.hidden.end())
        throw ConfigError("model.hidden must list positive layer widths");
      [[fallthrough]];
    case ModelKind::Logistic:
      if (data.source == DataSource::Synthetic) {
        if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
        if (data.dim < 1) throw ConfigError("data.dim must be >= 1");
        if (data.per_class < 1) throw ConfigError("data.per_class must be >= 1");
        if (!(data.spread >= 0.0)) throw ConfigError("data.spread must be >= 0");
      } else if (data.path.empty()) {
        throw ConfigError("data.path is required for csv data");
      }
      if (partition.scheme == PartitionScheme::Dirichlet && !(partition.alpha > 0.0))
        throw ConfigError(fmt::format("partition.alpha must be > 0, got {}", partition.alpha));
      break;
  }

  optimizer.method = local_method(algorithm);
  if (!uses_ole(algorithm)) beta = 0.0;
  if (algorithm == AlgorithmKind::DPsgd) local_steps = 1;
  topology.m = clients;
  if (!is_central(algorithm) && clients >= 2) topology.validate();
}

std::vector<ShardView> Problem::shards() const {
  std::vector<ShardView> out(plan.clients());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ShardView{has_data() ? &train : nullptr, plan.assignments[i], i};
  return out;
}

std::shared_ptr<Problem> build_problem(const ExperimentConfig& cfg) {
  auto problem = std::make_shared<Problem>();
  const std::size_t m = cfg.clients;
  if (cfg.model.kind == ModelKind::Quadratic) {
    problem->model = quadratic_testbed(m, cfg.model.dim, cfg.model.heterogeneity,
                                       derive_seed(cfg.seed, {tag(Stream::Model)}), cfg.model.shared_curvature);
    problem->plan.assignments.resize(m);
    return problem;
  }

  if (cfg.data.source == DataSource::Synthetic) {
    const std::uint64_t means = derive_seed(cfg.seed, {tag(Stream::Data)});
    problem->train = generate_synthetic(cfg.data.classes, cfg.data.dim, cfg.data.per_class, cfg.data.spread, means, means);
    problem->test = generate_synthetic(cfg.data.classes, cfg.data.dim, cfg.data.test_per_class, cfg.data.spread, means,
                                       derive_seed(cfg.seed, {tag(Stream::TestData)}));
  } else {
    problem->train = load_csv(cfg.data.path);
    problem->test = cfg.data.test_path.empty() ? problem->train : load_csv(cfg.data.test_path);
    if (problem->test.dim() != problem->train.dim())
      throw ConfigError("data.test_path has a different feature count than data.path");
    const int classes = std::max(problem->train.num_classes, problem->test.num_classes);
    problem->train.num_classes = problem->test.num_classes = classes;
  }

  problem->model.kind = cfg.model.kind;
  problem->model.input_dim = problem->train.dim();
  problem->model.num_classes = static_cast<std::size_t>(problem->train.num_classes);
  if (cfg.model.kind == ModelKind::Mlp) problem->model.hidden = cfg.model.hidden;

  const std::uint64_t split_seed = derive_seed(cfg.seed, {tag(Stream::Partition)});
  switch (cfg.partition.scheme) {
    case PartitionScheme::Iid: problem->plan = partition_iid(problem->train, m, split_seed); break;
    case PartitionScheme::Dirichlet:
      problem->plan = partition_dirichlet(problem->train, m, cfg.partition.alpha, split_seed);
      break;
    case PartitionScheme::Pathological:
      problem->plan = partition_pathological(problem->train, m, cfg.partition.classes_per_client, split_seed);
      break;
  }
  return problem;
}

ParamVec ole_init(const ParamVec& x_mixed, const ParamVec& z_prev, double beta) {
  if (x_mixed.size() != z_prev.size())
    throw ConfigError(fmt::format("ole_init: length mismatch {} vs {}", x_mixed.size(), z_prev.size()));
  return x_mixed + beta * (x_mixed - z_prev);
}

std::vector<ParamVec> gossip_mix(std::span<const ParamVec> locals, const MixingMatrix& w) {
  const std::size_t m = locals.size();
  if (w.size() != m) throw ConfigError("gossip_mix: matrix size does not match client count");
  std::vector<ParamVec> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    ParamVec acc = ParamVec::Zero(locals[i].size());
    for (std::size_t j = 0; j < m; ++j) {
      const double wij = w(i, j);
      if (wij != 0.0) acc += wij * locals[j];
    }
    out[i] = std::move(acc);
  }
  return out;
}

void check_finite(const ParamVec& x, std::size_t round, std::size_t client) {
  if (!x.allFinite()) throw DivergenceError(round, client, "non-finite parameters");
}

RoundTrace run_round(std::vector<ClientState>& states, std::size_t t, const RoundContext& ctx,
                     const MixingMatrix& w) {
  if (ctx.cfg == nullptr || ctx.problem == nullptr) throw ConfigError("run_round: missing context");
  if (states.empty()) throw ConfigError("run_round: no clients");
  if (is_central(ctx.cfg->algorithm)) return run_central(states, t, ctx);
  return run_decentralized(states, t, ctx, w);
}

Simulation::Simulation(ExperimentConfig cfg, std::shared_ptr<const Problem> problem, std::size_t workers)
    : cfg_(std::move(cfg)),
      problem_(std::move(problem)),
      shards_(problem_->shards()),
      workers_(std::max<std::size_t>(1, workers)),
      topology_([&] {
        TopologySpec spec = cfg_.topology;
        spec.m = std::max<std::size_t>(2, cfg_.clients);
        spec.seed = derive_seed(cfg_.seed, {tag(Stream::Topology), cfg_.topology.seed});
        if (is_central(cfg_.algorithm) || cfg_.clients < 2) spec.kind = TopologyKind::FullyConnected;
        return TopologySchedule(spec);
      }()) {
  if (shards_.size() != cfg_.clients)
    throw ConfigError(fmt::format("problem has {} shards for {} clients", shards_.size(), cfg_.clients));
  const ParamVec x0 = init_params(problem_->model, derive_seed(cfg_.seed, {tag(Stream::Init)}));
  states_.resize(cfg_.clients);
  for (std::size_t i = 0; i < cfg_.clients; ++i) {
    ParamVec xi = x0;
    if (cfg_.init_jitter > 0.0 && !is_central(cfg_.algorithm)) {
      Rng rng = make_rng(cfg_.seed, {tag(Stream::Jitter), i});
      std::normal_distribution<double> normal(0.0, cfg_.init_jitter);
      for (Eigen::Index j = 0; j < xi.size(); ++j) xi[j] += normal(rng);
    }
    states_[i].x_mixed = xi;
    states_[i].z_prev = xi;
    states_[i].opt.reset(static_cast<std::size_t>(xi.size()));
  }
}

ParamVec Simulation::average() const { return mean_params(mixed_params(states_)); }

void Simulation::evaluate_into(RoundRecord& rec, const ParamVec& mean) const {
  const LossGrad full = full_objective(problem_->model, mean, shards_);
  rec.train_loss = full.loss;
  rec.grad_norm_sq = full.grad.squaredNorm();
  if (problem_->has_data()) {
    const EvalResult ev = eval_model(problem_->model, mean, problem_->test);
    rec.test_acc = ev.accuracy;
    rec.test_loss = ev.loss;
  }
}

RoundRecord Simulation::initial_record() const {
  RoundRecord rec;
  rec.t = 0;
  rec.lr = lr_at_round(cfg_.optimizer, 0);
  rec.consensus = consensus_distance(mixed_params(states_));
  evaluate_into(rec, average());
  return rec;
}

RoundRecord Simulation::step(bool evaluate) {
  const ParamVec mean_before = average();
  static const MixingMatrix trivial = single_node_matrix();
  const MixingMatrix& w = cfg_.clients < 2 ? trivial : topology_.at_round(round_);

  RoundContext ctx;
  ctx.cfg = &cfg_;
  ctx.problem = problem_.get();
  ctx.shards = shards_;
  ctx.workers = workers_;
  ctx.on_batch = on_batch_;
  trace_ = run_round(states_, round_, ctx, w);

  RoundRecord rec;
  rec.t = round_;
  rec.lr = trace_.lr;
  rec.delta_t = trace_.delta;
  const auto xs = mixed_params(states_);
  rec.consensus = consensus_distance(xs);
  const ParamVec mean_after = mean_params(xs);
  if (cfg_.diagnostics) {
    rec.v1 = trace_.v1;
    rec.v2 = (mean_after - mean_before).squaredNorm();
  }
  if (evaluate) evaluate_into(rec, mean_after);
  ++round_;
  return rec;
}

RunSummary run_experiment(ExperimentConfig cfg, const RunOptions& opts) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  Simulation sim(cfg, build_problem(cfg), opts.workers);
  RunSummary summary;
  summary.initial = sim.initial_record();
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const bool evaluate = (t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds;
    RoundRecord rec = sim.step(evaluate);
    if (evaluate) summary.series.push_back(rec);
  }
  const auto& pool = summary.series.empty() ? std::vector<RoundRecord>{summary.initial} : summary.series;
  for (const auto& rec : pool)
    if (!std::isnan(rec.test_acc) && (std::isnan(summary.best_acc) || rec.test_acc > summary.best_acc))
      summary.best_acc = rec.test_acc;
  summary.targets = rounds_to_target(summary.series, cfg.targets);
  summary.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace dgossip
