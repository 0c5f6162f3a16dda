#include "dgossip/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include <fmt/format.h>

#include "dgossip/errors.hpp"
#include "dgossip/rng.hpp"

namespace dgossip {

namespace {

constexpr std::size_t kMaxConnectivityRetries = 32;

Adjacency from_neighbor_sets(const std::vector<std::set<std::size_t>>& sets) {
  Adjacency adj(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) adj[i].assign(sets[i].begin(), sets[i].end());
  return adj;
}

void link(std::vector<std::set<std::size_t>>& sets, std::size_t i, std::size_t j) {
  if (i == j) return;
  sets[i].insert(j);
  sets[j].insert(i);
}

std::size_t integer_sqrt(std::size_t m) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  while (r * r > m) --r;
  while ((r + 1) * (r + 1) <= m) ++r;
  return r;
}

}  // namespace

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::Ring: return "ring";
    case TopologyKind::Grid: return "grid";
    case TopologyKind::Exponential: return "exponential";
    case TopologyKind::FullyConnected: return "full";
    case TopologyKind::RandomK: return "random";
  }
  return "unknown";
}

TopologyKind parse_topology_kind(std::string_view name) {
  if (name == "ring") return TopologyKind::Ring;
  if (name == "grid") return TopologyKind::Grid;
  if (name == "exponential" || name == "exp") return TopologyKind::Exponential;
  if (name == "full" || name == "fully_connected" || name == "fullyconnected")
    return TopologyKind::FullyConnected;
  if (name == "random" || name == "random_k") return TopologyKind::RandomK;
  throw ConfigError(fmt::format("unknown topology kind '{}'", name));
}

void TopologySpec::validate() const {
  if (m < 2) throw ConfigError(fmt::format("topology needs m >= 2, got {}", m));
  if (kind == TopologyKind::Grid) {
    const std::size_t r = integer_sqrt(m);
    if (r * r != m) throw ConfigError(fmt::format("grid topology: perfect square required, got m={}", m));
  }
  if (kind == TopologyKind::RandomK && (k < 1 || k >= m))
    throw ConfigError(fmt::format("random topology needs 1 <= k < m, got k={} m={}", k, m));
}

Adjacency build_adjacency(const TopologySpec& spec) {
  spec.validate();
  const std::size_t m = spec.m;
  std::vector<std::set<std::size_t>> sets(m);
  switch (spec.kind) {
    case TopologyKind::Ring:
      for (std::size_t i = 0; i < m; ++i) link(sets, i, (i + 1) % m);
      break;
    case TopologyKind::Grid: {
      // 2D torus, row-major node numbering.
      const std::size_t side = integer_sqrt(m);
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const std::size_t i = r * side + c;
          link(sets, i, r * side + (c + 1) % side);
          link(sets, i, ((r + 1) % side) * side + c);
        }
      }
      break;
    }
    case TopologyKind::Exponential:
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t hop = 1; hop < m; hop *= 2) link(sets, i, (i + hop) % m);
      break;
    case TopologyKind::FullyConnected:
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) link(sets, i, j);
      break;
    case TopologyKind::RandomK:
      return random_k_adjacency(m, spec.k, derive_seed(spec.seed, {tag(Stream::Topology), 0}));
  }
  return from_neighbor_sets(sets);
}

MixingMatrix metropolis_weights(const Adjacency& adj) {
  const auto m = static_cast<Eigen::Index>(adj.size());
  if (!is_connected(adj)) throw ConfigError("mixing matrix requires a connected graph");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (std::size_t j : adj[static_cast<std::size_t>(i)]) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (jj <= i) continue;
      const std::size_t deg = std::max(adj[static_cast<std::size_t>(i)].size(), adj[j].size());
      const double v = 1.0 / (1.0 + static_cast<double>(deg));
      w(i, jj) = v;
      w(jj, i) = v;
    }
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    double off = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != i) off += w(i, j);
    w(i, i) = 1.0 - off;
  }
  const double psi = spectral_gap(w);
  return MixingMatrix(std::move(w), psi);
}

MixingMatrix build_mixing(const TopologySpec& spec) {
  return metropolis_weights(build_adjacency(spec));
}

Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(w, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigen-solver did not converge");
  return solver.eigenvalues();
}

double spectral_gap(const Eigen::MatrixXd& w) {
  const Eigen::VectorXd ev = symmetric_eigenvalues(w);
  const Eigen::Index n = ev.size();
  if (n < 2) return 0.0;
  // Ascending order: ev[n-1] is the principal eigenvalue 1.
  return std::max(std::abs(ev[n - 2]), std::abs(ev[0]));
}

ModifiedMatrix chebyshev_modified(const MixingMatrix& w, double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    throw ConfigError(fmt::format("beta must be in [0, 1), got {}", beta));
  const auto m = static_cast<Eigen::Index>(w.size());
  ModifiedMatrix out;
  out.w = (1.0 + beta) * w.weights() - beta * Eigen::MatrixXd::Identity(m, m);
  // mu = (1+beta) lambda - beta is increasing in lambda, so 1 stays the top eigenvalue.
  out.psi_tilde = spectral_gap(out.w);
  return out;
}

bool is_connected(const Adjacency& adj) {
  if (adj.empty()) return false;
  std::vector<char> seen(adj.size(), 0);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    for (std::size_t v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        frontier.push(v);
      }
    }
  }
  return count == adj.size();
}

Adjacency random_k_adjacency(std::size_t m, std::size_t k, std::uint64_t round_seed) {
  if (k < 1 || k >= m) throw ConfigError(fmt::format("random topology needs 1 <= k < m, got k={} m={}", k, m));
  for (std::size_t attempt = 0; attempt < kMaxConnectivityRetries; ++attempt) {
    Rng rng(derive_seed(round_seed, {attempt}));
    std::vector<std::set<std::size_t>> sets(m);
    std::vector<std::size_t> candidates(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
      // Candidates are every other node, in ascending order; partial Fisher-Yates picks k.
      for (std::size_t j = 0, c = 0; j < m; ++j)
        if (j != i) candidates[c++] = j;
      for (std::size_t s = 0; s < k; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, m - 2);
        std::swap(candidates[s], candidates[pick(rng)]);
        link(sets, i, candidates[s]);
      }
    }
    Adjacency adj = from_neighbor_sets(sets);
    if (is_connected(adj)) return adj;
  }
  throw NumericalError(fmt::format("random topology (m={}, k={}) not connected after {} attempts", m, k,
                                   kMaxConnectivityRetries));
}

double beta_theory_bound(double psi) {
  return std::min(std::sqrt(10.0) * (1.0 - psi) / 40.0, std::sqrt(5.0) / 30.0);
}

std::string_view asymptotic_psi_formula(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::FullyConnected: return "0";
    case TopologyKind::Exponential: return "1-2/(1+ln m)";
    case TopologyKind::Grid: return "1-1/(m ln m)";
    case TopologyKind::Ring: return "1-16pi^2/(3m^2)";
    case TopologyKind::RandomK: return "n/a";
  }
  return "n/a";
}

TopologySchedule::TopologySchedule(TopologySpec spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind != TopologyKind::RandomK) {
    cache_.push_back(build_mixing(spec_));
  } else {
    cache_.push_back(metropolis_weights(
        random_k_adjacency(spec_.m, spec_.k, derive_seed(spec_.seed, {tag(Stream::Topology), 0}))));
  }
}

const MixingMatrix& TopologySchedule::at_round(std::size_t t) {
  if (spec_.kind != TopologyKind::RandomK || t == cached_round_) return cache_.front();
  cache_.front() = metropolis_weights(
      random_k_adjacency(spec_.m, spec_.k, derive_seed(spec_.seed, {tag(Stream::Topology), t})));
  cached_round_ = t;
  return cache_.front();
}

}  // namespace dgossip
