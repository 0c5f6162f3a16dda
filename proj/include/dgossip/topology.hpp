#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dgossip {

enum class TopologyKind { Ring, Grid, Exponential, FullyConnected, RandomK };

std::string_view to_string(TopologyKind kind);
TopologyKind parse_topology_kind(std::string_view name);

struct TopologySpec {
  TopologyKind kind = TopologyKind::Ring;
  std::size_t m = 2;
  std::size_t k = 10;  // RandomK only
  std::uint64_t seed = 0;  // RandomK only

  bool operator==(const TopologySpec&) const = default;

  /// Throws ConfigError on m < 2, non-square Grid, or k outside [1, m) for RandomK.
  void validate() const;
};

using Adjacency = std::vector<std::vector<std::size_t>>;

/// Symmetric doubly-stochastic gossip weights plus the cached second-largest eigenvalue
/// magnitude psi.
class MixingMatrix {
 public:
  MixingMatrix(Eigen::MatrixXd w, double psi) : w_(std::move(w)), psi_(psi) {}

  std::size_t size() const { return static_cast<std::size_t>(w_.rows()); }
  const Eigen::MatrixXd& weights() const { return w_; }
  double operator()(std::size_t i, std::size_t j) const {
    return w_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  double psi() const { return psi_; }

 private:
  Eigen::MatrixXd w_;
  double psi_;
};

/// (1+beta) W - beta I. Rows still sum to one but entries may be negative.
struct ModifiedMatrix {
  Eigen::MatrixXd w;
  double psi_tilde = 0.0;
};

Adjacency build_adjacency(const TopologySpec& spec);

/// Metropolis-Hastings weights on a connected undirected graph.
MixingMatrix metropolis_weights(const Adjacency& adj);

MixingMatrix build_mixing(const TopologySpec& spec);

/// Eigenvalues of a symmetric matrix, ascending.
Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& w);

/// max(|lambda_2|, |lambda_m|): the largest eigenvalue magnitude once the principal
/// eigenvalue 1 is removed.
double spectral_gap(const Eigen::MatrixXd& w);
inline double spectral_gap(const MixingMatrix& w) { return spectral_gap(w.weights()); }

ModifiedMatrix chebyshev_modified(const MixingMatrix& w, double beta);

/// Each node draws k distinct partners; the draws are symmetrized by union. Resamples with
/// an incremented sub-seed until the graph is connected (at most 32 attempts).
Adjacency random_k_adjacency(std::size_t m, std::size_t k, std::uint64_t round_seed);

bool is_connected(const Adjacency& adj);

/// Admissible Ole coefficient from the convergence analysis: min{sqrt(10)(1-psi)/40, sqrt(5)/30}.
double beta_theory_bound(double psi);

/// Asymptotic psi formula quoted for each topology kind, as a display string.
std::string_view asymptotic_psi_formula(TopologyKind kind);

/// Mixing matrix for round t. Static kinds are built once; RandomK is regenerated from
/// (spec.seed, t).
class TopologySchedule {
 public:
  explicit TopologySchedule(TopologySpec spec);

  const MixingMatrix& at_round(std::size_t t);
  const TopologySpec& spec() const { return spec_; }

 private:
  TopologySpec spec_;
  std::vector<MixingMatrix> cache_;
  std::size_t cached_round_ = 0;
};

}  // namespace dgossip
