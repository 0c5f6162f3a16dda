#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace dgossip {

/// Row-major feature matrix plus integer labels in [0, num_classes).
struct LabeledDataset {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> features;
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  auto row(std::size_t i) const { return features.row(static_cast<Eigen::Index>(i)); }

  /// Throws ConfigError if labels are out of range or shapes disagree.
  void validate() const;
};

enum class PartitionScheme { Iid, Dirichlet, Pathological };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;
  PartitionScheme scheme = PartitionScheme::Iid;
  double alpha = 0.0;  // Dirichlet concentration
  std::size_t classes_per_client = 0;  // Pathological
  std::uint64_t seed = 0;

  std::size_t clients() const { return assignments.size(); }
};

/// C isotropic Gaussian clusters around random unit-norm means scaled by 2.
LabeledDataset generate_synthetic(int num_classes, std::size_t dim, std::size_t per_class,
                                  double cluster_spread, std::uint64_t seed);

/// Same cluster means as generate_synthetic(..., mean_seed) but fresh noise from sample_seed.
/// Used for held-out sets drawn from the training distribution.
LabeledDataset generate_synthetic(int num_classes, std::size_t dim, std::size_t per_class,
                                  double cluster_spread, std::uint64_t mean_seed,
                                  std::uint64_t sample_seed);

PartitionPlan partition_iid(const LabeledDataset& ds, std::size_t m, std::uint64_t seed);
PartitionPlan partition_dirichlet(const LabeledDataset& ds, std::size_t m, double alpha,
                                  std::uint64_t seed);
PartitionPlan partition_pathological(const LabeledDataset& ds, std::size_t m,
                                     std::size_t classes_per_client, std::uint64_t seed);

/// `f1,...,fd,label` rows after a one-line header.
LabeledDataset load_csv(const std::string& path);

nlohmann::json plan_to_json(const PartitionPlan& plan);

/// Per-client class histogram normalized to a distribution.
std::vector<double> label_distribution(const LabeledDataset& ds, std::span<const std::size_t> rows);

/// Mean over clients of the total-variation distance between each client's label
/// distribution and the global one.
double mean_label_tv_distance(const LabeledDataset& ds, const PartitionPlan& plan);

}  // namespace dgossip
