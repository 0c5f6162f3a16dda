#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dgossip/data.hpp"
#include "dgossip/errors.hpp"

using namespace dgossip;

namespace {

/// Fraction of rows whose nearest class centroid (estimated from the same data) is their label.
double nearest_centroid_accuracy(const LabeledDataset& ds) {
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(ds.num_classes, static_cast<Eigen::Index>(ds.dim()));
  std::vector<double> counts(static_cast<std::size_t>(ds.num_classes), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    centroids.row(ds.labels[i]) += ds.row(i);
    counts[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  }
  for (int c = 0; c < ds.num_classes; ++c) centroids.row(c) /= counts[static_cast<std::size_t>(c)];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - ds.row(i)).rowwise().squaredNorm().minCoeff(&best);
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void check_set_partition(const PartitionPlan& plan, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& rows : plan.assignments) {
    CHECK(!rows.empty());
    for (std::size_t r : rows) {
      REQUIRE(r < n);
      ++seen[r];
    }
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
}

std::set<int> labels_of(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
  std::set<int> out;
  for (std::size_t r : rows) out.insert(ds.labels[r]);
  return out;
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path;
}

}  // namespace

TEST_CASE("synthetic data counts and determinism") {
  const auto ds = generate_synthetic(2, 2, 50, 1.0, 3);
  CHECK(ds.size() == 100);
  CHECK(std::count(ds.labels.begin(), ds.labels.end(), 0) == 50);
  CHECK(std::count(ds.labels.begin(), ds.labels.end(), 1) == 50);
  const auto again = generate_synthetic(2, 2, 50, 1.0, 3);
  CHECK((ds.features.array() == again.features.array()).all());
  CHECK_NOTHROW(ds.validate());
}

TEST_CASE("tight synthetic clusters are separable by nearest centroid") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) CHECK(nearest_centroid_accuracy(generate_synthetic(3, 5, 100, 0.01, seed)) >= 0.99);
}

TEST_CASE("held-out synthetic data shares the class means") {
  const auto train = generate_synthetic(3, 4, 200, 0.05, 9, 9);
  const auto test = generate_synthetic(3, 4, 200, 0.05, 9, 10);
  CHECK((train.features.array() != test.features.array()).any());
  // Class means agree to within the noise level.
  for (int c = 0; c < 3; ++c) {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(4), b = Eigen::RowVectorXd::Zero(4);
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.labels[i] == c) a += train.row(i);
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test.labels[i] == c) b += test.row(i);
    CHECK((a - b).norm() / 200.0 < 0.05);
  }
}

TEST_CASE("iid partition") {
  const auto ds100 = generate_synthetic(2, 1, 50, 1.0, 1);
  const auto plan = partition_iid(ds100, 10, 4);
  for (const auto& rows : plan.assignments) CHECK(rows.size() == 10);
  check_set_partition(plan, 100);

  auto ds101 = ds100;
  ds101.features.conservativeResize(101, Eigen::NoChange);
  ds101.features.row(100).setZero();
  ds101.labels.push_back(0);
  const auto uneven = partition_iid(ds101, 10, 4);
  std::size_t tens = 0, elevens = 0;
  for (const auto& rows : uneven.assignments) (rows.size() == 10 ? tens : elevens) += 1;
  CHECK(tens == 9);
  CHECK(elevens == 1);
  CHECK(partition_iid(ds100, 10, 4).assignments == plan.assignments);
  CHECK_THROWS_AS(partition_iid(ds100, 101, 0), ConfigError);
}

TEST_CASE("dirichlet partition") {
  const auto ds = generate_synthetic(10, 2, 100, 1.0, 5);
  SUBCASE("single client holds everything") {
    const auto plan = partition_dirichlet(ds, 1, 0.3, 1);
    CHECK(plan.assignments[0].size() == ds.size());
  }
  SUBCASE("small alpha still covers every index once and leaves no client empty") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) check_set_partition(partition_dirichlet(ds, 10, 0.3, seed), ds.size());
    for (std::uint64_t seed = 0; seed < 5; ++seed) check_set_partition(partition_dirichlet(ds, 50, 0.01, seed), ds.size());
  }
  SUBCASE("huge alpha is close to uniform") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto plan = partition_dirichlet(ds, 10, 1e6, seed);
      for (const auto& rows : plan.assignments) {
        const auto dist = label_distribution(ds, rows);
        double tv = 0.0;
        for (double p : dist) tv += std::abs(p - 0.1);
        CHECK(0.5 * tv < 0.05);
      }
    }
  }
  SUBCASE("heterogeneity decreases with alpha") {
    double previous = 2.0;
    for (double alpha : {0.1, 0.3, 1.0, 10.0, 1e6}) {
      double tv = 0.0;
      for (std::uint64_t seed = 0; seed < 10; ++seed) tv += mean_label_tv_distance(ds, partition_dirichlet(ds, 10, alpha, seed));
      tv /= 10.0;
      CAPTURE(alpha);
      CHECK(tv <= previous);
      previous = tv;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(partition_dirichlet(ds, 10, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(partition_dirichlet(ds, ds.size() + 1, 1.0, 1), ConfigError);
  }
}

TEST_CASE("pathological partition") {
  const auto ds = generate_synthetic(10, 2, 100, 1.0, 6);
  SUBCASE("two classes per client over 100 clients") {
    const auto plan = partition_pathological(ds, 100, 2, 3);
    check_set_partition(plan, ds.size());
    for (const auto& rows : plan.assignments) CHECK(labels_of(ds, rows).size() == 2);
  }
  SUBCASE("full support") {
    const auto plan = partition_pathological(ds, 5, 10, 3);
    for (const auto& rows : plan.assignments) CHECK(labels_of(ds, rows).size() == 10);
  }
  SUBCASE("coverage with few clients") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto plan = partition_pathological(ds, 5, 2, seed);
      check_set_partition(plan, ds.size());
      std::set<int> all;
      for (const auto& rows : plan.assignments) {
        const auto l = labels_of(ds, rows);
        CHECK(l.size() == 2);
        all.insert(l.begin(), l.end());
      }
      CHECK(all.size() == 10);
    }
  }
  SUBCASE("infeasible") { CHECK_THROWS_AS(partition_pathological(ds, 4, 2, 0), ConfigError); }
  CHECK(partition_pathological(ds, 20, 3, 8).assignments == partition_pathological(ds, 20, 3, 8).assignments);
}

TEST_CASE("csv loading") {
  SUBCASE("shape") {
    const auto p = write_temp("dg_ok.csv", "f1,f2,label\n0.5,1.5,0\n-1,2e-3,1\n3,4,1\n");
    const auto ds = load_csv(p.string());
    CHECK(ds.size() == 3);
    CHECK(ds.dim() == 2);
    CHECK(ds.features(1, 1) == 2e-3);
    CHECK(ds.num_classes == 2);
  }
  SUBCASE("label gaps are allowed") {
    const auto ds = load_csv(write_temp("dg_gap.csv", "a,label\n1,2\n2,2\n").string());
    CHECK(ds.num_classes == 3);
  }
  SUBCASE("header only") {
    try {
      load_csv(write_temp("dg_empty.csv", "f1,label\n").string());
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("empty dataset") != std::string::npos);
    }
  }
  SUBCASE("parse errors name the row") {
    try {
      load_csv(write_temp("dg_bad.csv", "f1,label\n1,0\nabc,1\n").string());
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv(write_temp("dg_cols.csv", "f1,f2,label\n1,2,0\n1,0\n").string()), IoError);
    CHECK_THROWS_AS(load_csv(write_temp("dg_neg.csv", "f1,label\n1,-1\n").string()), IoError);
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), IoError);
  }
}

TEST_CASE("partition plan json export") {
  const auto ds = generate_synthetic(2, 1, 5, 1.0, 1);
  const auto j = plan_to_json(partition_iid(ds, 2, 0));
  CHECK(j["scheme"] == "iid");
  CHECK(j["clients"]["0"].size() + j["clients"]["1"].size() == 10);
}
